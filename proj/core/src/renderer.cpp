#include "depthforge/renderer.hpp"

#include "depthforge/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace depthforge {

namespace {

// Orthonormal camera basis, rows of the world-to-view rotation.
// View space: +x right, +y down (image convention), +z away from the
// camera toward the scene.
struct ViewBasis {
    Vec3 right, down, forward;
    Vec3 position;

    Vec3 to_view(Vec3 p) const {
        const Vec3 d = p - position;
        return {dot(right, d), dot(down, d), dot(forward, d)};
    }
};

ViewBasis make_view(const Camera& cam) {
    const Vec3 pos = cam.position();
    const Vec3 forward = normalized(cam.target - pos);
    const Vec3 up{0.0, 1.0, 0.0};
    const Vec3 right = normalized(cross(forward, up));
    const Vec3 down = cross(forward, right);
    return {right, down, forward, pos};
}

void check_camera(const Camera& cam) {
    if (!(cam.radius > 0.0)) throw ValidationError("camera radius must be positive");
    if (!(cam.focal > 0.0)) throw ValidationError("camera focal must be positive");
    if (!(std::abs(cam.pitch_deg) < 90.0))
        throw ValidationError("camera pitch must satisfy |pitch| < 90");
    if (cam.width <= 0 || cam.height <= 0)
        throw ValidationError("camera resolution must be positive");
}

} // namespace

Vec3 Camera::position() const {
    const double yaw = deg_to_rad(yaw_deg);
    const double pitch = deg_to_rad(pitch_deg);
    const Vec3 dir{std::sin(yaw) * std::cos(pitch), std::sin(pitch),
                   std::cos(yaw) * std::cos(pitch)};
    return target + radius * dir;
}

std::vector<Camera> hemisphere_cameras(double radius, double focal, int res,
                                       Vec3 target) {
    if (!(radius > 0.0 && focal > 0.0 && res > 0))
        throw ValidationError("hemisphere_cameras requires positive radius, focal, res");
    static constexpr double kPitches[] = {-30.0, 0.0, 30.0};
    static constexpr double kYaws[] = {-60.0, -20.0, 20.0, 60.0};
    std::vector<Camera> cams;
    cams.reserve(12);
    for (double pitch : kPitches) {
        for (double yaw : kYaws) {
            Camera c;
            c.yaw_deg = yaw;
            c.pitch_deg = pitch;
            c.radius = radius;
            c.focal = focal;
            c.cx = res / 2.0;
            c.cy = res / 2.0;
            c.width = res;
            c.height = res;
            c.target = target;
            cams.push_back(c);
        }
    }
    return cams;
}

ProjectedVertex project_vertex(const Camera& cam, Vec3 point) {
    check_camera(cam);
    const ViewBasis view = make_view(cam);
    const Vec3 p = view.to_view(point);
    ProjectedVertex out;
    out.z = p.z;
    out.in_front = p.z > 0.0;
    if (out.in_front) {
        out.u = cam.focal * p.x / p.z + cam.cx;
        out.v = cam.focal * p.y / p.z + cam.cy;
    }
    return out;
}

DepthImage render_depth(const Mesh& mesh, const Camera& cam, double near,
                        double far) {
    check_camera(cam);
    if (!(0.0 < near && near < far))
        throw ValidationError("render_depth requires 0 < near < far");

    const ViewBasis view = make_view(cam);
    const int w = cam.width;
    const int h = cam.height;

    const size_t nv = mesh.vertex_count();
    std::vector<double> vx(nv), vy(nv), vz(nv); // screen u, v and view z
    for (size_t i = 0; i < nv; ++i) {
        const Vec3 p = view.to_view(
            {mesh.vertices[3 * i], mesh.vertices[3 * i + 1], mesh.vertices[3 * i + 2]});
        vz[i] = p.z;
        if (p.z > 0.0) {
            vx[i] = cam.focal * p.x / p.z + cam.cx;
            vy[i] = cam.focal * p.y / p.z + cam.cy;
        }
    }

    std::vector<double> zbuf(size_t(w) * h, std::numeric_limits<double>::infinity());

    // Ties on a shared edge resolve to exactly one triangle: accept an
    // on-edge sample only for top (horizontal, inside below) and left
    // (inside to the right) edges.
    auto edge_accepts_tie = [](double dx, double dy) {
        return dy < 0.0 || (dy == 0.0 && dx > 0.0);
    };

    for (const Triangle& tri : mesh.triangles) {
        uint32_t i0 = tri[0], i1 = tri[1], i2 = tri[2];
        if (vz[i0] < near || vz[i1] < near || vz[i2] < near) continue;

        // Normalize screen winding so the interior has positive edge values.
        double area2 = (vx[i1] - vx[i0]) * (vy[i2] - vy[i0]) -
                       (vy[i1] - vy[i0]) * (vx[i2] - vx[i0]);
        if (area2 < 0.0) {
            std::swap(i1, i2);
            area2 = -area2;
        }
        if (area2 == 0.0) continue; // edge-on

        const double x0 = vx[i0], y0 = vy[i0];
        const double x1 = vx[i1], y1 = vy[i1];
        const double x2 = vx[i2], y2 = vy[i2];

        const int min_px = std::max(0, int(std::floor(std::min({x0, x1, x2}) - 0.5)));
        const int max_px = std::min(w - 1, int(std::ceil(std::max({x0, x1, x2}) - 0.5)));
        const int min_py = std::max(0, int(std::floor(std::min({y0, y1, y2}) - 0.5)));
        const int max_py = std::min(h - 1, int(std::ceil(std::max({y0, y1, y2}) - 0.5)));
        if (min_px > max_px || min_py > max_py) continue;

        const double inv_z0 = 1.0 / vz[i0];
        const double inv_z1 = 1.0 / vz[i1];
        const double inv_z2 = 1.0 / vz[i2];

        const bool tie0 = edge_accepts_tie(x2 - x1, y2 - y1); // edge opposite v0
        const bool tie1 = edge_accepts_tie(x0 - x2, y0 - y2);
        const bool tie2 = edge_accepts_tie(x1 - x0, y1 - y0);

        for (int py = min_py; py <= max_py; ++py) {
            const double sy = py + 0.5;
            for (int px = min_px; px <= max_px; ++px) {
                const double sx = px + 0.5;
                const double w0 = (x2 - x1) * (sy - y1) - (y2 - y1) * (sx - x1);
                const double w1 = (x0 - x2) * (sy - y2) - (y0 - y2) * (sx - x2);
                const double w2 = (x1 - x0) * (sy - y0) - (y1 - y0) * (sx - x0);
                const bool inside = (w0 > 0.0 || (w0 == 0.0 && tie0)) &&
                                    (w1 > 0.0 || (w1 == 0.0 && tie1)) &&
                                    (w2 > 0.0 || (w2 == 0.0 && tie2));
                if (!inside) continue;
                const double wsum = w0 + w1 + w2;
                if (wsum <= 0.0) continue;
                const double z = wsum / (w0 * inv_z0 + w1 * inv_z1 + w2 * inv_z2);
                if (z > far) continue;
                double& slot = zbuf[size_t(py) * w + px];
                if (z < slot) slot = z;
            }
        }
    }

    DepthImage img;
    img.width = w;
    img.height = h;
    img.pixels.assign(size_t(w) * h, 0);
    for (size_t i = 0; i < zbuf.size(); ++i) {
        if (std::isfinite(zbuf[i]))
            img.pixels[i] = uint16_t(std::min(std::lround(zbuf[i]), 65535l));
    }
    return img;
}

NormalMap depth_to_normals(const DepthImage& depth, const Intrinsics& intr) {
    if (!(intr.focal > 0.0)) throw ValidationError("intrinsics focal must be positive");

    const int w = depth.width;
    const int h = depth.height;
    NormalMap nm;
    nm.width = w;
    nm.height = h;
    nm.pixels.assign(size_t(w) * h * 3, 0);

    // Back-project pixel (i, j) at depth z; the raster sample point is the
    // pixel center (i + 0.5, j + 0.5).
    auto unproject = [&](int i, int j, double z) -> Vec3 {
        return {(i + 0.5 - intr.cx) * z / intr.focal,
                (j + 0.5 - intr.cy) * z / intr.focal, z};
    };

    for (int j = 1; j + 1 < h; ++j) {
        for (int i = 1; i + 1 < w; ++i) {
            const uint16_t z = depth.at(i, j);
            const uint16_t zl = depth.at(i - 1, j);
            const uint16_t zr = depth.at(i + 1, j);
            const uint16_t zu = depth.at(i, j - 1);
            const uint16_t zd = depth.at(i, j + 1);
            if (z == 0 || zl == 0 || zr == 0 || zu == 0 || zd == 0) continue;

            const Vec3 tu = unproject(i + 1, j, zr) - unproject(i - 1, j, zl);
            const Vec3 tv = unproject(i, j + 1, zd) - unproject(i, j - 1, zu);
            Vec3 n = cross(tv, tu);
            const double len = norm(n);
            if (len == 0.0) continue;
            n = (1.0 / len) * n;
            if (n.z > 0.0) n = -n; // keep camera-facing
            nm.set(i, j, encode_normal(n));
        }
    }
    return nm;
}

} // namespace depthforge
