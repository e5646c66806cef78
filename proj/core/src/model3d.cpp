#include "depthforge/model3d.hpp"

#include "depthforge/errors.hpp"
#include "depthforge/geometry.hpp"
#include "binary_io.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace depthforge {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'L', '1'};
constexpr uint32_t kVersion = 1;

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace

void MorphableModel::validate() const {
    const size_t rows = size_t(3) * n_vertices;
    if (mean_shape.size() != rows)
        throw ValidationError("mean_shape length does not match 3*V");
    if (id_basis.size() != rows * n_id)
        throw ValidationError("id_basis size does not match 3*V x K_id");
    if (exp_basis.size() != rows * n_exp)
        throw ValidationError("exp_basis size does not match 3*V x K_exp");
    if (id_sigma.size() != n_id)
        throw ValidationError("id_sigma length does not match K_id");
    if (exp_sigma.size() != n_exp)
        throw ValidationError("exp_sigma length does not match K_exp");
    for (double s : id_sigma)
        if (!(s > 0.0)) throw ValidationError("id_sigma entries must be strictly positive");
    for (double s : exp_sigma)
        if (!(s > 0.0)) throw ValidationError("exp_sigma entries must be strictly positive");
    if (!all_finite(mean_shape) || !all_finite(id_basis) || !all_finite(exp_basis) ||
        !all_finite(id_sigma) || !all_finite(exp_sigma))
        throw ValidationError("model contains non-finite values");
    for (const Triangle& t : triangles) {
        if (t[0] >= n_vertices || t[1] >= n_vertices || t[2] >= n_vertices)
            throw ValidationError("triangle index out of range");
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
            throw ValidationError("degenerate triangle (repeated index)");
    }
}

MorphableModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file: " + path);

    char magic[4];
    detail::read_bytes(in, magic, 4, "MDL1 magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("not an MDL1 file: " + path);
    const uint32_t version = detail::read_u32_le(in, "MDL1 version");
    if (version != kVersion)
        throw FormatError("unsupported MDL1 version " + std::to_string(version));

    MorphableModel m;
    m.n_vertices = detail::read_u32_le(in, "vertex count");
    m.n_id = detail::read_u32_le(in, "identity basis count");
    m.n_exp = detail::read_u32_le(in, "expression basis count");
    const uint32_t n_tri = detail::read_u32_le(in, "triangle count");

    const size_t rows = size_t(3) * m.n_vertices;
    auto read_block = [&](std::vector<double>& dst, size_t n, const char* what) {
        dst.resize(n);
        for (size_t i = 0; i < n; ++i) dst[i] = detail::read_f64_le(in, what);
    };
    read_block(m.mean_shape, rows, "mean_shape");
    read_block(m.id_basis, rows * m.n_id, "id_basis");
    read_block(m.id_sigma, m.n_id, "id_sigma");
    read_block(m.exp_basis, rows * m.n_exp, "exp_basis");
    read_block(m.exp_sigma, m.n_exp, "exp_sigma");
    m.triangles.resize(n_tri);
    for (Triangle& t : m.triangles)
        for (uint32_t& idx : t) idx = detail::read_u32_le(in, "triangles");
    if (!detail::at_eof(in))
        throw FormatError("trailing bytes after MDL1 payload: " + path);

    m.validate();
    return m;
}

void save_model(const MorphableModel& model, const std::string& path) {
    model.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open model file for writing: " + path);

    detail::write_bytes(out, kMagic, 4);
    detail::write_u32_le(out, kVersion);
    detail::write_u32_le(out, model.n_vertices);
    detail::write_u32_le(out, model.n_id);
    detail::write_u32_le(out, model.n_exp);
    detail::write_u32_le(out, uint32_t(model.triangles.size()));
    for (double v : model.mean_shape) detail::write_f64_le(out, v);
    for (double v : model.id_basis) detail::write_f64_le(out, v);
    for (double v : model.id_sigma) detail::write_f64_le(out, v);
    for (double v : model.exp_basis) detail::write_f64_le(out, v);
    for (double v : model.exp_sigma) detail::write_f64_le(out, v);
    for (const Triangle& t : model.triangles)
        for (uint32_t idx : t) detail::write_u32_le(out, idx);
    out.flush();
    if (!out) throw IoError("short write while saving model: " + path);
}

namespace {

// Ellipsoid semi-axes: width (x), height (y), depth (z), millimeters.
constexpr double kSemiX = 90.0;
constexpr double kSemiY = 120.0;
constexpr double kSemiZ = 100.0;

struct GridPoint {
    double theta; // polar angle from the +y pole, [0, pi]
    double phi;   // azimuth, [0, 2pi)
};

Vec3 ellipsoid_point(const GridPoint& g) {
    const double st = std::sin(g.theta);
    return {kSemiX * st * std::cos(g.phi), kSemiY * std::cos(g.theta),
            kSemiZ * st * std::sin(g.phi)};
}

Vec3 ellipsoid_normal(const GridPoint& g) {
    const Vec3 p = ellipsoid_point(g);
    return normalized({p.x / (kSemiX * kSemiX), p.y / (kSemiY * kSemiY),
                       p.z / (kSemiZ * kSemiZ)});
}

// Smooth bump field over the parameter grid; one basis column is this
// field applied along the surface normal, then normalized to unit length.
std::vector<double> make_basis_column(const std::vector<GridPoint>& grid, Rng& rng) {
    const int freq_theta = 1 + int(rng.below(4));
    const int freq_phi = int(rng.below(5));
    const double phase_theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double phase_phi = rng.uniform(0.0, 2.0 * std::numbers::pi);

    std::vector<double> col(grid.size() * 3);
    for (size_t v = 0; v < grid.size(); ++v) {
        const double g = std::sin(freq_theta * grid[v].theta + phase_theta) *
                         std::cos(freq_phi * grid[v].phi + phase_phi);
        const Vec3 n = ellipsoid_normal(grid[v]);
        col[3 * v + 0] = g * n.x;
        col[3 * v + 1] = g * n.y;
        col[3 * v + 2] = g * n.z;
    }
    double sq = 0.0;
    for (double x : col) sq += x * x;
    const double nrm = std::sqrt(sq);
    if (nrm < 1e-12) {
        // Degenerate field (phase conspiracies); fall back to a plain
        // radial bulge, which is never zero.
        for (size_t v = 0; v < grid.size(); ++v) {
            const Vec3 n = ellipsoid_normal(grid[v]);
            col[3 * v + 0] = n.x;
            col[3 * v + 1] = n.y;
            col[3 * v + 2] = n.z;
        }
        sq = 0.0;
        for (double x : col) sq += x * x;
        const double fallback = std::sqrt(sq);
        for (double& x : col) x /= fallback;
        return col;
    }
    for (double& x : col) x /= nrm;
    return col;
}

} // namespace

MorphableModel make_toy_model(uint64_t seed, uint32_t v_rings, uint32_t k_id,
                              uint32_t k_exp) {
    if (v_rings < 4)
        throw ValidationError("make_toy_model requires v_rings >= 4");

    const uint32_t rings = v_rings;
    const uint32_t segs = 2 * v_rings;

    // Parameter grid: north pole, (rings-1) latitude rings, south pole.
    std::vector<GridPoint> grid;
    grid.push_back({0.0, 0.0});
    for (uint32_t i = 1; i < rings; ++i) {
        const double theta = std::numbers::pi * double(i) / double(rings);
        for (uint32_t j = 0; j < segs; ++j)
            grid.push_back({theta, 2.0 * std::numbers::pi * double(j) / double(segs)});
    }
    grid.push_back({std::numbers::pi, 0.0});

    MorphableModel m;
    m.n_vertices = uint32_t(grid.size());
    m.n_id = k_id;
    m.n_exp = k_exp;
    m.mean_shape.resize(grid.size() * 3);
    for (size_t v = 0; v < grid.size(); ++v) {
        const Vec3 p = ellipsoid_point(grid[v]);
        m.mean_shape[3 * v + 0] = p.x;
        m.mean_shape[3 * v + 1] = p.y;
        m.mean_shape[3 * v + 2] = p.z;
    }

    const uint32_t south = m.n_vertices - 1;
    auto ring_vertex = [&](uint32_t ring, uint32_t seg) {
        return 1 + (ring - 1) * segs + (seg % segs);
    };
    for (uint32_t j = 0; j < segs; ++j)
        m.triangles.push_back({0, ring_vertex(1, j + 1), ring_vertex(1, j)});
    for (uint32_t i = 1; i + 1 < rings; ++i) {
        for (uint32_t j = 0; j < segs; ++j) {
            const uint32_t a = ring_vertex(i, j);
            const uint32_t b = ring_vertex(i, j + 1);
            const uint32_t c = ring_vertex(i + 1, j);
            const uint32_t d = ring_vertex(i + 1, j + 1);
            m.triangles.push_back({a, b, d});
            m.triangles.push_back({a, d, c});
        }
    }
    for (uint32_t j = 0; j < segs; ++j)
        m.triangles.push_back({south, ring_vertex(rings - 1, j), ring_vertex(rings - 1, j + 1)});

    Rng rng(seed);
    m.id_basis.reserve(m.mean_shape.size() * k_id);
    for (uint32_t k = 0; k < k_id; ++k) {
        const auto col = make_basis_column(grid, rng);
        m.id_basis.insert(m.id_basis.end(), col.begin(), col.end());
        m.id_sigma.push_back(40.0 * std::pow(0.85, double(k)));
    }
    m.exp_basis.reserve(m.mean_shape.size() * k_exp);
    for (uint32_t k = 0; k < k_exp; ++k) {
        const auto col = make_basis_column(grid, rng);
        m.exp_basis.insert(m.exp_basis.end(), col.begin(), col.end());
        m.exp_sigma.push_back(20.0 * std::pow(0.85, double(k)));
    }

    m.validate();
    return m;
}

ShapeCoefficients sample_coefficients(Rng& rng, const MorphableModel& model,
                                      double trunc) {
    if (!(trunc > 0.0))
        throw ValidationError("sample_coefficients requires trunc > 0");
    ShapeCoefficients c;
    c.alpha_id.resize(model.n_id);
    c.alpha_exp.resize(model.n_exp);
    for (double& a : c.alpha_id) a = rng.truncated_normal(trunc);
    for (double& a : c.alpha_exp) a = rng.truncated_normal(trunc);
    return c;
}

Mesh synthesize_shape(const MorphableModel& model, const ShapeCoefficients& coeffs) {
    if (coeffs.alpha_id.size() != model.n_id)
        throw ValidationError("alpha_id length does not match model K_id");
    if (coeffs.alpha_exp.size() != model.n_exp)
        throw ValidationError("alpha_exp length does not match model K_exp");

    Mesh mesh;
    mesh.vertices = model.mean_shape;
    mesh.triangles = model.triangles;

    const size_t rows = mesh.vertices.size();
    auto accumulate = [&](const std::vector<double>& basis,
                          const std::vector<double>& sigma,
                          const std::vector<double>& alpha) {
        for (size_t k = 0; k < alpha.size(); ++k) {
            const double w = alpha[k] * sigma[k];
            if (w == 0.0) continue;
            const double* col = basis.data() + k * rows;
            for (size_t r = 0; r < rows; ++r) mesh.vertices[r] += w * col[r];
        }
    };
    accumulate(model.id_basis, model.id_sigma, coeffs.alpha_id);
    accumulate(model.exp_basis, model.exp_sigma, coeffs.alpha_exp);
    return mesh;
}

} // namespace depthforge
