#pragma once

// Hemisphere camera rig, pinhole projection, z-buffer depth rasterization
// and normal-map derivation from depth. All functions are pure; any number
// of renders may run concurrently.

#include "depthforge/geometry.hpp"
#include "depthforge/image.hpp"
#include "depthforge/model3d.hpp"

#include <vector>

namespace depthforge {

struct Intrinsics {
    double focal = 0.0; // pixels
    double cx = 0.0;
    double cy = 0.0;
};

struct Camera {
    double yaw_deg = 0.0;   // rotation about +y, 0 = straight ahead of the face
    double pitch_deg = 0.0; // elevation, positive looks down from above
    double radius = 0.0;    // distance from target, millimeters
    double focal = 0.0;     // pixels
    double cx = 0.0;        // principal point
    double cy = 0.0;
    int width = 0;
    int height = 0;
    Vec3 target; // face centroid the camera looks at

    Vec3 position() const;
    Intrinsics intrinsics() const { return {focal, cx, cy}; }
};

struct ProjectedVertex {
    double u = 0.0;
    double v = 0.0;
    double z = 0.0;        // view-space depth, millimeters
    bool in_front = false; // z > 0; callers clip points behind the camera
};

// Fixed 12-view grid: pitch in {-30, 0, +30} x yaw in {-60, -20, +20, +60}
// degrees, every camera on the radius-sphere in the +z half-space in front
// of the face, looking at the target with up = +y.
std::vector<Camera> hemisphere_cameras(double radius, double focal, int res,
                                       Vec3 target = {});

ProjectedVertex project_vertex(const Camera& cam, Vec3 point);

// Per-pixel nearest view-space depth over all covered triangles. Coverage
// is tested at pixel centers with a top-left fill rule; depth interpolation
// is perspective-correct (1/z interpolated, then inverted). Triangles with
// any vertex closer than `near` are discarded whole; pixels farther than
// `far` stay background. No backface culling: the z-test resolves
// self-occlusion.
DepthImage render_depth(const Mesh& mesh, const Camera& cam,
                        double near = 100.0, double far = 2000.0);

// Central-difference normals from back-projected depth, oriented toward
// the camera (decoded n_z <= 0). Pixels that are background or touch a
// background/image-border neighbor encode to (0,0,0).
NormalMap depth_to_normals(const DepthImage& depth, const Intrinsics& intr);

} // namespace depthforge
