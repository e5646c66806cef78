#pragma once

// Linear morphable shape model: a face is the mean shape plus weighted
// identity and expression basis displacements. Includes a procedural toy
// model so the full pipeline runs without licensed model assets, and the
// MDL1 binary codec.

#include "depthforge/rng.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace depthforge {

using Triangle = std::array<uint32_t, 3>;

struct MorphableModel {
    uint32_t n_vertices = 0;   // V
    uint32_t n_id = 0;         // identity basis columns
    uint32_t n_exp = 0;        // expression basis columns

    std::vector<double> mean_shape; // 3V, millimeters, xyz interleaved
    std::vector<double> id_basis;   // 3V x n_id, column-major, unit columns
    std::vector<double> id_sigma;   // n_id, strictly positive
    std::vector<double> exp_basis;  // 3V x n_exp, column-major
    std::vector<double> exp_sigma;  // n_exp, strictly positive
    std::vector<Triangle> triangles;

    // Throws ValidationError when any structural invariant fails.
    void validate() const;
};

struct ShapeCoefficients {
    std::vector<double> alpha_id;  // sigma-scaled units (standard deviations)
    std::vector<double> alpha_exp;
};

struct Mesh {
    std::vector<double> vertices; // 3V, millimeters
    std::vector<Triangle> triangles;

    size_t vertex_count() const { return vertices.size() / 3; }
};

// MDL1 codec. Writing then reading reproduces the model bit for bit.
MorphableModel load_model(const std::string& path);
void save_model(const MorphableModel& model, const std::string& path);

// Deterministic procedural head: an ellipsoid (90 x 120 x 100 mm semi-axes,
// facing +z) triangulated as a latitude/longitude grid with v_rings
// latitude divisions, plus seeded low-frequency displacement bases with
// unit-norm columns and decaying sigmas.
MorphableModel make_toy_model(uint64_t seed, uint32_t v_rings = 24,
                              uint32_t k_id = 16, uint32_t k_exp = 8);

// Truncated standard normal per entry: redrawn until |x| <= trunc.
ShapeCoefficients sample_coefficients(Rng& rng, const MorphableModel& model,
                                      double trunc = 3.0);

// vertices = mean + id_basis * (alpha_id .* id_sigma)
//                 + exp_basis * (alpha_exp .* exp_sigma)
Mesh synthesize_shape(const MorphableModel& model, const ShapeCoefficients& coeffs);

} // namespace depthforge
