#pragma once

// Parallel virtual dataset generation: identities x expressions x poses,
// rendered to depth + normal files with a JSON manifest. Identities are
// independent work units with child seeds derived from (master seed,
// identity index), so output is bit-identical at any worker count.

#include "depthforge/model3d.hpp"
#include "depthforge/renderer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace depthforge {

struct GenConfig {
    uint32_t n_identities = 10;
    uint32_t n_random_expressions = 40; // plus one neutral per identity
    double radius = 450.0;              // camera rig
    double focal = 180.0;
    int resolution = 128;
    double near = 100.0;
    double far = 2000.0;
    uint64_t seed = 0;
    std::string out_dir;
    double trunc = 3.0;

    uint32_t images_per_identity() const {
        return (1 + n_random_expressions) * 12;
    }
};

struct ManifestEntry {
    uint32_t identity = 0;
    uint32_t expression = 0; // 0 = neutral
    uint32_t pose = 0;       // camera index in the hemisphere grid
    std::string depth_path;  // relative to out_dir
    std::string normal_path;
};

struct Manifest {
    GenConfig config;
    std::vector<ManifestEntry> entries;
    uint64_t total_count = 0;
};

// Renders every (expression, pose) image of one identity into
// out_dir/id_{i:05}/e{e:02}_p{p:02}.{pgm,ppm} and returns the manifest
// entries in (expression, pose) order. Deterministic in (config.seed, i).
std::vector<ManifestEntry> generate_identity(const MorphableModel& model,
                                             const GenConfig& config,
                                             uint32_t identity);

// Runs generate_identity over a worker pool and assembles the manifest in
// identity order. Throws IoError on write failures.
Manifest generate_dataset(const MorphableModel& model, const GenConfig& config,
                          unsigned n_threads = 1);

struct VerifyReport {
    size_t files_checked = 0;
    std::vector<std::string> violations;

    bool ok() const { return violations.empty(); }
};

// Re-reads every manifest entry and checks file existence, PNM headers,
// the depth clip-range invariant and unit-norm of sampled normals.
VerifyReport verify_dataset(const Manifest& manifest, const std::string& base_dir);

void write_manifest(const Manifest& manifest, const std::string& path);
Manifest read_manifest(const std::string& path);

} // namespace depthforge
