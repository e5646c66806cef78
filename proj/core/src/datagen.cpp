#include "depthforge/datagen.hpp"

#include "depthforge/errors.hpp"
#include "depthforge/rng.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

namespace depthforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string identity_dir(uint32_t identity) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "id_%05u", identity);
    return buf;
}

std::string image_stem(uint32_t expression, uint32_t pose) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "e%02u_p%02u", expression, pose);
    return buf;
}

} // namespace

std::vector<ManifestEntry> generate_identity(const MorphableModel& model,
                                             const GenConfig& config,
                                             uint32_t identity) {
    const auto cameras =
        hemisphere_cameras(config.radius, config.focal, config.resolution);
    const uint64_t seed = child_seed(config.seed, identity);
    Rng rng(seed);

    ShapeCoefficients coeffs = sample_coefficients(rng, model, config.trunc);

    const fs::path dir = fs::path(config.out_dir) / identity_dir(identity);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    std::vector<ManifestEntry> entries;
    entries.reserve(config.images_per_identity());

    for (uint32_t e = 0; e <= config.n_random_expressions; ++e) {
        if (e == 0) {
            // Neutral anchor: the fusion side initializes class prototypes
            // from this expression, so it is exactly zero.
            coeffs.alpha_exp.assign(model.n_exp, 0.0);
        } else {
            for (double& a : coeffs.alpha_exp) a = rng.truncated_normal(config.trunc);
        }
        const Mesh mesh = synthesize_shape(model, coeffs);
        for (uint32_t p = 0; p < cameras.size(); ++p) {
            const DepthImage depth =
                render_depth(mesh, cameras[p], config.near, config.far);
            const NormalMap normals =
                depth_to_normals(depth, cameras[p].intrinsics());

            ManifestEntry entry;
            entry.identity = identity;
            entry.expression = e;
            entry.pose = p;
            const std::string stem = image_stem(e, p);
            entry.depth_path = identity_dir(identity) + "/" + stem + ".pgm";
            entry.normal_path = identity_dir(identity) + "/" + stem + ".ppm";
            write_pgm16(depth, (fs::path(config.out_dir) / entry.depth_path).string(), seed);
            write_ppm8(normals, (fs::path(config.out_dir) / entry.normal_path).string(), seed);
            entries.push_back(std::move(entry));
        }
    }
    return entries;
}

Manifest generate_dataset(const MorphableModel& model, const GenConfig& config,
                          unsigned n_threads) {
    model.validate();
    if (config.out_dir.empty()) throw ValidationError("out_dir must be set");
    if (n_threads == 0) n_threads = 1;

    std::error_code ec;
    fs::create_directories(config.out_dir, ec);
    if (ec) throw IoError("cannot create " + config.out_dir + ": " + ec.message());

    std::vector<std::vector<ManifestEntry>> per_identity(config.n_identities);
    std::atomic<uint32_t> next{0};
    std::atomic<uint32_t> completed{0};
    std::mutex fail_mutex;
    std::string failure;

    auto worker = [&] {
        for (;;) {
            const uint32_t i = next.fetch_add(1);
            if (i >= config.n_identities) return;
            try {
                per_identity[i] = generate_identity(model, config, i);
                completed.fetch_add(1);
            } catch (const std::exception& e) {
                std::lock_guard lock(fail_mutex);
                if (failure.empty()) failure = e.what();
                return;
            }
        }
    };

    if (n_threads == 1 || config.n_identities <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const unsigned count = std::min<unsigned>(n_threads, config.n_identities);
        pool.reserve(count);
        for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (!failure.empty())
        throw IoError("dataset generation aborted after " +
                      std::to_string(completed.load()) + " of " +
                      std::to_string(config.n_identities) + " identities: " + failure);

    Manifest manifest;
    manifest.config = config;
    for (auto& entries : per_identity)
        manifest.entries.insert(manifest.entries.end(),
                                std::make_move_iterator(entries.begin()),
                                std::make_move_iterator(entries.end()));
    manifest.total_count = manifest.entries.size();
    return manifest;
}

VerifyReport verify_dataset(const Manifest& manifest, const std::string& base_dir) {
    VerifyReport report;
    auto violation = [&](const std::string& msg) {
        if (report.violations.size() < 100) report.violations.push_back(msg);
    };

    const uint64_t expected = uint64_t(manifest.config.n_identities) *
                              manifest.config.images_per_identity();
    if (manifest.total_count != expected || manifest.entries.size() != expected)
        violation("entry count does not match n_identities * (1+expressions) * 12");

    for (const ManifestEntry& entry : manifest.entries) {
        report.files_checked += 2;
        const std::string depth_path = (fs::path(base_dir) / entry.depth_path).string();
        const std::string normal_path = (fs::path(base_dir) / entry.normal_path).string();
        try {
            const DepthImage depth = read_pgm16(depth_path);
            for (uint16_t px : depth.pixels) {
                if (px != 0 && (px < manifest.config.near || px > manifest.config.far)) {
                    violation(entry.depth_path + ": depth outside clip range");
                    break;
                }
            }
        } catch (const Error& e) {
            violation(entry.depth_path + ": " + e.what());
        }
        try {
            const NormalMap normals = read_ppm8(normal_path);
            for (int y = 0; y < normals.height; ++y) {
                bool bad = false;
                for (int x = y % 3; x < normals.width; x += 3) { // strided sample
                    const auto px = normals.at(x, y);
                    if (is_background(px)) continue;
                    const Vec3 n = decode_normal(px);
                    if (std::abs(norm(n) - 1.0) > 0.02 || n.z > 0.0) {
                        violation(entry.normal_path +
                                  ": invalid normal (non-unit or back-facing)");
                        bad = true;
                        break;
                    }
                }
                if (bad) break;
            }
        } catch (const Error& e) {
            violation(entry.normal_path + ": " + e.what());
        }
    }
    return report;
}

namespace {

json config_to_json(const GenConfig& c) {
    return json{{"n_identities", c.n_identities},
                {"n_random_expressions", c.n_random_expressions},
                {"radius", c.radius},
                {"focal", c.focal},
                {"resolution", c.resolution},
                {"near", c.near},
                {"far", c.far},
                {"seed", c.seed},
                {"out_dir", c.out_dir},
                {"trunc", c.trunc}};
}

GenConfig config_from_json(const json& j) {
    GenConfig c;
    c.n_identities = j.at("n_identities").get<uint32_t>();
    c.n_random_expressions = j.at("n_random_expressions").get<uint32_t>();
    c.radius = j.at("radius").get<double>();
    c.focal = j.at("focal").get<double>();
    c.resolution = j.at("resolution").get<int>();
    c.near = j.value("near", 100.0);
    c.far = j.value("far", 2000.0);
    c.seed = j.at("seed").get<uint64_t>();
    c.out_dir = j.value("out_dir", std::string());
    c.trunc = j.value("trunc", 3.0);
    return c;
}

} // namespace

void write_manifest(const Manifest& manifest, const std::string& path) {
    json j;
    j["config"] = config_to_json(manifest.config);
    j["total_count"] = manifest.total_count;
    json entries = json::array();
    for (const ManifestEntry& e : manifest.entries) {
        entries.push_back(json{{"identity", e.identity},
                               {"expression", e.expression},
                               {"pose", e.pose},
                               {"depth", e.depth_path},
                               {"normal", e.normal_path}});
    }
    j["entries"] = std::move(entries);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open manifest for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("short write: " + path);
}

Manifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("malformed manifest JSON: " + std::string(e.what()));
    }
    Manifest m;
    try {
        m.config = config_from_json(j.at("config"));
        m.total_count = j.at("total_count").get<uint64_t>();
        for (const json& e : j.at("entries")) {
            ManifestEntry entry;
            entry.identity = e.at("identity").get<uint32_t>();
            entry.expression = e.at("expression").get<uint32_t>();
            entry.pose = e.at("pose").get<uint32_t>();
            entry.depth_path = e.at("depth").get<std::string>();
            entry.normal_path = e.at("normal").get<std::string>();
            m.entries.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw FormatError("manifest missing or mistyped field: " + std::string(e.what()));
    }
    if (m.entries.size() != m.total_count)
        throw ValidationError("manifest entry count does not match total_count");
    return m;
}

} // namespace depthforge
