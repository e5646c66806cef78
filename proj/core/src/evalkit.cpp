#include "depthforge/evalkit.hpp"

#include "depthforge/errors.hpp"
#include "depthforge/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace depthforge {

using nlohmann::json;

namespace {

double vector_norm(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    return std::sqrt(sq);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
    return d / (vector_norm(a) * vector_norm(b));
}

} // namespace

void Protocol::validate() const {
    if (gallery.empty() || probes.empty())
        throw ValidationError("protocol requires gallery and probes");

    const EmbeddingSet& first = probes.begin()->second;
    for (const auto& [name, set] : probes) {
        set.validate();
        if (set.count() != first.count() || set.labels != first.labels)
            throw ValidationError("probe modalities are not sample-aligned: " + name);
        if (gallery.find(name) == gallery.end())
            throw ValidationError("probe modality missing from gallery: " + name);
    }
    if (probe_tags.size() != first.count())
        throw ValidationError("probe_tags length does not match probe count");

    std::vector<bool> covered(n_classes, false);
    for (const auto& [name, set] : gallery) {
        set.validate();
        for (uint32_t label : set.labels) {
            if (label >= n_classes)
                throw ValidationError("gallery label outside [0, n_classes)");
            covered[label] = true;
        }
    }
    for (uint32_t label : first.labels)
        if (label >= n_classes || !covered[label])
            throw ValidationError("probe label missing from gallery");
}

std::vector<double> per_identity_similarity(std::span<const double> probe,
                                            const EmbeddingSet& gallery,
                                            uint32_t n_classes) {
    if (gallery.count() == 0)
        throw ValidationError("gallery is empty for this modality");
    if (gallery.dim != probe.size())
        throw ValidationError("probe dimension does not match gallery");
    // Identities absent from this modality's gallery bottom out at the
    // cosine minimum.
    std::vector<double> s(n_classes, -1.0);
    for (size_t g = 0; g < gallery.count(); ++g) {
        const uint32_t label = gallery.labels[g];
        if (label >= n_classes)
            throw ValidationError("gallery label outside [0, n_classes)");
        s[label] = std::max(s[label], cosine(probe, gallery.vec(g)));
    }
    return s;
}

double rank1(const std::vector<ProbeRecord>& records) {
    if (records.empty()) throw ValidationError("rank1 of empty records");
    size_t correct = 0;
    for (const ProbeRecord& r : records) correct += r.prediction == r.label;
    return 100.0 * double(correct) / double(records.size());
}

std::string FusionMode::describe() const {
    switch (kind) {
        case Kind::Acw: return "acw";
        case Kind::Single: return "single(" + modality + ")";
        case Kind::Fixed: {
            std::string out = "fixed(";
            bool sep = false;
            for (const auto& [name, w] : weights) {
                if (sep) out += ",";
                char buf[48];
                std::snprintf(buf, sizeof buf, "%s=%g", name.c_str(), w);
                out += buf;
                sep = true;
            }
            return out + ")";
        }
    }
    return "?";
}

EvalReport evaluate(const Protocol& protocol,
                    const std::map<std::string, ConfidenceHead>& heads,
                    const FusionMode& mode) {
    protocol.validate();

    std::vector<std::string> modalities;
    switch (mode.kind) {
        case FusionMode::Kind::Single:
            if (protocol.probes.find(mode.modality) == protocol.probes.end())
                throw ValidationError("single-mode modality not in protocol: " +
                                      mode.modality);
            modalities.push_back(mode.modality);
            break;
        case FusionMode::Kind::Fixed:
            for (const auto& [name, w] : mode.weights) {
                if (w < 0.0)
                    throw ValidationError("fixed-fusion weights must be >= 0");
                if (w == 0.0) continue; // zero weight drops the modality
                if (protocol.probes.find(name) == protocol.probes.end())
                    throw ValidationError("fixed-mode modality not in protocol: " + name);
                modalities.push_back(name);
            }
            if (modalities.empty())
                throw ValidationError("fixed mode requires a positive weight");
            break;
        case FusionMode::Kind::Acw:
            for (const auto& [name, set] : protocol.probes) {
                if (heads.find(name) == heads.end())
                    throw ValidationError("no confidence head for modality: " + name);
                modalities.push_back(name);
            }
            break;
    }

    EvalReport report;
    report.mode = mode.describe();
    const size_t n_probes = protocol.probes.begin()->second.count();
    report.probes.reserve(n_probes);

    for (size_t p = 0; p < n_probes; ++p) {
        ProbeRecord rec;
        rec.index = p;
        rec.label = protocol.probes.begin()->second.labels[p];
        rec.tag = protocol.probe_tags[p];

        std::vector<std::vector<double>> sims;
        std::vector<double> weights;
        for (const std::string& name : modalities) {
            const EmbeddingSet& probe_set = protocol.probes.at(name);
            sims.push_back(per_identity_similarity(probe_set.vec(p),
                                                   protocol.gallery.at(name),
                                                   protocol.n_classes));
            double w = 1.0;
            if (mode.kind == FusionMode::Kind::Acw) {
                w = confidence(heads.at(name), probe_set.vec(p));
                rec.confidences[name] = w;
            } else if (mode.kind == FusionMode::Kind::Fixed) {
                w = mode.weights.at(name);
            }
            weights.push_back(w);
        }

        std::vector<std::span<const double>> sim_spans;
        sim_spans.reserve(sims.size());
        for (const auto& s : sims) sim_spans.emplace_back(s);
        const std::vector<double> fused = fuse(sim_spans, weights);
        rec.prediction = argmax_lowest(fused);

        double top = -std::numeric_limits<double>::infinity();
        double second = top;
        for (double v : fused) {
            if (v > top) {
                second = top;
                top = v;
            } else if (v > second) {
                second = v;
            }
        }
        rec.margin = fused.size() > 1 ? top - second : 0.0;

        SubsetStats& subset = report.subsets[rec.tag];
        subset.count += 1;
        subset.correct += rec.prediction == rec.label;
        report.probes.push_back(std::move(rec));
    }
    report.overall_rank1 = rank1(report.probes);
    return report;
}

std::vector<double> baseline_fixed_fusion(
    const std::vector<std::span<const double>>& similarities,
    std::span<const double> weights) {
    for (double w : weights)
        if (!(w > 0.0)) throw ValidationError("fixed-fusion weights must be positive");
    return fuse(similarities, weights);
}

namespace {

void fill_gaussian(Rng& rng, std::span<double> out, double sigma) {
    for (double& v : out) v = sigma * rng.normal();
}

void unit_sphere(Rng& rng, std::span<double> out) {
    double sq = 0.0;
    do {
        sq = 0.0;
        for (double& v : out) {
            v = rng.normal();
            sq += v * v;
        }
    } while (sq < 1e-12);
    const double inv = 1.0 / std::sqrt(sq);
    for (double& v : out) v *= inv;
}

std::vector<double> noisy_sample(Rng& rng, std::span<const double> mean,
                                 double sigma,
                                 std::span<const double> junk_dir = {},
                                 double junk_scale = 0.0) {
    std::vector<double> v(mean.size());
    fill_gaussian(rng, v, sigma);
    for (size_t i = 0; i < v.size(); ++i) v[i] += mean[i];
    if (!junk_dir.empty())
        for (size_t i = 0; i < v.size(); ++i) v[i] += junk_scale * junk_dir[i];
    const double n = vector_norm(v);
    for (double& x : v) x /= n;
    return v;
}

} // namespace

ToyData synth_toy_embeddings(const ToyConfig& config) {
    if (config.corrupt_fraction < 0.0 || config.corrupt_fraction > 1.0)
        throw ValidationError("corrupt_fraction must lie in [0, 1]");
    if (config.noise_sigma_clean < 0.0 || config.noise_sigma_corrupt < 0.0)
        throw ValidationError("noise sigmas must be >= 0");
    if (config.n_classes == 0 || config.dim == 0)
        throw ValidationError("toy config requires classes and dim > 0");

    Rng rng(mix64(config.seed));

    // Independent per-modality class means on the unit sphere.
    const size_t d = config.dim;
    std::vector<double> means_a(size_t(config.n_classes) * d);
    std::vector<double> means_b(size_t(config.n_classes) * d);
    for (uint32_t c = 0; c < config.n_classes; ++c) {
        unit_sphere(rng, {means_a.data() + c * d, d});
        unit_sphere(rng, {means_b.data() + c * d, d});
    }

    // Corrupted draws drift toward a fixed junk direction, the way
    // backbones map unusable inputs into a common low-information region
    // of feature space. The drift scales with the excess noise, so
    // degenerate corruption (sigma_corrupt == sigma_clean) stays
    // identical in law to a clean draw.
    std::vector<double> junk_b(d);
    unit_sphere(rng, junk_b);
    const double junk_scale =
        30.0 * std::max(0.0, config.noise_sigma_corrupt - config.noise_sigma_clean);

    auto make_set = [&](const char* modality) {
        EmbeddingSet s;
        s.modality = modality;
        s.dim = config.dim;
        return s;
    };

    ToyData data;
    data.protocol.n_classes = config.n_classes;
    EmbeddingSet gallery_a = make_set(kToyModalityA);
    EmbeddingSet gallery_b = make_set(kToyModalityB);
    EmbeddingSet probe_a = make_set(kToyModalityA);
    EmbeddingSet probe_b = make_set(kToyModalityB);
    EmbeddingSet train_a = make_set(kToyModalityA);
    EmbeddingSet train_b = make_set(kToyModalityB);

    // Gallery: one clean neutral per class and modality.
    for (uint32_t c = 0; c < config.n_classes; ++c) {
        gallery_a.append(c, noisy_sample(rng, {means_a.data() + c * d, d},
                                         config.noise_sigma_clean));
        gallery_b.append(c, noisy_sample(rng, {means_b.data() + c * d, d},
                                         config.noise_sigma_clean));
    }

    auto draw_split = [&](EmbeddingSet& set_a, EmbeddingSet& set_b,
                          std::vector<std::string>& tags, uint32_t per_class) {
        for (uint32_t c = 0; c < config.n_classes; ++c) {
            for (uint32_t s = 0; s < per_class; ++s) {
                set_a.append(c, noisy_sample(rng, {means_a.data() + c * d, d},
                                             config.noise_sigma_clean));
                const bool corrupt = rng.uniform() < config.corrupt_fraction;
                if (corrupt) {
                    set_b.append(c, noisy_sample(rng, {means_b.data() + c * d, d},
                                                 config.noise_sigma_corrupt, junk_b,
                                                 junk_scale));
                } else {
                    set_b.append(c, noisy_sample(rng, {means_b.data() + c * d, d},
                                                 config.noise_sigma_clean));
                }
                tags.push_back(corrupt ? kTagCorruptedB : kTagClean);
            }
        }
    };
    draw_split(probe_a, probe_b, data.protocol.probe_tags, config.samples_per_class);
    // The training split is 40x the probe split: the default SGD recipe
    // (batch 384, 20 epochs) needs enough update steps for the heads to
    // separate clean from corrupted inputs.
    draw_split(train_a, train_b, data.train_tags, 40 * config.samples_per_class);

    data.protocol.gallery.emplace(kToyModalityA, std::move(gallery_a));
    data.protocol.gallery.emplace(kToyModalityB, std::move(gallery_b));
    data.protocol.probes.emplace(kToyModalityA, std::move(probe_a));
    data.protocol.probes.emplace(kToyModalityB, std::move(probe_b));
    data.train.emplace(kToyModalityA, std::move(train_a));
    data.train.emplace(kToyModalityB, std::move(train_b));
    return data;
}

std::string report_to_json(const EvalReport& report) {
    json j;
    j["config"] = json{{"mode", report.mode}};
    j["overall_rank1"] = report.overall_rank1;
    json subsets = json::object();
    for (const auto& [tag, stats] : report.subsets)
        subsets[tag] = json{{"count", stats.count}, {"rank1", stats.rank1()}};
    j["subsets"] = std::move(subsets);
    json probes = json::array();
    for (const ProbeRecord& r : report.probes) {
        json rec{{"id", r.index},
                 {"label", r.label},
                 {"prediction", r.prediction},
                 {"margin", r.margin},
                 {"tag", r.tag}};
        rec["confidences"] = json::object();
        for (const auto& [name, c] : r.confidences) rec["confidences"][name] = c;
        probes.push_back(std::move(rec));
    }
    j["probes"] = std::move(probes);
    return j.dump(2) + "\n";
}

std::string report_to_table(const EvalReport& report) {
    std::string out = "mode: " + report.mode + "\n";
    char line[96];
    std::snprintf(line, sizeof line, "%-16s %8s %8s\n", "subset", "count", "rank-1");
    out += line;
    for (const auto& [tag, stats] : report.subsets) {
        std::snprintf(line, sizeof line, "%-16s %8zu %8.2f\n", tag.c_str(),
                      stats.count, stats.rank1());
        out += line;
    }
    std::snprintf(line, sizeof line, "%-16s %8zu %8.2f\n", "overall",
                  report.probes.size(), report.overall_rank1);
    out += line;
    return out;
}

} // namespace depthforge
