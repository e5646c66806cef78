#pragma once

// Gallery/probe rank-1 identification harness: per-identity similarity
// with max-pooling over multi-image galleries, adaptive / fixed / single
// fusion modes, subset-tagged reporting, and a seeded two-modality toy
// embedding generator for desk-scale experiments.

#include "depthforge/acw.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace depthforge {

struct Protocol {
    uint32_t n_classes = 0;
    std::map<std::string, EmbeddingSet> gallery; // >=1 sample per identity
    std::map<std::string, EmbeddingSet> probes;  // sample-aligned across modalities
    std::vector<std::string> probe_tags;         // one per probe sample

    void validate() const;
};

// s_i = max over identity i's gallery embeddings of cosine similarity.
// Identities with no gallery image in this modality score -1.
std::vector<double> per_identity_similarity(std::span<const double> probe,
                                            const EmbeddingSet& gallery,
                                            uint32_t n_classes);

struct ProbeRecord {
    size_t index = 0;
    uint32_t label = 0;
    uint32_t prediction = 0;
    std::map<std::string, double> confidences;
    double margin = 0.0; // fused top-1 minus top-2
    std::string tag;
};

double rank1(const std::vector<ProbeRecord>& records);

struct SubsetStats {
    size_t count = 0;
    size_t correct = 0;
    double rank1() const { return count ? 100.0 * double(correct) / double(count) : 0.0; }
};

struct EvalReport {
    std::string mode;
    double overall_rank1 = 0.0;
    std::map<std::string, SubsetStats> subsets;
    std::vector<ProbeRecord> probes;
};

struct FusionMode {
    enum class Kind { Acw, Fixed, Single };
    Kind kind = Kind::Acw;
    std::map<std::string, double> weights; // Fixed mode
    std::string modality;                  // Single mode

    static FusionMode acw() { return {Kind::Acw, {}, {}}; }
    static FusionMode fixed(std::map<std::string, double> w) {
        return {Kind::Fixed, std::move(w), {}};
    }
    static FusionMode single(std::string modality) {
        return {Kind::Single, {}, std::move(modality)};
    }
    std::string describe() const;
};

// Runs the identification protocol probe by probe and aggregates rank-1
// overall and per subset tag. Heads are only consulted in Acw mode.
EvalReport evaluate(const Protocol& protocol,
                    const std::map<std::string, ConfidenceHead>& heads,
                    const FusionMode& mode);

// s_i = sum_j w_j * s^j_i with constant per-modality weights.
std::vector<double> baseline_fixed_fusion(
    const std::vector<std::span<const double>>& similarities,
    std::span<const double> weights);

struct ToyConfig {
    uint32_t n_classes = 50;
    uint32_t dim = 64;
    uint32_t samples_per_class = 20;
    double noise_sigma_clean = 0.15;
    double noise_sigma_corrupt = 1.5;
    double corrupt_fraction = 0.3;
    uint64_t seed = 7;
};

// Modality tags used by the toy generator; "depth" receives the corrupted
// fraction, mirroring the usual quality gap between the two sensors.
inline constexpr const char* kToyModalityA = "rgb";
inline constexpr const char* kToyModalityB = "depth";
inline constexpr const char* kTagClean = "clean";
inline constexpr const char* kTagCorruptedB = "corrupted-B";

struct ToyData {
    Protocol protocol;
    std::map<std::string, EmbeddingSet> train; // sample-aligned, labeled
    std::vector<std::string> train_tags;
};

// Seeded two-modality synthetic protocol: per-class unit-sphere means,
// samples = unit-normalized(mean + sigma * gaussian), a corrupt_fraction
// of modality-B probe and train samples drawn with sigma_corrupt and
// tagged "corrupted-B". The gallery holds one clean neutral sample per
// class and modality; the training split draws 40x samples_per_class so
// the default SGD recipe has enough update steps.
ToyData synth_toy_embeddings(const ToyConfig& config);

// Report serialization: JSON (schema below) plus an aligned text table.
// {config, overall_rank1, subsets: {tag: {count, rank1}}, probes: [...]}
std::string report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

} // namespace depthforge
