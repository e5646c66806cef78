#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "depthforge/errors.hpp"
#include "depthforge/evalkit.hpp"
#include "depthforge/rng.hpp"

#include <algorithm>
#include <cmath>

using namespace depthforge;

namespace {

// Brute-force recount, deliberately sharing nothing with evaluate(): its
// own cosine, max-pooling, weighting, and argmax loops.
double oracle_rank1(const Protocol& protocol,
                    const std::map<std::string, double>& weights) {
    const EmbeddingSet& first = protocol.probes.begin()->second;
    size_t correct = 0;
    for (size_t p = 0; p < first.count(); ++p) {
        std::vector<double> fused(protocol.n_classes, 0.0);
        for (const auto& [name, weight] : weights) {
            if (weight == 0.0) continue;
            const EmbeddingSet& probes = protocol.probes.at(name);
            const EmbeddingSet& gallery = protocol.gallery.at(name);
            for (uint32_t cls = 0; cls < protocol.n_classes; ++cls) {
                double best = -1.0;
                for (size_t g = 0; g < gallery.count(); ++g) {
                    if (gallery.labels[g] != cls) continue;
                    double dot = 0.0, na = 0.0, nb = 0.0;
                    for (uint32_t d = 0; d < gallery.dim; ++d) {
                        const double a = probes.vec(p)[d];
                        const double b = gallery.vec(g)[d];
                        dot += a * b;
                        na += a * a;
                        nb += b * b;
                    }
                    best = std::max(best, dot / std::sqrt(na * nb));
                }
                fused[cls] += weight * best;
            }
        }
        size_t arg = 0;
        for (size_t i = 1; i < fused.size(); ++i)
            if (fused[i] > fused[arg]) arg = i;
        correct += arg == first.labels[p];
    }
    return 100.0 * double(correct) / double(first.count());
}

ToyConfig tiny_toy() {
    return ToyConfig{.n_classes = 8,
                     .dim = 16,
                     .samples_per_class = 5,
                     .noise_sigma_clean = 0.15,
                     .noise_sigma_corrupt = 1.2,
                     .corrupt_fraction = 0.25,
                     .seed = 19};
}

std::map<std::string, ConfidenceHead> init_heads(const Protocol& protocol) {
    std::map<std::string, ConfidenceHead> heads;
    uint64_t seed = 100;
    for (const auto& [name, set] : protocol.probes)
        heads.emplace(name, ConfidenceHead::init(set.dim, 16, seed++));
    return heads;
}

} // namespace

TEST_CASE("per-identity similarity: max pooling, duplicates, self-match") {
    EmbeddingSet gallery;
    gallery.modality = "rgb";
    gallery.dim = 4;
    gallery.append(0, std::vector<double>{1.0, 0.0, 0.0, 0.0});
    gallery.append(1, std::vector<double>{0.0, 1.0, 0.0, 0.0});
    gallery.append(1, std::vector<double>{0.0, 0.8, 0.6, 0.0}); // second image

    const std::vector<double> probe{0.0, 1.0, 0.0, 0.0};
    const auto s = per_identity_similarity(probe, gallery, 3);
    REQUIRE(s.size() == 3);
    CHECK(s[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s[1] == doctest::Approx(1.0).epsilon(1e-12)); // max over the two images
    CHECK(s[2] == -1.0); // identity absent from this gallery modality

    // Duplicated gallery images change nothing.
    EmbeddingSet dup = gallery;
    dup.append(1, std::vector<double>{0.0, 1.0, 0.0, 0.0});
    CHECK(per_identity_similarity(probe, dup, 3) == s);

    // One image per identity reduces to plain cosine logits.
    EmbeddingSet single;
    single.modality = "rgb";
    single.dim = 4;
    single.append(0, std::vector<double>{1.0, 0.0, 0.0, 0.0});
    single.append(1, std::vector<double>{0.0, 1.0, 0.0, 0.0});
    ClassPrototypes protos = ClassPrototypes::from_neutral_set(single);
    const auto via_protos = cosine_logits(protos, probe);
    const auto via_gallery = per_identity_similarity(probe, single, 2);
    for (size_t i = 0; i < via_protos.size(); ++i)
        CHECK(via_gallery[i] == doctest::Approx(via_protos[i]).epsilon(1e-12));
}

TEST_CASE("rank1 percentages") {
    std::vector<ProbeRecord> records(4);
    for (size_t i = 0; i < 4; ++i) {
        records[i].label = uint32_t(i);
        records[i].prediction = uint32_t(i);
    }
    CHECK(rank1(records) == 100.0);
    records[3].prediction = 0;
    CHECK(rank1(records) == 75.0);
    CHECK_THROWS_AS(rank1({}), ValidationError);
}

TEST_CASE("clean separable toy set scores 100 percent in every mode") {
    ToyConfig config = tiny_toy();
    config.corrupt_fraction = 0.0;
    config.noise_sigma_clean = 0.05;
    const ToyData data = synth_toy_embeddings(config);
    const auto heads = init_heads(data.protocol);

    for (const FusionMode& mode :
         {FusionMode::acw(), FusionMode::fixed({{"rgb", 1.0}, {"depth", 1.0}}),
          FusionMode::single("rgb"), FusionMode::single("depth")}) {
        const EvalReport report = evaluate(data.protocol, heads, mode);
        CHECK(report.overall_rank1 == 100.0);
    }
}

TEST_CASE("fixed(1,0) equals single(rgb) probe for probe") {
    const ToyData data = synth_toy_embeddings(tiny_toy());
    const auto heads = init_heads(data.protocol);
    const EvalReport fixed10 = evaluate(
        data.protocol, heads, FusionMode::fixed({{"rgb", 1.0}, {"depth", 0.0}}));
    const EvalReport single_rgb =
        evaluate(data.protocol, heads, FusionMode::single("rgb"));
    CHECK(fixed10.overall_rank1 == single_rgb.overall_rank1);
    REQUIRE(fixed10.probes.size() == single_rgb.probes.size());
    for (size_t i = 0; i < fixed10.probes.size(); ++i) {
        CHECK(fixed10.probes[i].prediction == single_rgb.probes[i].prediction);
        CHECK(fixed10.probes[i].margin == single_rgb.probes[i].margin);
    }
}

TEST_CASE("acw mode reports per-probe confidences for both modalities") {
    const ToyData data = synth_toy_embeddings(tiny_toy());
    const auto heads = init_heads(data.protocol);
    const EvalReport report = evaluate(data.protocol, heads, FusionMode::acw());
    REQUIRE(!report.probes.empty());
    for (const ProbeRecord& r : report.probes) {
        REQUIRE(r.confidences.size() == 2);
        CHECK(r.confidences.count("rgb") == 1);
        CHECK(r.confidences.count("depth") == 1);
        for (const auto& [name, c] : r.confidences) {
            CHECK(c > 0.0);
            CHECK(c < 1.0);
        }
    }
}

TEST_CASE("evaluate matches the brute-force oracle recount") {
    Rng rng(55);
    for (int instance = 0; instance < 10; ++instance) {
        // 20 probes over a small random protocol, fixed weights so the
        // oracle shares no state at all with evaluate().
        ToyConfig config;
        config.n_classes = 5;
        config.dim = 12;
        config.samples_per_class = 4; // 20 probes
        config.noise_sigma_clean = 0.4 + 0.2 * rng.uniform();
        config.noise_sigma_corrupt = 1.5;
        config.corrupt_fraction = 0.3 * rng.uniform();
        config.seed = 1000 + uint64_t(instance);
        const ToyData data = synth_toy_embeddings(config);

        const std::map<std::string, double> weights{{"rgb", 0.5 + rng.uniform()},
                                                    {"depth", 0.5 + rng.uniform()}};
        const EvalReport report =
            evaluate(data.protocol, {}, FusionMode::fixed(weights));
        CHECK(report.overall_rank1 == oracle_rank1(data.protocol, weights));

        // Single-modality recount.
        const EvalReport rgb_only =
            evaluate(data.protocol, {}, FusionMode::single("rgb"));
        CHECK(rgb_only.overall_rank1 ==
              oracle_rank1(data.protocol, {{"rgb", 1.0}}));
    }
}

TEST_CASE("subset decomposition and tag bookkeeping") {
    const ToyData data = synth_toy_embeddings(tiny_toy());
    const auto heads = init_heads(data.protocol);
    const EvalReport report = evaluate(data.protocol, heads, FusionMode::acw());

    size_t total_count = 0, total_correct = 0;
    for (const auto& [tag, stats] : report.subsets) {
        total_count += stats.count;
        total_correct += stats.correct;
    }
    CHECK(total_count == report.probes.size());
    CHECK(report.overall_rank1 ==
          doctest::Approx(100.0 * double(total_correct) / double(total_count))
              .epsilon(1e-12));

    // The overall rate is the count-weighted mean of subset rates.
    double weighted = 0.0;
    for (const auto& [tag, stats] : report.subsets)
        weighted += stats.rank1() * double(stats.count);
    CHECK(report.overall_rank1 ==
          doctest::Approx(weighted / double(total_count)).epsilon(1e-9));
}

TEST_CASE("permuting probe order leaves every rate unchanged") {
    const ToyData data = synth_toy_embeddings(tiny_toy());
    const auto heads = init_heads(data.protocol);
    const EvalReport before = evaluate(data.protocol, heads, FusionMode::acw());

    // Reverse the probe sample order consistently across modalities.
    Protocol reversed = data.protocol;
    for (auto& [name, set] : reversed.probes) {
        EmbeddingSet r;
        r.modality = set.modality;
        r.dim = set.dim;
        for (size_t i = set.count(); i-- > 0;) r.append(set.labels[i], set.vec(i));
        set = std::move(r);
    }
    std::reverse(reversed.probe_tags.begin(), reversed.probe_tags.end());

    const EvalReport after = evaluate(reversed, heads, FusionMode::acw());
    CHECK(after.overall_rank1 == before.overall_rank1);
    for (const auto& [tag, stats] : before.subsets) {
        REQUIRE(after.subsets.count(tag) == 1);
        CHECK(after.subsets.at(tag).count == stats.count);
        CHECK(after.subsets.at(tag).correct == stats.correct);
    }
}

TEST_CASE("toy generator: tags, determinism, degenerate corruption") {
    ToyConfig config = tiny_toy();
    config.corrupt_fraction = 0.0;
    const ToyData clean = synth_toy_embeddings(config);
    for (const std::string& tag : clean.protocol.probe_tags) CHECK(tag == kTagClean);

    const ToyData a = synth_toy_embeddings(tiny_toy());
    const ToyData b = synth_toy_embeddings(tiny_toy());
    CHECK(a.protocol.probes.at("rgb").data == b.protocol.probes.at("rgb").data);
    CHECK(a.protocol.probe_tags == b.protocol.probe_tags);
    CHECK(a.train.at("depth").data == b.train.at("depth").data);

    // sigma_corrupt == sigma_clean: tagged probes are statistically the
    // same as clean ones, so the tag split should not move rank-1 much.
    ToyConfig degenerate = tiny_toy();
    degenerate.n_classes = 12;
    degenerate.samples_per_class = 40;
    degenerate.noise_sigma_corrupt = degenerate.noise_sigma_clean;
    const ToyData d = synth_toy_embeddings(degenerate);
    const EvalReport report =
        evaluate(d.protocol, {}, FusionMode::single("depth"));
    REQUIRE(report.subsets.count(kTagClean) == 1);
    REQUIRE(report.subsets.count(kTagCorruptedB) == 1);
    const double gap = std::abs(report.subsets.at(kTagClean).rank1() -
                                report.subsets.at(kTagCorruptedB).rank1());
    CHECK(gap < 10.0);

    CHECK_THROWS_AS(synth_toy_embeddings(ToyConfig{.corrupt_fraction = 1.5}),
                    ValidationError);
}

TEST_CASE("standard toy protocol: corrupted modality is the weaker one") {
    const ToyData data = synth_toy_embeddings(ToyConfig{}); // C=50 D=64 seed=7
    const EvalReport rgb = evaluate(data.protocol, {}, FusionMode::single("rgb"));
    const EvalReport depth =
        evaluate(data.protocol, {}, FusionMode::single("depth"));
    CHECK(depth.overall_rank1 < rgb.overall_rank1);
    // Within depth, corrupted probes do worse than clean ones.
    CHECK(depth.subsets.at(kTagCorruptedB).rank1() <
          depth.subsets.at(kTagClean).rank1());
}

TEST_CASE("fixed-weight fusion is invariant to uniform weight scaling") {
    const ToyData data = synth_toy_embeddings(tiny_toy());
    const EvalReport half = evaluate(
        data.protocol, {}, FusionMode::fixed({{"rgb", 0.5}, {"depth", 0.5}}));
    const EvalReport one = evaluate(
        data.protocol, {}, FusionMode::fixed({{"rgb", 1.0}, {"depth", 1.0}}));
    CHECK(half.overall_rank1 == one.overall_rank1);
    for (size_t i = 0; i < half.probes.size(); ++i)
        CHECK(half.probes[i].prediction == one.probes[i].prediction);
}

TEST_CASE("baseline_fixed_fusion matches fuse with constant confidences") {
    const std::vector<double> s1{0.9, 0.1, 0.3};
    const std::vector<double> s2{0.2, 0.8, 0.1};
    std::vector<std::span<const double>> sims{s1, s2};
    const std::vector<double> w{0.7, 1.3};
    CHECK(baseline_fixed_fusion(sims, w) == fuse(sims, w));

    // Hand instance from the fusion example.
    const auto fused = baseline_fixed_fusion(
        {std::span<const double>(s1), std::span<const double>(s2)},
        std::vector<double>{1.0, 1.0});
    CHECK(fused[0] == doctest::Approx(1.1).epsilon(1e-12));

    CHECK_THROWS_AS(baseline_fixed_fusion(sims, std::vector<double>{1.0, -1.0}),
                    ValidationError);
}

TEST_CASE("report serialization carries the schema fields") {
    const ToyData data = synth_toy_embeddings(tiny_toy());
    const auto heads = init_heads(data.protocol);
    const EvalReport report = evaluate(data.protocol, heads, FusionMode::acw());

    const std::string json_text = report_to_json(report);
    CHECK(json_text.find("\"overall_rank1\"") != std::string::npos);
    CHECK(json_text.find("\"subsets\"") != std::string::npos);
    CHECK(json_text.find("\"probes\"") != std::string::npos);
    CHECK(json_text.find("\"confidences\"") != std::string::npos);
    CHECK(json_text.find("\"margin\"") != std::string::npos);

    const std::string table = report_to_table(report);
    CHECK(table.find("overall") != std::string::npos);
    CHECK(table.find("clean") != std::string::npos);
}

TEST_CASE("protocol validation rejects inconsistent inputs") {
    ToyData data = synth_toy_embeddings(tiny_toy());

    Protocol bad = data.protocol;
    bad.probe_tags.pop_back();
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = data.protocol;
    bad.probes.at("rgb").labels[0] += 1; // misaligned labels
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    bad = data.protocol;
    bad.gallery.erase("depth");
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    // Single-modality protocols are fine (missing-modality path).
    Protocol single = data.protocol;
    single.gallery.erase("depth");
    single.probes.erase("depth");
    CHECK_NOTHROW(single.validate());
    const EvalReport report = evaluate(single, {}, FusionMode::single("rgb"));
    CHECK(report.probes.size() == single.probes.at("rgb").count());
}
