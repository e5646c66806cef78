#include <benchmark/benchmark.h>

#include "depthforge/acw.hpp"
#include "depthforge/datagen.hpp"
#include "depthforge/evalkit.hpp"
#include "depthforge/model3d.hpp"
#include "depthforge/renderer.hpp"

using namespace depthforge;

namespace {

const MorphableModel& toy_model() {
    static const MorphableModel model = make_toy_model(1);
    return model;
}

Mesh sample_mesh(uint64_t seed) {
    Rng rng(seed);
    return synthesize_shape(toy_model(), sample_coefficients(rng, toy_model()));
}

void BM_SynthesizeShape(benchmark::State& state) {
    Rng rng(2);
    const ShapeCoefficients coeffs = sample_coefficients(rng, toy_model());
    for (auto _ : state) {
        Mesh mesh = synthesize_shape(toy_model(), coeffs);
        benchmark::DoNotOptimize(mesh.vertices.data());
    }
}
BENCHMARK(BM_SynthesizeShape);

void BM_RenderDepth128(benchmark::State& state) {
    const Mesh mesh = sample_mesh(3);
    const Camera cam = hemisphere_cameras(450.0, 180.0, 128)[size_t(state.range(0))];
    for (auto _ : state) {
        DepthImage img = render_depth(mesh, cam);
        benchmark::DoNotOptimize(img.pixels.data());
    }
}
BENCHMARK(BM_RenderDepth128)->Arg(0)->Arg(5)->Arg(11);

void BM_DepthToNormals(benchmark::State& state) {
    const Mesh mesh = sample_mesh(3);
    const Camera cam = hemisphere_cameras(450.0, 180.0, 128)[5];
    const DepthImage depth = render_depth(mesh, cam);
    for (auto _ : state) {
        NormalMap nm = depth_to_normals(depth, cam.intrinsics());
        benchmark::DoNotOptimize(nm.pixels.data());
    }
}
BENCHMARK(BM_DepthToNormals);

void BM_IdentityPipeline(benchmark::State& state) {
    // One identity end to end: sample, synthesize, render all 12 poses,
    // derive normals. File I/O excluded.
    const auto cams = hemisphere_cameras(450.0, 180.0, 128);
    uint64_t seed = 10;
    for (auto _ : state) {
        Rng rng(seed++);
        const Mesh mesh =
            synthesize_shape(toy_model(), sample_coefficients(rng, toy_model()));
        for (const Camera& cam : cams) {
            const DepthImage depth = render_depth(mesh, cam);
            NormalMap nm = depth_to_normals(depth, cam.intrinsics());
            benchmark::DoNotOptimize(nm.pixels.data());
        }
    }
}
BENCHMARK(BM_IdentityPipeline)->Unit(benchmark::kMillisecond);

void BM_ConfidenceForward(benchmark::State& state) {
    const ConfidenceHead head = ConfidenceHead::init(512, 64, 1);
    Rng rng(2);
    std::vector<double> x(512);
    for (double& v : x) v = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(confidence(head, x));
}
BENCHMARK(BM_ConfidenceForward);

void BM_CosineLogits(benchmark::State& state) {
    const uint32_t classes = uint32_t(state.range(0));
    EmbeddingSet set;
    set.modality = "rgb";
    set.dim = 512;
    Rng rng(3);
    std::vector<double> v(512);
    for (uint32_t c = 0; c < classes; ++c) {
        for (double& x : v) x = rng.normal();
        set.append(c, v);
    }
    const ClassPrototypes protos = ClassPrototypes::from_neutral_set(set);
    for (double& x : v) x = rng.normal();
    for (auto _ : state) {
        auto z = cosine_logits(protos, v);
        benchmark::DoNotOptimize(z.data());
    }
}
BENCHMARK(BM_CosineLogits)->Arg(50)->Arg(340);

void BM_AcwBackwardBatch(benchmark::State& state) {
    const uint32_t C = 50, D = 64;
    EmbeddingSet protos_set;
    protos_set.modality = "rgb";
    protos_set.dim = D;
    Rng rng(4);
    std::vector<double> v(D);
    for (uint32_t c = 0; c < C; ++c) {
        for (double& x : v) x = rng.normal();
        protos_set.append(c, v);
    }
    const ClassPrototypes protos = ClassPrototypes::from_neutral_set(protos_set);

    EmbeddingSet samples;
    samples.modality = "rgb";
    samples.dim = D;
    for (uint32_t i = 0; i < 384; ++i) {
        for (double& x : v) x = rng.normal();
        samples.append(i % C, v);
    }
    const ConfidenceHead head = ConfidenceHead::init(D, 64, 5);
    std::vector<size_t> batch(384);
    for (size_t i = 0; i < batch.size(); ++i) batch[i] = i;

    for (auto _ : state) {
        HeadGradients g = backward(head, protos, samples, batch, 0.1, 8.0);
        benchmark::DoNotOptimize(g.w1.data());
    }
}
BENCHMARK(BM_AcwBackwardBatch)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
