#pragma once

// Adaptive confidence weighting for score-level fusion of per-modality
// face embeddings. A small sigmoid-output MLP per modality maps an
// embedding to a confidence c in (0,1); training interpolates each
// modality's cosine logits toward the ground-truth one-hot by 1-c under a
// softmax cross-entropy task loss plus a -log(c) confidence penalty.
// Fusion sums confidence-weighted similarity vectors; modalities that are
// absent simply drop out of the sum.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace depthforge {

// A labeled block of fixed-dimension embeddings for one modality.
// Vectors are stored row-major; EMB1 files carry f32 payloads, widened to
// double in memory.
struct EmbeddingSet {
    std::string modality;
    uint32_t dim = 0;
    std::vector<uint32_t> labels;
    std::vector<double> data; // count x dim

    size_t count() const { return labels.size(); }
    std::span<const double> vec(size_t i) const {
        return {data.data() + i * dim, dim};
    }
    void append(uint32_t label, std::span<const double> v);
    void validate() const;
};

void save_embeddings(const EmbeddingSet& set, const std::string& path);
EmbeddingSet load_embeddings(const std::string& path);

// One hidden layer, rectified units, sigmoid output:
//   c = sigmoid(w2 . relu(W1 x_hat + b1) + b2)
// where x_hat is the unit-normalized embedding. With all parameters zero
// the output is exactly 0.5.
struct ConfidenceHead {
    uint32_t input_dim = 0;  // D
    uint32_t hidden_dim = 0; // H
    std::vector<double> w1;  // H x D, row-major
    std::vector<double> b1;  // H
    std::vector<double> w2;  // H
    double b2 = 0.0;

    // W1 and w2 uniform in +-1/sqrt(fan-in), biases zero.
    static ConfidenceHead init(uint32_t input_dim, uint32_t hidden_dim,
                               uint64_t seed);
};

void save_head(const ConfidenceHead& head, const std::string& path);
ConfidenceHead load_head(const std::string& path);

double confidence(const ConfidenceHead& head, std::span<const double> embedding);

// One unit-normalized row per class, initialized from each class's
// neutral-image feature so training logits match inference cosines.
struct ClassPrototypes {
    uint32_t n_classes = 0;
    uint32_t dim = 0;
    std::vector<double> rows; // n_classes x dim, unit rows
    bool frozen = true;

    std::span<const double> row(size_t i) const {
        return {rows.data() + i * dim, dim};
    }
    // Requires exactly one embedding per class with dense labels [0, C).
    static ClassPrototypes from_neutral_set(const EmbeddingSet& set);
};

// z_i = cos(embedding, prototype_i), in [-1, 1].
std::vector<double> cosine_logits(const ClassPrototypes& prototypes,
                                  std::span<const double> embedding);

// z'_i = c * z_i + (1 - c) * [i == y]
std::vector<double> interpolate_logits(std::span<const double> z, uint32_t y,
                                       double c);

// -log softmax(tau * z')_y, log-sum-exp stabilized.
double task_loss(std::span<const double> z_prime, uint32_t y, double tau);

// -log c
double confidence_loss(double c);

struct ModalityTerm {
    std::vector<double> logits; // z, pre-interpolation
    uint32_t label = 0;
    double confidence = 0.0;
};

// Sum over modalities of task loss (after interpolation) + lambda * confidence loss.
double total_loss(const std::vector<ModalityTerm>& modalities, double lambda,
                  double tau);

struct HeadGradients {
    std::vector<double> w1;
    std::vector<double> b1;
    std::vector<double> w2;
    double b2 = 0.0;
    double mean_loss = 0.0;      // mean per-sample task + lambda * confidence loss
    double mean_conf_loss = 0.0; // mean -log c over the batch
};

// Exact analytic gradient of the mean single-modality loss over the batch
// with respect to the head parameters. Prototypes receive no gradient.
HeadGradients backward(const ConfidenceHead& head, const ClassPrototypes& prototypes,
                       const EmbeddingSet& samples, std::span<const size_t> batch,
                       double lambda, double tau);

struct AcwTrainConfig {
    double lambda = 0.1;
    double lr = 0.006;
    uint32_t batch = 384;
    uint32_t epochs = 20;
    double tau = 8.0;
    std::optional<double> budget;  // when set, lambda adapts toward this mean -log c
    bool train_prototypes = false; // experimentation escape hatch; default frozen
};

struct TrainResult {
    std::map<std::string, ConfidenceHead> heads;
    std::map<std::string, ClassPrototypes> prototypes;
    std::vector<double> epoch_loss; // mean total loss per epoch
};

// Plain SGD over per-sample-aligned modalities with a seeded shuffle.
// Deterministic: the same seed yields bit-identical heads.
TrainResult train_acw(const std::map<std::string, EmbeddingSet>& train_sets,
                      std::map<std::string, ClassPrototypes> prototypes,
                      const AcwTrainConfig& config, uint64_t seed);

// s_i = sum_j c_j * s_j_i over whichever modalities are present.
std::vector<double> fuse(const std::vector<std::span<const double>>& similarities,
                         std::span<const double> confidences);

struct FusionResult {
    std::map<std::string, std::vector<double>> similarities;
    std::map<std::string, double> confidences;
    std::vector<double> fused;
    uint32_t predicted = 0; // argmax, lowest index on ties
};

uint32_t argmax_lowest(std::span<const double> scores);

// Cosine similarities and confidence per available modality, fused scores,
// and the predicted identity.
FusionResult identify(const std::map<std::string, std::vector<double>>& probe,
                      const std::map<std::string, ClassPrototypes>& gallery,
                      const std::map<std::string, ConfidenceHead>& heads);

} // namespace depthforge
