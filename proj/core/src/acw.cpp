#include "depthforge/acw.hpp"

#include "depthforge/errors.hpp"
#include "depthforge/rng.hpp"
#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace depthforge {

namespace {

constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};
constexpr char kHeadMagic[4] = {'A', 'C', 'W', '1'};
constexpr uint32_t kEmbVersion = 1;

// Keeps c strictly inside (0,1) even when the sigmoid saturates in double
// precision; the clamp bound tracks sigmoid's own derivative scale there.
constexpr double kConfEps = 1e-12;

double sigmoid(double a) {
    if (a >= 0.0) {
        const double e = std::exp(-a);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(a);
    return e / (1.0 + e);
}

double vector_norm(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    return std::sqrt(sq);
}

// Forward pass with intermediates retained for backprop.
struct ForwardState {
    std::vector<double> x_hat;  // normalized input
    std::vector<double> hidden; // relu(W1 x_hat + b1)
    double pre_out = 0.0;       // w2 . hidden + b2
    double c = 0.0;
};

ForwardState head_forward(const ConfidenceHead& head, std::span<const double> x) {
    if (x.size() != head.input_dim)
        throw ValidationError("embedding dimension does not match head input_dim");
    const double n = vector_norm(x);
    if (!(n > 0.0)) throw ValidationError("embedding has zero norm");

    ForwardState s;
    s.x_hat.resize(head.input_dim);
    for (size_t i = 0; i < x.size(); ++i) s.x_hat[i] = x[i] / n;

    s.hidden.resize(head.hidden_dim);
    for (uint32_t h = 0; h < head.hidden_dim; ++h) {
        const double* row = head.w1.data() + size_t(h) * head.input_dim;
        double a = head.b1[h];
        for (uint32_t i = 0; i < head.input_dim; ++i) a += row[i] * s.x_hat[i];
        s.hidden[h] = a > 0.0 ? a : 0.0;
    }
    double a = head.b2;
    for (uint32_t h = 0; h < head.hidden_dim; ++h) a += head.w2[h] * s.hidden[h];
    s.pre_out = a;
    s.c = std::clamp(sigmoid(a), kConfEps, 1.0 - kConfEps);
    return s;
}

} // namespace

void EmbeddingSet::append(uint32_t label, std::span<const double> v) {
    if (v.size() != dim) throw ValidationError("embedding dimension mismatch in append");
    labels.push_back(label);
    data.insert(data.end(), v.begin(), v.end());
}

void EmbeddingSet::validate() const {
    if (data.size() != size_t(dim) * labels.size())
        throw ValidationError("embedding data size does not match count x dim");
    for (double x : data)
        if (!std::isfinite(x)) throw ValidationError("embedding contains non-finite value");
    for (size_t i = 0; i < count(); ++i)
        if (!(vector_norm(vec(i)) > 0.0))
            throw ValidationError("embedding has zero norm");
}

void save_embeddings(const EmbeddingSet& set, const std::string& path) {
    set.validate();
    if (set.modality.size() > 255)
        throw ValidationError("modality tag longer than 255 bytes");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    detail::write_bytes(out, kEmbMagic, 4);
    detail::write_u32_le(out, kEmbVersion);
    detail::write_u32_le(out, uint32_t(set.count()));
    detail::write_u32_le(out, set.dim);
    const uint8_t tag_len = uint8_t(set.modality.size());
    detail::write_bytes(out, &tag_len, 1);
    detail::write_bytes(out, set.modality.data(), set.modality.size());
    for (uint32_t label : set.labels) detail::write_u32_le(out, label);
    for (double v : set.data) detail::write_f32_le(out, float(v));
    out.flush();
    if (!out) throw IoError("short write: " + path);
}

EmbeddingSet load_embeddings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    detail::read_bytes(in, magic, 4, "EMB1 magic");
    if (std::memcmp(magic, kEmbMagic, 4) != 0)
        throw FormatError("not an EMB1 file: " + path);
    const uint32_t version = detail::read_u32_le(in, "EMB1 version");
    if (version != kEmbVersion)
        throw FormatError("unsupported EMB1 version " + std::to_string(version));
    const uint32_t count = detail::read_u32_le(in, "EMB1 count");
    const uint32_t dim = detail::read_u32_le(in, "EMB1 dim");
    uint8_t tag_len = 0;
    detail::read_bytes(in, &tag_len, 1, "EMB1 tag length");
    EmbeddingSet set;
    set.dim = dim;
    set.modality.resize(tag_len);
    if (tag_len) detail::read_bytes(in, set.modality.data(), tag_len, "EMB1 tag");
    set.labels.resize(count);
    for (uint32_t& label : set.labels) label = detail::read_u32_le(in, "EMB1 labels");
    set.data.resize(size_t(count) * dim);
    for (double& v : set.data) v = detail::read_f32_le(in, "EMB1 vectors");
    if (!detail::at_eof(in))
        throw FormatError("trailing bytes after EMB1 payload: " + path);
    set.validate();
    return set;
}

ConfidenceHead ConfidenceHead::init(uint32_t input_dim, uint32_t hidden_dim,
                                    uint64_t seed) {
    ConfidenceHead head;
    head.input_dim = input_dim;
    head.hidden_dim = hidden_dim;
    head.w1.resize(size_t(hidden_dim) * input_dim);
    head.b1.assign(hidden_dim, 0.0);
    head.w2.resize(hidden_dim);
    Rng rng(seed);
    const double s1 = 1.0 / std::sqrt(double(input_dim));
    for (double& w : head.w1) w = rng.uniform(-s1, s1);
    const double s2 = 1.0 / std::sqrt(double(hidden_dim));
    for (double& w : head.w2) w = rng.uniform(-s2, s2);
    return head;
}

void save_head(const ConfidenceHead& head, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    detail::write_bytes(out, kHeadMagic, 4);
    detail::write_u32_le(out, head.input_dim);
    detail::write_u32_le(out, head.hidden_dim);
    for (double v : head.w1) detail::write_f64_le(out, v);
    for (double v : head.b1) detail::write_f64_le(out, v);
    for (double v : head.w2) detail::write_f64_le(out, v);
    detail::write_f64_le(out, head.b2);
    out.flush();
    if (!out) throw IoError("short write: " + path);
}

ConfidenceHead load_head(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    detail::read_bytes(in, magic, 4, "ACW1 magic");
    if (std::memcmp(magic, kHeadMagic, 4) != 0)
        throw FormatError("not an ACW1 file: " + path);
    ConfidenceHead head;
    head.input_dim = detail::read_u32_le(in, "ACW1 dim");
    head.hidden_dim = detail::read_u32_le(in, "ACW1 hidden");
    head.w1.resize(size_t(head.hidden_dim) * head.input_dim);
    head.b1.resize(head.hidden_dim);
    head.w2.resize(head.hidden_dim);
    for (double& v : head.w1) v = detail::read_f64_le(in, "ACW1 W1");
    for (double& v : head.b1) v = detail::read_f64_le(in, "ACW1 b1");
    for (double& v : head.w2) v = detail::read_f64_le(in, "ACW1 w2");
    head.b2 = detail::read_f64_le(in, "ACW1 b2");
    if (!detail::at_eof(in))
        throw FormatError("trailing bytes after ACW1 payload: " + path);
    for (double v : head.w1)
        if (!std::isfinite(v)) throw FormatError("non-finite head parameter: " + path);
    return head;
}

double confidence(const ConfidenceHead& head, std::span<const double> embedding) {
    return head_forward(head, embedding).c;
}

ClassPrototypes ClassPrototypes::from_neutral_set(const EmbeddingSet& set) {
    set.validate();
    ClassPrototypes p;
    p.n_classes = uint32_t(set.count());
    p.dim = set.dim;
    p.rows.assign(size_t(p.n_classes) * p.dim, 0.0);
    std::vector<bool> seen(p.n_classes, false);
    for (size_t i = 0; i < set.count(); ++i) {
        const uint32_t label = set.labels[i];
        if (label >= p.n_classes)
            throw ValidationError("prototype labels must be dense in [0, C)");
        if (seen[label])
            throw ValidationError("duplicate class in prototype set");
        seen[label] = true;
        const auto v = set.vec(i);
        const double n = vector_norm(v);
        for (uint32_t d = 0; d < p.dim; ++d) p.rows[size_t(label) * p.dim + d] = v[d] / n;
    }
    return p;
}

std::vector<double> cosine_logits(const ClassPrototypes& prototypes,
                                  std::span<const double> embedding) {
    if (embedding.size() != prototypes.dim)
        throw ValidationError("embedding dimension does not match prototypes");
    const double n = vector_norm(embedding);
    if (!(n > 0.0)) throw ValidationError("embedding has zero norm");
    std::vector<double> z(prototypes.n_classes);
    for (uint32_t i = 0; i < prototypes.n_classes; ++i) {
        const auto row = prototypes.row(i);
        double d = 0.0;
        for (size_t k = 0; k < row.size(); ++k) d += row[k] * embedding[k];
        const double rn = vector_norm(row);
        z[i] = d / (n * rn);
    }
    return z;
}

std::vector<double> interpolate_logits(std::span<const double> z, uint32_t y,
                                       double c) {
    if (y >= z.size()) throw ValidationError("label out of range");
    std::vector<double> out(z.size());
    for (size_t i = 0; i < z.size(); ++i)
        out[i] = c * z[i] + (1.0 - c) * (i == y ? 1.0 : 0.0);
    return out;
}

double task_loss(std::span<const double> z_prime, uint32_t y, double tau) {
    if (y >= z_prime.size()) throw ValidationError("label out of range");
    if (!(tau > 0.0)) throw ValidationError("tau must be positive");
    double mx = -std::numeric_limits<double>::infinity();
    for (double z : z_prime) mx = std::max(mx, tau * z);
    double sum = 0.0;
    for (double z : z_prime) sum += std::exp(tau * z - mx);
    return mx + std::log(sum) - tau * z_prime[y];
}

double confidence_loss(double c) {
    if (!(c > 0.0 && c < 1.0))
        throw ValidationError("confidence must lie strictly in (0,1)");
    return -std::log(c);
}

double total_loss(const std::vector<ModalityTerm>& modalities, double lambda,
                  double tau) {
    if (modalities.empty())
        throw ValidationError("total_loss requires at least one modality");
    double loss = 0.0;
    for (const ModalityTerm& m : modalities) {
        const auto z_prime = interpolate_logits(m.logits, m.label, m.confidence);
        loss += task_loss(z_prime, m.label, tau) +
                lambda * confidence_loss(m.confidence);
    }
    return loss;
}

namespace {

// Per-sample gradient accumulation shared by backward() and the training
// loop. Logits may be precomputed (training) or derived on the fly.
struct GradAccum {
    std::vector<double> w1, b1, w2;
    double b2 = 0.0;
    double loss_sum = 0.0;
    double conf_loss_sum = 0.0;

    explicit GradAccum(const ConfidenceHead& head)
        : w1(head.w1.size(), 0.0), b1(head.b1.size(), 0.0),
          w2(head.w2.size(), 0.0) {}
};

// Returns the sample's confidence so the optional prototype-gradient pass
// can reuse it without a second forward.
double accumulate_sample(const ConfidenceHead& head, std::span<const double> x,
                         std::span<const double> z, uint32_t y, double lambda,
                         double tau, GradAccum& acc) {
    const ForwardState fwd = head_forward(head, x);
    const double c = fwd.c;

    const auto z_prime = interpolate_logits(z, y, c);
    const double lt = task_loss(z_prime, y, tau);
    const double lc = -std::log(c);
    acc.loss_sum += lt + lambda * lc;
    acc.conf_loss_sum += lc;

    // softmax probabilities of tau * z'
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z_prime) mx = std::max(mx, tau * v);
    double denom = 0.0;
    std::vector<double> p(z_prime.size());
    for (size_t i = 0; i < z_prime.size(); ++i) {
        p[i] = std::exp(tau * z_prime[i] - mx);
        denom += p[i];
    }
    for (double& v : p) v /= denom;

    // dL_t/dc = tau * sum_i (p_i - [i==y]) (z_i - [i==y])
    double dlt_dc = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        const double onehot = i == y ? 1.0 : 0.0;
        dlt_dc += (p[i] - onehot) * (z[i] - onehot);
    }
    dlt_dc *= tau;

    // dL/da through the sigmoid; dL_c/dc = -1/c.
    const double dl_dc = dlt_dc - lambda / c;
    const double dl_da = dl_dc * c * (1.0 - c);

    acc.b2 += dl_da;
    for (uint32_t h = 0; h < head.hidden_dim; ++h) {
        acc.w2[h] += dl_da * fwd.hidden[h];
        if (fwd.hidden[h] > 0.0) {
            const double g = dl_da * head.w2[h];
            acc.b1[h] += g;
            double* row = acc.w1.data() + size_t(h) * head.input_dim;
            for (uint32_t i = 0; i < head.input_dim; ++i)
                row[i] += g * fwd.x_hat[i];
        }
    }

    return c;
}

// dL_t/dz_i for one sample given its softmax probabilities; used by the
// trainable-prototype pass. dz'_i/dz_i = c.
std::vector<double> logit_gradient(std::span<const double> z_prime, uint32_t y,
                                   double c, double tau) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z_prime) mx = std::max(mx, tau * v);
    double denom = 0.0;
    std::vector<double> g(z_prime.size());
    for (size_t i = 0; i < z_prime.size(); ++i) {
        g[i] = std::exp(tau * z_prime[i] - mx);
        denom += g[i];
    }
    for (size_t i = 0; i < g.size(); ++i) {
        const double onehot = i == y ? 1.0 : 0.0;
        g[i] = tau * (g[i] / denom - onehot) * c;
    }
    return g;
}

} // namespace

HeadGradients backward(const ConfidenceHead& head, const ClassPrototypes& prototypes,
                       const EmbeddingSet& samples, std::span<const size_t> batch,
                       double lambda, double tau) {
    if (batch.empty()) throw ValidationError("backward requires a non-empty batch");
    GradAccum acc(head);
    for (size_t idx : batch) {
        if (idx >= samples.count()) throw ValidationError("batch index out of range");
        const auto x = samples.vec(idx);
        const auto z = cosine_logits(prototypes, x);
        const uint32_t y = samples.labels[idx];
        if (y >= prototypes.n_classes)
            throw ValidationError("label without a prototype row");
        accumulate_sample(head, x, z, y, lambda, tau, acc);
    }
    const double inv = 1.0 / double(batch.size());
    HeadGradients g;
    g.w1 = std::move(acc.w1);
    g.b1 = std::move(acc.b1);
    g.w2 = std::move(acc.w2);
    for (double& v : g.w1) v *= inv;
    for (double& v : g.b1) v *= inv;
    for (double& v : g.w2) v *= inv;
    g.b2 = acc.b2 * inv;
    g.mean_loss = acc.loss_sum * inv;
    g.mean_conf_loss = acc.conf_loss_sum * inv;
    return g;
}

TrainResult train_acw(const std::map<std::string, EmbeddingSet>& train_sets,
                      std::map<std::string, ClassPrototypes> prototypes,
                      const AcwTrainConfig& config, uint64_t seed) {
    if (train_sets.empty()) throw ValidationError("no training modalities");
    if (!(config.lambda >= 0.0)) throw ValidationError("lambda must be >= 0");
    if (!(config.lr >= 0.0)) throw ValidationError("lr must be >= 0");
    if (!(config.tau > 0.0)) throw ValidationError("tau must be > 0");
    if (config.batch == 0) throw ValidationError("batch must be positive");

    const size_t n = train_sets.begin()->second.count();
    if (n == 0) throw ValidationError("empty training set");
    for (const auto& [name, set] : train_sets) {
        set.validate();
        if (set.count() != n)
            throw ValidationError("modalities are not sample-aligned: " + name);
        if (set.labels != train_sets.begin()->second.labels)
            throw ValidationError("modality labels disagree: " + name);
        auto it = prototypes.find(name);
        if (it == prototypes.end())
            throw ValidationError("no prototypes for modality: " + name);
        if (it->second.dim != set.dim)
            throw ValidationError("prototype dimension mismatch: " + name);
        for (uint32_t label : set.labels)
            if (label >= it->second.n_classes)
                throw ValidationError("label without a prototype row: " + name);
    }

    TrainResult result;
    uint64_t head_seed = seed;
    for (const auto& [name, set] : train_sets)
        result.heads.emplace(name, ConfidenceHead::init(set.dim, 64, mix64(head_seed++)));

    // With frozen prototypes the logits never change; precompute them.
    std::map<std::string, std::vector<double>> logits; // count x C per modality
    if (!config.train_prototypes) {
        for (const auto& [name, set] : train_sets) {
            auto& block = logits[name];
            const uint32_t c = prototypes.at(name).n_classes;
            block.resize(set.count() * size_t(c));
            for (size_t i = 0; i < set.count(); ++i) {
                const auto z = cosine_logits(prototypes.at(name), set.vec(i));
                std::copy(z.begin(), z.end(), block.begin() + i * c);
            }
        }
    }

    double lambda = config.lambda;
    Rng rng(mix64(seed ^ 0x5eedf00dull));
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss_sum = 0.0;

        for (size_t start = 0; start < n; start += config.batch) {
            const size_t stop = std::min(n, start + config.batch);
            const std::span<const size_t> batch{order.data() + start, stop - start};

            double batch_conf_loss = 0.0;
            std::vector<std::pair<std::string, GradAccum>> updates;
            std::map<std::string, std::vector<double>> proto_grads;

            for (const auto& [name, set] : train_sets) {
                const ConfidenceHead& head = result.heads.at(name);
                const ClassPrototypes& proto = prototypes.at(name);
                GradAccum acc(head);
                std::vector<double>* pg = nullptr;
                if (config.train_prototypes)
                    pg = &proto_grads.emplace(name,
                             std::vector<double>(proto.rows.size(), 0.0))
                              .first->second;

                for (size_t idx : batch) {
                    std::vector<double> z_storage;
                    std::span<const double> z;
                    if (config.train_prototypes) {
                        z_storage = cosine_logits(proto, set.vec(idx));
                        z = z_storage;
                    } else {
                        z = {logits.at(name).data() + idx * proto.n_classes,
                             proto.n_classes};
                    }
                    const double c = accumulate_sample(head, set.vec(idx), z,
                                                       set.labels[idx], lambda,
                                                       config.tau, acc);
                    if (pg) {
                        const auto x = set.vec(idx);
                        const double xn = vector_norm(x);
                        const auto z_prime =
                            interpolate_logits(z, set.labels[idx], c);
                        const auto dz =
                            logit_gradient(z_prime, set.labels[idx], c, config.tau);
                        // d cos(x, r_i) / dr_i = (x_hat - z_i * r_hat_i) / |r_i|
                        for (size_t i = 0; i < dz.size(); ++i) {
                            const auto row = proto.row(i);
                            const double rn = vector_norm(row);
                            double* out = pg->data() + i * proto.dim;
                            for (uint32_t d = 0; d < proto.dim; ++d)
                                out[d] += dz[i] * (x[d] / xn - z[i] * row[d] / rn) / rn;
                        }
                    }
                }
                batch_conf_loss += acc.conf_loss_sum / double(batch.size());
                epoch_loss_sum += acc.loss_sum;
                updates.emplace_back(name, std::move(acc));
            }

            const double step = config.lr / double(batch.size());
            for (auto& [name, acc] : updates) {
                ConfidenceHead& head = result.heads.at(name);
                for (size_t i = 0; i < head.w1.size(); ++i)
                    head.w1[i] -= step * acc.w1[i];
                for (size_t i = 0; i < head.b1.size(); ++i)
                    head.b1[i] -= step * acc.b1[i];
                for (size_t i = 0; i < head.w2.size(); ++i)
                    head.w2[i] -= step * acc.w2[i];
                head.b2 -= step * acc.b2;
            }
            for (auto& [name, grad] : proto_grads) {
                ClassPrototypes& proto = prototypes.at(name);
                for (size_t i = 0; i < proto.rows.size(); ++i)
                    proto.rows[i] -= step * grad[i];
            }

            if (config.budget) {
                const double mean_lc = batch_conf_loss / double(train_sets.size());
                lambda *= mean_lc > *config.budget ? 1.01 : 1.0 / 1.01;
            }
        }
        result.epoch_loss.push_back(epoch_loss_sum / double(n));
    }

    result.prototypes = std::move(prototypes);
    return result;
}

std::vector<double> fuse(const std::vector<std::span<const double>>& similarities,
                         std::span<const double> confidences) {
    if (similarities.empty())
        throw ValidationError("fuse requires at least one modality");
    if (similarities.size() != confidences.size())
        throw ValidationError("similarities/confidences count mismatch");
    const size_t c = similarities.front().size();
    for (const auto& s : similarities)
        if (s.size() != c) throw ValidationError("similarity vector length mismatch");
    std::vector<double> fused(c, 0.0);
    for (size_t j = 0; j < similarities.size(); ++j)
        for (size_t i = 0; i < c; ++i) fused[i] += confidences[j] * similarities[j][i];
    return fused;
}

uint32_t argmax_lowest(std::span<const double> scores) {
    if (scores.empty()) throw ValidationError("argmax of empty scores");
    uint32_t best = 0;
    for (uint32_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

FusionResult identify(const std::map<std::string, std::vector<double>>& probe,
                      const std::map<std::string, ClassPrototypes>& gallery,
                      const std::map<std::string, ConfidenceHead>& heads) {
    if (probe.empty()) throw ValidationError("identify requires at least one modality");

    FusionResult result;
    std::vector<std::span<const double>> sims;
    std::vector<double> confs;
    for (const auto& [name, embedding] : probe) {
        const auto proto_it = gallery.find(name);
        if (proto_it == gallery.end())
            throw ValidationError("no gallery prototypes for modality: " + name);
        const auto head_it = heads.find(name);
        if (head_it == heads.end())
            throw ValidationError("no confidence head for modality: " + name);
        result.similarities[name] = cosine_logits(proto_it->second, embedding);
        result.confidences[name] = confidence(head_it->second, embedding);
    }
    for (const auto& [name, s] : result.similarities) {
        sims.emplace_back(s);
        confs.push_back(result.confidences.at(name));
    }
    result.fused = fuse(sims, confs);
    result.predicted = argmax_lowest(result.fused);
    return result;
}

} // namespace depthforge
