// depthforge command-line front end.
//
// Subcommands: toy-model, generate, toy-data, train-acw, evaluate.
// Every subcommand accepts --config <file.json> whose keys mirror the long
// flag names; explicit flags win over config values, and unknown config
// keys are rejected by name. Exit codes: 0 success, 2 usage/config error,
// 1 runtime error.

#include "depthforge/acw.hpp"
#include "depthforge/datagen.hpp"
#include "depthforge/errors.hpp"
#include "depthforge/evalkit.hpp"
#include "depthforge/model3d.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace depthforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Turns the JSON config into "--key=value" tokens for options the command
// line did not set, so CLI11 applies its usual validation to both sources.
std::vector<std::string> config_tokens(CLI::App* cmd, const std::string& path,
                                       const std::vector<std::string>& given) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("malformed config JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");

    auto given_on_cli = [&](const std::string& flag) {
        for (const auto& tok : given)
            if (tok == flag || tok.rfind(flag + "=", 0) == 0) return true;
        return false;
    };

    std::vector<std::string> tokens;
    for (const auto& [key, value] : j.items()) {
        const std::string flag = "--" + key;
        if (!cmd->get_option_no_throw(flag))
            throw ConfigError("unknown config key: " + key);
        if (given_on_cli(flag)) continue; // flags win
        std::string text;
        if (value.is_string())
            text = value.get<std::string>();
        else
            text = value.dump();
        tokens.push_back(flag + "=" + text);
    }
    return tokens;
}

unsigned default_threads() {
    if (const char* env = std::getenv("DEPTHFORGE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return unsigned(v);
    }
    return 1;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << text;
    if (!out) throw IoError("short write: " + path);
}

void write_tags_csv(const std::string& path, const std::vector<std::string>& tags) {
    std::ostringstream out;
    out << "index,tag\n";
    for (size_t i = 0; i < tags.size(); ++i) out << i << "," << tags[i] << "\n";
    write_text_file(path, out.str());
}

std::vector<std::string> read_tags_csv(const std::string& path, size_t expected) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open tags file: " + path);
    std::vector<std::string> tags(expected);
    std::vector<bool> seen(expected, false);
    std::string line;
    if (!std::getline(in, line) || line.rfind("index,tag", 0) != 0)
        throw FormatError("tags file missing index,tag header: " + path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw FormatError("malformed tags line: " + line);
        const size_t index = std::stoul(line.substr(0, comma));
        if (index >= expected)
            throw FormatError("tags index out of range: " + line);
        tags[index] = line.substr(comma + 1);
        seen[index] = true;
    }
    for (size_t i = 0; i < expected; ++i)
        if (!seen[i]) throw FormatError("tags file missing index " + std::to_string(i));
    return tags;
}

// ---- toy-model -----------------------------------------------------------

struct ToyModelArgs {
    std::string out;
    uint64_t seed = 0;
    uint32_t v_rings = 24;
    uint32_t k_id = 16;
    uint32_t k_exp = 8;
};

int run_toy_model(const ToyModelArgs& a) {
    const MorphableModel model = make_toy_model(a.seed, a.v_rings, a.k_id, a.k_exp);
    save_model(model, a.out);
    std::cout << "toy model: V=" << model.n_vertices << " K_id=" << model.n_id
              << " K_exp=" << model.n_exp << " triangles=" << model.triangles.size()
              << " -> " << a.out << "\n";
    return kExitOk;
}

// ---- generate ------------------------------------------------------------

struct GenerateArgs {
    std::string model;
    GenConfig config;
    unsigned threads = 1;
    bool verify = false;
};

int run_generate(const GenerateArgs& a) {
    const MorphableModel model = load_model(a.model);
    const auto t0 = std::chrono::steady_clock::now();
    const Manifest manifest = generate_dataset(model, a.config, a.threads);
    const auto t1 = std::chrono::steady_clock::now();
    write_manifest(manifest, (fs::path(a.config.out_dir) / "manifest.json").string());

    const double secs = std::chrono::duration<double>(t1 - t0).count();
    const double rate = secs > 0.0 ? double(manifest.total_count) / secs : 0.0;
    std::cout << "identities: " << a.config.n_identities
              << ", expressions: 1+" << a.config.n_random_expressions
              << ", cameras: 12\n";
    std::cout << "depth images: " << manifest.total_count << "\n";
    std::cout << "normal images: " << manifest.total_count << "\n";
    char buf[96];
    std::snprintf(buf, sizeof buf, "elapsed: %.2f s (%.1f images/s)\n", secs, rate);
    std::cout << buf;

    if (a.verify) {
        const VerifyReport report = verify_dataset(manifest, a.config.out_dir);
        std::cout << "verify: " << report.files_checked << " files, "
                  << report.violations.size() << " violations\n";
        for (const std::string& v : report.violations) std::cout << "  " << v << "\n";
        if (!report.ok()) return kExitRuntime;
    }
    return kExitOk;
}

// ---- toy-data --------------------------------------------------------------

struct ToyDataArgs {
    std::string out;
    ToyConfig config;
};

int run_toy_data(const ToyDataArgs& a) {
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());

    const ToyData data = synth_toy_embeddings(a.config);
    const fs::path dir(a.out);
    for (const auto& [name, set] : data.protocol.gallery)
        save_embeddings(set, (dir / ("gallery_" + name + ".emb1")).string());
    for (const auto& [name, set] : data.protocol.probes)
        save_embeddings(set, (dir / ("probe_" + name + ".emb1")).string());
    for (const auto& [name, set] : data.train)
        save_embeddings(set, (dir / ("train_" + name + ".emb1")).string());
    write_tags_csv((dir / "probe_tags.csv").string(), data.protocol.probe_tags);
    write_tags_csv((dir / "train_tags.csv").string(), data.train_tags);

    const size_t probes = data.protocol.probes.begin()->second.count();
    std::cout << "toy protocol: classes=" << a.config.n_classes
              << " dim=" << a.config.dim << " gallery=" << a.config.n_classes
              << "/modality probes=" << probes << "/modality train="
              << data.train.begin()->second.count() << "/modality -> " << a.out
              << "\n";
    return kExitOk;
}

// ---- train-acw -------------------------------------------------------------

struct TrainArgs {
    std::map<std::string, std::string> train_files;   // modality -> path
    std::map<std::string, std::string> gallery_files; // modality -> path
    std::string out;
    uint64_t seed = 0;
    AcwTrainConfig config;
    double budget = -1.0; // <0 = disabled
};

int run_train(TrainArgs a) {
    if (a.train_files.empty())
        throw ConfigError("train-acw requires at least one --train-<modality> file");

    std::map<std::string, EmbeddingSet> train_sets;
    std::map<std::string, ClassPrototypes> prototypes;
    for (const auto& [name, path] : a.train_files) {
        auto gallery_it = a.gallery_files.find(name);
        if (gallery_it == a.gallery_files.end())
            throw ConfigError("modality missing: --gallery-" + name +
                              " is required to build prototypes");
        try {
            train_sets.emplace(name, load_embeddings(path));
            prototypes.emplace(
                name, ClassPrototypes::from_neutral_set(load_embeddings(gallery_it->second)));
        } catch (const Error& e) {
            throw Error("modality " + name + ": " + e.what());
        }
    }

    if (a.budget >= 0.0) a.config.budget = a.budget;
    const TrainResult result = train_acw(train_sets, std::move(prototypes), a.config, a.seed);

    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw IoError("cannot create " + a.out + ": " + ec.message());
    for (const auto& [name, head] : result.heads)
        save_head(head, (fs::path(a.out) / ("acw_" + name + ".acw1")).string());

    std::ostringstream csv;
    csv << "epoch,mean_loss\n";
    csv.precision(17);
    for (size_t e = 0; e < result.epoch_loss.size(); ++e)
        csv << e + 1 << "," << result.epoch_loss[e] << "\n";
    write_text_file((fs::path(a.out) / "loss.csv").string(), csv.str());

    std::cout << "trained " << result.heads.size() << " head(s) for " << a.config.epochs
              << " epochs; final mean loss "
              << (result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()) << " -> "
              << a.out << "\n";
    return kExitOk;
}

// ---- evaluate ----------------------------------------------------------------

struct EvaluateArgs {
    std::map<std::string, std::string> gallery_files;
    std::map<std::string, std::string> probe_files;
    std::map<std::string, std::string> head_files;
    std::string tags_file;
    std::string mode = "acw";
    std::string weights; // comma list in (rgb, depth) order for fixed mode
    std::string modality;
    std::string out_prefix = "report";
};

int run_evaluate(const EvaluateArgs& a) {
    if (a.probe_files.empty())
        throw ConfigError("evaluate requires at least one --probe-<modality> file");

    Protocol protocol;
    for (const auto& [name, path] : a.probe_files) {
        auto gallery_it = a.gallery_files.find(name);
        if (gallery_it == a.gallery_files.end())
            throw ConfigError("modality missing: --gallery-" + name);
        try {
            protocol.probes.emplace(name, load_embeddings(path));
            protocol.gallery.emplace(name, load_embeddings(gallery_it->second));
        } catch (const Error& e) {
            throw Error("modality " + name + ": " + e.what());
        }
    }
    uint32_t n_classes = 0;
    for (const auto& [name, set] : protocol.gallery)
        for (uint32_t label : set.labels) n_classes = std::max(n_classes, label + 1);
    protocol.n_classes = n_classes;

    const size_t n_probes = protocol.probes.begin()->second.count();
    protocol.probe_tags = a.tags_file.empty()
                              ? std::vector<std::string>(n_probes, kTagClean)
                              : read_tags_csv(a.tags_file, n_probes);

    FusionMode mode;
    std::map<std::string, ConfidenceHead> heads;
    if (a.mode == "acw") {
        mode = FusionMode::acw();
        for (const auto& [name, set] : protocol.probes) {
            auto it = a.head_files.find(name);
            if (it == a.head_files.end())
                throw ConfigError("acw mode requires --head-" + name);
            heads.emplace(name, load_head(it->second));
        }
    } else if (a.mode == "fixed") {
        std::map<std::string, double> weights;
        std::vector<std::string> order{kToyModalityA, kToyModalityB};
        std::vector<double> values;
        std::stringstream ss(a.weights);
        std::string item;
        while (std::getline(ss, item, ',')) values.push_back(std::stod(item));
        size_t v = 0;
        for (const std::string& name : order)
            if (protocol.probes.count(name) && v < values.size())
                weights[name] = values[v++];
        if (weights.empty()) {
            for (const auto& [name, set] : protocol.probes) weights[name] = 1.0;
        } else if (v != values.size() || weights.size() != protocol.probes.size()) {
            throw ConfigError("--weights count does not match present modalities");
        }
        mode = FusionMode::fixed(std::move(weights));
    } else if (a.mode == "single") {
        if (a.modality.empty())
            throw ConfigError("single mode requires --modality");
        mode = FusionMode::single(a.modality);
    } else {
        throw ConfigError("unknown --mode (expected acw|fixed|single): " + a.mode);
    }

    const EvalReport report = evaluate(protocol, heads, mode);
    write_text_file(a.out_prefix + ".json", report_to_json(report));
    const std::string table = report_to_table(report);
    write_text_file(a.out_prefix + ".txt", table);
    std::cout << table;
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"virtual depth-face dataset synthesis and adaptive "
                 "confidence-weighted score fusion"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    std::string config_path;

    ToyModelArgs toy_model;
    CLI::App* cmd_toy_model =
        app.add_subcommand("toy-model", "write a procedural MDL1 morphable model");
    cmd_toy_model->add_option("--config", config_path, "JSON config file");
    cmd_toy_model->add_option("--out", toy_model.out, "output .mdl1 path")->required();
    cmd_toy_model->add_option("--seed", toy_model.seed, "generator seed")->required();
    cmd_toy_model->add_option("--v-rings", toy_model.v_rings, "latitude divisions (>= 4)")
        ->check(CLI::Range(4u, 4096u));
    cmd_toy_model->add_option("--k-id", toy_model.k_id, "identity basis columns");
    cmd_toy_model->add_option("--k-exp", toy_model.k_exp, "expression basis columns");

    GenerateArgs generate;
    generate.threads = default_threads();
    CLI::App* cmd_generate =
        app.add_subcommand("generate", "render a virtual depth/normal dataset");
    cmd_generate->add_option("--config", config_path, "JSON config file");
    cmd_generate->add_option("--model", generate.model, "MDL1 model file")->required();
    cmd_generate->add_option("--out", generate.config.out_dir, "output directory")
        ->required();
    cmd_generate->add_option("--seed", generate.config.seed, "master seed")->required();
    cmd_generate->add_option("--identities", generate.config.n_identities,
                             "number of identities");
    cmd_generate->add_option("--expressions", generate.config.n_random_expressions,
                             "random expressions per identity (plus one neutral)");
    cmd_generate->add_option("--radius", generate.config.radius, "camera distance, mm")
        ->check(CLI::PositiveNumber);
    cmd_generate->add_option("--focal", generate.config.focal, "focal length, px")
        ->check(CLI::PositiveNumber);
    cmd_generate->add_option("--res", generate.config.resolution, "image resolution")
        ->check(CLI::PositiveNumber);
    cmd_generate->add_option("--near", generate.config.near, "near clip, mm");
    cmd_generate->add_option("--far", generate.config.far, "far clip, mm");
    cmd_generate->add_option("--trunc", generate.config.trunc,
                             "coefficient truncation, sigmas")
        ->check(CLI::PositiveNumber);
    cmd_generate->add_option("--threads", generate.threads,
                             "worker threads (env DEPTHFORGE_THREADS)");
    cmd_generate->add_flag("--verify", generate.verify, "verify the dataset after writing");

    ToyDataArgs toy_data;
    CLI::App* cmd_toy_data = app.add_subcommand(
        "toy-data", "write the synthetic two-modality embedding protocol");
    cmd_toy_data->add_option("--config", config_path, "JSON config file");
    cmd_toy_data->add_option("--out", toy_data.out, "output directory")->required();
    cmd_toy_data->add_option("--seed", toy_data.config.seed, "generator seed")->required();
    cmd_toy_data->add_option("--classes", toy_data.config.n_classes, "identity count");
    cmd_toy_data->add_option("--dim", toy_data.config.dim, "embedding dimension");
    cmd_toy_data->add_option("--samples", toy_data.config.samples_per_class,
                             "probe/train samples per class");
    cmd_toy_data->add_option("--sigma-clean", toy_data.config.noise_sigma_clean,
                             "clean sample noise");
    cmd_toy_data->add_option("--sigma-corrupt", toy_data.config.noise_sigma_corrupt,
                             "corrupted sample noise");
    cmd_toy_data->add_option("--corrupt-fraction", toy_data.config.corrupt_fraction,
                             "fraction of corrupted depth probes")
        ->check(CLI::Range(0.0, 1.0));

    TrainArgs train;
    std::string train_rgb, train_depth, gallery_rgb, gallery_depth;
    CLI::App* cmd_train =
        app.add_subcommand("train-acw", "train confidence heads on frozen embeddings");
    cmd_train->add_option("--config", config_path, "JSON config file");
    cmd_train->add_option("--train-rgb", train_rgb, "EMB1 training embeddings, rgb");
    cmd_train->add_option("--train-depth", train_depth, "EMB1 training embeddings, depth");
    cmd_train->add_option("--gallery-rgb", gallery_rgb,
                          "EMB1 neutral gallery (prototype source), rgb");
    cmd_train->add_option("--gallery-depth", gallery_depth,
                          "EMB1 neutral gallery (prototype source), depth");
    cmd_train->add_option("--out", train.out, "output directory")->required();
    cmd_train->add_option("--seed", train.seed, "training seed")->required();
    cmd_train->add_option("--lr", train.config.lr, "SGD learning rate")
        ->check(CLI::NonNegativeNumber);
    cmd_train->add_option("--batch", train.config.batch, "batch size")
        ->check(CLI::PositiveNumber);
    cmd_train->add_option("--epochs", train.config.epochs, "training epochs");
    cmd_train->add_option("--lambda", train.config.lambda, "confidence loss weight")
        ->check(CLI::NonNegativeNumber);
    cmd_train->add_option("--tau", train.config.tau, "softmax temperature")
        ->check(CLI::PositiveNumber);
    cmd_train->add_option("--budget", train.budget,
                          "confidence budget; adapts lambda when set");
    cmd_train->add_flag("--train-prototypes", train.config.train_prototypes,
                        "unfreeze prototype rows (experimental)");

    EvaluateArgs evaluate_args;
    std::string probe_rgb, probe_depth, eval_gallery_rgb, eval_gallery_depth;
    std::string head_rgb, head_depth;
    CLI::App* cmd_evaluate =
        app.add_subcommand("evaluate", "run rank-1 identification and write reports");
    cmd_evaluate->add_option("--config", config_path, "JSON config file");
    cmd_evaluate->add_option("--gallery-rgb", eval_gallery_rgb, "EMB1 gallery, rgb");
    cmd_evaluate->add_option("--gallery-depth", eval_gallery_depth, "EMB1 gallery, depth");
    cmd_evaluate->add_option("--probe-rgb", probe_rgb, "EMB1 probes, rgb");
    cmd_evaluate->add_option("--probe-depth", probe_depth, "EMB1 probes, depth");
    cmd_evaluate->add_option("--head-rgb", head_rgb, "ACW1 head, rgb");
    cmd_evaluate->add_option("--head-depth", head_depth, "ACW1 head, depth");
    cmd_evaluate->add_option("--tags", evaluate_args.tags_file, "probe tags CSV");
    cmd_evaluate->add_option("--mode", evaluate_args.mode, "acw | fixed | single");
    cmd_evaluate->add_option("--weights", evaluate_args.weights,
                             "fixed-mode weights, comma list in rgb,depth order");
    cmd_evaluate->add_option("--modality", evaluate_args.modality,
                             "single-mode modality name");
    cmd_evaluate->add_option("--out", evaluate_args.out_prefix,
                             "report path prefix (.json/.txt)");

    // Pre-scan for the subcommand and --config so config-supplied values
    // (including required ones like --seed) join the token stream before
    // the single CLI11 parse. Explicit flags still win via TakeLast.
    std::vector<std::string> raw_args(argv + 1, argv + argc);
    std::string pre_config;
    for (size_t i = 0; i < raw_args.size(); ++i) {
        if (raw_args[i] == "--config" && i + 1 < raw_args.size())
            pre_config = raw_args[i + 1];
        else if (raw_args[i].rfind("--config=", 0) == 0)
            pre_config = raw_args[i].substr(9);
    }

    try {
        std::vector<std::string> merged = raw_args;
        if (!pre_config.empty() && !raw_args.empty()) {
            CLI::App* active = app.get_subcommand_no_throw(raw_args[0]);
            if (active) {
                const auto extra = config_tokens(active, pre_config, raw_args);
                merged.assign({raw_args[0]});
                merged.insert(merged.end(), extra.begin(), extra.end());
                merged.insert(merged.end(), raw_args.begin() + 1, raw_args.end());
            }
        }
        std::vector<std::string> reversed(merged.rbegin(), merged.rend());
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (cmd_toy_model->parsed()) return run_toy_model(toy_model);
        if (cmd_generate->parsed()) return run_generate(generate);
        if (cmd_toy_data->parsed()) return run_toy_data(toy_data);
        if (cmd_train->parsed()) {
            if (!train_rgb.empty()) train.train_files["rgb"] = train_rgb;
            if (!train_depth.empty()) train.train_files["depth"] = train_depth;
            if (!gallery_rgb.empty()) train.gallery_files["rgb"] = gallery_rgb;
            if (!gallery_depth.empty()) train.gallery_files["depth"] = gallery_depth;
            return run_train(std::move(train));
        }
        if (cmd_evaluate->parsed()) {
            if (!eval_gallery_rgb.empty()) evaluate_args.gallery_files["rgb"] = eval_gallery_rgb;
            if (!eval_gallery_depth.empty())
                evaluate_args.gallery_files["depth"] = eval_gallery_depth;
            if (!probe_rgb.empty()) evaluate_args.probe_files["rgb"] = probe_rgb;
            if (!probe_depth.empty()) evaluate_args.probe_files["depth"] = probe_depth;
            if (!head_rgb.empty()) evaluate_args.head_files["rgb"] = head_rgb;
            if (!head_depth.empty()) evaluate_args.head_files["depth"] = head_depth;
            return run_evaluate(evaluate_args);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitConfig;
}
