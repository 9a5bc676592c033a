// cliperase: command-line front end for corpus generation, pretraining,
// unlearning, evaluation, ablation, forget-fraction sweeps and embedding export.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 runtime error.

#include "cliperase/cliperase.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace cliperase;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;
constexpr int kManifestFormatVersion = 1;
constexpr int kReportFormatVersion = 1;

// Usage errors detected by the CLI itself (missing selector, bad paths...).
struct UsageError : ConfigError {
    using ConfigError::ConfigError;
};

// ---------------------------------------------------------------------------
// Configuration

struct ModelSection {
    ArchConfig arch;
    std::uint64_t seed = 7;
};

struct SweepSection {
    std::vector<double> fractions = default_sweep_fractions();
    std::vector<Method> methods = {Method::CLIPErase, Method::GA, Method::GradDiff, Method::KLMin};
    std::uint64_t split_seed = 7;
};

struct Config {
    CorpusConfig data;
    ModelSection model;
    PretrainConfig pretrain;
    UnlearnConfig unlearn;
    SweepSection sweep;
};

CorpusConfig parse_data(const json& j) {
    CorpusConfig c;
    detail::JsonFields f(j, "data");
    f.on("num_classes", [&](const json& v) { c.num_classes = v.get<int>(); })
        .on("pairs_per_class", [&](const json& v) { c.pairs_per_class = v.get<int>(); })
        .on("d_img", [&](const json& v) { c.d_img = v.get<int>(); })
        .on("noise_sigma", [&](const json& v) { c.noise_sigma = v.get<double>(); })
        .on("max_len", [&](const json& v) { c.max_len = v.get<int>(); })
        .on("vocab_capacity", [&](const json& v) { c.vocab_capacity = v.get<int>(); })
        .on("seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); });
    f.apply();
    return c;
}

ModelSection parse_model(const json& j) {
    ModelSection m;
    detail::JsonFields f(j, "model");
    f.on("d_img", [&](const json& v) { m.arch.d_img = v.get<int>(); })
        .on("hidden", [&](const json& v) { m.arch.hidden = v.get<int>(); })
        .on("d_emb", [&](const json& v) { m.arch.d_emb = v.get<int>(); })
        .on("vocab_size", [&](const json& v) { m.arch.vocab_size = v.get<int>(); })
        .on("max_len", [&](const json& v) { m.arch.max_len = v.get<int>(); })
        .on("d_tok", [&](const json& v) { m.arch.d_tok = v.get<int>(); })
        .on("activation", [&](const json& v) { m.arch.activation = parse_activation(v.get<std::string>()); })
        .on("temperature", [&](const json& v) { m.arch.temperature = v.get<double>(); })
        .on("seed", [&](const json& v) { m.seed = v.get<std::uint64_t>(); });
    f.apply();
    m.arch.validate();
    return m;
}

SweepSection parse_sweep(const json& j) {
    SweepSection s;
    detail::JsonFields f(j, "sweep");
    f.on("fractions", [&](const json& v) { s.fractions = v.get<std::vector<double>>(); })
        .on("methods",
            [&](const json& v) {
                s.methods.clear();
                for (const auto& m : v.get<std::vector<std::string>>()) s.methods.push_back(parse_method(m));
            })
        .on("split_seed", [&](const json& v) { s.split_seed = v.get<std::uint64_t>(); });
    f.apply();
    if (s.methods.empty()) throw ConfigError("sweep.methods must name at least one method");
    return s;
}

Config load_config(const std::string& path) {
    json j = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw UsageError("cannot open config file '" + path + "'");
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
        }
    }
    json sections[5] = {json::object(), json::object(), json::object(), json::object(), json::object()};
    detail::JsonFields top(j, "");
    top.on("data", [&](const json& v) { sections[0] = v; })
        .on("model", [&](const json& v) { sections[1] = v; })
        .on("pretrain", [&](const json& v) { sections[2] = v; })
        .on("unlearn", [&](const json& v) { sections[3] = v; })
        .on("sweep", [&](const json& v) { sections[4] = v; });
    top.apply();
    Config c;
    c.data = parse_data(sections[0]);
    c.model = parse_model(sections[1]);
    c.pretrain = pretrain_config_from_json(sections[2]);
    c.unlearn = unlearn_config_from_json(sections[3]);
    c.sweep = parse_sweep(sections[4]);
    return c;
}

void apply_seed(Config& c, std::optional<std::uint64_t> seed) {
    if (!seed) return;
    c.data.seed = c.model.seed = c.pretrain.seed = c.unlearn.seed = c.sweep.split_seed = *seed;
}

json to_json(const Config& c) {
    json j;
    j["data"] = {{"num_classes", c.data.num_classes},   {"pairs_per_class", c.data.pairs_per_class},
                 {"d_img", c.data.d_img},               {"noise_sigma", c.data.noise_sigma},
                 {"max_len", c.data.max_len},           {"vocab_capacity", c.data.vocab_capacity},
                 {"seed", c.data.seed}};
    j["model"] = arch_to_json(c.model.arch);
    j["model"]["seed"] = c.model.seed;
    j["pretrain"] = cliperase::to_json(c.pretrain);
    j["unlearn"] = cliperase::to_json(c.unlearn);
    json methods = json::array();
    for (Method m : c.sweep.methods) methods.push_back(std::string(to_string(m)));
    j["sweep"] = {{"fractions", c.sweep.fractions}, {"methods", methods}, {"split_seed", c.sweep.split_seed}};
    return j;
}

// ---------------------------------------------------------------------------
// Run manifest

class Manifest {
  public:
    Manifest(std::string command, const Config& cfg, std::uint64_t seed)
        : start_(std::chrono::steady_clock::now()) {
        j_["command"] = std::move(command);
        j_["config"] = to_json(cfg);
        j_["seed"] = seed;
        j_["inputs"] = json::object();
        j_["outputs"] = json::array();
        j_["format_versions"] = {{"manifest", kManifestFormatVersion},
                                 {"corpus", kCorpusFormatVersion},
                                 {"checkpoint", kCheckpointFormatVersion},
                                 {"report", kReportFormatVersion}};
    }

    // Digest of the bytes actually consumed.
    void input(const std::string& role, const std::string& path, const std::string& bytes) {
        j_["inputs"][role] = {{"path", path}, {"sha256", sha256_hex(bytes)}};
    }

    void output(const std::string& path) { j_["outputs"].push_back(path); }
    json& extra() { return j_; }

    void write(const std::string& path) {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        j_["duration_seconds"] = secs;
        write_file_atomic(path, j_.dump(2) + "\n");
    }

  private:
    json j_;
    std::chrono::steady_clock::time_point start_;
};

std::string sibling(const std::string& path, const std::string& suffix) {
    fs::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

void ensure_parent(const std::string& path) {
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void write_output(Manifest& m, const std::string& path, const std::string& bytes) {
    ensure_parent(path);
    write_file_atomic(path, bytes);
    m.output(path);
}

// ---------------------------------------------------------------------------
// Inputs

Corpus read_corpus(Manifest& m, const std::string& path) {
    const std::string bytes = read_file_bytes(path);
    m.input("corpus", path, bytes);
    std::istringstream in(bytes);
    return parse_corpus(in);
}

DualEncoder<float> read_checkpoint(Manifest& m, const std::string& path) {
    const std::string bytes = read_file_bytes(path);
    m.input("checkpoint", path, bytes);
    return parse_checkpoint(bytes).model;
}

void check_compatible(const ArchConfig& arch, const Corpus& corpus) {
    if (arch.d_img != corpus.d_img)
        throw ConfigError("model d_img " + std::to_string(arch.d_img) + " does not match corpus d_img " +
                          std::to_string(corpus.d_img));
    if (arch.vocab_size < static_cast<int>(corpus.vocab.size()))
        throw ConfigError("model vocab_size " + std::to_string(arch.vocab_size) + " is smaller than the corpus vocabulary (" +
                          std::to_string(corpus.vocab.size()) + ")");
}

struct SplitFlags {
    std::vector<int> classes;
    std::string keyword;
    std::optional<double> fraction;

    int count() const { return !classes.empty() + !keyword.empty() + fraction.has_value(); }
};

void add_split_flags(CLI::App* cmd, SplitFlags& s) {
    cmd->add_option("--forget-class", s.classes, "Class id to forget (repeatable)");
    cmd->add_option("--forget-keyword", s.keyword, "Forget every pair whose caption contains this word");
    cmd->add_option("--forget-fraction", s.fraction, "Forget round(f * C) randomly drawn classes");
}

// Checked before any input is read, so usage mistakes are reported as such.
void check_selector(const SplitFlags& s, bool required) {
    if (s.count() > 1) throw UsageError("give only one of --forget-class, --forget-keyword, --forget-fraction");
    if (s.count() == 0 && required)
        throw UsageError("a forget selector is required (--forget-class, --forget-keyword or --forget-fraction)");
}

SplitDataset make_split(const SplitFlags& s, std::shared_ptr<const Corpus> corpus, std::uint64_t split_seed,
                        bool required) {
    check_selector(s, required);
    if (s.count() == 0) {
        SplitDataset none;
        none.all = corpus;
        none.selector = "none";
        for (const auto& p : corpus->samples) none.retain_ids.push_back(p.sample_id);
        std::sort(none.retain_ids.begin(), none.retain_ids.end());
        return none;
    }
    if (!s.classes.empty()) return split_by_class(std::move(corpus), s.classes);
    if (!s.keyword.empty()) {
        const int token = corpus->token_id(s.keyword);
        auto split = split_by_keyword(std::move(corpus), token);
        split.selector = "keyword:" + s.keyword;
        return split;
    }
    return split_by_fraction(std::move(corpus), *s.fraction, split_seed);
}

json split_json(const SplitDataset& s) {
    return {{"selector", s.selector},
            {"forget_classes", s.forget_classes},
            {"forget_count", s.forget_ids.size()},
            {"retain_count", s.retain_ids.size()}};
}

// ---------------------------------------------------------------------------
// Plots

std::string svg_line_plot(const std::string& title, const std::string& y_label, const SweepResult& r,
                          const std::vector<Method>& methods, bool forget_panel) {
    const double w = 520, h = 340, left = 60, right = 130, top = 40, bottom = 50;
    const double pw = w - left - right, ph = h - top - bottom;
    double x_max = 0.0;
    for (double f : r.forget_fractions) x_max = std::max(x_max, f);
    if (x_max <= 0.0) x_max = 1.0;
    auto X = [&](double f) { return left + pw * f / x_max; };
    auto Y = [&](double v) { return top + ph * (1.0 - v); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(2);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = t / 4.0;
        o << "<line x1=\"" << left - 4 << "\" y1=\"" << Y(v) << "\" x2=\"" << left + pw << "\" y2=\"" << Y(v)
          << "\" stroke=\"#ddd\"/>\n";
        o << "<text x=\"" << left - 8 << "\" y=\"" << Y(v) + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
    }
    for (double f : r.forget_fractions) {
        o << "<line x1=\"" << X(f) << "\" y1=\"" << top + ph << "\" x2=\"" << X(f) << "\" y2=\"" << top + ph + 4
          << "\" stroke=\"black\"/>\n";
        o << "<text x=\"" << X(f) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << f * 100 << "%</text>\n";
    }
    o << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">forget classes</text>\n";
    o << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
      << "</text>\n";
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
        const char* color = colors[mi % 6];
        std::ostringstream pts;
        pts.setf(std::ios::fixed);
        pts.precision(2);
        std::vector<std::pair<double, double>> points;
        for (const auto& row : r.rows) {
            if (row.method != methods[mi]) continue;
            const std::optional<double> v = forget_panel ? row.forget_acc : std::optional<double>(row.retain_acc);
            if (v) points.emplace_back(X(row.fraction), Y(*v));
        }
        for (const auto& [x, y] : points) pts << x << "," << y << " ";
        o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
        for (const auto& [x, y] : points)
            o << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        const double ly = top + 10 + 18.0 * static_cast<double>(mi);
        o << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        o << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << to_string(methods[mi]) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

// ---------------------------------------------------------------------------
// Commands

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string corpus;
    std::string checkpoint;
    std::string method;
    SplitFlags split;
};

Config resolved_config(const Common& c) {
    Config cfg = load_config(c.config);
    apply_seed(cfg, c.seed);
    if (!c.method.empty()) cfg.unlearn.method = parse_method(c.method);
    return cfg;
}

int cmd_gen(const Common& c) {
    const Config cfg = resolved_config(c);
    Manifest m("gen", cfg, cfg.data.seed);
    if (!c.config.empty()) m.input("config", c.config, read_file_bytes(c.config));
    const Corpus corpus = generate_corpus(cfg.data);
    write_output(m, c.out, serialize_corpus(corpus));
    m.extra()["sample_count"] = corpus.size();
    m.write(sibling(c.out, ".manifest.json"));
    std::cout << "wrote " << corpus.size() << " samples to " << c.out << "\n";
    return kExitOk;
}

int cmd_pretrain(const Common& c) {
    const Config cfg = resolved_config(c);
    Manifest m("pretrain", cfg, cfg.pretrain.seed);
    if (!c.config.empty()) m.input("config", c.config, read_file_bytes(c.config));
    const Corpus corpus = read_corpus(m, c.corpus);
    check_compatible(cfg.model.arch, corpus);
    auto res = pretrain(init_model<float>(cfg.model.arch, cfg.model.seed), corpus, cfg.pretrain);
    write_output(m, c.out, serialize_checkpoint(res.model, &res.history));
    m.extra()["selected_checkpoint_epoch"] = res.history.selected_checkpoint_epoch;
    m.write(sibling(c.out, ".manifest.json"));
    std::cout << "pretrained " << res.history.epochs.size() << " epochs; kept epoch "
              << res.history.selected_checkpoint_epoch << "; wrote " << c.out << "\n";
    return kExitOk;
}

int cmd_unlearn(const Common& c) {
    const Config cfg = resolved_config(c);
    check_selector(c.split, true);
    Manifest m("unlearn", cfg, cfg.unlearn.seed);
    if (!c.config.empty()) m.input("config", c.config, read_file_bytes(c.config));
    const auto model = read_checkpoint(m, c.checkpoint);
    const auto corpus = std::make_shared<const Corpus>(read_corpus(m, c.corpus));
    check_compatible(model.arch(), *corpus);
    const auto split = make_split(c.split, corpus, cfg.sweep.split_seed, true);
    auto res = unlearn(model, split, cfg.unlearn);
    write_output(m, c.out, serialize_checkpoint(res.model, &res.history));
    m.extra()["split"] = split_json(split);
    m.extra()["selected_checkpoint_epoch"] = res.history.selected_checkpoint_epoch;
    m.write(sibling(c.out, ".manifest.json"));
    std::cout << to_string(cfg.unlearn.method) << " unlearning of " << split.selector << ": kept epoch "
              << res.history.selected_checkpoint_epoch << "; wrote " << c.out << "\n";
    return kExitOk;
}

int cmd_eval(const Common& c) {
    const Config cfg = resolved_config(c);
    check_selector(c.split, false);
    Manifest m("eval", cfg, cfg.sweep.split_seed);
    if (!c.config.empty()) m.input("config", c.config, read_file_bytes(c.config));
    const auto model = read_checkpoint(m, c.checkpoint);
    const auto corpus = std::make_shared<const Corpus>(read_corpus(m, c.corpus));
    check_compatible(model.arch(), *corpus);
    const auto split = make_split(c.split, corpus, cfg.sweep.split_seed, false);
    const auto report = evaluate_suite(model, split);
    const std::string csv_path = sibling(c.out, ".csv");
    write_output(m, c.out, to_json(report).dump(2) + "\n");
    write_output(m, csv_path, metrics_csv(report));
    m.extra()["split"] = split_json(split);
    m.write(sibling(c.out, ".manifest.json"));
    std::cout << "retain zero-shot acc " << report.retain.zeroshot_prediction_acc;
    if (report.forget) std::cout << ", forget zero-shot acc " << report.forget->zeroshot_prediction_acc;
    std::cout << "; wrote " << c.out << " and " << csv_path << "\n";
    return kExitOk;
}

int cmd_ablate(const Common& c) {
    const Config cfg = resolved_config(c);
    check_selector(c.split, true);
    Manifest m("ablate", cfg, cfg.unlearn.seed);
    if (!c.config.empty()) m.input("config", c.config, read_file_bytes(c.config));
    const auto model = read_checkpoint(m, c.checkpoint);
    const auto corpus = std::make_shared<const Corpus>(read_corpus(m, c.corpus));
    check_compatible(model.arch(), *corpus);
    const auto split = make_split(c.split, corpus, cfg.sweep.split_seed, true);
    const auto result = run_ablation(model, split, cfg.unlearn);
    const std::string csv_path = (fs::path(c.out) / "ablation.csv").string();
    write_output(m, csv_path, ablation_csv(result));
    m.extra()["split"] = split_json(split);
    m.extra()["original"] = {{"forget_acc", result.original.forget_acc.value_or(0.0)},
                             {"retain_acc", result.original.retain_acc}};
    m.write((fs::path(c.out) / "manifest.json").string());
    std::cout << "wrote " << csv_path << "\n";
    return kExitOk;
}

int cmd_sweep(const Common& c) {
    const Config cfg = resolved_config(c);
    Manifest m("sweep", cfg, cfg.unlearn.seed);
    if (!c.config.empty()) m.input("config", c.config, read_file_bytes(c.config));
    const auto corpus = std::make_shared<const Corpus>(read_corpus(m, c.corpus));
    DualEncoder<float> model = init_model<float>(cfg.model.arch, cfg.model.seed);
    if (!c.checkpoint.empty()) {
        model = read_checkpoint(m, c.checkpoint);
        check_compatible(model.arch(), *corpus);
    } else {
        check_compatible(cfg.model.arch, *corpus);
        model = pretrain(model, *corpus, cfg.pretrain).model;
    }
    const auto result =
        sweep_forget_fraction(model, corpus, cfg.sweep.methods, cfg.sweep.fractions, cfg.unlearn, cfg.sweep.split_seed);

    const fs::path dir(c.out);
    write_output(m, (dir / "sweep.csv").string(), sweep_csv(result));
    write_output(m, (dir / "forget_acc.svg").string(),
                 svg_line_plot("Forget-set accuracy", "zero-shot accuracy", result, cfg.sweep.methods, true));
    write_output(m, (dir / "retain_acc.svg").string(),
                 svg_line_plot("Retain-set accuracy", "zero-shot accuracy", result, cfg.sweep.methods, false));

    // One manifest per (fraction, method) run.
    const std::uint64_t seed = cfg.unlearn.seed;
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
        const auto& row = result.rows[i];
        const std::size_t fi = static_cast<std::size_t>(
            std::find(result.forget_fractions.begin(), result.forget_fractions.end(), row.fraction) -
            result.forget_fractions.begin());
        json run = {{"command", "sweep-run"},
                    {"fraction", row.fraction},
                    {"method", std::string(to_string(row.method))},
                    {"forget_classes", row.forget_classes},
                    {"unlearn_seed", seed + fi},
                    {"split_seed", cfg.sweep.split_seed + fi},
                    {"unlearning_performed", row.fraction > 0.0},
                    {"forget_acc", row.forget_acc ? json(*row.forget_acc) : json()},
                    {"retain_acc", row.retain_acc},
                    {"format_versions", {{"manifest", kManifestFormatVersion}}}};
        const std::string name = "run-" + std::to_string(fi) + "-" + std::string(to_string(row.method)) + ".json";
        const std::string path = (dir / "runs" / name).string();
        ensure_parent(path);
        write_file_atomic(path, run.dump(2) + "\n");
        m.output(path);
    }
    m.write((dir / "manifest.json").string());
    std::cout << "wrote " << result.rows.size() << " sweep rows to " << (dir / "sweep.csv").string() << "\n";
    return kExitOk;
}

int cmd_export(const Common& c) {
    const Config cfg = resolved_config(c);
    Manifest m("export", cfg, cfg.model.seed);
    if (!c.config.empty()) m.input("config", c.config, read_file_bytes(c.config));
    const auto model = read_checkpoint(m, c.checkpoint);
    const Corpus corpus = read_corpus(m, c.corpus);
    check_compatible(model.arch(), corpus);
    write_output(m, c.out, embeddings_csv(model, corpus.samples));
    m.write(sibling(c.out, ".manifest.json"));
    std::cout << "wrote " << 2 * corpus.size() << " embedding records to " << c.out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unlearning experiments for a toy dual encoder"};
    app.require_subcommand(1);
    Common c;

    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--config", c.config, "JSON config with sections data, model, pretrain, unlearn, sweep");
        cmd->add_option("--seed", c.seed, "Seed overriding every seed in the config");
        cmd->add_option("--out", c.out, "Output path")->required();
    };
    auto corpus_opt = [&](CLI::App* cmd) { cmd->add_option("--corpus", c.corpus, "Corpus file")->required(); };
    auto ckpt_opt = [&](CLI::App* cmd, bool required) {
        auto* o = cmd->add_option("--checkpoint", c.checkpoint, "Model checkpoint");
        if (required) o->required();
    };

    auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus");
    common(gen);
    auto* pre = app.add_subcommand("pretrain", "Contrastively pretrain a model on a corpus");
    common(pre);
    corpus_opt(pre);
    auto* unl = app.add_subcommand("unlearn", "Unlearn a forget set from a checkpoint");
    common(unl);
    corpus_opt(unl);
    ckpt_opt(unl, true);
    add_split_flags(unl, c.split);
    unl->add_option("--method", c.method, "CLIPERASE, GA, GRADDIFF or KLMIN (overrides unlearn.method)");
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on forget and retain sets");
    common(ev);
    corpus_opt(ev);
    ckpt_opt(ev, true);
    add_split_flags(ev, c.split);
    auto* abl = app.add_subcommand("ablate", "FM / FM+RM / FM+RM+CM ablation table");
    common(abl);
    corpus_opt(abl);
    ckpt_opt(abl, true);
    add_split_flags(abl, c.split);
    auto* sw = app.add_subcommand("sweep", "Forget-fraction sweep over methods");
    common(sw);
    corpus_opt(sw);
    ckpt_opt(sw, false);
    auto* exp = app.add_subcommand("export", "Export image and text embeddings as CSV");
    common(exp);
    corpus_opt(exp);
    ckpt_opt(exp, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) return cmd_gen(c);
        if (*pre) return cmd_pretrain(c);
        if (*unl) return cmd_unlearn(c);
        if (*ev) return cmd_eval(c);
        if (*abl) return cmd_ablate(c);
        if (*sw) return cmd_sweep(c);
        if (*exp) return cmd_export(c);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
