#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dtnh/data.hpp"
#include "dtnh/dataset.hpp"
#include "dtnh/errors.hpp"
#include "dtnh/net.hpp"
#include "dtnh/reg.hpp"
#include "dtnh/trainer.hpp"

namespace dtnh {

// ---------------------------------------------------------------------------
// Config files: [section] headers over key=value lines, '#' comments.
// ---------------------------------------------------------------------------

using ConfigMap = std::map<std::string, std::string>;  // "section.key" -> value

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline ConfigMap parse_config_text(std::istream& is, const std::string& origin) {
    ConfigMap cfg;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + " line " + std::to_string(line_no) +
                              ": expected key=value, got '" + t + "'");
        std::string key = trim(t.substr(0, eq));
        if (section.empty())
            throw ConfigError(origin + " line " + std::to_string(line_no) +
                              ": key '" + key + "' outside any [section]");
        cfg[section + "." + key] = trim(t.substr(eq + 1));
    }
    return cfg;
}

inline ConfigMap parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    return parse_config_text(is, path);
}

// ---------------------------------------------------------------------------
// Network description strings, e.g.
//   "dense:2:16,relu:tap,dense:16:3"
//   "conv:1:4:3:3:1,relu,flatten,dense:144:10"
// A trailing ":tap" marks the layer as a feature map.
// ---------------------------------------------------------------------------

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

inline std::size_t parse_size(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size() || v < 0) throw std::invalid_argument(s);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw ConfigError("bad " + what + ": '" + s + "'");
    }
}

inline double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("bad " + what + ": '" + s + "'");
    }
}

inline std::vector<std::size_t> parse_shape(const std::string& s) {
    std::vector<std::size_t> shape;
    for (const auto& tok : split(s, 'x'))
        shape.push_back(parse_size(tok, "input extent"));
    if (shape.empty()) throw ConfigError("empty input shape");
    return shape;
}

inline std::vector<LayerSpec> parse_layers(const std::string& desc) {
    std::vector<LayerSpec> layers;
    for (const auto& token : split(desc, ',')) {
        auto parts = split(trim(token), ':');
        if (parts.empty() || parts[0].empty())
            throw ConfigError("empty layer token in '" + desc + "'");
        bool tap = false;
        if (parts.back() == "tap") {
            tap = true;
            parts.pop_back();
        }
        const std::string& kind = parts[0];
        if (kind == "dense") {
            if (parts.size() != 3)
                throw ConfigError("dense layer needs dense:IN:OUT, got '" + token + "'");
            layers.push_back(LayerSpec::dense(parse_size(parts[1], "dense in"),
                                              parse_size(parts[2], "dense out"), tap));
        } else if (kind == "relu") {
            if (parts.size() != 1)
                throw ConfigError("relu takes no extents, got '" + token + "'");
            layers.push_back(LayerSpec::relu(tap));
        } else if (kind == "conv") {
            if (parts.size() != 5 && parts.size() != 6)
                throw ConfigError("conv layer needs conv:IC:OC:KH:KW[:STRIDE], got '" +
                                  token + "'");
            layers.push_back(LayerSpec::conv2d(
                parse_size(parts[1], "conv in_ch"), parse_size(parts[2], "conv out_ch"),
                parse_size(parts[3], "conv kh"), parse_size(parts[4], "conv kw"),
                parts.size() == 6 ? parse_size(parts[5], "conv stride") : 1, tap));
        } else if (kind == "flatten") {
            layers.push_back(LayerSpec::flatten());
        } else if (kind == "head") {
            LayerSpec l;
            l.kind = LayerKind::SoftmaxCrossEntropyHead;
            layers.push_back(l);
        } else {
            throw ConfigError("unknown layer kind '" + kind + "'");
        }
    }
    return layers;
}

/// If no layer is explicitly tapped, tap every hidden post-activation (relu)
/// layer; nets without relu fall back to every layer but the last.
inline void apply_default_taps(std::vector<LayerSpec>& layers) {
    for (const auto& l : layers)
        if (l.tap) return;
    bool any = false;
    for (auto& l : layers)
        if (l.kind == LayerKind::Relu) {
            l.tap = true;
            any = true;
        }
    if (!any && layers.size() > 1)
        for (std::size_t i = 0; i + 1 < layers.size(); ++i) layers[i].tap = true;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::vector<std::size_t> input_shape;
    std::string layers_desc;
    RegKind reg_kind = RegKind::None;
    double lambda0 = 0.0;
    double decay_ratio = 1.0;
    TrainConfig train;
    // Dataset references: "csv:PATH", "idx:IMAGES:LABELS", or
    // "synth:FAMILY:SHIFT:SEED" (the synth form fills all four roles at once).
    std::string source_train_ref, source_test_ref, target_train_ref, target_test_ref;
    std::string source_checkpoint;
    std::size_t class_cap = 0;
    std::string out_dir = "out";

    NetworkSpec build_network() const {
        auto layers = parse_layers(layers_desc);
        if (reg_kind == RegKind::KnowDist) apply_default_taps(layers);
        return NetworkSpec::build(input_shape, layers);
    }
};

inline ExperimentConfig experiment_from_config(const ConfigMap& cfg) {
    auto get = [&](const std::string& key) -> std::optional<std::string> {
        auto it = cfg.find(key);
        if (it == cfg.end()) return std::nullopt;
        return it->second;
    };
    auto require = [&](const std::string& key) {
        auto v = get(key);
        if (!v) throw ConfigError("missing config key " + key);
        return *v;
    };

    ExperimentConfig e;
    e.input_shape = parse_shape(require("network.input"));
    e.layers_desc = require("network.layers");
    if (auto v = get("regularizer.kind")) e.reg_kind = parse_reg_kind(*v);
    if (auto v = get("regularizer.lambda0"))
        e.lambda0 = parse_double(*v, "lambda0");
    if (auto v = get("regularizer.decay_ratio"))
        e.decay_ratio = parse_double(*v, "decay_ratio");

    TrainConfig& t = e.train;
    if (auto v = get("train.batch_size")) t.batch_size = parse_size(*v, "batch_size");
    if (auto v = get("train.momentum")) t.momentum = parse_double(*v, "momentum");
    if (auto v = get("train.lr0")) t.lr0 = parse_double(*v, "lr0");
    if (auto v = get("train.lr_drop_iters"))
        t.lr_drop_iters = parse_size(*v, "lr_drop_iters");
    if (auto v = get("train.lr_drop_factor"))
        t.lr_drop_factor = parse_double(*v, "lr_drop_factor");
    if (auto v = get("train.total_iters")) t.total_iters = parse_size(*v, "total_iters");
    if (auto v = get("train.seed")) t.seed = parse_size(*v, "seed");
    if (auto v = get("train.mode")) t.mode = parse_train_mode(*v);
    if (auto v = get("train.eval_every")) t.eval_every = parse_size(*v, "eval_every");
    if (auto v = get("train.log_every")) t.log_every = parse_size(*v, "log_every");

    if (auto v = get("data.source_train")) e.source_train_ref = *v;
    if (auto v = get("data.source_test")) e.source_test_ref = *v;
    if (auto v = get("data.target_train")) e.target_train_ref = *v;
    if (auto v = get("data.target_test")) e.target_test_ref = *v;
    if (auto v = get("data.synthetic")) {
        // shorthand: synthetic = FAMILY:SHIFT:SEED fills all four roles
        e.source_train_ref = "synth:" + *v;
    }
    if (auto v = get("data.source_checkpoint")) e.source_checkpoint = *v;
    if (auto v = get("data.per_class_cap")) e.class_cap = parse_size(*v, "per_class_cap");
    if (auto v = get("data.out_dir")) e.out_dir = *v;
    return e;
}

/// The four datasets of one experiment, already normalized.
struct ExperimentData {
    Dataset source_train, source_test, target_train, target_test;
};

inline Dataset load_dataset_ref(const std::string& ref) {
    auto parts = split(ref, ':');
    if (parts.size() == 2 && parts[0] == "csv") return load_csv(parts[1]);
    if (parts.size() == 3 && parts[0] == "idx") return load_idx(parts[1], parts[2]);
    throw ConfigError("bad dataset reference '" + ref +
                      "' (expected csv:PATH or idx:IMAGES:LABELS)");
}

inline ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
    ExperimentData d;
    auto synth_parts = split(cfg.source_train_ref, ':');
    if (!synth_parts.empty() && synth_parts[0] == "synth") {
        if (synth_parts.size() != 4)
            throw ConfigError("synth reference needs synth:FAMILY:SHIFT:SEED");
        SyntheticPair p = gen_synthetic(parse_task_family(synth_parts[1]),
                                        parse_shift_kind(synth_parts[2]),
                                        parse_size(synth_parts[3], "synth seed"));
        d.source_train = std::move(p.source_train);
        d.source_test = std::move(p.source_test);
        d.target_train = std::move(p.target_train);
        d.target_test = std::move(p.target_test);
    } else {
        d.source_train = load_dataset_ref(cfg.source_train_ref);
        d.source_test = load_dataset_ref(cfg.source_test_ref);
        d.target_train = load_dataset_ref(cfg.target_train_ref);
        d.target_test = load_dataset_ref(cfg.target_test_ref);
    }
    if (cfg.class_cap > 0)
        d.target_train = per_class_cap(d.target_train, cfg.class_cap);

    NormStats src = compute_norm_stats(d.source_train);
    apply_norm_stats(d.source_train, src);
    apply_norm_stats(d.source_test, src);
    NormStats tgt = compute_norm_stats(d.target_train);
    apply_norm_stats(d.target_train, tgt);
    apply_norm_stats(d.target_test, tgt);
    return d;
}

// ---------------------------------------------------------------------------
// Single training run
// ---------------------------------------------------------------------------

struct RunResult {
    std::vector<MetricsRow> rows;
    FlatVector final_params;
    double final_test_loss = 0.0;
    double final_test_accuracy = 0.0;
};

inline RunResult run_training(const NetworkSpec& spec, const TrainConfig& tc,
                              const RegularizerConfig& rc, const Dataset& train,
                              const Dataset& test, FlatVector initial_params) {
    tc.validate();
    rc.validate(spec.param_count);
    RunResult res;
    TrainState state;
    state.params = std::move(initial_params);
    state.velocity = FlatVector(spec.param_count);

    BatchSampler sampler(train.size(), tc.batch_size, tc.seed);
    for (std::size_t it = 0; it < tc.total_iters; ++it) {
        MiniBatch batch = sample_batch(train, sampler);
        MetricsRow row = train_step(spec, tc, rc, state, batch, sampler.epoch());
        const bool last = it + 1 == tc.total_iters;
        if (it % tc.eval_every == 0 || last) {
            auto [tl, ta] = evaluate(spec, state.params, test);
            row.test_loss = tl;
            row.test_accuracy = ta;
        }
        if (it % tc.log_every == 0 || last) res.rows.push_back(row);
    }
    auto [tl, ta] = evaluate(spec, state.params, test);
    res.final_test_loss = tl;
    res.final_test_accuracy = ta;
    res.final_params = std::move(state.params);
    return res;
}

inline void write_metrics_csv(const std::vector<MetricsRow>& rows,
                              const std::string& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open metrics file " + path);
    os << metrics_csv_header() << '\n';
    for (const auto& r : rows) os << metrics_csv_line(r) << '\n';
}

// ---------------------------------------------------------------------------
// Pipeline: source training, transfer under each requested mode, summary.
// ---------------------------------------------------------------------------

/// Transfer modes as named on the command line.
inline const std::vector<std::string>& known_modes() {
    static const std::vector<std::string> m{"fine-tuning", "vanilla-reg", "dtnh-reg"};
    return m;
}

struct ModeSetup {
    RegKind reg_kind;
    TrainMode train_mode;
};

inline ModeSetup mode_setup(const std::string& mode, RegKind configured_kind) {
    if (mode == "fine-tuning") return {RegKind::None, TrainMode::Vanilla};
    if (mode == "vanilla-reg") return {configured_kind, TrainMode::Vanilla};
    if (mode == "dtnh-reg") return {configured_kind, TrainMode::Dtnh};
    throw ConfigError("unknown transfer mode '" + mode +
                      "' (expected fine-tuning | vanilla-reg | dtnh-reg)");
}

/// Train on the source task from a fresh initialization; returns the source
/// parameter vector omega_s.
inline FlatVector train_source(const NetworkSpec& spec, const TrainConfig& base,
                               const Dataset& train, const Dataset& test,
                               std::vector<MetricsRow>* rows = nullptr) {
    TrainConfig tc = base;
    tc.mode = TrainMode::Vanilla;
    RegularizerConfig rc;  // kind=none
    RunResult r = run_training(spec, tc, rc, train, test,
                               init_params(spec, tc.seed));
    if (rows) *rows = std::move(r.rows);
    return std::move(r.final_params);
}

struct PipelineSummaryRow {
    std::string mode;
    std::size_t n_seeds = 0;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
};

inline std::pair<double, double> mean_and_sample_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    if (xs.size() > 1) {
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= static_cast<double>(xs.size() - 1);
    }
    return {mean, std::sqrt(var)};
}

struct PipelineResult {
    std::vector<PipelineSummaryRow> summary;
    FlatVector source_params;
};

/// Runs source training (unless a checkpoint is supplied), then each
/// requested transfer mode under each seed. Artifacts land under cfg.out_dir:
/// source.ckpt, MODE/seed_N/{metrics.csv,final.ckpt}, summary.csv.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg,
                                   const std::vector<std::string>& modes,
                                   const std::vector<std::uint64_t>& seeds) {
    namespace fs = std::filesystem;
    if (modes.empty() || seeds.empty())
        throw ConfigError("run_pipeline: modes and seeds must be nonempty");

    NetworkSpec spec = cfg.build_network();
    ExperimentData data = load_experiment_data(cfg);
    if (data.target_train.num_classes > spec.num_classes())
        throw ConfigError("network has " + std::to_string(spec.num_classes()) +
                          " outputs but target data has " +
                          std::to_string(data.target_train.num_classes) + " classes");

    fs::create_directories(cfg.out_dir);
    PipelineResult result;
    if (!cfg.source_checkpoint.empty()) {
        result.source_params = load_params_for(spec, cfg.source_checkpoint);
    } else {
        result.source_params =
            train_source(spec, cfg.train, data.source_train, data.source_test);
        save_checkpoint(spec, result.source_params,
                        (fs::path(cfg.out_dir) / "source.ckpt").string());
    }

    for (const auto& mode : modes) {
        ModeSetup ms = mode_setup(mode, cfg.reg_kind);
        RegularizerConfig rc;
        rc.kind = ms.reg_kind;
        rc.lambda0 = ms.reg_kind == RegKind::None ? 0.0 : cfg.lambda0;
        rc.decay_ratio = cfg.decay_ratio;
        if (ms.reg_kind == RegKind::L2SP || ms.reg_kind == RegKind::KnowDist)
            rc.source_params = result.source_params;

        std::vector<double> accuracies;
        for (std::uint64_t seed : seeds) {
            TrainConfig tc = cfg.train;
            tc.mode = ms.train_mode;
            tc.seed = seed;
            // transfer always starts at omega_s
            RunResult r = run_training(spec, tc, rc, data.target_train,
                                       data.target_test, result.source_params);
            fs::path dir = fs::path(cfg.out_dir) / mode / ("seed_" + std::to_string(seed));
            fs::create_directories(dir);
            write_metrics_csv(r.rows, (dir / "metrics.csv").string());
            save_checkpoint(spec, r.final_params, (dir / "final.ckpt").string());
            accuracies.push_back(r.final_test_accuracy);
        }
        auto [mean, sd] = mean_and_sample_std(accuracies);
        result.summary.push_back({mode, seeds.size(), mean, sd});
    }

    std::ofstream os(fs::path(cfg.out_dir) / "summary.csv");
    os << "mode,n_seeds,mean_accuracy,std_accuracy\n";
    os.precision(17);
    for (const auto& row : result.summary)
        os << row.mode << ',' << row.n_seeds << ',' << row.mean_accuracy << ','
           << row.std_accuracy << '\n';
    return result;
}

// ---------------------------------------------------------------------------
// Lambda sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    double lambda = 0.0;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    bool best = false;
};

/// Runs the transfer stage per (lambda, seed) under the configured mode and
/// regularizer kind; marks the argmax row, ties broken toward smaller lambda.
inline std::vector<SweepRow> sweep(const ExperimentConfig& cfg,
                                   const std::vector<double>& lambda_grid,
                                   const std::vector<std::uint64_t>& seeds) {
    namespace fs = std::filesystem;
    if (lambda_grid.empty() || seeds.empty())
        throw ConfigError("sweep: lambda grid and seed list must be nonempty");

    NetworkSpec spec = cfg.build_network();
    ExperimentData data = load_experiment_data(cfg);
    fs::create_directories(cfg.out_dir);

    FlatVector source_params =
        cfg.source_checkpoint.empty()
            ? train_source(spec, cfg.train, data.source_train, data.source_test)
            : load_params_for(spec, cfg.source_checkpoint);
    if (cfg.source_checkpoint.empty())
        save_checkpoint(spec, source_params,
                        (fs::path(cfg.out_dir) / "source.ckpt").string());

    std::vector<SweepRow> table;
    for (double lambda : lambda_grid) {
        RegularizerConfig rc;
        rc.kind = cfg.reg_kind;
        rc.lambda0 = lambda;
        rc.decay_ratio = cfg.decay_ratio;
        if (rc.kind == RegKind::L2SP || rc.kind == RegKind::KnowDist)
            rc.source_params = source_params;

        std::vector<double> accuracies;
        for (std::uint64_t seed : seeds) {
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            RunResult r = run_training(spec, tc, rc, data.target_train,
                                       data.target_test, source_params);
            std::ostringstream cell;
            cell << "lambda_" << lambda << "/seed_" << seed;
            fs::path dir = fs::path(cfg.out_dir) / "sweep" / cell.str();
            fs::create_directories(dir);
            write_metrics_csv(r.rows, (dir / "metrics.csv").string());
            accuracies.push_back(r.final_test_accuracy);
        }
        auto [mean, sd] = mean_and_sample_std(accuracies);
        table.push_back({lambda, mean, sd, false});
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < table.size(); ++i)
        if (table[i].mean_accuracy > table[best].mean_accuracy) best = i;
    table[best].best = true;

    std::ofstream os(fs::path(cfg.out_dir) / "sweep.csv");
    os << "lambda,mean_accuracy,std_accuracy,best\n";
    os.precision(17);
    for (const auto& row : table)
        os << row.lambda << ',' << row.mean_accuracy << ',' << row.std_accuracy
           << ',' << (row.best ? 1 : 0) << '\n';
    return table;
}

// ---------------------------------------------------------------------------
// Curve export from metrics CSVs
// ---------------------------------------------------------------------------

struct ParsedMetrics {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        std::string avail;
        for (const auto& h : header) avail += (avail.empty() ? "" : ", ") + h;
        throw FormatError("unknown column '" + name + "'; available: " + avail);
    }
};

inline ParsedMetrics parse_metrics_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open metrics file " + path);
    ParsedMetrics m;
    std::string line;
    if (!std::getline(is, line))
        throw FormatError("metrics file " + path + " is empty");
    m.header = split(line, ',');
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != m.header.size())
            throw FormatError("metrics file " + path + ": row with " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(m.header.size()));
        m.rows.push_back(std::move(fields));
    }
    return m;
}

/// which = loss | angles13 | angles24. Angle exports drop rows where either
/// angle is undefined.
inline void export_curves(const std::string& metrics_path, const std::string& which,
                          const std::string& out_path) {
    ParsedMetrics m = parse_metrics_csv(metrics_path);
    std::vector<std::string> cols;
    bool drop_na = false;
    if (which == "loss") {
        cols = {"iteration", "empirical_loss", "test_loss"};
    } else if (which == "angles13") {
        cols = {"iteration", "angle1", "angle3"};
        drop_na = true;
    } else if (which == "angles24") {
        cols = {"iteration", "angle2", "angle4"};
        drop_na = true;
    } else {
        throw ConfigError("unknown curve set '" + which +
                          "' (expected loss | angles13 | angles24)");
    }
    std::vector<std::size_t> idx;
    for (const auto& c : cols) idx.push_back(m.column(c));

    std::ofstream os(out_path);
    if (!os) throw DataError("cannot open output file " + out_path);
    for (std::size_t i = 0; i < cols.size(); ++i)
        os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& row : m.rows) {
        bool skip = false;
        if (drop_na)
            for (std::size_t k = 1; k < idx.size(); ++k)
                if (row[idx[k]] == "NA") skip = true;
        if (skip) continue;
        for (std::size_t k = 0; k < idx.size(); ++k)
            os << (k ? "," : "") << row[idx[k]];
        os << '\n';
    }
}

}  // namespace dtnh
