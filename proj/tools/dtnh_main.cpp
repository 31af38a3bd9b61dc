// Command-line harness: synthetic data generation, source training,
// transfer runs, lambda sweeps, evaluation, and curve export.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dtnh/data.hpp"
#include "dtnh/pipeline.hpp"

namespace fs = std::filesystem;
using namespace dtnh;

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    for (const auto& tok : split(s, ','))
        out.push_back(parse_size(trim(tok), "seed"));
    return out;
}

std::vector<double> parse_lambda_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& tok : split(s, ','))
        out.push_back(parse_double(trim(tok), "lambda"));
    return out;
}

struct Overrides {
    std::string out_dir, reg_kind, source_checkpoint, mode;
    double lambda0 = -1.0;
    std::int64_t total_iters = -1;
    std::int64_t per_class_cap = -1;
};

void apply_overrides(ExperimentConfig& cfg, const Overrides& ov) {
    if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
    if (!ov.reg_kind.empty()) cfg.reg_kind = parse_reg_kind(ov.reg_kind);
    if (!ov.source_checkpoint.empty()) cfg.source_checkpoint = ov.source_checkpoint;
    if (!ov.mode.empty()) cfg.train.mode = parse_train_mode(ov.mode);
    if (ov.lambda0 >= 0.0) cfg.lambda0 = ov.lambda0;
    if (ov.total_iters >= 0)
        cfg.train.total_iters = static_cast<std::size_t>(ov.total_iters);
    if (ov.per_class_cap >= 0)
        cfg.class_cap = static_cast<std::size_t>(ov.per_class_cap);
}

void add_override_flags(CLI::App* app, Overrides& ov) {
    app->add_option("--out", ov.out_dir, "Override output directory");
    app->add_option("--reg-kind", ov.reg_kind,
                    "Override regularizer kind (none|l2sp|knowdist|l2)");
    app->add_option("--lambda0", ov.lambda0, "Override regularization coefficient");
    app->add_option("--total-iters", ov.total_iters, "Override iteration count");
    app->add_option("--source-checkpoint", ov.source_checkpoint,
                    "Use an existing source checkpoint instead of training");
    app->add_option("--mode", ov.mode, "Override train mode (vanilla|dtnh)");
    app->add_option("--per-class-cap", ov.per_class_cap,
                    "Keep at most N target training samples per class");
}

int run(int argc, char** argv) {
    CLI::App app{"DTNH transfer-learning harness"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic source/target pair");
    std::string family = "gaussian-blobs", shift = "related", gen_out = "data";
    std::uint64_t gen_seed = 0;
    std::size_t n_train = 240, n_test = 240;
    gen->add_option("--family", family, "gaussian-blobs | two-rings");
    gen->add_option("--shift", shift, "related | hostile");
    gen->add_option("--seed", gen_seed, "Generation seed");
    gen->add_option("--n-train", n_train, "Training samples per dataset");
    gen->add_option("--n-test", n_test, "Test samples per dataset");
    gen->add_option("--out", gen_out, "Output directory");

    // train-source
    auto* src = app.add_subcommand("train-source", "Train the source model");
    std::string src_config;
    Overrides src_ov;
    src->add_option("--config", src_config, "Experiment config file")->required();
    add_override_flags(src, src_ov);

    // transfer
    auto* tr = app.add_subcommand("transfer", "Run the transfer pipeline");
    std::string tr_config, tr_modes = "fine-tuning,vanilla-reg,dtnh-reg",
                tr_seeds;
    Overrides tr_ov;
    tr->add_option("--config", tr_config, "Experiment config file")->required();
    tr->add_option("--modes", tr_modes,
                   "Comma list of fine-tuning|vanilla-reg|dtnh-reg");
    tr->add_option("--seeds", tr_seeds, "Comma list of seeds (default: config seed)");
    add_override_flags(tr, tr_ov);

    // sweep
    auto* sw = app.add_subcommand("sweep", "Lambda sweep over seeds");
    std::string sw_config, sw_lambdas, sw_seeds;
    Overrides sw_ov;
    sw->add_option("--config", sw_config, "Experiment config file")->required();
    sw->add_option("--lambdas", sw_lambdas, "Comma list of lambda values")->required();
    sw->add_option("--seeds", sw_seeds, "Comma list of seeds (default: config seed)");
    add_override_flags(sw, sw_ov);

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string ev_ckpt, ev_data, ev_norm_train;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--data", ev_data, "Dataset ref (csv:PATH or idx:IMG:LAB)")
        ->required();
    ev->add_option("--norm-train", ev_norm_train,
                   "Dataset ref supplying normalization statistics");

    // export-curves
    auto* ex = app.add_subcommand("export-curves", "Extract plot-ready columns");
    std::string ex_metrics, ex_which = "loss", ex_out;
    ex->add_option("--metrics", ex_metrics, "Metrics CSV from a run")->required();
    ex->add_option("--which", ex_which, "loss | angles13 | angles24");
    ex->add_option("--out", ex_out, "Output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors exit 1
    }

    if (gen->parsed()) {
        SyntheticPair p = gen_synthetic(parse_task_family(family),
                                        parse_shift_kind(shift), gen_seed, n_train,
                                        n_test);
        fs::create_directories(gen_out);
        save_csv(p.source_train, (fs::path(gen_out) / "source_train.csv").string());
        save_csv(p.source_test, (fs::path(gen_out) / "source_test.csv").string());
        save_csv(p.target_train, (fs::path(gen_out) / "target_train.csv").string());
        save_csv(p.target_test, (fs::path(gen_out) / "target_test.csv").string());
        std::cout << "gen-data: " << family << "/" << shift << " seed " << gen_seed
                  << " -> " << gen_out << " (4 files, " << n_train << "+" << n_test
                  << " samples each split)\n";
    } else if (src->parsed()) {
        ExperimentConfig cfg = experiment_from_config(parse_config_file(src_config));
        apply_overrides(cfg, src_ov);
        NetworkSpec spec = cfg.build_network();
        ExperimentData data = load_experiment_data(cfg);
        std::vector<MetricsRow> rows;
        FlatVector params =
            train_source(spec, cfg.train, data.source_train, data.source_test, &rows);
        fs::create_directories(cfg.out_dir);
        const std::string ckpt = (fs::path(cfg.out_dir) / "source.ckpt").string();
        save_checkpoint(spec, params, ckpt);
        write_metrics_csv(rows, (fs::path(cfg.out_dir) / "source_metrics.csv").string());
        auto [tl, ta] = evaluate(spec, params, data.source_test);
        std::cout << "train-source: test_loss=" << tl << " test_accuracy=" << ta
                  << " checkpoint=" << ckpt << "\n";
    } else if (tr->parsed()) {
        ExperimentConfig cfg = experiment_from_config(parse_config_file(tr_config));
        apply_overrides(cfg, tr_ov);
        std::vector<std::string> modes;
        for (const auto& m : split(tr_modes, ',')) modes.push_back(trim(m));
        std::vector<std::uint64_t> seeds =
            tr_seeds.empty() ? std::vector<std::uint64_t>{cfg.train.seed}
                             : parse_seed_list(tr_seeds);
        PipelineResult res = run_pipeline(cfg, modes, seeds);
        std::cout << "transfer:";
        for (const auto& row : res.summary)
            std::cout << " " << row.mode << "=" << row.mean_accuracy << "±"
                      << row.std_accuracy;
        std::cout << " -> " << cfg.out_dir << "/summary.csv\n";
    } else if (sw->parsed()) {
        ExperimentConfig cfg = experiment_from_config(parse_config_file(sw_config));
        apply_overrides(cfg, sw_ov);
        std::vector<std::uint64_t> seeds =
            sw_seeds.empty() ? std::vector<std::uint64_t>{cfg.train.seed}
                             : parse_seed_list(sw_seeds);
        auto table = sweep(cfg, parse_lambda_list(sw_lambdas), seeds);
        for (const auto& row : table)
            if (row.best)
                std::cout << "sweep: best lambda=" << row.lambda
                          << " mean_accuracy=" << row.mean_accuracy << " -> "
                          << cfg.out_dir << "/sweep.csv\n";
    } else if (ev->parsed()) {
        auto [spec, params] = load_checkpoint(ev_ckpt);
        Dataset data = load_dataset_ref(ev_data);
        if (!ev_norm_train.empty()) {
            Dataset ref = load_dataset_ref(ev_norm_train);
            apply_norm_stats(data, compute_norm_stats(ref));
        }
        auto [tl, ta] = evaluate(spec, params, data);
        std::cout << "eval: test_loss=" << tl << " test_accuracy=" << ta << "\n";
    } else if (ex->parsed()) {
        export_curves(ex_metrics, ex_which, ex_out);
        std::cout << "export-curves: " << ex_which << " -> " << ex_out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "dimension error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
