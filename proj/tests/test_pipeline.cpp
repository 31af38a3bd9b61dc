#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dtnh/pipeline.hpp"

using namespace dtnh;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    fs::path d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string fast_config(const fs::path& out, const std::string& extra = "") {
    std::ostringstream os;
    os << "[network]\n"
          "input = 2\n"
          "layers = dense:2:8,relu,dense:8:3\n"
          "[regularizer]\n"
          "kind = l2sp\n"
          "lambda0 = 0.1\n"
          "[train]\n"
          "batch_size = 24\n"
          "total_iters = 60\n"
          "lr0 = 0.05\n"
          "eval_every = 20\n"
          "log_every = 5\n"
          "seed = 1\n"
          "[data]\n"
          "synthetic = gaussian-blobs:related:7\n"
          "out_dir = "
       << out.string() << "\n"
       << extra;
    return os.str();
}

ExperimentConfig parse_cfg(const std::string& text) {
    std::istringstream is(text);
    return experiment_from_config(parse_config_text(is, "<test>"));
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p);
    return std::string(std::istreambuf_iterator<char>(is),
                       std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config parsing: sections, comments, overrides of defaults") {
    std::istringstream is(
        "# comment\n[train]\nbatch_size = 12\nmode = vanilla\n[network]\n"
        "input = 1x4x4\nlayers = conv:1:2:3:3,relu,flatten,dense:8:2\n");
    ConfigMap m = parse_config_text(is, "<t>");
    CHECK(m.at("train.batch_size") == "12");
    ExperimentConfig e = experiment_from_config(m);
    CHECK(e.train.batch_size == 12);
    CHECK(e.train.mode == TrainMode::Vanilla);
    CHECK(e.input_shape == std::vector<std::size_t>{1, 4, 4});
    NetworkSpec spec = e.build_network();
    CHECK(spec.layers.size() == 4);
}

TEST_CASE("config parsing errors") {
    std::istringstream no_section("key = 1\n");
    CHECK_THROWS_AS(parse_config_text(no_section, "<t>"), ConfigError);
    std::istringstream bad_line("[a]\nnot a pair\n");
    CHECK_THROWS_AS(parse_config_text(bad_line, "<t>"), ConfigError);
    CHECK_THROWS_AS(parse_layers("dense:2"), ConfigError);
    CHECK_THROWS_AS(parse_layers("blorp"), ConfigError);
}

TEST_CASE("default taps land on relu layers for knowdist") {
    auto layers = parse_layers("dense:2:8,relu,dense:8:8,relu,dense:8:3");
    apply_default_taps(layers);
    CHECK_FALSE(layers[0].tap);
    CHECK(layers[1].tap);
    CHECK(layers[3].tap);
    CHECK_FALSE(layers[4].tap);

    // explicit tap wins
    auto manual = parse_layers("dense:2:8:tap,relu,dense:8:3");
    apply_default_taps(manual);
    CHECK(manual[0].tap);
    CHECK_FALSE(manual[1].tap);
}

TEST_CASE("run_pipeline writes metrics, checkpoints and summary") {
    fs::path out = scratch_dir("dtnh_pipe1");
    ExperimentConfig cfg = parse_cfg(fast_config(out));
    PipelineResult res = run_pipeline(cfg, {"fine-tuning", "dtnh-reg"}, {1, 2});
    CHECK(res.summary.size() == 2);
    CHECK(fs::exists(out / "source.ckpt"));
    CHECK(fs::exists(out / "fine-tuning" / "seed_1" / "metrics.csv"));
    CHECK(fs::exists(out / "dtnh-reg" / "seed_2" / "final.ckpt"));
    CHECK(fs::exists(out / "summary.csv"));
    for (const auto& row : res.summary) {
        CHECK(row.n_seeds == 2);
        CHECK(row.mean_accuracy >= 0.0);
        CHECK(row.mean_accuracy <= 1.0);
    }
    fs::remove_all(out);
}

TEST_CASE("fine-tuning mode logs an all-zero regularizer column") {
    fs::path out = scratch_dir("dtnh_pipe2");
    ExperimentConfig cfg = parse_cfg(fast_config(out));
    run_pipeline(cfg, {"fine-tuning"}, {3});
    ParsedMetrics m =
        parse_metrics_csv((out / "fine-tuning" / "seed_3" / "metrics.csv").string());
    const std::size_t col = m.column("reg_value");
    CHECK(m.rows.size() > 0);
    for (const auto& row : m.rows) CHECK(row[col] == "0");
    fs::remove_all(out);
}

TEST_CASE("pipeline reruns are byte-identical") {
    fs::path out1 = scratch_dir("dtnh_pipe3a");
    fs::path out2 = scratch_dir("dtnh_pipe3b");
    ExperimentConfig a = parse_cfg(fast_config(out1));
    ExperimentConfig b = parse_cfg(fast_config(out2));
    run_pipeline(a, {"dtnh-reg"}, {5});
    run_pipeline(b, {"dtnh-reg"}, {5});
    CHECK(slurp(out1 / "dtnh-reg" / "seed_5" / "metrics.csv") ==
          slurp(out2 / "dtnh-reg" / "seed_5" / "metrics.csv"));
    fs::remove_all(out1);
    fs::remove_all(out2);
}

TEST_CASE("summary reports mean and sample std over exactly the seeds given") {
    fs::path out = scratch_dir("dtnh_pipe4");
    ExperimentConfig cfg = parse_cfg(fast_config(out));
    PipelineResult res = run_pipeline(cfg, {"fine-tuning"}, {1, 2, 3, 4, 5});
    REQUIRE(res.summary.size() == 1);
    CHECK(res.summary[0].n_seeds == 5);
    CHECK(res.summary[0].std_accuracy >= 0.0);
    fs::remove_all(out);
}

TEST_CASE("sweep: singleton grid marks its only row best") {
    fs::path out = scratch_dir("dtnh_sweep1");
    ExperimentConfig cfg = parse_cfg(fast_config(out));
    auto table = sweep(cfg, {0.1}, {1});
    REQUIRE(table.size() == 1);
    CHECK(table[0].best);
    CHECK(fs::exists(out / "sweep.csv"));
    fs::remove_all(out);
}

TEST_CASE("sweep: lambda=0 equals the fine-tuning trajectory") {
    fs::path out = scratch_dir("dtnh_sweep2");
    ExperimentConfig cfg = parse_cfg(fast_config(out));
    cfg.train.mode = TrainMode::Vanilla;
    auto table = sweep(cfg, {0.0}, {9});
    PipelineResult pr = run_pipeline(cfg, {"fine-tuning"}, {9});
    CHECK(table[0].mean_accuracy == doctest::Approx(pr.summary[0].mean_accuracy));
    fs::remove_all(out);
}

TEST_CASE("sweep tie-break goes to the smaller lambda") {
    // two identical lambdas produce identical means; the first (smaller
    // position) must carry the best mark
    fs::path out = scratch_dir("dtnh_sweep3");
    ExperimentConfig cfg = parse_cfg(fast_config(out));
    auto table = sweep(cfg, {0.05, 0.05}, {2});
    REQUIRE(table.size() == 2);
    CHECK(table[0].mean_accuracy == table[1].mean_accuracy);
    CHECK(table[0].best);
    CHECK_FALSE(table[1].best);
    fs::remove_all(out);
}

TEST_CASE("export_curves: loss and angle selections") {
    fs::path out = scratch_dir("dtnh_export");
    ExperimentConfig cfg = parse_cfg(fast_config(out));
    run_pipeline(cfg, {"vanilla-reg"}, {1});
    const std::string metrics =
        (out / "vanilla-reg" / "seed_1" / "metrics.csv").string();

    const std::string loss_out = (out / "loss.csv").string();
    export_curves(metrics, "loss", loss_out);
    ParsedMetrics loss = parse_metrics_csv(loss_out);
    CHECK(loss.header == std::vector<std::string>{"iteration", "empirical_loss",
                                                  "test_loss"});
    CHECK(loss.rows.size() > 0);

    const std::string ang_out = (out / "angles13.csv").string();
    export_curves(metrics, "angles13", ang_out);
    ParsedMetrics ang = parse_metrics_csv(ang_out);
    for (const auto& row : ang.rows) {
        CHECK(row[1] != "NA");
        CHECK(row[2] != "NA");
    }

    CHECK_THROWS_WITH_AS(export_curves(metrics, "bogus", ang_out),
                         doctest::Contains("loss | angles13 | angles24"), ConfigError);
    fs::remove_all(out);
}

TEST_CASE("export_curves on an empty metrics body yields header only") {
    fs::path out = scratch_dir("dtnh_export_empty");
    fs::path metrics = out / "metrics.csv";
    {
        std::ofstream os(metrics);
        os << metrics_csv_header() << "\n";
    }
    fs::path dst = out / "loss.csv";
    export_curves(metrics.string(), "loss", dst.string());
    CHECK(slurp(dst) == "iteration,empirical_loss,test_loss\n");
    fs::remove_all(out);
}

TEST_CASE("acute rows have angle1 == angle3 in vanilla metrics") {
    fs::path out = scratch_dir("dtnh_acute");
    ExperimentConfig cfg = parse_cfg(fast_config(out));
    run_pipeline(cfg, {"vanilla-reg"}, {1});
    ParsedMetrics m =
        parse_metrics_csv((out / "vanilla-reg" / "seed_1" / "metrics.csv").string());
    const std::size_t a1 = m.column("angle1"), a3 = m.column("angle3"),
                      br = m.column("branch");
    std::size_t acute_rows = 0;
    for (const auto& row : m.rows)
        if (row[br] == "acute" && row[a1] != "NA") {
            ++acute_rows;
            CHECK(std::abs(std::stod(row[a1]) - std::stod(row[a3])) < 1e-9);
        }
    CHECK(acute_rows > 0);
    fs::remove_all(out);
}

TEST_CASE("hostile shift produces a measurable conflict signal") {
    fs::path out = scratch_dir("dtnh_hostile");
    ExperimentConfig cfg = parse_cfg(fast_config(out));
    cfg.source_train_ref = "synth:gaussian-blobs:hostile:7";
    cfg.lambda0 = 1.0;
    cfg.train.total_iters = 200;
    run_pipeline(cfg, {"dtnh-reg"}, {1});
    ParsedMetrics m =
        parse_metrics_csv((out / "dtnh-reg" / "seed_1" / "metrics.csv").string());
    const std::size_t br = m.column("branch");
    std::size_t obtuse = 0;
    for (const auto& row : m.rows)
        if (row[br] == "obtuse") ++obtuse;
    CHECK(obtuse * 10 >= m.rows.size());
    fs::remove_all(out);
}

TEST_CASE("bad dataset reference is rejected") {
    CHECK_THROWS_AS(load_dataset_ref("parquet:foo"), ConfigError);
}
