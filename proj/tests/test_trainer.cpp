#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "dtnh/data.hpp"
#include "dtnh/pipeline.hpp"
#include "dtnh/trainer.hpp"
#include "test_util.hpp"

using namespace dtnh;
using namespace dtnh::testing;

namespace fs = std::filesystem;

namespace {

Dataset toy_dataset(std::size_t n, std::uint64_t seed) {
    // two separable blobs in 2-D
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.3);
    Dataset ds;
    ds.inputs = Tensor::zeros({n, 2});
    ds.labels.resize(n);
    ds.num_classes = 2;
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % 2);
        ds.inputs.data[2 * i] = (c == 0 ? -2.0 : 2.0) + noise(rng);
        ds.inputs.data[2 * i + 1] = noise(rng);
        ds.labels[i] = c;
    }
    return ds;
}

NetworkSpec toy_net() {
    return NetworkSpec::build({2}, {LayerSpec::dense(2, 8), LayerSpec::relu(true),
                                    LayerSpec::dense(8, 2)});
}

}  // namespace

TEST_CASE("sampler: full-dataset batch covers every sample once") {
    Dataset ds = toy_dataset(10, 1);
    BatchSampler sampler(ds.size(), 10, 3);
    MiniBatch mb = sample_batch(ds, sampler);
    CHECK(mb.size() == 10);
    std::multiset<double> xs(mb.inputs.data.begin(), mb.inputs.data.end());
    std::multiset<double> ys(ds.inputs.data.begin(), ds.inputs.data.end());
    CHECK(xs == ys);
}

TEST_CASE("sampler: identical seeds give identical batch sequences") {
    Dataset ds = toy_dataset(23, 2);
    BatchSampler a(ds.size(), 5, 77), b(ds.size(), 5, 77);
    for (int i = 0; i < 20; ++i) {
        CHECK(a.next() == b.next());
    }
}

TEST_CASE("sampler: epoch partitions into 4,4,2 covering all indices") {
    BatchSampler sampler(10, 4, 9);
    auto b1 = sampler.next(), b2 = sampler.next(), b3 = sampler.next();
    CHECK(b1.size() == 4);
    CHECK(b2.size() == 4);
    CHECK(b3.size() == 2);
    std::set<std::size_t> seen;
    for (auto v : b1) seen.insert(v);
    for (auto v : b2) seen.insert(v);
    for (auto v : b3) seen.insert(v);
    CHECK(seen.size() == 10);
    CHECK(sampler.epoch() == 0);
    sampler.next();
    CHECK(sampler.epoch() == 1);
}

TEST_CASE("sampler rejects empty dataset") {
    CHECK_THROWS_AS(BatchSampler(0, 4, 1), DataError);
}

TEST_CASE("lr schedule: drops by the factor after the drop iteration") {
    TrainConfig tc;
    CHECK(tc.lr_at(0) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(tc.lr_at(5999) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(tc.lr_at(6000) == doctest::Approx(0.001).epsilon(1e-12));
    CHECK(tc.lr_at(12000) == doctest::Approx(0.0001).epsilon(1e-12));
}

TEST_CASE("train config defaults match the protocol") {
    TrainConfig tc;
    CHECK(tc.batch_size == 48);
    CHECK(tc.momentum == 0.9);
    CHECK(tc.lr0 == 0.01);
    CHECK(tc.lr_drop_iters == 6000);
    CHECK(tc.lr_drop_factor == 0.1);
}

TEST_CASE("train_step: momentum=0 vanilla lambda=0 reduces to plain SGD") {
    NetworkSpec spec = toy_net();
    TrainConfig tc;
    tc.momentum = 0.0;
    tc.mode = TrainMode::Vanilla;
    tc.lr0 = 0.1;
    tc.total_iters = 1;
    RegularizerConfig rc;  // none
    Dataset ds = toy_dataset(8, 3);
    MiniBatch batch = ds.gather({0, 1, 2, 3});

    TrainState st;
    st.params = init_params(spec, 5);
    st.velocity = FlatVector(spec.param_count);
    FlatVector before = st.params;
    auto [j, gJ] = empirical_loss_and_grad(spec, before, batch);
    (void)j;
    train_step(spec, tc, rc, st, batch, 0);
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(st.params[i] == doctest::Approx(before[i] - 0.1 * gJ[i]).epsilon(1e-12));
}

TEST_CASE("train_step: 1-D quadratic hand iteration") {
    // J = (w-3)^2/2 modeled by direct gradients: at w0=0, gJ=-3, gOmega=2*w=0,
    // lr=0.1, momentum=0 -> w1 = 0.3. Exercised through the direction+update
    // path using the same update rule.
    FlatVector w({0.0});
    FlatVector v({0.0});
    const double lambda = 1.0;
    FlatVector gJ({w[0] - 3.0});
    FlatVector gO({2.0 * (w[0] - 0.0)});
    DirectionResult r = estimate_direction(gJ, gO, lambda);
    FlatVector d = axpy(lambda, gO, gJ);  // vanilla mode
    (void)r;
    v[0] = 0.0 * v[0] + d[0];
    w[0] -= 0.1 * v[0];
    CHECK(w[0] == doctest::Approx(0.3));
}

TEST_CASE("train_step: zero gradients decay velocity only") {
    // constructed state: gJ = gOmega = 0 via a batch the net maps to equal
    // logits and a none-regularizer. Equal logits happen with zero params.
    NetworkSpec spec = toy_net();
    TrainConfig tc;
    tc.mode = TrainMode::Vanilla;
    RegularizerConfig rc;
    Dataset ds = toy_dataset(4, 4);
    // balanced labels, zero weights -> logits equal -> gradient of softmax CE
    // w.r.t. final bias cancels; deeper layers get zero by dead relu inputs
    MiniBatch batch = ds.gather({0, 1});
    TrainState st;
    st.params = FlatVector(spec.param_count);
    st.velocity = FlatVector(spec.param_count, 0.5);
    FlatVector before = st.params;
    MetricsRow row = train_step(spec, tc, rc, st, batch, 0);
    CHECK(row.norm_gJ == doctest::Approx(0.0).epsilon(1e-12));
    for (std::size_t i = 0; i < st.velocity.size(); ++i)
        CHECK(st.velocity[i] == doctest::Approx(0.9 * 0.5));
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(st.params[i] == doctest::Approx(before[i] - 0.01 * 0.45));
}

TEST_CASE("evaluate: perfect and uniform predictors") {
    NetworkSpec spec = NetworkSpec::build({2}, {LayerSpec::dense(2, 2)});
    Dataset ds = toy_dataset(40, 6);
    // weights that read out the separating coordinate
    FlatVector perfect({-1, 1, 0, 0, 0, 0});
    auto [l1, a1] = evaluate(spec, perfect, ds);
    CHECK(a1 == doctest::Approx(1.0));
    CHECK(l1 < 0.3);
    FlatVector zero(spec.param_count);
    auto [l2, a2] = evaluate(spec, zero, ds);
    CHECK(l2 == doctest::Approx(std::log(2.0)));
    // argmax ties break toward class 0, which holds half the labels
    CHECK(a2 == doctest::Approx(0.5));
}

TEST_CASE("evaluate agrees with a naive per-sample oracle") {
    NetworkSpec spec = toy_net();
    FlatVector p = init_params(spec, 8);
    Dataset ds = toy_dataset(100, 7);
    auto [loss, acc] = evaluate(spec, p, ds);
    std::size_t correct = 0;
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        MiniBatch one = ds.gather({i});
        ForwardRecord rec = forward(spec, p, one.inputs);
        loss_sum += softmax_cross_entropy(rec.logits, one.labels);
        std::size_t best = 0;
        for (std::size_t j = 1; j < rec.logits.shape[1]; ++j)
            if (rec.logits.data[j] > rec.logits.data[best]) best = j;
        if (static_cast<int>(best) == one.labels[0]) ++correct;
    }
    CHECK(acc == doctest::Approx(double(correct) / 100.0));
    CHECK(loss == doctest::Approx(loss_sum / 100.0).epsilon(1e-10));
}

TEST_CASE("checkpoint round trip is bit-exact") {
    NetworkSpec spec = toy_net();
    FlatVector p = init_params(spec, 99);
    const std::string path = (fs::temp_directory_path() / "dtnh_ckpt_rt.bin").string();
    save_checkpoint(spec, p, path);
    auto [spec2, p2] = load_checkpoint(path);
    CHECK(p2.data == p.data);
    CHECK(spec2.param_count == spec.param_count);
    CHECK(spec2.layers.size() == spec.layers.size());
    CHECK(spec2.layers[1].tap);
    fs::remove(path);
}

TEST_CASE("checkpoint corruption and mismatch handling") {
    NetworkSpec spec = toy_net();
    FlatVector p = init_params(spec, 1);
    const std::string path = (fs::temp_directory_path() / "dtnh_ckpt_bad.bin").string();
    save_checkpoint(spec, p, path);

    // truncate
    {
        std::ifstream is(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(is)),
                                std::istreambuf_iterator<char>());
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);

    // bad magic
    {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os.write("NOPE", 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    fs::remove(path);

    // d mismatch against an expecting spec
    const std::string p2 = (fs::temp_directory_path() / "dtnh_ckpt_d.bin").string();
    NetworkSpec small = NetworkSpec::build({2}, {LayerSpec::dense(2, 2)});
    save_checkpoint(small, init_params(small, 1), p2);
    CHECK_THROWS_AS(load_params_for(spec, p2), FormatError);
    fs::remove(p2);
}

TEST_CASE("metrics CSV line formatting uses NA sentinels") {
    MetricsRow r;
    r.iteration = 3;
    r.angle1 = 45.0;
    std::string line = metrics_csv_line(r);
    CHECK(line.find(",NA,NA,45,") != std::string::npos);  // test fields then angle1
    auto fields = split(line, ',');
    CHECK(fields.size() == split(metrics_csv_header(), ',').size());
    CHECK(fields[12] == "acute");
}

TEST_CASE("monotone sanity: convex problem, loss nonincreasing over epochs") {
    // logistic regression on separable data (single dense layer)
    NetworkSpec spec = NetworkSpec::build({2}, {LayerSpec::dense(2, 2)});
    Dataset train = toy_dataset(60, 10);
    Dataset test = toy_dataset(60, 11);
    TrainConfig tc;
    tc.batch_size = 60;  // full batch, so per-epoch loss is well defined
    tc.momentum = 0.0;
    tc.lr0 = 0.05;
    tc.mode = TrainMode::Vanilla;
    tc.total_iters = 40;
    tc.eval_every = 1000;
    tc.log_every = 1;
    RegularizerConfig rc;
    RunResult r = run_training(spec, tc, rc, train, test, init_params(spec, 3));
    for (std::size_t i = 2; i < r.rows.size(); ++i)
        CHECK(r.rows[i].empirical_loss <= r.rows[i - 1].empirical_loss + 1e-12);
}

TEST_CASE("mode equivalence when the regularizer is inert") {
    NetworkSpec spec = toy_net();
    Dataset train = toy_dataset(40, 12);
    Dataset test = toy_dataset(40, 13);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.total_iters = 30;
    tc.seed = 5;
    tc.eval_every = 10;
    RegularizerConfig rc;  // kind none -> every step acute with gOmega=0
    FlatVector init = init_params(spec, 4);

    tc.mode = TrainMode::Vanilla;
    RunResult a = run_training(spec, tc, rc, train, test, init);
    tc.mode = TrainMode::Dtnh;
    RunResult b = run_training(spec, tc, rc, train, test, init);
    CHECK(a.final_params.data == b.final_params.data);
}

TEST_CASE("reproducibility: identical metrics streams for identical seeds") {
    NetworkSpec spec = toy_net();
    Dataset train = toy_dataset(40, 14);
    Dataset test = toy_dataset(40, 15);
    TrainConfig tc;
    tc.batch_size = 8;
    tc.total_iters = 25;
    tc.seed = 21;
    tc.eval_every = 5;
    RegularizerConfig rc;
    rc.kind = RegKind::L2SP;
    rc.lambda0 = 0.05;
    rc.source_params = init_params(spec, 77);

    RunResult a = run_training(spec, tc, rc, train, test, rc.source_params);
    RunResult b = run_training(spec, tc, rc, train, test, rc.source_params);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i)
        CHECK(metrics_csv_line(a.rows[i]) == metrics_csv_line(b.rows[i]));
}

TEST_CASE("non-finite loss aborts with diagnostic") {
    NetworkSpec spec = toy_net();
    TrainConfig tc;
    RegularizerConfig rc;
    Dataset ds = toy_dataset(4, 16);
    TrainState st;
    st.params = FlatVector(spec.param_count, std::numeric_limits<double>::infinity());
    st.velocity = FlatVector(spec.param_count);
    CHECK_THROWS_AS(train_step(spec, tc, rc, st, ds.gather({0, 1}), 0), NumericError);
}
