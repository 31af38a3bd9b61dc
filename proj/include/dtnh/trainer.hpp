#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dtnh/dataset.hpp"
#include "dtnh/direction.hpp"
#include "dtnh/errors.hpp"
#include "dtnh/net.hpp"
#include "dtnh/reg.hpp"
#include "dtnh/tensor.hpp"

namespace dtnh {

enum class TrainMode : std::uint8_t { Vanilla, Dtnh };

inline const char* train_mode_name(TrainMode m) {
    return m == TrainMode::Vanilla ? "vanilla" : "dtnh";
}

inline TrainMode parse_train_mode(const std::string& s) {
    if (s == "vanilla") return TrainMode::Vanilla;
    if (s == "dtnh") return TrainMode::Dtnh;
    throw ConfigError("unknown train mode: " + s);
}

/// Optimization hyperparameters. Defaults follow the momentum-SGD protocol
/// the library targets: batch 48, momentum 0.9, lr 0.01 divided by 10 every
/// 6000 iterations.
struct TrainConfig {
    std::size_t batch_size = 48;
    double momentum = 0.9;
    double lr0 = 0.01;
    std::size_t lr_drop_iters = 6000;
    double lr_drop_factor = 0.1;
    std::size_t total_iters = 1;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::Dtnh;
    std::size_t eval_every = 100;
    std::size_t log_every = 1;

    void validate() const {
        if (batch_size == 0) throw ConfigError("batch_size must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw ConfigError("momentum must lie in [0,1)");
        if (lr0 <= 0.0) throw ConfigError("lr0 must be positive");
        if (lr_drop_iters == 0) throw ConfigError("lr_drop_iters must be positive");
        if (total_iters == 0) throw ConfigError("total_iters must be >= 1");
        if (eval_every == 0 || log_every == 0)
            throw ConfigError("eval_every and log_every must be positive");
    }

    double lr_at(std::size_t iteration) const {
        return lr0 * std::pow(lr_drop_factor,
                              static_cast<double>(iteration / lr_drop_iters));
    }
};

/// One logged training step.
struct MetricsRow {
    std::size_t iteration = 0;
    std::size_t epoch = 0;
    double empirical_loss = 0.0;
    double reg_value = 0.0;
    double lambda_effective = 0.0;
    double train_total_loss = 0.0;
    std::optional<double> test_loss;
    std::optional<double> test_accuracy;
    double angle1 = kUndefinedAngle;
    double angle2 = kUndefinedAngle;
    double angle3 = kUndefinedAngle;
    double angle4 = kUndefinedAngle;
    Branch branch = Branch::Acute;
    double norm_gJ = 0.0;
    double norm_gOmega = 0.0;
};

inline const char* metrics_csv_header() {
    return "iteration,epoch,empirical_loss,reg_value,lambda_effective,"
           "train_total_loss,test_loss,test_accuracy,angle1,angle2,angle3,angle4,"
           "branch,norm_gJ,norm_gOmega";
}

namespace detail {
inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}
inline std::string fmt_angle(double a) {
    return a == kUndefinedAngle ? "NA" : fmt_double(a);
}
inline std::string fmt_opt(const std::optional<double>& v) {
    return v ? fmt_double(*v) : "NA";
}
}  // namespace detail

inline std::string metrics_csv_line(const MetricsRow& r) {
    using detail::fmt_angle;
    using detail::fmt_double;
    using detail::fmt_opt;
    std::ostringstream os;
    os << r.iteration << ',' << r.epoch << ',' << fmt_double(r.empirical_loss)
       << ',' << fmt_double(r.reg_value) << ',' << fmt_double(r.lambda_effective)
       << ',' << fmt_double(r.train_total_loss) << ',' << fmt_opt(r.test_loss)
       << ',' << fmt_opt(r.test_accuracy) << ',' << fmt_angle(r.angle1) << ','
       << fmt_angle(r.angle2) << ',' << fmt_angle(r.angle3) << ','
       << fmt_angle(r.angle4) << ',' << branch_name(r.branch) << ','
       << fmt_double(r.norm_gJ) << ',' << fmt_double(r.norm_gOmega);
    return os.str();
}

/// Mean cross-entropy and top-1 accuracy over the full test set.
/// Argmax ties resolve to the lowest class index.
inline std::pair<double, double> evaluate(const NetworkSpec& spec,
                                          const FlatVector& params,
                                          const Dataset& test) {
    if (test.size() == 0) throw DataError("evaluate: empty test set");
    double loss_sum = 0.0;
    std::size_t correct = 0;
    const std::size_t chunk = 256;
    for (std::size_t start = 0; start < test.size(); start += chunk) {
        std::size_t take = std::min(chunk, test.size() - start);
        std::vector<std::size_t> idx(take);
        std::iota(idx.begin(), idx.end(), start);
        MiniBatch mb = test.gather(idx);
        ForwardRecord rec = forward(spec, params, mb.inputs);
        loss_sum += softmax_cross_entropy(rec.logits, mb.labels) *
                    static_cast<double>(take);
        const std::size_t c = rec.logits.shape[1];
        for (std::size_t s = 0; s < take; ++s) {
            const double* z = rec.logits.data.data() + s * c;
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (z[j] > z[best]) best = j;
            if (static_cast<int>(best) == mb.labels[s]) ++correct;
        }
    }
    return {loss_sum / static_cast<double>(test.size()),
            static_cast<double>(correct) / static_cast<double>(test.size())};
}

/// Mutable per-run optimizer state.
struct TrainState {
    FlatVector params;
    FlatVector velocity;
    std::size_t iteration = 0;
};

/// One momentum-SGD step on one mini-batch. The direction fed to the velocity
/// is the corrected d_hat (mode=dtnh) or the plain gJ + lambda*gOmega
/// (mode=vanilla); lambda comes from the epoch schedule.
inline MetricsRow train_step(const NetworkSpec& spec, const TrainConfig& tc,
                             const RegularizerConfig& rc, TrainState& state,
                             const MiniBatch& batch, std::size_t epoch) {
    auto [loss, gJ] = empirical_loss_and_grad(spec, state.params, batch);
    auto [omega, gOmega] = reg_value_and_grad(rc, spec, state.params, batch);
    const double lambda = lambda_at_epoch(rc, epoch);

    if (!std::isfinite(loss) || !std::isfinite(omega))
        throw NumericError("non-finite loss at iteration " +
                           std::to_string(state.iteration) + ": J=" +
                           std::to_string(loss) + " Omega=" + std::to_string(omega));

    DirectionResult dir = estimate_direction(gJ, gOmega, lambda);
    FlatVector d = tc.mode == TrainMode::Dtnh ? std::move(dir.d_hat)
                                              : axpy(lambda, gOmega, gJ);

    if (!all_finite(d))
        throw NumericError("non-finite direction at iteration " +
                           std::to_string(state.iteration) + ": |gJ|=" +
                           std::to_string(dir.norm_gJ) + " |gOmega|=" +
                           std::to_string(dir.norm_gOmega));

    // v <- mu*v + d ; w <- w - lr*v
    for (std::size_t i = 0; i < state.velocity.size(); ++i)
        state.velocity[i] = tc.momentum * state.velocity[i] + d[i];
    axpy_into(-tc.lr_at(state.iteration), state.velocity, state.params);

    MetricsRow row;
    row.iteration = state.iteration;
    row.epoch = epoch;
    row.empirical_loss = loss;
    row.reg_value = omega;
    row.lambda_effective = lambda;
    row.train_total_loss = loss + lambda * omega;
    row.angle1 = dir.angle1;
    row.angle2 = dir.angle2;
    row.angle3 = dir.angle3;
    row.angle4 = dir.angle4;
    row.branch = dir.branch;
    row.norm_gJ = dir.norm_gJ;
    row.norm_gOmega = dir.norm_gOmega;

    ++state.iteration;
    return row;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "DTNH" magic, u32 version, serialized layer list and
// input shape, then d little-endian doubles.
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* field) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
        throw FormatError(std::string("checkpoint truncated while reading ") + field);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

}  // namespace detail

inline void save_checkpoint(const NetworkSpec& spec, const FlatVector& params,
                            const std::string& path) {
    if (params.size() != spec.param_count)
        throw DimensionError("save_checkpoint: params length != d");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_checkpoint: cannot open " + path);
    os.write("DTNH", 4);
    detail::write_le<std::uint32_t>(os, detail::kCheckpointVersion);
    detail::write_le<std::uint32_t>(os,
                                    static_cast<std::uint32_t>(spec.input_shape.size()));
    for (std::size_t e : spec.input_shape)
        detail::write_le<std::uint64_t>(os, e);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(spec.layers.size()));
    for (const LayerSpec& l : spec.layers) {
        detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(l.kind));
        detail::write_le<std::uint64_t>(os, l.in_width);
        detail::write_le<std::uint64_t>(os, l.out_width);
        detail::write_le<std::uint64_t>(os, l.in_ch);
        detail::write_le<std::uint64_t>(os, l.out_ch);
        detail::write_le<std::uint64_t>(os, l.kh);
        detail::write_le<std::uint64_t>(os, l.kw);
        detail::write_le<std::uint64_t>(os, l.stride);
        detail::write_le<std::uint8_t>(os, l.tap ? 1 : 0);
    }
    detail::write_le<std::uint64_t>(os, spec.param_count);
    for (double v : params.data) detail::write_le<double>(os, v);
    if (!os) throw DataError("save_checkpoint: write failed for " + path);
}

inline std::pair<NetworkSpec, FlatVector> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, "DTNH", 4) != 0)
        throw FormatError("checkpoint: bad magic bytes");
    const auto version = detail::read_le<std::uint32_t>(is, "version");
    if (version != detail::kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const auto rank = detail::read_le<std::uint32_t>(is, "input rank");
    std::vector<std::size_t> input_shape(rank);
    for (auto& e : input_shape)
        e = detail::read_le<std::uint64_t>(is, "input extent");
    const auto n_layers = detail::read_le<std::uint32_t>(is, "layer count");
    std::vector<LayerSpec> layers(n_layers);
    for (auto& l : layers) {
        const auto kind = detail::read_le<std::uint8_t>(is, "layer kind");
        if (kind > static_cast<std::uint8_t>(LayerKind::SoftmaxCrossEntropyHead))
            throw FormatError("checkpoint: unknown layer kind " + std::to_string(kind));
        l.kind = static_cast<LayerKind>(kind);
        l.in_width = detail::read_le<std::uint64_t>(is, "in_width");
        l.out_width = detail::read_le<std::uint64_t>(is, "out_width");
        l.in_ch = detail::read_le<std::uint64_t>(is, "in_ch");
        l.out_ch = detail::read_le<std::uint64_t>(is, "out_ch");
        l.kh = detail::read_le<std::uint64_t>(is, "kh");
        l.kw = detail::read_le<std::uint64_t>(is, "kw");
        l.stride = detail::read_le<std::uint64_t>(is, "stride");
        l.tap = detail::read_le<std::uint8_t>(is, "tap") != 0;
    }
    NetworkSpec spec = NetworkSpec::build(std::move(input_shape), std::move(layers));
    const auto d = detail::read_le<std::uint64_t>(is, "parameter count");
    if (d != spec.param_count)
        throw FormatError("checkpoint: stored d=" + std::to_string(d) +
                          " does not match spec d=" +
                          std::to_string(spec.param_count));
    FlatVector params(d);
    for (auto& v : params.data) v = detail::read_le<double>(is, "parameter value");
    return {std::move(spec), std::move(params)};
}

/// Load a checkpoint whose parameter count must match an expected spec.
inline FlatVector load_params_for(const NetworkSpec& expected,
                                  const std::string& path) {
    auto [spec, params] = load_checkpoint(path);
    if (spec.param_count != expected.param_count)
        throw FormatError("checkpoint d=" + std::to_string(spec.param_count) +
                          " does not match expected d=" +
                          std::to_string(expected.param_count));
    return std::move(params);
}

}  // namespace dtnh
