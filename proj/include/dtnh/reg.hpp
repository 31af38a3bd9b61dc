#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "dtnh/errors.hpp"
#include "dtnh/net.hpp"
#include "dtnh/tensor.hpp"

namespace dtnh {

enum class RegKind : std::uint8_t { None, L2SP, KnowDist, L2 };

inline const char* reg_kind_name(RegKind k) {
    switch (k) {
        case RegKind::None: return "none";
        case RegKind::L2SP: return "l2sp";
        case RegKind::KnowDist: return "knowdist";
        case RegKind::L2: return "l2";
    }
    return "?";
}

inline RegKind parse_reg_kind(const std::string& s) {
    if (s == "none") return RegKind::None;
    if (s == "l2sp") return RegKind::L2SP;
    if (s == "knowdist") return RegKind::KnowDist;
    if (s == "l2") return RegKind::L2;
    throw ConfigError("unknown regularizer kind: " + s);
}

/// Which penalty couples the target weights to the source, its coefficient
/// lambda0, and the per-epoch geometric decay of that coefficient.
struct RegularizerConfig {
    RegKind kind = RegKind::None;
    double lambda0 = 0.0;
    double decay_ratio = 1.0;
    FlatVector source_params;  // omega_s; empty for kind in {none, l2}

    void validate(std::size_t d) const {
        if (lambda0 < 0.0) throw ConfigError("lambda0 must be nonnegative");
        if (!(decay_ratio > 0.0 && decay_ratio <= 1.0))
            throw ConfigError("decay_ratio must lie in (0,1]");
        const bool needs_source = kind == RegKind::L2SP || kind == RegKind::KnowDist;
        if (needs_source && source_params.size() != d)
            throw ConfigError(std::string(reg_kind_name(kind)) +
                              " requires source_params of length " + std::to_string(d));
    }
};

/// lambda_e = lambda0 * decay_ratio^epoch.
inline double lambda_at_epoch(const RegularizerConfig& cfg, std::size_t epoch) {
    return cfg.lambda0 * std::pow(cfg.decay_ratio, static_cast<double>(epoch));
}

/// Value and gradient of the raw penalty Omega (lambda is NOT applied here;
/// the direction estimator folds it in).
inline std::pair<double, FlatVector> reg_value_and_grad(const RegularizerConfig& cfg,
                                                        const NetworkSpec& spec,
                                                        const FlatVector& params,
                                                        const MiniBatch& batch) {
    cfg.validate(spec.param_count);
    switch (cfg.kind) {
        case RegKind::None:
            return {0.0, FlatVector(params.size())};
        case RegKind::L2: {
            FlatVector g = scale(2.0, params);
            return {norm_sq(params), std::move(g)};
        }
        case RegKind::L2SP: {
            FlatVector diff = axpy(-1.0, cfg.source_params, params);
            double omega = norm_sq(diff);
            return {omega, scale(2.0, diff)};
        }
        case RegKind::KnowDist:
            return feature_grad(spec, params, cfg.source_params, batch);
    }
    throw ConfigError("unreachable regularizer kind");
}

}  // namespace dtnh
