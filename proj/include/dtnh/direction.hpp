#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "dtnh/errors.hpp"
#include "dtnh/tensor.hpp"

namespace dtnh {

/// Squared-norm floor below which a vector counts as degenerate for
/// projection and angle purposes.
inline constexpr double kDegeneracyEps = 1e-24;

/// Sentinel for angles involving a (near-)zero vector.
inline constexpr double kUndefinedAngle = -1.0;

enum class Branch : std::uint8_t { Acute, Obtuse, Degenerate };

inline const char* branch_name(Branch b) {
    switch (b) {
        case Branch::Acute: return "acute";
        case Branch::Obtuse: return "obtuse";
        case Branch::Degenerate: return "degenerate";
    }
    return "?";
}

/// Corrected descent direction plus the diagnostics logged per step:
///   angle1 = angle(d_hat, gJ)          angle2 = angle(d_hat, gOmega)
///   angle3 = angle(gJ + lambda gOmega, gJ)
///   angle4 = angle(gJ + lambda gOmega, gOmega)
struct DirectionResult {
    FlatVector d_hat;
    Branch branch = Branch::Acute;
    double angle1 = kUndefinedAngle;
    double angle2 = kUndefinedAngle;
    double angle3 = kUndefinedAngle;
    double angle4 = kUndefinedAngle;
    double norm_gJ = 0.0;
    double norm_gOmega = 0.0;
};

/// Angle between u and v in degrees, or the undefined sentinel when either
/// squared norm is at or below the degeneracy floor.
inline double angle_deg(const FlatVector& u, const FlatVector& v) {
    check_same_length(u, v, "angle_deg");
    const double nu = norm_sq(u), nv = norm_sq(v);
    if (nu <= kDegeneracyEps || nv <= kDegeneracyEps) return kUndefinedAngle;
    double c = dot(u, v) / std::sqrt(nu * nv);
    c = std::clamp(c, -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
}

/// Split gOmega into a component parallel to gJ and the orthogonal remainder:
///   omega_x = (<gJ,gOmega>/||gJ||^2) gJ,  omega_y = gOmega - omega_x.
inline std::pair<FlatVector, FlatVector> decompose(const FlatVector& gJ,
                                                   const FlatVector& gOmega) {
    check_same_length(gJ, gOmega, "decompose");
    const double denom = norm_sq(gJ);
    if (denom <= kDegeneracyEps)
        throw NumericError("decompose: ||gJ||^2 below degeneracy threshold");
    const double coef = dot(gJ, gOmega) / denom;
    FlatVector omega_x = scale(coef, gJ);
    FlatVector omega_y = axpy(-1.0, omega_x, gOmega);
    return {std::move(omega_x), std::move(omega_y)};
}

/// The direction correction: acute pairs get the plain combination
/// gJ + lambda*gOmega; obtuse pairs get gJ + lambda*omega_y with the
/// component of gOmega opposing gJ truncated. A degenerate gJ falls back to
/// the plain combination (there is no descent direction to protect).
inline DirectionResult estimate_direction(const FlatVector& gJ,
                                          const FlatVector& gOmega, double lambda) {
    check_same_length(gJ, gOmega, "estimate_direction");
    if (!all_finite(gJ) || !all_finite(gOmega))
        throw NumericError("estimate_direction: non-finite gradient input");
    if (lambda < 0.0) throw ConfigError("estimate_direction: lambda must be >= 0");

    DirectionResult r;
    const double nJ2 = norm_sq(gJ);
    r.norm_gJ = std::sqrt(nJ2);
    r.norm_gOmega = std::sqrt(norm_sq(gOmega));

    FlatVector vanilla = axpy(lambda, gOmega, gJ);
    if (nJ2 <= kDegeneracyEps) {
        r.branch = Branch::Degenerate;
        r.d_hat = vanilla;
    } else if (dot(gJ, gOmega) >= 0.0) {
        // <= 90 degrees: the exactly-orthogonal boundary takes this branch
        r.branch = Branch::Acute;
        r.d_hat = vanilla;
    } else {
        r.branch = Branch::Obtuse;
        auto [omega_x, omega_y] = decompose(gJ, gOmega);
        (void)omega_x;
        r.d_hat = axpy(lambda, omega_y, gJ);
    }

    r.angle1 = angle_deg(r.d_hat, gJ);
    r.angle2 = angle_deg(r.d_hat, gOmega);
    r.angle3 = angle_deg(vanilla, gJ);
    r.angle4 = angle_deg(vanilla, gOmega);
    return r;
}

}  // namespace dtnh
