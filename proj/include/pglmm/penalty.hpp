#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pglmm/data.hpp"

namespace pglmm {

enum class PenaltyKind { MCP, SCAD, LASSO };

inline double default_gamma_scale(PenaltyKind k) {
    switch (k) {
        case PenaltyKind::MCP: return 3.0;
        case PenaltyKind::SCAD: return 4.0;
        default: return 0.0; // unused for LASSO
    }
}

inline const char* penalty_name(PenaltyKind k) {
    switch (k) {
        case PenaltyKind::MCP: return "MCP";
        case PenaltyKind::SCAD: return "SCAD";
        default: return "lasso";
    }
}

struct PenaltyConfig {
    PenaltyKind penalty = PenaltyKind::MCP;
    double lambda0 = 0.0;
    double lambda1 = 0.0;
    double gamma_scale = default_gamma_scale(PenaltyKind::MCP);
    double alpha_mix = 1.0; // elastic-net mix; 1 = no L2 contribution
    std::vector<int> noPen_mask; // fixed-effect covariate indices never penalized

    void validate() const {
        if (lambda0 < 0.0 || lambda1 < 0.0)
            throw std::invalid_argument("penalty parameters must be nonnegative");
        if (alpha_mix <= 0.0 || alpha_mix > 1.0)
            throw std::invalid_argument("alpha_mix must lie in (0, 1]");
        if (penalty == PenaltyKind::MCP && gamma_scale <= 1.0)
            throw std::invalid_argument("MCP scale factor must exceed 1");
        if (penalty == PenaltyKind::SCAD && gamma_scale <= 2.0)
            throw std::invalid_argument("SCAD scale factor must exceed 2");
    }
};

inline double soft_threshold(double z, double t) {
    if (z > t) return z - t;
    if (z < -t) return z + t;
    return 0.0;
}

/// One-dimensional penalized minimizer of (v/2) b^2 - z b + rho_lambda(b).
/// LASSO: S(z, lambda) / v. MCP: firm rule S(z, lambda) / (v - 1/gamma) inside
/// |z| <= v*gamma*lambda, z/v beyond. SCAD: three-regime firm rule.
inline double scalar_threshold(PenaltyKind penalty, double z, double lambda,
                               double gamma_scale, double v) {
    if (v <= 0.0) throw std::invalid_argument("curvature weight must be positive");
    if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
    switch (penalty) {
        case PenaltyKind::LASSO:
            return soft_threshold(z, lambda) / v;
        case PenaltyKind::MCP: {
            if (v * gamma_scale <= 1.0)
                throw std::invalid_argument("MCP majorizer is non-convex: v * gamma <= 1");
            if (std::fabs(z) <= v * gamma_scale * lambda)
                return soft_threshold(z, lambda) / (v - 1.0 / gamma_scale);
            return z / v;
        }
        default: { // SCAD
            if (v * (gamma_scale - 1.0) <= 1.0)
                throw std::invalid_argument("SCAD majorizer is non-convex: v * (gamma - 1) <= 1");
            const double az = std::fabs(z);
            if (az <= lambda * (1.0 + v)) return soft_threshold(z, lambda) / v;
            if (az <= v * gamma_scale * lambda)
                return soft_threshold(z, gamma_scale * lambda / (gamma_scale - 1.0)) /
                       (v - 1.0 / (gamma_scale - 1.0));
            return z / v;
        }
    }
}

/// Grouped update: apply the scalar rule to ||z||_2 and rescale the direction,
/// so the group is either wholly zero or wholly nonzero.
inline Vec group_threshold(PenaltyKind penalty, const Vec& z, double lambda,
                           double gamma_scale, double v) {
    const double norm = z.norm();
    if (norm == 0.0) return Vec::Zero(z.size());
    const double m = scalar_threshold(penalty, norm, lambda, gamma_scale, v);
    return z * (m / norm);
}

/// Penalty value rho_lambda(|b|) with lambda folded in; used when evaluating
/// the penalized objective.
inline double penalty_value(PenaltyKind penalty, double b_abs, double lambda,
                            double gamma_scale) {
    switch (penalty) {
        case PenaltyKind::LASSO:
            return lambda * b_abs;
        case PenaltyKind::MCP:
            if (b_abs <= gamma_scale * lambda)
                return lambda * b_abs - b_abs * b_abs / (2.0 * gamma_scale);
            return 0.5 * gamma_scale * lambda * lambda;
        default: { // SCAD
            if (b_abs <= lambda) return lambda * b_abs;
            if (b_abs <= gamma_scale * lambda)
                return (2.0 * gamma_scale * lambda * b_abs - b_abs * b_abs - lambda * lambda) /
                       (2.0 * (gamma_scale - 1.0));
            return lambda * lambda * (gamma_scale + 1.0) / 2.0;
        }
    }
}

} // namespace pglmm
