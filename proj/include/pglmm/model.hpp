#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <stdexcept>

#include "pglmm/data.hpp"

namespace pglmm {

enum class CovKind { Unstructured, Diagonal };

/// Shape descriptor for the random-effect Cholesky factor Gamma. The packed
/// vector gamma stacks the nonzero entries of Gamma row by row:
/// row t contributes (Gamma_{t,0}, ..., Gamma_{t,t}) when unstructured and
/// the single diagonal entry Gamma_{t,t} when diagonal.
struct CovStructure {
    CovKind kind = CovKind::Unstructured;
    int q = 1;

    int gamma_len() const {
        return kind == CovKind::Unstructured ? q * (q + 1) / 2 : q;
    }
    int row_offset(int t) const {
        return kind == CovKind::Unstructured ? t * (t + 1) / 2 : t;
    }
    int row_len(int t) const { return kind == CovKind::Unstructured ? t + 1 : 1; }
    /// Gamma column index of the h-th packed entry of row t.
    int col_of(int t, int h) const { return kind == CovKind::Unstructured ? h : t; }
};

/// Model parameters: fixed effects (intercept first), packed Cholesky vector,
/// and dispersion (sigma^2 for Gaussian, 1 otherwise).
struct Theta {
    Vec beta;
    Vec gamma;
    double tau = 1.0;
};

/// 0/1 map with vec(Gamma) = J_q * gamma, vec() in column-major order.
inline Eigen::SparseMatrix<double> build_Jq(const CovStructure& cs) {
    if (cs.q < 1) throw std::invalid_argument("q must be >= 1");
    Eigen::SparseMatrix<double> J(cs.q * cs.q, cs.gamma_len());
    std::vector<Eigen::Triplet<double>> trips;
    for (int t = 0; t < cs.q; ++t)
        for (int h = 0; h < cs.row_len(t); ++h) {
            const int col = cs.col_of(t, h);
            trips.emplace_back(col * cs.q + t, cs.row_offset(t) + h, 1.0);
        }
    J.setFromTriplets(trips.begin(), trips.end());
    return J;
}

inline Mat gamma_to_Gamma(const Vec& gamma, const CovStructure& cs) {
    if (gamma.size() != cs.gamma_len())
        throw std::invalid_argument("gamma length inconsistent with covariance structure");
    Mat G = Mat::Zero(cs.q, cs.q);
    for (int t = 0; t < cs.q; ++t)
        for (int h = 0; h < cs.row_len(t); ++h)
            G(t, cs.col_of(t, h)) = gamma(cs.row_offset(t) + h);
    return G;
}

/// Random-effect covariance Gamma * Gamma^T.
inline Mat random_effect_cov(const Theta& theta, const CovStructure& cs) {
    const Mat G = gamma_to_Gamma(theta.gamma, cs);
    return G * G.transpose();
}

/// True when row t of Gamma has any nonzero entry, i.e. random effect t is in
/// the model.
inline bool ranef_active(const Vec& gamma, const CovStructure& cs, int t) {
    for (int h = 0; h < cs.row_len(t); ++h)
        if (gamma(cs.row_offset(t) + h) != 0.0) return true;
    return false;
}

/// Linear predictor eta_ki = x_ki' beta + z_ki' Gamma alpha_k.
inline double linear_predictor(const Dataset& d, const Theta& theta, const CovStructure& cs,
                               const Vec& alpha_k, int k, int i) {
    if (d.group_of[static_cast<std::size_t>(i)] != k)
        throw std::invalid_argument("row does not belong to the requested group");
    if (alpha_k.size() != cs.q || theta.beta.size() != d.p + 1)
        throw std::invalid_argument("dimension mismatch in linear_predictor");
    double eta = theta.beta(0);
    for (int j = 0; j < d.p; ++j) eta += d.X(i, j) * theta.beta(j + 1);
    for (int t = 0; t < cs.q; ++t) {
        double row_dot = 0.0;
        for (int h = 0; h < cs.row_len(t); ++h)
            row_dot += theta.gamma(cs.row_offset(t) + h) * alpha_k(cs.col_of(t, h));
        eta += d.z_value(i, t) * row_dot;
    }
    return eta;
}

/// Keep the diagonal of Gamma nonnegative by flipping the sign of column t of
/// Gamma together with coordinate t of every chain state row; Gamma*Gamma' and
/// all linear predictors are unchanged by the paired flip.
inline void enforce_sign_convention(Theta& theta, const CovStructure& cs,
                                    Mat* chain_current = nullptr) {
    for (int t = 0; t < cs.q; ++t) {
        const int diag_idx = cs.row_offset(t) + cs.row_len(t) - 1;
        if (theta.gamma(diag_idx) >= 0.0) continue;
        for (int r = t; r < cs.q; ++r) {
            if (cs.kind == CovKind::Diagonal && r != t) continue;
            for (int h = 0; h < cs.row_len(r); ++h)
                if (cs.col_of(r, h) == t)
                    theta.gamma(cs.row_offset(r) + h) = -theta.gamma(cs.row_offset(r) + h);
        }
        if (chain_current) chain_current->col(t) = -chain_current->col(t);
    }
}

} // namespace pglmm
