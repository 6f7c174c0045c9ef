#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "pglmm/data.hpp"
#include "pglmm/family.hpp"
#include "pglmm/model.hpp"
#include "pglmm/penalty.hpp"
#include "pglmm/sampler.hpp"

namespace pglmm {

struct MStepOptions {
    double delta = 0.0005;
    int maxit_CD = 50;
};

struct MStepReport {
    int iterations = 0;
    bool hit_cap = false;
};

/// Augmented design rows for one (k, i): row m equals (alpha_k^(m) kron z_ki)' J_q,
/// i.e. column (t, h) holds alpha_{col(t,h)}^(m) * z_ki[t]. Shape M x len(gamma).
/// Materialized on demand only; the M-step never stores it across all (k, i).
inline Mat build_augmented_row(const Vec& z_ki, const Mat& draws_k, const CovStructure& cs) {
    if (z_ki.size() != cs.q || draws_k.cols() != cs.q)
        throw std::invalid_argument("z/draws dimensions inconsistent with covariance structure");
    Mat out(draws_k.rows(), cs.gamma_len());
    for (int t = 0; t < cs.q; ++t)
        for (int h = 0; h < cs.row_len(t); ++h)
            out.col(cs.row_offset(t) + h) = draws_k.col(cs.col_of(t, h)) * z_ki(t);
    return out;
}

namespace detail {

/// Working state for one M-step with a fixed set of posterior draws. Rows are
/// re-ordered so that each group is contiguous; the per-draw state (eta,
/// residuals) is held M x N so a data row is a contiguous column.
class MStepEngine {
public:
    MStepEngine(const Dataset& d, const PosteriorDraws& draws, const FamilySpec& family,
                const PenaltyConfig& cfg, const CovStructure& cs,
                const std::vector<bool>& excluded)
        : d_(d), family_(family), cfg_(cfg), cs_(cs), M_(draws.M) {
        cfg_.validate();
        excluded_.assign(static_cast<std::size_t>(cs.q), false);
        for (std::size_t t = 0; t < excluded.size() && t < excluded_.size(); ++t)
            excluded_[t] = excluded[t];

        offsets_.resize(static_cast<std::size_t>(d.K) + 1, 0);
        sorted_rows_.reserve(static_cast<std::size_t>(d.N));
        for (int k = 0; k < d.K; ++k) {
            for (int i : d.group_rows[static_cast<std::size_t>(k)]) sorted_rows_.push_back(i);
            offsets_[static_cast<std::size_t>(k) + 1] = static_cast<int>(sorted_rows_.size());
        }
        ys_.resize(d.N);
        Xs_.resize(d.N, d.p);
        Zs_.resize(d.N, cs.q);
        for (int r = 0; r < d.N; ++r) {
            const int i = sorted_rows_[static_cast<std::size_t>(r)];
            ys_(r) = d.y(i);
            Xs_.row(r) = d.X.row(i);
            for (int t = 0; t < cs.q; ++t) Zs_(r, t) = d.z_value(i, t);
        }
        A_.reserve(static_cast<std::size_t>(d.K));
        for (int k = 0; k < d.K; ++k) A_.emplace_back(draws.group_block(k));

        zeta_.resize(M_, d.N);
        psi_.resize(M_, d.N);
        nopen_.assign(static_cast<std::size_t>(d.p), false);
        for (int j : cfg_.noPen_mask)
            if (j >= 0 && j < d.p) nopen_[static_cast<std::size_t>(j)] = true;
    }

    void set_theta(const Theta& theta) {
        beta_ = theta.beta;
        gamma_ = theta.gamma;
        if (beta_.size() != d_.p + 1 || gamma_.size() != cs_.gamma_len())
            throw std::invalid_argument("theta dimensions inconsistent with dataset/structure");
        xb_ = Vec::Constant(d_.N, beta_(0));
        xb_.noalias() += Xs_ * beta_.tail(d_.p);
        refresh_zeta();
    }

    Theta theta() const { return {beta_, gamma_, tau_}; }

    /// One coordinate-descent sweep over beta with a fresh majorization
    /// anchor; working residuals are updated after every coordinate.
    double beta_sweep() {
        const double v = anchor_collapsed();
        double max_change = 0.0;
        for (int j = 0; j <= d_.p; ++j) {
            double z, lam;
            if (j == 0) {
                z = v * beta_(0) + psibar_.mean();
                lam = 0.0;
            } else {
                z = v * beta_(j) + Xs_.col(j - 1).dot(psibar_) / d_.N;
                lam = nopen_[static_cast<std::size_t>(j - 1)] ? 0.0 : cfg_.lambda0;
            }
            const double b_new = solve1d(z, lam, v);
            const double step = b_new - beta_(j);
            if (step != 0.0) {
                if (j == 0) {
                    psibar_.array() -= v * step;
                    xb_.array() += step;
                } else {
                    psibar_.noalias() -= (v * step) * Xs_.col(j - 1);
                    xb_.noalias() += step * Xs_.col(j - 1);
                }
                beta_(j) = b_new;
                max_change = std::max(max_change, std::fabs(step));
            }
        }
        if (!psibar_.allFinite())
            throw std::runtime_error("non-finite working residuals in fixed-effect update");
        return max_change;
    }

    /// One grouped sweep over the rows of Gamma; the working residual matrix
    /// is computed once at the anchor and not refreshed between group updates.
    double gamma_sweep() {
        const double v = anchor_full();
        double max_change = 0.0;
        Vec u(M_);
        for (int t = 0; t < cs_.q; ++t) {
            if (excluded_[static_cast<std::size_t>(t)]) continue;
            const int len = cs_.row_len(t);
            const int off = cs_.row_offset(t);
            Vec s = Vec::Zero(len);
            for (int k = 0; k < d_.K; ++k) {
                const int lo = offsets_[static_cast<std::size_t>(k)];
                const int nk = offsets_[static_cast<std::size_t>(k) + 1] - lo;
                u.noalias() = psi_.middleCols(lo, nk) * Zs_.col(t).segment(lo, nk);
                for (int h = 0; h < len; ++h)
                    s(h) += A_[static_cast<std::size_t>(k)].col(cs_.col_of(t, h)).dot(u);
            }
            Vec z = v * gamma_.segment(off, len) + s / (static_cast<double>(d_.N) * M_);
            const Vec g_new = solve_group(z, t == 0 ? 0.0 : cfg_.lambda1, v);
            const double step = (g_new - gamma_.segment(off, len)).cwiseAbs().maxCoeff();
            max_change = std::max(max_change, step);
            gamma_.segment(off, len) = g_new;
        }
        refresh_zeta();
        return max_change;
    }

    /// Gaussian dispersion from the Q-function closed form,
    /// sigma^2 = (1/(M N)) sum_m sum_ki (y - eta)^2; other families return 1.
    double dispersion() {
        if (family_.kind != Family::Gaussian) {
            tau_ = 1.0;
            return tau_;
        }
        double ss = 0.0;
        for (int i = 0; i < d_.N; ++i)
            ss += (zeta_.col(i).array() + (xb_(i) - ys_(i))).square().sum();
        tau_ = ss / (static_cast<double>(M_) * d_.N);
        return tau_;
    }

    /// MC-approximated penalized objective in the normalization minimized by
    /// the coordinate descent: mean unit-dispersion loss plus penalties.
    double objective() const {
        double loss = 0.0;
        for (int i = 0; i < d_.N; ++i)
            for (int m = 0; m < M_; ++m)
                loss += family_.unit_nll(ys_(i), xb_(i) + zeta_(m, i));
        loss /= static_cast<double>(d_.N) * M_;
        const double scale_eff = operator_scale();
        for (int j = 1; j <= d_.p; ++j) {
            if (nopen_[static_cast<std::size_t>(j - 1)]) continue;
            loss += cfg_.alpha_mix *
                        penalty_value(cfg_.penalty, std::fabs(beta_(j)), cfg_.lambda0, scale_eff) +
                    0.5 * (1.0 - cfg_.alpha_mix) * cfg_.lambda0 * beta_(j) * beta_(j);
        }
        for (int t = 1; t < cs_.q; ++t) {
            const double norm = gamma_.segment(cs_.row_offset(t), cs_.row_len(t)).norm();
            loss += cfg_.alpha_mix * penalty_value(cfg_.penalty, norm, cfg_.lambda1, scale_eff) +
                    0.5 * (1.0 - cfg_.alpha_mix) * cfg_.lambda1 * norm * norm;
        }
        return loss;
    }

    double max_abs_coef() const {
        return std::max(beta_.cwiseAbs().maxCoeff(), gamma_.size() > 0 ? gamma_.cwiseAbs().maxCoeff() : 0.0);
    }

private:
    /// Family curvature folded into the MCP/SCAD scale argument so that the
    /// operator's effective penalty matches the ncvreg weighted-scale
    /// convention; with it the config invariants (gamma > 1 for MCP,
    /// gamma > 2 for SCAD) are exactly the operator validity conditions.
    double operator_scale() const {
        if (cfg_.penalty == PenaltyKind::LASSO) return 0.0;
        const double v = family_.kind == Family::Poisson ? 1.0 : family_.curvature_bound();
        return cfg_.gamma_scale / v;
    }

    double solve1d(double z, double lam, double v) const {
        const double lam1 = cfg_.alpha_mix * lam;
        const double v_eff = v + (1.0 - cfg_.alpha_mix) * lam;
        const double scale = cfg_.penalty == PenaltyKind::LASSO ? 0.0 : cfg_.gamma_scale / v;
        return scalar_threshold(cfg_.penalty, z, lam1, scale, v_eff);
    }

    Vec solve_group(const Vec& z, double lam, double v) const {
        const double lam1 = cfg_.alpha_mix * lam;
        const double v_eff = v + (1.0 - cfg_.alpha_mix) * lam;
        const double scale = cfg_.penalty == PenaltyKind::LASSO ? 0.0 : cfg_.gamma_scale / v;
        return group_threshold(cfg_.penalty, z, lam1, scale, v_eff);
    }

    void refresh_zeta() {
        const Mat Gamma = gamma_to_Gamma(gamma_, cs_);
        for (int k = 0; k < d_.K; ++k) {
            const int lo = offsets_[static_cast<std::size_t>(k)];
            const int nk = offsets_[static_cast<std::size_t>(k) + 1] - lo;
            Mat B = A_[static_cast<std::size_t>(k)] * Gamma.transpose(); // M x q
            zeta_.middleCols(lo, nk).noalias() = B * Zs_.middleRows(lo, nk).transpose();
        }
    }

    /// Anchor for the beta sweep: collapse residuals over draws. Returns the
    /// sweep curvature.
    double anchor_collapsed() {
        psibar_.resize(d_.N);
        double vmax = 0.0;
        for (int i = 0; i < d_.N; ++i) {
            double acc = 0.0;
            for (int m = 0; m < M_; ++m) {
                const double mu = family_.inverse_link(xb_(i) + zeta_(m, i));
                acc += mu;
                if (family_.kind == Family::Poisson) vmax = std::max(vmax, mu);
            }
            psibar_(i) = ys_(i) - acc / M_;
        }
        if (!psibar_.allFinite())
            throw std::runtime_error("non-finite working residuals in fixed-effect update");
        return family_.kind == Family::Poisson ? std::max(vmax, 1e-4) : family_.curvature_bound();
    }

    /// Anchor for the gamma sweep: per-draw residual matrix psi = y - mu.
    double anchor_full() {
        double vmax = 0.0;
        for (int i = 0; i < d_.N; ++i) {
            const double xbi = xb_(i), yi = ys_(i);
            for (int m = 0; m < M_; ++m) {
                const double mu = family_.inverse_link(xbi + zeta_(m, i));
                psi_(m, i) = yi - mu;
                if (family_.kind == Family::Poisson) vmax = std::max(vmax, mu);
            }
        }
        if (!psi_.allFinite())
            throw std::runtime_error("non-finite working residuals in random-effect update");
        return family_.kind == Family::Poisson ? std::max(vmax, 1e-4) : family_.curvature_bound();
    }

    const Dataset& d_;
    FamilySpec family_;
    PenaltyConfig cfg_;
    CovStructure cs_;
    int M_;

    std::vector<bool> excluded_;
    std::vector<bool> nopen_;
    std::vector<int> sorted_rows_;
    std::vector<int> offsets_;
    Vec ys_;
    Mat Xs_, Zs_;
    std::vector<Mat> A_; // per-group draws, M x q

    Vec beta_, gamma_;
    double tau_ = 1.0;
    Vec xb_, psibar_;
    Mat zeta_, psi_; // M x N
};

} // namespace detail

/// One beta coordinate-descent sweep (Alg. 1 step 2) at the given theta.
inline Vec beta_update_pass(const Theta& theta, const Dataset& d, const PosteriorDraws& draws,
                            const FamilySpec& family, const PenaltyConfig& cfg,
                            const CovStructure& cs, const std::vector<bool>& excluded = {}) {
    detail::MStepEngine eng(d, draws, family, cfg, cs, excluded);
    eng.set_theta(theta);
    eng.beta_sweep();
    return eng.theta().beta;
}

/// One grouped gamma sweep (Alg. 1 steps 3-4) at the given theta, residuals
/// held fixed within the sweep.
inline Vec gamma_update_pass(const Theta& theta, const Dataset& d, const PosteriorDraws& draws,
                             const FamilySpec& family, const PenaltyConfig& cfg,
                             const CovStructure& cs, const std::vector<bool>& excluded = {}) {
    detail::MStepEngine eng(d, draws, family, cfg, cs, excluded);
    eng.set_theta(theta);
    eng.gamma_sweep();
    return eng.theta().gamma;
}

/// Gaussian dispersion update (closed form); Binomial/Poisson return 1.
inline double dispersion_update(const Dataset& d, const Theta& theta, const PosteriorDraws& draws,
                                const FamilySpec& family, const CovStructure& cs) {
    if (family.kind != Family::Gaussian) return 1.0;
    detail::MStepEngine eng(d, draws, family, PenaltyConfig{}, cs, {});
    eng.set_theta(theta);
    return eng.dispersion();
}

/// Penalized MC objective at theta with the given draws; the quantity the
/// M-step coordinate descent decreases.
inline double penalized_q_mc(const Dataset& d, const Theta& theta, const PosteriorDraws& draws,
                             const FamilySpec& family, const PenaltyConfig& cfg,
                             const CovStructure& cs) {
    detail::MStepEngine eng(d, draws, family, cfg, cs, {});
    eng.set_theta(theta);
    return eng.objective();
}

/// Full M-step: alternate beta and gamma sweeps until both maximal coefficient
/// changes drop below delta or the iteration cap is reached, then update the
/// dispersion. Hitting the cap is reported, not fatal.
inline MStepReport m_step(Theta& theta, const Dataset& d, const PosteriorDraws& draws,
                          const FamilySpec& family, const PenaltyConfig& cfg,
                          const CovStructure& cs, const MStepOptions& opts,
                          const std::vector<bool>& excluded = {}) {
    if (draws.M <= 0) throw std::invalid_argument("m_step requires a nonempty posterior sample");
    detail::MStepEngine eng(d, draws, family, cfg, cs, excluded);
    eng.set_theta(theta);
    MStepReport rep;
    for (int f = 1; f <= opts.maxit_CD; ++f) {
        const double db = eng.beta_sweep();
        const double dg = eng.gamma_sweep();
        rep.iterations = f;
        if (eng.max_abs_coef() > 1e6)
            throw std::runtime_error(
                "M-step diverged (coefficient above 1e6); data may be separable");
        if (db < opts.delta && dg < opts.delta) break;
        if (f == opts.maxit_CD) rep.hit_cap = true;
    }
    eng.dispersion();
    theta = eng.theta();
    return rep;
}

/// Penalized GLM with no random effects (gamma forced to zero): the
/// initialization fit of the MCECM and the gamma-free reduction of the model.
inline Vec fit_pglm(const Dataset& d, const FamilySpec& family, double lambda0,
                    const PenaltyConfig& cfg_in, double delta = 0.0005, int maxit = 200) {
    PenaltyConfig cfg = cfg_in;
    cfg.lambda0 = lambda0;
    cfg.validate();
    std::vector<bool> nopen(static_cast<std::size_t>(d.p), false);
    for (int j : cfg.noPen_mask)
        if (j >= 0 && j < d.p) nopen[static_cast<std::size_t>(j)] = true;

    Vec beta = Vec::Zero(d.p + 1);
    Vec xb = Vec::Zero(d.N);
    Vec psi(d.N);
    for (int it = 1; it <= maxit; ++it) {
        double vmax = 0.0;
        for (int i = 0; i < d.N; ++i) {
            const double mu = family.inverse_link(xb(i));
            psi(i) = d.y(i) - mu;
            if (family.kind == Family::Poisson) vmax = std::max(vmax, mu);
        }
        if (!psi.allFinite())
            throw std::runtime_error("penalized GLM fit diverged (non-finite residuals)");
        const double v =
            family.kind == Family::Poisson ? std::max(vmax, 1e-4) : family.curvature_bound();
        const double scale = cfg.penalty == PenaltyKind::LASSO ? 0.0 : cfg.gamma_scale / v;
        double max_change = 0.0;
        for (int j = 0; j <= d.p; ++j) {
            double z, lam;
            if (j == 0) {
                z = v * beta(0) + psi.mean();
                lam = 0.0;
            } else {
                z = v * beta(j) + d.X.col(j - 1).dot(psi) / d.N;
                lam = nopen[static_cast<std::size_t>(j - 1)] ? 0.0 : lambda0;
            }
            const double lam1 = cfg.alpha_mix * lam;
            const double v_eff = v + (1.0 - cfg.alpha_mix) * lam;
            const double b_new = scalar_threshold(cfg.penalty, z, lam1, scale, v_eff);
            const double step = b_new - beta(j);
            if (step != 0.0) {
                if (j == 0) {
                    psi.array() -= v * step;
                    xb.array() += step;
                } else {
                    psi.noalias() -= (v * step) * d.X.col(j - 1);
                    xb.noalias() += step * d.X.col(j - 1);
                }
                beta(j) = b_new;
                max_change = std::max(max_change, std::fabs(step));
            }
        }
        if (beta.cwiseAbs().maxCoeff() > 1e6)
            throw std::runtime_error("penalized GLM fit diverged; data may be separable");
        if (max_change < delta) break;
    }
    return beta;
}

} // namespace pglmm
