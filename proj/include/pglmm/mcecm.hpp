#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pglmm/criteria.hpp"
#include "pglmm/data.hpp"
#include "pglmm/family.hpp"
#include "pglmm/model.hpp"
#include "pglmm/mstep.hpp"
#include "pglmm/penalty.hpp"
#include "pglmm/sampler.hpp"

namespace pglmm {

enum class CovarOption { Auto, Unstructured, Diagonal };

struct VarStart {
    bool recommend = true;
    double value = 1.0;

    static VarStart recommended() { return {true, 1.0}; }
    static VarStart fixed(double v) {
        if (v <= 0.0) throw std::invalid_argument("var_start must be positive");
        return {false, v};
    }
};

struct FitConfig {
    double conv_EM = 0.0015;
    int t_lag = 2;
    int mcc = 2; // restricted to be no less than 2
    int maxitEM = 0; // 0 = family default (50 Binomial/Poisson, 100 Gaussian)
    VarStart var_start = VarStart::recommended();
    CovarOption covar = CovarOption::Auto;
    MStepOptions mstep;
    bool force_gamma_zero = false;
    std::vector<bool> excluded_ranef; // random effects pinned to zero

    int maxitEM_for(const FamilySpec& family) const {
        if (maxitEM > 0) return maxitEM;
        return family.kind == Family::Gaussian ? 100 : 50;
    }

    void validate() const {
        if (conv_EM <= 0.0) throw std::invalid_argument("conv_EM must be positive");
        if (t_lag < 1) throw std::invalid_argument("t must be >= 1");
        if (mcc < 2) throw std::invalid_argument("mcc is restricted to be no less than 2");
    }
};

inline CovStructure resolve_covstruct(CovarOption opt, int q) {
    switch (opt) {
        case CovarOption::Unstructured: return {CovKind::Unstructured, q};
        case CovarOption::Diagonal: return {CovKind::Diagonal, q};
        default: return {q >= 10 ? CovKind::Diagonal : CovKind::Unstructured, q};
    }
}

struct IterTrace {
    int s = 0;
    int M = 0;
    double distance = std::numeric_limits<double>::quiet_NaN();
    int mstep_iterations = 0;
    bool mstep_hit_cap = false;
};

struct FitResult {
    Theta theta;
    CovStructure covstruct;
    bool converged = false;
    std::string reason;
    int iterations = 0;
    std::vector<IterTrace> trace;
    PosteriorDraws final_draws;
    ChainState chain; // exit state, reusable as a warm start
    CriterionSet criteria;
};

/// EM convergence test (met-condition counter): the squared L2 distance
/// between stacked (beta, gamma) now and t iterations back, divided by the
/// number of nonzero coefficients then, must stay below eps for mcc
/// consecutive iterations. A null model (no nonzero coefficients) counts as
/// distance zero.
inline std::pair<bool, int> em_converged(const Vec& coef_s, const Vec& coef_lag, double eps,
                                         int counter, int mcc) {
    int d_n = 0;
    for (Eigen::Index i = 0; i < coef_lag.size(); ++i)
        if (coef_lag(i) != 0.0) ++d_n;
    double dist = 0.0;
    if (d_n > 0) dist = (coef_s - coef_lag).squaredNorm() / d_n;
    const int next = dist < eps ? counter + 1 : 0;
    return {next >= mcc, next};
}

namespace detail {

inline Vec stack_coefficients(const Theta& theta) {
    Vec out(theta.beta.size() + theta.gamma.size());
    out << theta.beta, theta.gamma;
    return out;
}

inline void apply_exclusions(Theta& theta, const CovStructure& cs,
                             const std::vector<bool>& excluded) {
    for (int t = 0; t < cs.q; ++t) {
        const bool drop_row = t < static_cast<int>(excluded.size()) && excluded[static_cast<std::size_t>(t)];
        for (int h = 0; h < cs.row_len(t); ++h) {
            const int col = cs.col_of(t, h);
            const bool drop_col =
                col < static_cast<int>(excluded.size()) && excluded[static_cast<std::size_t>(col)];
            if (drop_row || drop_col) theta.gamma(cs.row_offset(t) + h) = 0.0;
        }
    }
}

} // namespace detail

/// Starting values: beta from a penalized GLM with no random effects, Gamma
/// diagonal at sqrt(var_start), and for the Gaussian family tau from the naive
/// residual variance.
inline Theta initialize_theta(const Dataset& d, const FamilySpec& family, const FitConfig& cfg,
                              const PenaltyConfig& pen_cfg, const CovStructure& cs,
                              double var_start_value) {
    Theta theta;
    theta.beta = fit_pglm(d, family, pen_cfg.lambda0, pen_cfg, cfg.mstep.delta,
                          std::max(cfg.mstep.maxit_CD * 4, 200));
    theta.gamma = Vec::Zero(cs.gamma_len());
    const double g0 = cfg.force_gamma_zero ? 0.0 : std::sqrt(var_start_value);
    for (int t = 0; t < cs.q; ++t)
        theta.gamma(cs.row_offset(t) + cs.row_len(t) - 1) = g0;
    detail::apply_exclusions(theta, cs, cfg.excluded_ranef);
    if (family.kind == Family::Gaussian) {
        Vec eta = Vec::Constant(d.N, theta.beta(0));
        eta.noalias() += d.X * theta.beta.tail(d.p);
        theta.tau = std::max((d.y - eta).squaredNorm() / d.N, 1e-8);
    }
    return theta;
}

FitResult fit_single(const Dataset& d, const FamilySpec& family, const PenaltyConfig& pen_cfg,
                     const FitConfig& fit_cfg, const SamplerConfig& sampler_cfg,
                     std::optional<Theta> theta_init = std::nullopt,
                     std::optional<ChainState> chain_init = std::nullopt);

/// Data-driven starting variance: fit a fixed- plus random-intercept-only
/// model with no penalties and return twice the estimated intercept variance,
/// floored at 0.1.
inline double var_start_recommend(const Dataset& d, const FamilySpec& family,
                                  const SamplerConfig& sampler_cfg) {
    if (d.K < 2)
        throw std::invalid_argument(
            "var_start recommendation needs at least 2 groups to estimate between-group variation");
    Dataset d1 = d;
    d1.z_cols.clear();
    d1.q = 1;
    FitConfig cfg;
    cfg.var_start = VarStart::fixed(1.0);
    cfg.covar = CovarOption::Unstructured;
    PenaltyConfig pen;
    pen.penalty = PenaltyKind::LASSO;
    pen.lambda0 = 0.0;
    pen.lambda1 = 0.0;
    SamplerConfig sc = sampler_cfg;
    sc.nMC_report = 500; // diagnostics draws are not needed here
    const FitResult fit = fit_single(d1, family, pen, cfg, sc);
    const double var = random_effect_cov(fit.theta, fit.covstruct)(0, 0);
    return std::max(2.0 * var, 0.1);
}

/// Full MCECM for one (lambda0, lambda1) pair: alternate the Monte Carlo
/// E-step with the penalized M-step until the convergence condition holds mcc
/// consecutive times or maxitEM is reached, then draw the final posterior
/// sample used downstream for likelihood work and diagnostics.
inline FitResult fit_single(const Dataset& d, const FamilySpec& family,
                            const PenaltyConfig& pen_cfg, const FitConfig& fit_cfg,
                            const SamplerConfig& sampler_cfg, std::optional<Theta> theta_init,
                            std::optional<ChainState> chain_init) {
    fit_cfg.validate();
    pen_cfg.validate();
    sampler_cfg.validate();

    FitResult res;
    res.covstruct = resolve_covstruct(fit_cfg.covar, d.q);
    const CovStructure& cs = res.covstruct;

    std::vector<bool> excluded = fit_cfg.excluded_ranef;
    excluded.resize(static_cast<std::size_t>(cs.q), false);
    if (fit_cfg.force_gamma_zero) excluded.assign(static_cast<std::size_t>(cs.q), true);

    if (theta_init) {
        res.theta = *theta_init;
        if (res.theta.beta.size() != d.p + 1 || res.theta.gamma.size() != cs.gamma_len())
            throw std::invalid_argument("warm-start theta has inconsistent dimensions");
    } else {
        double v0 = fit_cfg.var_start.value;
        if (fit_cfg.var_start.recommend && !fit_cfg.force_gamma_zero)
            v0 = var_start_recommend(d, family, sampler_cfg);
        res.theta = initialize_theta(d, family, fit_cfg, pen_cfg, cs, v0);
    }
    detail::apply_exclusions(res.theta, cs, excluded);

    ChainState chain =
        chain_init ? std::move(*chain_init) : make_chain(d.K, cs.q, sampler_cfg.seed);

    const int maxitEM = fit_cfg.maxitEM_for(family);
    std::vector<Vec> history;
    history.reserve(static_cast<std::size_t>(maxitEM) + 1);
    history.push_back(detail::stack_coefficients(res.theta));

    int counter = 0;
    int M_prev = 0;
    res.reason = maxitEM == 0 ? "maxitEM = 0; initialization returned" : "maxitEM reached";
    for (int s = 1; s <= maxitEM; ++s) {
        const int M_s =
            sample_size_schedule(s, M_prev, cs.q, sampler_cfg.nMC_start, sampler_cfg.nMC_max);
        M_prev = M_s;
        PosteriorDraws draws = estep_sample(d, res.theta, cs, family, chain, M_s,
                                            sampler_cfg.nMC_burnin, sampler_cfg.kind,
                                            sampler_cfg.seed);
        const MStepReport mrep =
            m_step(res.theta, d, draws, family, pen_cfg, cs, fit_cfg.mstep, excluded);
        enforce_sign_convention(res.theta, cs, &chain.current);

        IterTrace tr;
        tr.s = s;
        tr.M = M_s;
        tr.mstep_iterations = mrep.iterations;
        tr.mstep_hit_cap = mrep.hit_cap;

        history.push_back(detail::stack_coefficients(res.theta));
        res.iterations = s;
        if (s > fit_cfg.t_lag) {
            const Vec& lag = history[static_cast<std::size_t>(s - fit_cfg.t_lag)];
            int d_n = 0;
            for (Eigen::Index i = 0; i < lag.size(); ++i)
                if (lag(i) != 0.0) ++d_n;
            tr.distance =
                d_n > 0 ? (history.back() - lag).squaredNorm() / d_n : 0.0;
            auto [done, next] =
                em_converged(history.back(), lag, fit_cfg.conv_EM, counter, fit_cfg.mcc);
            counter = next;
            res.trace.push_back(tr);
            if (done) {
                res.converged = true;
                res.reason = "EM convergence condition met " + std::to_string(fit_cfg.mcc) +
                             " consecutive times";
                break;
            }
        } else {
            res.trace.push_back(tr);
        }
    }

    res.final_draws = estep_sample(d, res.theta, cs, family, chain, sampler_cfg.nMC_report,
                                   sampler_cfg.nMC_burnin, sampler_cfg.kind, sampler_cfg.seed);
    res.chain = std::move(chain);
    return res;
}

/// Pre-screening (no-op below q = 5): one lax minimal-penalty fit; any random
/// effect whose fitted variance falls below 1e-2 is dropped for the rest of
/// the run. The random intercept always survives. Returns surviving indices.
inline std::vector<int> prescreen(const Dataset& d, const FamilySpec& family,
                                  const FitConfig& fit_cfg, const SamplerConfig& sampler_cfg,
                                  const PenaltyConfig& pen_cfg, double lambda_min_presc,
                                  double lambda0_min, double lambda_max_value,
                                  FitResult* fit_out = nullptr) {
    std::vector<int> all(static_cast<std::size_t>(d.q));
    for (int t = 0; t < d.q; ++t) all[static_cast<std::size_t>(t)] = t;
    if (d.q < 5) return all;

    PenaltyConfig pen = pen_cfg;
    pen.lambda0 = lambda0_min;
    pen.lambda1 = lambda_min_presc * lambda_max_value;
    FitConfig cfg = fit_cfg;
    cfg.conv_EM = fit_cfg.conv_EM * 10.0; // relatively lax convergence
    cfg.maxitEM = std::max(fit_cfg.maxitEM_for(family) / 2, 1);

    FitResult fit = fit_single(d, family, pen, cfg, sampler_cfg);
    const Mat cov = random_effect_cov(fit.theta, fit.covstruct);
    std::vector<int> surviving;
    surviving.push_back(0);
    for (int t = 1; t < d.q; ++t)
        if (cov(t, t) >= 1e-2) surviving.push_back(t);
    if (fit_out) *fit_out = std::move(fit);
    return surviving;
}

} // namespace pglmm
