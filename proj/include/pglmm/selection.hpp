#pragma once

#include <Eigen/Cholesky>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pglmm/criteria.hpp"
#include "pglmm/mcecm.hpp"
#include "pglmm/posterior_io.hpp"

namespace pglmm {

/// Smallest penalty that zeroes every penalized coefficient of the
/// no-random-effect model: max_j |x_j' (y - ybar)| / (N * alpha_mix) over the
/// penalized columns (ncvreg-style, null-model score residuals).
inline double lambda_max(const Dataset& d, const FamilySpec& /*family*/, double alpha_mix = 1.0,
                         const std::vector<int>& noPen_mask = {}) {
    std::vector<bool> nopen(static_cast<std::size_t>(d.p), false);
    for (int j : noPen_mask)
        if (j >= 0 && j < d.p) nopen[static_cast<std::size_t>(j)] = true;
    const Vec r = d.y.array() - d.y.mean();
    double zmax = 0.0;
    for (int j = 0; j < d.p; ++j) {
        if (nopen[static_cast<std::size_t>(j)]) continue;
        zmax = std::max(zmax, std::fabs(d.X.col(j).dot(r)) / d.N);
    }
    return zmax / alpha_mix;
}

/// nlambda log-equispaced values ascending from ratio * lmax to lmax.
inline Vec make_sequence(double lmax, double ratio, int nlambda) {
    if (nlambda < 1) throw std::invalid_argument("nlambda must be >= 1");
    if (lmax <= 0.0) return Vec::Zero(1);
    if (nlambda == 1) return Vec::Constant(1, lmax);
    Vec seq(nlambda);
    const double lmin = std::log(ratio * lmax), lhi = std::log(lmax);
    for (int i = 0; i < nlambda; ++i)
        seq(i) = std::exp(lmin + (lhi - lmin) * i / (nlambda - 1));
    return seq;
}

struct PenaltySequence {
    Vec lambda0_seq;
    Vec lambda1_seq;
    double lambda_min_ratio = 0.01;
    int nlambda = 10;
};

inline PenaltySequence default_sequences(const Dataset& d, const FamilySpec& family,
                                         const PenaltyConfig& pen, double ratio = 0.01,
                                         int nlambda = 10) {
    PenaltySequence s;
    s.lambda_min_ratio = ratio;
    s.nlambda = nlambda;
    const double lmax = lambda_max(d, family, pen.alpha_mix, pen.noPen_mask);
    s.lambda0_seq = make_sequence(lmax, ratio, nlambda);
    s.lambda1_seq = s.lambda0_seq;
    return s;
}

inline std::pair<int, int> count_nonzero(const Theta& theta) {
    int d_beta = 0, d_gamma = 0;
    for (Eigen::Index i = 0; i < theta.beta.size(); ++i)
        if (theta.beta(i) != 0.0) ++d_beta;
    for (Eigen::Index i = 0; i < theta.gamma.size(); ++i)
        if (theta.gamma(i) != 0.0) ++d_gamma;
    return {d_beta, d_gamma};
}

/// BIC family from a marginal log-likelihood: (BIC, BICh, BICNgrp).
inline std::tuple<double, double, double> bic_family(double loglik, int d_beta, int d_gamma,
                                                     int N_obs, int N_grps) {
    const double d = d_beta + d_gamma;
    const double bic = -2.0 * loglik + d * std::log(static_cast<double>(N_obs));
    const double bich = -2.0 * loglik + d_beta * std::log(static_cast<double>(N_obs)) +
                        d_gamma * std::log(static_cast<double>(N_grps));
    const double bicn = -2.0 * loglik + d * std::log(static_cast<double>(N_grps));
    return {bic, bich, bicn};
}

namespace detail {

inline double logsumexp(const Vec& x) {
    const double m = x.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((x.array() - m).exp().sum());
}

/// Cached per-group likelihood evaluation: eta = xb_k + W_k alpha with
/// W_k = Z_k Gamma.
struct GroupLikelihood {
    GroupLikelihood(const Dataset& d, const Theta& theta, const CovStructure& cs,
                    const FamilySpec& family)
        : d_(d), family_(family), tau_(theta.tau) {
        const Mat Gamma = gamma_to_Gamma(theta.gamma, cs);
        Vec xb = Vec::Constant(d.N, theta.beta(0));
        xb.noalias() += d.X * theta.beta.tail(d.p);
        W_.reserve(static_cast<std::size_t>(d.K));
        xb_.reserve(static_cast<std::size_t>(d.K));
        y_.reserve(static_cast<std::size_t>(d.K));
        for (int k = 0; k < d.K; ++k) {
            const auto& rows = d.group_rows[static_cast<std::size_t>(k)];
            const int nk = static_cast<int>(rows.size());
            Mat W = d.z_block(k) * Gamma;
            Vec xbk(nk), yk(nk);
            for (int r = 0; r < nk; ++r) {
                xbk(r) = xb(rows[static_cast<std::size_t>(r)]);
                yk(r) = d.y(rows[static_cast<std::size_t>(r)]);
            }
            W_.push_back(std::move(W));
            xb_.push_back(std::move(xbk));
            y_.push_back(std::move(yk));
        }
    }

    int n_k(int k) const { return static_cast<int>(y_[static_cast<std::size_t>(k)].size()); }

    double loglik(int k, const Vec& alpha) const {
        const Mat& W = W_[static_cast<std::size_t>(k)];
        const Vec& xb = xb_[static_cast<std::size_t>(k)];
        const Vec& y = y_[static_cast<std::size_t>(k)];
        Vec eta = xb;
        eta.noalias() += W * alpha;
        double ll = 0.0;
        for (Eigen::Index r = 0; r < eta.size(); ++r)
            ll += family_.log_density(y(r), eta(r), tau_);
        return ll;
    }

    double fixed_loglik(int k) const {
        const Vec& xb = xb_[static_cast<std::size_t>(k)];
        const Vec& y = y_[static_cast<std::size_t>(k)];
        double ll = 0.0;
        for (Eigen::Index r = 0; r < xb.size(); ++r)
            ll += family_.log_density(y(r), xb(r), tau_);
        return ll;
    }

    const Dataset& d_;
    FamilySpec family_;
    double tau_;
    std::vector<Mat> W_;
    std::vector<Vec> xb_, y_;
};

/// Core CAME estimate for one group: importance sample from N(s_mean, s_cov),
/// keep draws inside the [lo, hi] box, average f(y|alpha) phi(alpha) / s(alpha).
/// Returns the log marginal likelihood estimate for the group.
inline double came_group(const std::function<double(const Vec&)>& group_loglik, const Vec& lo,
                         const Vec& hi, const Vec& s_mean, const Mat& s_cov, int M_star,
                         Rng& rng, bool* ridge_warning = nullptr) {
    const int q = static_cast<int>(s_mean.size());
    Mat cov = s_cov;
    Eigen::LLT<Mat> llt(cov);
    double ridge = 1e-6;
    while (llt.info() != Eigen::Success && ridge < 1.0) {
        if (ridge_warning) *ridge_warning = true;
        cov = s_cov + ridge * Mat::Identity(q, q);
        llt.compute(cov);
        ridge *= 10.0;
    }
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("importance covariance is not positive definite");
    const Mat L = llt.matrixL();
    double log_det_L = 0.0;
    for (int j = 0; j < q; ++j) log_det_L += std::log(L(j, j));
    const double half_log_2pi_q = 0.5 * q * std::log(2.0 * M_PI);

    std::normal_distribution<double> n01(0.0, 1.0);
    Vec z(q), alpha(q), lw(M_star);
    for (int m = 0; m < M_star; ++m) {
        for (int j = 0; j < q; ++j) z(j) = n01(rng);
        alpha = s_mean;
        alpha.noalias() += L * z;
        bool inside = true;
        for (int j = 0; j < q; ++j)
            if (alpha(j) < lo(j) || alpha(j) > hi(j)) {
                inside = false;
                break;
            }
        if (!inside) {
            lw(m) = -std::numeric_limits<double>::infinity();
            continue;
        }
        const double log_s = -0.5 * z.squaredNorm() - log_det_L - half_log_2pi_q;
        const double log_prior = -0.5 * alpha.squaredNorm() - half_log_2pi_q;
        lw(m) = group_loglik(alpha) + log_prior - log_s;
    }
    return logsumexp(lw) - std::log(static_cast<double>(M_star));
}

} // namespace detail

struct MarginalLoglik {
    double loglik = 0.0;
    Vec per_group;
    bool ridge_warning = false;
};

/// Corrected arithmetic mean estimator of the marginal log-likelihood,
/// ell(theta) = sum_k (1/n_k) log f(y_k | X_k; theta). Per group the
/// importance sampler is normal with the posterior-draw mean and the
/// covariance of a thinned draw subset; the indicator set A_k is the
/// axis-aligned bounding box of the draws. With no active random effects the
/// integrand is constant in alpha and the fixed-effect log-likelihood is
/// returned exactly.
inline MarginalLoglik came_marginal_loglik(const FitResult& fit, const Dataset& d,
                                           const FamilySpec& family, int M_star = 5000,
                                           int thin = 10, std::uint64_t seed = 0x4341'4d45ull) {
    const CovStructure& cs = fit.covstruct;
    detail::GroupLikelihood gl(d, fit.theta, cs, family);
    MarginalLoglik out;
    out.per_group = Vec::Zero(d.K);

    if (fit.theta.gamma.cwiseAbs().maxCoeff() == 0.0) {
        for (int k = 0; k < d.K; ++k) {
            out.per_group(k) = gl.fixed_loglik(k);
            out.loglik += out.per_group(k) / gl.n_k(k);
        }
        return out;
    }

    const PosteriorDraws& draws = fit.final_draws;
    if (draws.M <= 1) throw std::invalid_argument("CAME needs final posterior draws");
    for (int k = 0; k < d.K; ++k) {
        const auto block = draws.group_block(k);
        Vec mean = block.colwise().mean();
        Vec lo = block.colwise().minCoeff();
        Vec hi = block.colwise().maxCoeff();
        const int T = (draws.M + thin - 1) / thin;
        Mat thinned(T, cs.q);
        for (int r = 0; r < T; ++r) thinned.row(r) = block.row(r * thin);
        Mat centered = thinned.rowwise() - thinned.colwise().mean();
        Mat cov = centered.transpose() * centered / std::max(T - 1, 1);
        auto rng = make_stream(seed, static_cast<std::uint64_t>(k),
                               fnv1a(d.group_levels[static_cast<std::size_t>(k)]));
        const double lfk = detail::came_group(
            [&](const Vec& a) { return gl.loglik(k, a); }, lo, hi, mean, cov, M_star, rng,
            &out.ridge_warning);
        out.per_group(k) = lfk;
        out.loglik += lfk / gl.n_k(k);
    }
    return out;
}

struct MinimalPenaltyPosterior {
    PosteriorDraws draws;
    double lambda0 = 0.0, lambda1 = 0.0;
    std::uint64_t seed = 0;
    std::string path; // set when persisted or loaded
};

inline void save_minimal_penalty_posterior(const MinimalPenaltyPosterior& mp,
                                           const std::string& path) {
    save_posterior(path, mp.draws, mp.seed);
}

inline MinimalPenaltyPosterior load_minimal_penalty_posterior(const std::string& path,
                                                              const Dataset& d) {
    if (!std::filesystem::exists(path))
        throw std::runtime_error("BICq posterior file not found: " + path);
    MinimalPenaltyPosterior mp;
    mp.draws = load_posterior(path);
    mp.path = path;
    if (mp.draws.K != d.K || mp.draws.q != d.q)
        throw std::runtime_error("BICq posterior dimensions do not match the dataset: " + path);
    return mp;
}

/// BIC-ICQ: -(2/M) sum_m sum_k [ log f(y_k | X_k, alpha_0k^(m); theta) +
/// log phi(alpha_0k^(m)) ] + d * log(N_obs), with alpha_0 the minimal-penalty
/// model's posterior draws.
inline double bic_icq(const FitResult& fit, const MinimalPenaltyPosterior& minpen,
                      const Dataset& d, const FamilySpec& family) {
    const PosteriorDraws& draws = minpen.draws;
    if (draws.K != d.K || draws.q != fit.covstruct.q)
        throw std::invalid_argument("minimal-penalty draws do not match the model dimensions");
    detail::GroupLikelihood gl(d, fit.theta, fit.covstruct, family);
    const double half_log_2pi_q = 0.5 * draws.q * std::log(2.0 * M_PI);
    double total = 0.0;
    Vec alpha(draws.q);
    for (int k = 0; k < d.K; ++k) {
        const auto block = draws.group_block(k);
        for (int m = 0; m < draws.M; ++m) {
            alpha = block.row(m).transpose();
            total += gl.loglik(k, alpha) - 0.5 * alpha.squaredNorm() - half_log_2pi_q;
        }
    }
    const auto [d_beta, d_gamma] = count_nonzero(fit.theta);
    return -2.0 * total / draws.M + (d_beta + d_gamma) * std::log(static_cast<double>(d.N));
}

enum class Criterion { BICq, BICh, BIC, BICNgrp };

inline const char* criterion_name(Criterion c) {
    switch (c) {
        case Criterion::BICq: return "BICq";
        case Criterion::BICh: return "BICh";
        case Criterion::BIC: return "BIC";
        default: return "BICNgrp";
    }
}

enum class SearchKind { Abbrev, FullGrid };

struct SelectOptions {
    PenaltySequence seqs;
    Criterion bic_option = Criterion::BICq;
    SearchKind search = SearchKind::Abbrev;
    bool pre_screen = true;
    double lambda_min_presc = 0.01;
    int M_star = 5000;
    int came_thin = 10;
};

struct FitEntry {
    double lambda0 = 0.0, lambda1 = 0.0;
    int stage = 0;      // 1/2 for the two-stage search, 0 for grid entries
    int init_from = -1; // index of the fit whose results initialized this one
    FitResult fit;      // final draws cleared for non-best entries
    CriterionSet crit;
};

struct SelectionResult {
    std::vector<FitEntry> fits;
    int best_index = -1;
    int best_bicq = -1, best_bich = -1, best_bic = -1, best_bicngrp = -1;
    Criterion chosen = Criterion::BICq;
    bool all_converged = true;
    int stage1_best = -1; // two-stage only
};

namespace detail {

inline double criterion_value(const CriterionSet& c, Criterion which) {
    switch (which) {
        case Criterion::BICq: return c.BICq;
        case Criterion::BICh: return c.BICh;
        case Criterion::BIC: return c.BIC;
        default: return c.BICNgrp;
    }
}

/// Argmin with ties broken toward larger lambda0, then larger lambda1.
inline bool better_entry(const FitEntry& cand, double cv, const FitEntry& inc, double iv) {
    if (std::isnan(cv)) return false;
    if (std::isnan(iv)) return true;
    if (cv != iv) return cv < iv;
    if (cand.lambda0 != inc.lambda0) return cand.lambda0 > inc.lambda0;
    return cand.lambda1 > inc.lambda1;
}

inline void update_best(const std::vector<FitEntry>& fits, int idx, Criterion which, int& best) {
    const double cv = criterion_value(fits[static_cast<std::size_t>(idx)].crit, which);
    if (best < 0) {
        if (!std::isnan(cv)) best = idx;
        return;
    }
    const double iv = criterion_value(fits[static_cast<std::size_t>(best)].crit, which);
    if (better_entry(fits[static_cast<std::size_t>(idx)], cv,
                     fits[static_cast<std::size_t>(best)], iv))
        best = idx;
}

/// Keep the heavy posterior draw matrix only on the entry that can still
/// become the reported best model.
inline void trim_draws(std::vector<FitEntry>& fits, int keep) {
    for (int i = 0; i < static_cast<int>(fits.size()); ++i)
        if (i != keep) {
            auto& dm = fits[static_cast<std::size_t>(i)].fit.final_draws;
            dm.data.resize(0, dm.data.cols());
            dm.M = 0;
        }
}

struct SearchContext {
    const Dataset& d;
    const FamilySpec& family;
    const SelectOptions& opts;
    const PenaltyConfig& pen_base;
    const FitConfig& fit_base;
    const SamplerConfig& sampler;
    const MinimalPenaltyPosterior* minpen;
    std::uint64_t came_counter = 0;

    CriterionSet criteria_for(const FitResult& fit) {
        CriterionSet cs;
        const auto [d_beta, d_gamma] = count_nonzero(fit.theta);
        cs.d_beta = d_beta;
        cs.d_gamma = d_gamma;
        cs.d_lambda = d_beta + d_gamma;
        const MarginalLoglik ml = came_marginal_loglik(
            fit, d, family, opts.M_star, opts.came_thin,
            sampler.seed ^ (0x43414d45ull + 0x9e3779b9ull * ++came_counter));
        cs.loglik = ml.loglik;
        std::tie(cs.BIC, cs.BICh, cs.BICNgrp) =
            bic_family(cs.loglik, d_beta, d_gamma, d.N, d.K);
        if (minpen) cs.BICq = bic_icq(fit, *minpen, d, family);
        return cs;
    }
};

} // namespace detail

/// Two-stage (abbreviated) search. Stage 1 holds lambda0 at its minimum and
/// sweeps lambda1 ascending with warm starts; random effects zeroed at one
/// lambda1 stay excluded for larger values. Stage 2 holds the stage-1 optimum
/// lambda1 and sweeps lambda0 ascending with the random effects restricted to
/// the stage-1 winner's support; the overall best model comes from stage 2
/// (the stage-1 winner stands in for the shared (lambda0_min, lambda1_opt)
/// corner rather than being refit).
inline SelectionResult two_stage_search(const Dataset& d, const FamilySpec& family,
                                        const SelectOptions& opts, const PenaltyConfig& pen_base,
                                        const FitConfig& fit_base, const SamplerConfig& sampler,
                                        const MinimalPenaltyPosterior* minpen = nullptr) {
    detail::SearchContext ctx{d, family, opts, pen_base, fit_base, sampler, minpen};
    SelectionResult res;
    res.chosen = opts.bic_option;
    const Vec& l0 = opts.seqs.lambda0_seq;
    const Vec& l1 = opts.seqs.lambda1_seq;
    const CovStructure cs = resolve_covstruct(fit_base.covar, d.q);

    std::vector<bool> excluded = fit_base.excluded_ranef;
    excluded.resize(static_cast<std::size_t>(cs.q), false);

    int stage1_best = -1;
    for (int h = 0; h < l1.size(); ++h) {
        PenaltyConfig pen = pen_base;
        pen.lambda0 = l0(0);
        pen.lambda1 = l1(h);
        FitConfig fc = fit_base;
        fc.excluded_ranef = excluded;
        FitEntry e;
        e.lambda0 = pen.lambda0;
        e.lambda1 = pen.lambda1;
        e.stage = 1;
        e.init_from = h == 0 ? -1 : static_cast<int>(res.fits.size()) - 1;
        if (h == 0) {
            e.fit = fit_single(d, family, pen, fc, sampler);
        } else {
            const FitResult& prev = res.fits.back().fit;
            e.fit = fit_single(d, family, pen, fc, sampler, prev.theta, prev.chain);
        }
        for (int t = 1; t < cs.q; ++t)
            if (!ranef_active(e.fit.theta.gamma, cs, t)) excluded[static_cast<std::size_t>(t)] = true;
        e.crit = ctx.criteria_for(e.fit);
        res.all_converged = res.all_converged && e.fit.converged;
        res.fits.push_back(std::move(e));
        detail::update_best(res.fits, static_cast<int>(res.fits.size()) - 1, opts.bic_option,
                            stage1_best);
        detail::trim_draws(res.fits, stage1_best >= 0 ? stage1_best
                                                      : static_cast<int>(res.fits.size()) - 1);
    }
    if (stage1_best < 0) stage1_best = static_cast<int>(res.fits.size()) - 1;
    res.stage1_best = stage1_best;

    const FitEntry& winner = res.fits[static_cast<std::size_t>(stage1_best)];
    std::vector<bool> stage2_excluded = fit_base.excluded_ranef;
    stage2_excluded.resize(static_cast<std::size_t>(cs.q), false);
    for (int t = 1; t < cs.q; ++t)
        if (!ranef_active(winner.fit.theta.gamma, cs, t))
            stage2_excluded[static_cast<std::size_t>(t)] = true;

    int best = stage1_best; // the shared corner is eligible as overall best
    int prev_idx = stage1_best;
    for (int i = 1; i < l0.size(); ++i) {
        PenaltyConfig pen = pen_base;
        pen.lambda0 = l0(i);
        pen.lambda1 = winner.lambda1;
        FitConfig fc = fit_base;
        fc.excluded_ranef = stage2_excluded;
        FitEntry e;
        e.lambda0 = pen.lambda0;
        e.lambda1 = pen.lambda1;
        e.stage = 2;
        e.init_from = prev_idx;
        const FitResult& prev = res.fits[static_cast<std::size_t>(prev_idx)].fit;
        e.fit = fit_single(d, family, pen, fc, sampler, prev.theta, prev.chain);
        e.crit = ctx.criteria_for(e.fit);
        res.all_converged = res.all_converged && e.fit.converged;
        res.fits.push_back(std::move(e));
        prev_idx = static_cast<int>(res.fits.size()) - 1;
        detail::update_best(res.fits, prev_idx, opts.bic_option, best);
        detail::trim_draws(res.fits, best);
    }
    res.best_index = best;

    for (int i = 0; i < static_cast<int>(res.fits.size()); ++i) {
        detail::update_best(res.fits, i, Criterion::BICq, res.best_bicq);
        detail::update_best(res.fits, i, Criterion::BICh, res.best_bich);
        detail::update_best(res.fits, i, Criterion::BIC, res.best_bic);
        detail::update_best(res.fits, i, Criterion::BICNgrp, res.best_bicngrp);
    }
    return res;
}

/// Full grid search: for each lambda1 ascending, sweep lambda0 ascending.
/// Each model warm-starts from the previous fit in the sequence except that
/// each (lambda0_min, lambda1_{h+1}) row start is initialized from the
/// (lambda0_min, lambda1_h) fit.
inline SelectionResult full_grid_search(const Dataset& d, const FamilySpec& family,
                                        const SelectOptions& opts, const PenaltyConfig& pen_base,
                                        const FitConfig& fit_base, const SamplerConfig& sampler,
                                        const MinimalPenaltyPosterior* minpen = nullptr) {
    detail::SearchContext ctx{d, family, opts, pen_base, fit_base, sampler, minpen};
    SelectionResult res;
    res.chosen = opts.bic_option;
    const Vec& l0 = opts.seqs.lambda0_seq;
    const Vec& l1 = opts.seqs.lambda1_seq;

    int best = -1;
    int row_start = -1; // index of the (lambda0_min, lambda1_h) fit
    for (int h = 0; h < l1.size(); ++h) {
        int prev_idx = row_start;
        for (int i = 0; i < l0.size(); ++i) {
            PenaltyConfig pen = pen_base;
            pen.lambda0 = l0(i);
            pen.lambda1 = l1(h);
            FitEntry e;
            e.lambda0 = pen.lambda0;
            e.lambda1 = pen.lambda1;
            e.stage = 0;
            e.init_from = prev_idx;
            if (prev_idx < 0) {
                e.fit = fit_single(d, family, pen, fit_base, sampler);
            } else {
                const FitResult& prev = res.fits[static_cast<std::size_t>(prev_idx)].fit;
                e.fit = fit_single(d, family, pen, fit_base, sampler, prev.theta, prev.chain);
            }
            e.crit = ctx.criteria_for(e.fit);
            res.all_converged = res.all_converged && e.fit.converged;
            res.fits.push_back(std::move(e));
            prev_idx = static_cast<int>(res.fits.size()) - 1;
            if (i == 0) row_start = prev_idx;
            detail::update_best(res.fits, prev_idx, opts.bic_option, best);
            detail::trim_draws(res.fits, best >= 0 ? best : prev_idx);
        }
    }
    res.best_index = best;
    for (int i = 0; i < static_cast<int>(res.fits.size()); ++i) {
        detail::update_best(res.fits, i, Criterion::BICq, res.best_bicq);
        detail::update_best(res.fits, i, Criterion::BICh, res.best_bich);
        detail::update_best(res.fits, i, Criterion::BIC, res.best_bic);
        detail::update_best(res.fits, i, Criterion::BICNgrp, res.best_bicngrp);
    }
    return res;
}

/// Minimal penalty model for the BIC-ICQ reference draws: unpenalized when
/// fewer than 5 random-effect candidates remain, otherwise lambda0 at its
/// minimum and lambda1 = lambda_min_presc * lambda_max.
inline MinimalPenaltyPosterior fit_minimal_penalty_model(
    const Dataset& d, const FamilySpec& family, const PenaltyConfig& pen_base,
    const FitConfig& fit_cfg, const SamplerConfig& sampler, double lambda0_min,
    double lambda_min_presc, double lambda_max_value,
    std::optional<Theta> warm_theta = std::nullopt,
    std::optional<ChainState> warm_chain = std::nullopt) {
    int q_active = 0;
    for (int t = 0; t < d.q; ++t)
        if (!(t < static_cast<int>(fit_cfg.excluded_ranef.size()) &&
              fit_cfg.excluded_ranef[static_cast<std::size_t>(t)]))
            ++q_active;
    PenaltyConfig pen = pen_base;
    if (q_active < 5) {
        pen.lambda0 = 0.0;
        pen.lambda1 = 0.0;
    } else {
        pen.lambda0 = lambda0_min;
        pen.lambda1 = lambda_min_presc * lambda_max_value;
    }
    FitResult fit = fit_single(d, family, pen, fit_cfg, sampler, std::move(warm_theta),
                               std::move(warm_chain));
    MinimalPenaltyPosterior mp;
    mp.draws = std::move(fit.final_draws);
    mp.lambda0 = pen.lambda0;
    mp.lambda1 = pen.lambda1;
    mp.seed = sampler.seed;
    return mp;
}

} // namespace pglmm
