#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pglmm/data.hpp"
#include "pglmm/family.hpp"
#include "pglmm/model.hpp"
#include "pglmm/rng.hpp"

namespace pglmm {

enum class SamplerKind { AdaptiveRandomWalk, Independence };

struct SamplerConfig {
    SamplerKind kind = SamplerKind::AdaptiveRandomWalk;
    int nMC_burnin = 250;
    int nMC_start = 250;
    int nMC_max = 2500;
    int nMC_report = 5000;
    std::uint64_t seed = 1;

    /// Defaults shrink the Monte Carlo effort when the random-effect
    /// dimension is large.
    static SamplerConfig defaults_for(int q, std::uint64_t seed = 1) {
        SamplerConfig c;
        c.nMC_start = q <= 10 ? 250 : 100;
        c.nMC_max = q <= 10 ? 2500 : 1000;
        c.seed = seed;
        return c;
    }

    void validate() const {
        if (nMC_burnin < 0 || nMC_start <= 0 || nMC_max <= 0 || nMC_report <= 0)
            throw std::invalid_argument("MC sample counts must be positive");
        if (nMC_start > nMC_max)
            throw std::invalid_argument("nMC_start must not exceed nMC_max");
    }
};

/// Per-group chain state carried across EM iterations. Proposal log-scales
/// belong to the adaptive random walk only and are frozen outside burn-in.
struct ChainState {
    Mat current;                // K x q, last draw per group
    Mat rw_log_scales;          // K x q
    Eigen::MatrixXi accept_counts; // K x q, cumulative
    Eigen::Matrix<std::uint64_t, Eigen::Dynamic, 1> adapt_batches; // per group
    std::uint64_t epoch = 0;    // E-step counter, drives stream derivation

    static constexpr double kLogScaleBound = 10.0;
};

inline ChainState make_chain(int K, int q, std::uint64_t seed) {
    ChainState c;
    c.current.resize(K, q);
    c.rw_log_scales = Mat::Zero(K, q);
    c.accept_counts = Eigen::MatrixXi::Zero(K, q);
    c.adapt_batches = Eigen::Matrix<std::uint64_t, Eigen::Dynamic, 1>::Zero(K);
    auto rng = make_stream(seed, 0, 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int k = 0; k < K; ++k)
        for (int j = 0; j < q; ++j) c.current(k, j) = n01(rng);
    return c;
}

struct DrawLabel {
    std::string group;
    std::string variable;
};

/// Retained posterior sample: row m holds draw m for every (group, variable)
/// column, ordered group-major.
struct PosteriorDraws {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> data; // M x (K*q)
    std::vector<DrawLabel> labels;
    int M = 0, K = 0, q = 0;

    auto group_block(int k) const { return data.middleCols(k * q, q); }
};

inline std::vector<DrawLabel> draw_labels(const Dataset& d) {
    std::vector<DrawLabel> labels;
    labels.reserve(static_cast<std::size_t>(d.K * d.q));
    for (int k = 0; k < d.K; ++k)
        for (int t = 0; t < d.q; ++t)
            labels.push_back({d.group_levels[static_cast<std::size_t>(k)], d.ranef_name(t)});
    return labels;
}

/// MCMC sample-size schedule: M^(1) = nMC_start, then a multiplicative ramp
/// (factor 1.1 through EM iteration 15, 1.2 after) capped at nMC_max.
inline int sample_size_schedule(int s, int M_prev, int /*q*/, int nMC_start, int nMC_max) {
    if (s < 1) throw std::invalid_argument("EM iteration must be >= 1");
    if (s == 1) return std::min(nMC_start, nMC_max);
    const double f = s <= 15 ? 1.1 : 1.2;
    const double next = std::ceil(f * static_cast<double>(M_prev));
    return static_cast<int>(std::min(static_cast<double>(nMC_max), next));
}

/// Metropolis accept/reject with log densities; log_q_ratio is 0 for a
/// symmetric proposal and log q(cur) - log q(prop) for an independence
/// proposal.
inline bool mh_accept(double log_post_prop, double log_post_cur, double log_q_ratio,
                      double u) {
    const double log_ratio = log_post_prop - log_post_cur + log_q_ratio;
    if (std::isnan(log_ratio)) return false;
    if (log_ratio >= 0.0) return true;
    return std::log(u) < log_ratio;
}

/// Diminishing-adaptation step for one batch of acceptance rates: per
/// coordinate the log-scale moves toward the 0.44 target by
/// min(1, 1/sqrt(batch index)) and is clamped to [-10, 10]. Called every 50
/// sweeps during burn-in only; scales are frozen afterwards so retained draws
/// target the exact posterior.
inline void adapt_scales(ChainState& chain, const Mat& batch_accept_rates) {
    constexpr double target = 0.44;
    for (Eigen::Index k = 0; k < chain.rw_log_scales.rows(); ++k) {
        const double b = static_cast<double>(++chain.adapt_batches(k));
        const double step = std::min(1.0, 1.0 / std::sqrt(b));
        for (Eigen::Index j = 0; j < chain.rw_log_scales.cols(); ++j) {
            const double rate = batch_accept_rates(k, j);
            double ls = chain.rw_log_scales(k, j);
            if (rate > target) ls += step;
            else if (rate < target) ls -= step;
            chain.rw_log_scales(k, j) =
                std::clamp(ls, -ChainState::kLogScaleBound, ChainState::kLogScaleBound);
        }
    }
}

namespace detail {

/// One group's Metropolis-within-Gibbs run: burnin discarded sweeps followed
/// by M retained sweeps, coordinates updated one at a time against the
/// unnormalized posterior phi(alpha) * prod_i f(y_i | eta_i(alpha)).
inline void run_group_chain(const Dataset& d, const Theta& theta, const CovStructure& cs,
                            const FamilySpec& family, SamplerKind kind, int k, int M,
                            int burnin, ChainState& chain, PosteriorDraws& out, Rng rng) {
    const auto& rows = d.group_rows[static_cast<std::size_t>(k)];
    const int nk = static_cast<int>(rows.size());
    const int q = cs.q;

    const Mat Gamma = gamma_to_Gamma(theta.gamma, cs);
    const Mat Zk = d.z_block(k);
    const Mat W = Zk * Gamma; // d eta / d alpha_j per row

    std::vector<bool> affects(static_cast<std::size_t>(q));
    for (int j = 0; j < q; ++j)
        affects[static_cast<std::size_t>(j)] = W.col(j).cwiseAbs().maxCoeff() > 0.0;

    Vec alpha = chain.current.row(k).transpose();
    Vec eta(nk);
    for (int r = 0; r < nk; ++r) {
        const int i = rows[static_cast<std::size_t>(r)];
        double e = theta.beta(0);
        for (int j = 0; j < d.p; ++j) e += d.X(i, j) * theta.beta(j + 1);
        eta(r) = e + W.row(r).dot(alpha);
    }
    Vec ll(nk);
    for (int r = 0; r < nk; ++r)
        ll(r) = family.log_density(d.y(rows[static_cast<std::size_t>(r)]), eta(r), theta.tau);
    if (!ll.allFinite())
        throw std::runtime_error("non-finite posterior log-density at chain start (group " +
                                 d.group_levels[static_cast<std::size_t>(k)] + ")");

    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Eigen::VectorXi batch_accepts = Eigen::VectorXi::Zero(q);
    Vec eta_prop(nk), ll_prop(nk);
    int batch_sweeps = 0;

    const int total = burnin + M;
    for (int sweep = 1; sweep <= total; ++sweep) {
        const bool in_burnin = sweep <= burnin;
        for (int j = 0; j < q; ++j) {
            double prop, log_q_ratio;
            const double cur = alpha(j);
            if (kind == SamplerKind::AdaptiveRandomWalk) {
                prop = cur + std::exp(chain.rw_log_scales(k, j)) * n01(rng);
                log_q_ratio = 0.0;
            } else {
                prop = n01(rng);
                // standard normal candidate: log q(cur) - log q(prop)
                log_q_ratio = 0.5 * (prop * prop - cur * cur);
            }
            // prior is N(0, 1) per coordinate
            double delta = -0.5 * (prop * prop - cur * cur);
            const bool moves_eta = affects[static_cast<std::size_t>(j)];
            if (moves_eta) {
                const double da = prop - cur;
                for (int r = 0; r < nk; ++r) {
                    eta_prop(r) = eta(r) + W(r, j) * da;
                    ll_prop(r) = family.log_density(d.y(rows[static_cast<std::size_t>(r)]),
                                                    eta_prop(r), theta.tau);
                    delta += ll_prop(r) - ll(r);
                }
            }
            const double u = u01(rng);
            if (mh_accept(delta, 0.0, log_q_ratio, u)) {
                if (moves_eta) {
                    eta.swap(eta_prop);
                    ll.swap(ll_prop);
                }
                alpha(j) = prop;
                chain.accept_counts(k, j) += 1;
                if (in_burnin) batch_accepts(j) += 1;
            }
        }
        if (in_burnin && kind == SamplerKind::AdaptiveRandomWalk) {
            ++batch_sweeps;
            if (batch_sweeps == 50) {
                const double b = static_cast<double>(++chain.adapt_batches(k));
                const double step = std::min(1.0, 1.0 / std::sqrt(b));
                for (int j = 0; j < q; ++j) {
                    const double rate = batch_accepts(j) / 50.0;
                    double ls = chain.rw_log_scales(k, j);
                    if (rate > 0.44) ls += step;
                    else if (rate < 0.44) ls -= step;
                    chain.rw_log_scales(k, j) =
                        std::clamp(ls, -ChainState::kLogScaleBound, ChainState::kLogScaleBound);
                }
                batch_accepts.setZero();
                batch_sweeps = 0;
            }
        }
        if (!in_burnin) out.data.block(sweep - burnin - 1, k * q, 1, q) = alpha.transpose();
    }
    chain.current.row(k) = alpha.transpose();
}

} // namespace detail

/// E-step sampling: for each group independently, run burnin + M sweeps and
/// retain the last M. The chain warm-starts from ChainState.current and its
/// last draw is written back. Streams are keyed by (seed, epoch, group label)
/// so groups may run in any order or in parallel.
inline PosteriorDraws estep_sample(const Dataset& d, const Theta& theta, const CovStructure& cs,
                                   const FamilySpec& family, ChainState& chain, int M,
                                   int burnin, SamplerKind kind, std::uint64_t seed) {
    if (!theta.beta.allFinite() || !theta.gamma.allFinite() || !std::isfinite(theta.tau))
        throw std::invalid_argument("theta must be finite for the E-step");
    PosteriorDraws out;
    out.M = M;
    out.K = d.K;
    out.q = cs.q;
    out.labels = draw_labels(d);
    out.data.resize(M, d.K * cs.q);
    chain.epoch += 1;
    for (int k = 0; k < d.K; ++k) {
        auto rng = make_stream(seed, chain.epoch,
                               fnv1a(d.group_levels[static_cast<std::size_t>(k)]));
        detail::run_group_chain(d, theta, cs, family, kind, k, M, burnin, chain, out,
                                std::move(rng));
    }
    return out;
}

} // namespace pglmm
