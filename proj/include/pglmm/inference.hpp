#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pglmm/data.hpp"
#include "pglmm/mcecm.hpp"

namespace pglmm {

/// Per-group central estimates of Gamma * alpha_k from the final posterior
/// draws. The posterior mean stands in for the reported posterior mode; the
/// method tag records that.
struct RanefSummary {
    Mat values; // K x q
    std::string method = "posterior_mean";
};

inline RanefSummary ranef_estimate(const FitResult& fit, const Dataset& d) {
    const CovStructure& cs = fit.covstruct;
    const Mat Gamma = gamma_to_Gamma(fit.theta.gamma, cs);
    RanefSummary out;
    out.values = Mat::Zero(d.K, cs.q);
    if (fit.final_draws.M == 0) return out;
    for (int k = 0; k < d.K; ++k) {
        const Vec mean_alpha = fit.final_draws.group_block(k).colwise().mean();
        out.values.row(k) = (Gamma * mean_alpha).transpose();
    }
    return out;
}

enum class PredictType { Link, Response };

/// Predictions on training rows or new raw-scale data. New data is restricted
/// to fixed effects only; on training data fixed_only=false adds the
/// per-group random-effect estimate z_ki' E[Gamma alpha_k].
inline Vec predict(const FitResult& fit, const Dataset& d, const FamilySpec& family,
                   const std::optional<Mat>& X_new_raw, PredictType type,
                   bool fixed_only = true) {
    Vec eta;
    if (X_new_raw) {
        if (!fixed_only)
            throw std::invalid_argument("predictions on new data are restricted to fixed effects");
        if (X_new_raw->cols() != d.p)
            throw std::invalid_argument("new data column count differs from the training data");
        const Mat& Xn = *X_new_raw;
        eta = Vec::Constant(Xn.rows(), fit.theta.beta(0));
        for (int j = 0; j < d.p; ++j)
            eta.noalias() += ((Xn.col(j).array() - d.centers(j)) / d.scales(j)).matrix() *
                             fit.theta.beta(j + 1);
    } else {
        eta = Vec::Constant(d.N, fit.theta.beta(0));
        eta.noalias() += d.X * fit.theta.beta.tail(d.p);
        if (!fixed_only) {
            const RanefSummary re = ranef_estimate(fit, d);
            for (int i = 0; i < d.N; ++i) {
                const int k = d.group_of[static_cast<std::size_t>(i)];
                for (int t = 0; t < fit.covstruct.q; ++t)
                    eta(i) += d.z_value(i, t) * re.values(k, t);
            }
        }
    }
    if (type == PredictType::Response)
        for (Eigen::Index i = 0; i < eta.size(); ++i) eta(i) = family.inverse_link(eta(i));
    return eta;
}

enum class ResidualType { Deviance, Pearson, Response, Working };

inline ResidualType default_residual_type(const FamilySpec& family) {
    return family.kind == Family::Gaussian ? ResidualType::Pearson : ResidualType::Deviance;
}

/// GLM residuals against the fixed-effects fitted values.
inline Vec residuals(const FitResult& fit, const Dataset& d, const FamilySpec& family,
                     ResidualType type) {
    const Vec eta = predict(fit, d, std::nullopt, PredictType::Link, true);
    Vec out(d.N);
    const double sigma_hat = std::sqrt(std::max(fit.theta.tau, 1e-300));
    for (int i = 0; i < d.N; ++i) {
        const double mu = family.inverse_link(eta(i));
        const double y = d.y(i);
        switch (type) {
            case ResidualType::Response: out(i) = y - mu; break;
            case ResidualType::Pearson:
                out(i) = family.kind == Family::Gaussian
                             ? (y - mu) / sigma_hat
                             : (y - mu) / std::sqrt(family.variance(mu));
                break;
            case ResidualType::Working:
                out(i) = family.kind == Family::Gaussian ? y - mu
                                                         : (y - mu) / family.variance(mu);
                break;
            default: {
                const double sign = y >= mu ? 1.0 : -1.0;
                out(i) = sign * std::sqrt(std::max(family.deviance_unit(y, mu), 0.0));
            }
        }
    }
    return out;
}

inline double model_deviance(const FitResult& fit, const Dataset& d, const FamilySpec& family) {
    const Vec eta = predict(fit, d, std::nullopt, PredictType::Link, true);
    double dev = 0.0;
    for (int i = 0; i < d.N; ++i)
        dev += family.deviance_unit(d.y(i), family.inverse_link(eta(i)));
    return dev;
}

/// The four MCMC diagnostic series for one (group, variable) chain.
struct DiagnosticBlock {
    std::string group;
    std::string variable;
    Vec sample_path;
    Vec autocorr;      // lags 0..max_lag
    Vec cumsum;        // standardized cumulative sums, ends at 0
    Eigen::VectorXi histogram; // bin counts
    Vec hist_edges;    // bins + 1 edges
};

struct DiagnosticSeries {
    std::vector<DiagnosticBlock> blocks;
};

namespace detail {

inline Vec autocorrelation(const Vec& x, int max_lag) {
    const Eigen::Index n = x.size();
    const double mean = x.mean();
    const Vec c = x.array() - mean;
    const double denom = c.squaredNorm() / n;
    Vec acf = Vec::Zero(max_lag + 1);
    for (int l = 0; l <= max_lag && l < n; ++l) {
        double s = 0.0;
        for (Eigen::Index t = 0; t + l < n; ++t) s += c(t) * c(t + l);
        acf(l) = denom > 0.0 ? (s / (n - l)) / denom : (l == 0 ? 1.0 : 0.0);
    }
    if (denom <= 0.0) acf(0) = 1.0;
    return acf;
}

} // namespace detail

/// Diagnostic series per selected (group, variable): sample path,
/// autocorrelation, standardized cumulative sum, histogram. Empty filters
/// select everything.
inline DiagnosticSeries mcmc_diagnostics(const PosteriorDraws& draws,
                                         const std::vector<std::string>& grps = {},
                                         const std::vector<std::string>& vars = {},
                                         int max_lag = 40, int bins = 30) {
    if (draws.M == 0) throw std::invalid_argument("diagnostics need a nonempty posterior sample");
    auto wanted = [](const std::vector<std::string>& filter, const std::string& name) {
        return filter.empty() || std::find(filter.begin(), filter.end(), name) != filter.end();
    };
    for (const auto& g : grps) {
        bool known = false;
        for (const auto& l : draws.labels) known = known || l.group == g;
        if (!known) throw std::invalid_argument("unknown group name: " + g);
    }
    for (const auto& v : vars) {
        bool known = false;
        for (const auto& l : draws.labels) known = known || l.variable == v;
        if (!known) throw std::invalid_argument("unknown variable name: " + v);
    }

    DiagnosticSeries out;
    for (int c = 0; c < static_cast<int>(draws.labels.size()); ++c) {
        const auto& lab = draws.labels[static_cast<std::size_t>(c)];
        if (!wanted(grps, lab.group) || !wanted(vars, lab.variable)) continue;
        DiagnosticBlock b;
        b.group = lab.group;
        b.variable = lab.variable;
        b.sample_path = draws.data.col(c);
        b.autocorr = detail::autocorrelation(b.sample_path, std::min<int>(max_lag, draws.M - 1));

        const double mean = b.sample_path.mean();
        const double sd = std::sqrt((b.sample_path.array() - mean).square().sum() / draws.M);
        const double scale = (sd > 0.0 ? sd : 1.0) * std::sqrt(static_cast<double>(draws.M));
        b.cumsum.resize(draws.M);
        double acc = 0.0;
        for (int m = 0; m < draws.M; ++m) {
            acc += b.sample_path(m) - mean;
            b.cumsum(m) = acc / scale;
        }

        const double lo = b.sample_path.minCoeff(), hi = b.sample_path.maxCoeff();
        const double width = hi > lo ? (hi - lo) / bins : 1.0;
        b.histogram = Eigen::VectorXi::Zero(bins);
        b.hist_edges.resize(bins + 1);
        for (int j = 0; j <= bins; ++j) b.hist_edges(j) = lo + j * width;
        for (int m = 0; m < draws.M; ++m) {
            int j = static_cast<int>((b.sample_path(m) - lo) / width);
            j = std::clamp(j, 0, bins - 1);
            b.histogram(j) += 1;
        }
        out.blocks.push_back(std::move(b));
    }
    return out;
}

} // namespace pglmm
