#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pglmm/family.hpp"

namespace pglmm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct StandardizeResult {
    Mat X;
    Vec centers;
    Vec scales;
};

/// Center each column to mean 0 and scale to mean square 1 (ncvreg-style).
/// Throws on a constant column, naming it.
inline StandardizeResult standardize(const Mat& X_raw) {
    const Eigen::Index N = X_raw.rows(), p = X_raw.cols();
    StandardizeResult out;
    out.X.resize(N, p);
    out.centers.resize(p);
    out.scales.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const double c = X_raw.col(j).mean();
        Vec centered = X_raw.col(j).array() - c;
        const double ms = centered.squaredNorm() / static_cast<double>(N);
        if (ms <= 0.0)
            throw std::invalid_argument("constant column " + std::to_string(j) +
                                        " cannot be standardized");
        const double s = std::sqrt(ms);
        out.X.col(j) = centered / s;
        out.centers(j) = c;
        out.scales(j) = s;
    }
    return out;
}

/// Observations grouped by a single factor. X is held standardized; the
/// intercept is implicit. Random-effect predictors are a subset of the
/// fixed-effect columns, with the random intercept always present, so the
/// random-effect dimension is q = z_cols.size() + 1.
struct Dataset {
    Vec y;
    Mat X; // N x p, standardized
    std::vector<int> z_cols;
    std::vector<std::string> group_levels;      // K labels, order of first appearance
    std::vector<int> group_of;                  // N, values in [0, K)
    std::vector<std::vector<int>> group_rows;   // per level
    std::vector<std::string> x_names;           // p column names
    Vec centers, scales;                        // standardization parameters

    int N = 0, p = 0, K = 0, q = 0;

    /// Random-effect design value: z(i, 0) = 1 (intercept), z(i, t) = X(i, z_cols[t-1]).
    double z_value(int i, int t) const {
        return t == 0 ? 1.0 : X(i, z_cols[static_cast<std::size_t>(t) - 1]);
    }

    std::string ranef_name(int t) const {
        return t == 0 ? "(Intercept)" : x_names[static_cast<std::size_t>(z_cols[t - 1])];
    }

    /// n_k x q random-effect design for one group.
    Mat z_block(int k) const {
        const auto& rows = group_rows[static_cast<std::size_t>(k)];
        Mat Z(static_cast<Eigen::Index>(rows.size()), q);
        for (Eigen::Index r = 0; r < Z.rows(); ++r)
            for (int t = 0; t < q; ++t) Z(r, t) = z_value(rows[static_cast<std::size_t>(r)], t);
        return Z;
    }
};

/// Build a Dataset from raw inputs; standardizes X unless already_standardized.
inline Dataset make_dataset(Vec y, Mat X_raw, std::vector<int> z_cols,
                            const std::vector<std::string>& group_labels,
                            const FamilySpec& family,
                            std::vector<std::string> x_names = {},
                            bool already_standardized = false) {
    Dataset d;
    d.N = static_cast<int>(y.size());
    d.p = static_cast<int>(X_raw.cols());
    if (X_raw.rows() != y.size())
        throw std::invalid_argument("X and y row counts differ");
    if (static_cast<int>(group_labels.size()) != d.N)
        throw std::invalid_argument("group label length differs from N");
    for (int i = 0; i < d.N; ++i) family.validate_response(y(i));

    std::sort(z_cols.begin(), z_cols.end());
    if (std::adjacent_find(z_cols.begin(), z_cols.end()) != z_cols.end())
        throw std::invalid_argument("duplicate random-effect column index");
    for (int c : z_cols)
        if (c < 0 || c >= d.p)
            throw std::invalid_argument("random-effect column index out of range");

    d.y = std::move(y);
    if (already_standardized) {
        d.X = std::move(X_raw);
        d.centers = Vec::Zero(d.p);
        d.scales = Vec::Ones(d.p);
    } else {
        auto st = standardize(X_raw);
        d.X = std::move(st.X);
        d.centers = std::move(st.centers);
        d.scales = std::move(st.scales);
    }
    d.z_cols = std::move(z_cols);
    d.q = static_cast<int>(d.z_cols.size()) + 1;

    if (x_names.empty()) {
        x_names.reserve(static_cast<std::size_t>(d.p));
        for (int j = 0; j < d.p; ++j) x_names.push_back("V" + std::to_string(j + 1));
    }
    if (static_cast<int>(x_names.size()) != d.p)
        throw std::invalid_argument("x_names length differs from p");
    d.x_names = std::move(x_names);

    std::unordered_map<std::string, int> level_of;
    d.group_of.resize(static_cast<std::size_t>(d.N));
    for (int i = 0; i < d.N; ++i) {
        auto [it, inserted] = level_of.try_emplace(group_labels[static_cast<std::size_t>(i)],
                                                   static_cast<int>(d.group_levels.size()));
        if (inserted) {
            d.group_levels.push_back(group_labels[static_cast<std::size_t>(i)]);
            d.group_rows.emplace_back();
        }
        d.group_of[static_cast<std::size_t>(i)] = it->second;
        d.group_rows[static_cast<std::size_t>(it->second)].push_back(i);
    }
    d.K = static_cast<int>(d.group_levels.size());
    return d;
}

/// Map standardized-scale coefficients back to the raw covariate scale.
inline Vec destandardize_coefficients(const Vec& beta_std, const Vec& centers, const Vec& scales) {
    Vec out(beta_std.size());
    double intercept = beta_std(0);
    for (Eigen::Index j = 1; j < beta_std.size(); ++j) {
        out(j) = beta_std(j) / scales(j - 1);
        intercept -= beta_std(j) * centers(j - 1) / scales(j - 1);
    }
    out(0) = intercept;
    return out;
}

} // namespace pglmm
