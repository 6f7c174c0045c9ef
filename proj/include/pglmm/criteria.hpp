#pragma once

#include <limits>

namespace pglmm {

/// Information-criterion bundle for one fit. BICq requires minimal-penalty
/// posterior draws and is NaN when they were not supplied.
struct CriterionSet {
    double BICq = std::numeric_limits<double>::quiet_NaN();
    double BICh = std::numeric_limits<double>::quiet_NaN();
    double BIC = std::numeric_limits<double>::quiet_NaN();
    double BICNgrp = std::numeric_limits<double>::quiet_NaN();
    int d_lambda = 0;
    int d_beta = 0;
    int d_gamma = 0;
    double loglik = std::numeric_limits<double>::quiet_NaN();
};

} // namespace pglmm
