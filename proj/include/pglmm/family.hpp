#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace pglmm {

enum class Family { Binomial, Gaussian, Poisson };

/// log(1 + exp(x)) without overflow for large |x|.
inline double log1pexp(double x) {
    if (x > 35.0) return x + std::exp(-x);
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

/// Exponential family with canonical link. Dispersion tau is free for the
/// Gaussian family and fixed at 1 otherwise.
struct FamilySpec {
    Family kind = Family::Binomial;

    static FamilySpec binomial() { return {Family::Binomial}; }
    static FamilySpec gaussian() { return {Family::Gaussian}; }
    static FamilySpec poisson() { return {Family::Poisson}; }

    const char* name() const {
        switch (kind) {
            case Family::Binomial: return "binomial";
            case Family::Gaussian: return "gaussian";
            default: return "poisson";
        }
    }

    const char* link_name() const {
        switch (kind) {
            case Family::Binomial: return "logit";
            case Family::Gaussian: return "identity";
            default: return "log";
        }
    }

    bool has_dispersion() const { return kind == Family::Gaussian; }

    /// Inverse canonical link: maps eta to the valid mean space.
    double inverse_link(double eta) const {
        switch (kind) {
            case Family::Binomial: return 1.0 / (1.0 + std::exp(-eta));
            case Family::Gaussian: return eta;
            default: return std::exp(eta);
        }
    }

    /// Cumulant b(eta) of the exponential-family density.
    double cumulant(double eta) const {
        switch (kind) {
            case Family::Binomial: return log1pexp(eta);
            case Family::Gaussian: return 0.5 * eta * eta;
            default: return std::exp(eta);
        }
    }

    /// Conditional variance as a function of the mean, b''(theta(mu)).
    double variance(double mu) const {
        switch (kind) {
            case Family::Binomial: return mu * (1.0 - mu);
            case Family::Gaussian: return 1.0;
            default: return mu;
        }
    }

    void validate_response(double y) const {
        switch (kind) {
            case Family::Binomial:
                if (y != 0.0 && y != 1.0)
                    throw std::invalid_argument("binomial response must be coded 0/1");
                break;
            case Family::Poisson:
                if (y < 0.0 || y != std::floor(y))
                    throw std::invalid_argument("poisson response must be a nonnegative integer");
                break;
            default:
                if (!std::isfinite(y))
                    throw std::invalid_argument("gaussian response must be finite");
        }
    }

    /// log f(y | eta, tau) including normalizing constants, so that values are
    /// comparable across models.
    double log_density(double y, double eta, double tau) const {
        switch (kind) {
            case Family::Binomial:
                return y * eta - log1pexp(eta);
            case Family::Gaussian: {
                const double r = y - eta;
                return -0.5 * (r * r / tau + std::log(2.0 * M_PI * tau));
            }
            default:
                return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
        }
    }

    /// Unit-dispersion negative log-likelihood kernel used by the M-step
    /// coordinate descent; constants in y are dropped.
    double unit_nll(double y, double eta) const {
        switch (kind) {
            case Family::Binomial: return log1pexp(eta) - y * eta;
            case Family::Gaussian: {
                const double r = y - eta;
                return 0.5 * r * r;
            }
            default: return std::exp(eta) - y * eta;
        }
    }

    /// Unit deviance d(y, mu); sum of these equals the model deviance.
    double deviance_unit(double y, double mu) const {
        switch (kind) {
            case Family::Binomial: {
                double d = 0.0;
                if (y > 0.0) d += y * std::log(y / mu);
                if (y < 1.0) d += (1.0 - y) * std::log((1.0 - y) / (1.0 - mu));
                return 2.0 * d;
            }
            case Family::Gaussian: {
                const double r = y - mu;
                return r * r;
            }
            default: {
                double d = mu - y;
                if (y > 0.0) d += y * std::log(y / mu);
                return 2.0 * d;
            }
        }
    }

    /// Curvature bound for the quadratic majorizer of unit_nll in eta.
    /// The Poisson bound is data-dependent (max exp(eta) over the sweep) and
    /// is supplied by the caller.
    double curvature_bound() const {
        switch (kind) {
            case Family::Binomial: return 0.25;
            case Family::Gaussian: return 1.0;
            default: throw std::logic_error("poisson curvature is data-dependent");
        }
    }
};

} // namespace pglmm
