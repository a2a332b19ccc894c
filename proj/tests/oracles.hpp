#pragma once

// Closed-form references for linear drift b = beta(t) x with Q = I, computed
// independently of the library (quadrature and special functions only).

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <numbers>

namespace oracle {

using Beta = std::function<double(double)>;

inline double integrate(const std::function<double(double)>& f, double a, double b) {
    if (a == b) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 12, 1e-13);
}

/// G(t,s)f(x) = E f(m x + sqrt(V) Z) with m = exp int_s^t beta, V = 2 int_s^t exp(2 int_s^r beta) dr.
struct Linear {
    double m = 1.0, V = 0.0;
};

inline Linear linear(const Beta& beta, double s, double t) {
    Linear l;
    l.m = std::exp(integrate(beta, s, t));
    l.V = 2.0 * integrate([&](double r) { return std::exp(2.0 * integrate(beta, s, r)); }, s, t);
    return l;
}

inline Linear linear_const(double beta, double tau) {
    if (beta == 0.0) return {1.0, 2.0 * tau};
    return {std::exp(beta * tau), std::expm1(2.0 * beta * tau) / beta};
}

/// G(t,s) applied to exp(-a x^2) at x.
inline double gaussian(const Linear& l, double a, double x) {
    const double q = 1.0 + 2.0 * a * l.V;
    return std::exp(-a * l.m * l.m * x * x / q) / std::sqrt(q);
}

/// G(t,s) applied to sin(x) at x.
inline double sine(const Linear& l, double x) { return std::exp(-0.5 * l.V) * std::sin(l.m * x); }

/// Variance of the evolution system at s: v(s) = 2 int_s^inf exp(2 int_s^r beta) dr (truncated at s + horizon).
inline double system_variance(const Beta& beta, double s, double horizon = 60.0) {
    return 2.0 * integrate([&](double r) { return std::exp(2.0 * integrate(beta, s, r)); }, s, s + horizon);
}

inline double normal_cdf(double x, double mean, double var) {
    return boost::math::cdf(boost::math::normal(mean, std::sqrt(var)), x);
}

/// Mass of N(mean, var) in [a, b].
inline double normal_mass(double a, double b, double mean, double var) {
    return normal_cdf(b, mean, var) - normal_cdf(a, mean, var);
}

} // namespace oracle
