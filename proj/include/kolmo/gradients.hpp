#pragma once

/**
 * @file gradients.hpp
 * @brief Gradient estimates for G(t,s)f checked by grid differencing:
 *        smoothing rate, pointwise bound, exponential decay, continuity at s.
 */

#include "kolmo/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace kolmo {

/// Centered differences in the interior, one-sided on the faces of the box.
inline std::vector<FieldSample> discrete_gradient(const FieldSample& u) {
    const Grid& g = u.grid;
    const double h = g.h();
    std::vector<FieldSample> out;
    for (int a = 0; a < g.dim(); ++a) {
        FieldSample da(g, u.time);
        for (std::size_t n = 0; n < g.size(); ++n) {
            auto o = g.offsets(n);
            auto up = o, dn = o;
            ++up[static_cast<std::size_t>(a)];
            --dn[static_cast<std::size_t>(a)];
            const bool hu = g.contains_offsets(up), hd = g.contains_offsets(dn);
            if (hu && hd) da.values[n] = (u.values[g.index(up)] - u.values[g.index(dn)]) / (2.0 * h);
            else if (hu) da.values[n] = (u.values[g.index(up)] - u.values[n]) / h;
            else da.values[n] = (u.values[n] - u.values[g.index(dn)]) / h;
        }
        out.push_back(std::move(da));
    }
    return out;
}

/// |grad u|^p at every node.
inline FieldSample gradient_power(const FieldSample& u, double p) {
    const auto g = discrete_gradient(u);
    FieldSample out(u.grid, u.time);
    for (std::size_t n = 0; n < u.grid.size(); ++n) {
        double s = 0.0;
        for (const auto& c : g) s += c.values[n] * c.values[n];
        out.values[n] = std::pow(std::sqrt(s), p);
    }
    return out;
}

/// |grad f|^p as an expression, integer p >= 1.
inline Expression gradient_power(const Expression& f, double p) {
    const int n = static_cast<int>(p);
    if (n != p || n < 1) throw Error("gradient power needs an integer p >= 1");
    Expression s = Expression::constant(0.0, f.dim());
    for (int i = 0; i < f.dim(); ++i) s = s + expr::pow(f.diff_x(i), 2);
    if (n % 2 == 0) return n == 2 ? s : expr::pow(s, n / 2);
    const Expression r = f.dim() == 1 ? expr::abs(f.diff_x(0)) : expr::sqrt(s);
    return n == 1 ? r : expr::pow(r, n);
}

/// sup over B_K of |grad G(t,s)f|, differenced on the full exhaustion box.
inline double sup_gradient(const EvolutionOperator& G, const InitialData& f) {
    const auto u = G.apply_full(f);
    const auto gp = gradient_power(u, 1.0);
    return sup_within(restrict_to_box(gp, G.discretization().K), G.discretization().K);
}

enum class BoundKind { UniformC1, UniformSmoothing, Pointwise, Exponential };

inline const char* to_string(BoundKind k) {
    switch (k) {
        case BoundKind::UniformC1: return "uniform-C1";
        case BoundKind::UniformSmoothing: return "uniform-smoothing";
        case BoundKind::Pointwise: return "pointwise";
        case BoundKind::Exponential: return "exponential";
    }
    return "?";
}

enum class Outcome { Pass, Fail, Inconclusive, NotApplicable };

inline const char* to_string(Outcome o) {
    switch (o) {
        case Outcome::Pass: return "pass";
        case Outcome::Fail: return "fail";
        case Outcome::Inconclusive: return "inconclusive";
        case Outcome::NotApplicable: return "not-applicable";
    }
    return "?";
}

struct GradientBound {
    BoundKind kind = BoundKind::Pointwise;
    double p = 1.0;
    double sigma_p = 0.0;
    double s = 0.0, T = 0.0;
    double margin = 0.0;  ///< min of rhs - lhs (pointwise) or allowance - fitted (rates)
    Outcome outcome = Outcome::Pass;
};

/// Least-squares slope and intercept of y against x.
inline std::pair<double, double> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    return {slope, (sy - slope * sx) / n};
}

inline constexpr double kGradientNoiseFloor = 1e-8;

// ---------------------------------------------------------------------------
// smoothing rate
// ---------------------------------------------------------------------------

struct SmoothingReport {
    std::vector<double> tau;       ///< t - s per rung
    std::vector<double> sup_grad;  ///< sup_{B_K} |grad G(t,s)f|
    double slope = 0.0;            ///< fitted exponent of tau
    double C = 0.0;                ///< fitted constant: sup_grad ~ C tau^slope
    GradientBound bound;
};

/**
 * Ladder t = s + 4^{-k} tau0. The time step of each rung is capped at tau/50.
 * pass: slope >= -0.5 - 0.1 (and <= 0.1 as a sanity bound on growth).
 */
inline SmoothingReport verify_smoothing_rate(const CoefficientField& cf, double s, const Expression& f,
                                             Discretization disc = {}, double tau0 = 0.25, int rungs = 4) {
    SmoothingReport r;
    r.bound.kind = BoundKind::UniformSmoothing;
    r.bound.s = s;
    r.bound.T = s + tau0;
    std::vector<double> lx, ly;
    bool floor_hit = false;
    double tau = tau0;
    for (int k = 0; k < rungs; ++k, tau *= 0.25) {
        Discretization dk = disc;
        dk.dt = std::min(disc.dt, tau / 50.0);
        const double g = sup_gradient(EvolutionOperator(cf, s, s + tau, dk), f);
        r.tau.push_back(tau);
        r.sup_grad.push_back(g);
        if (g < kGradientNoiseFloor) floor_hit = true;
        lx.push_back(std::log(tau));
        ly.push_back(std::log(std::max(g, std::numeric_limits<double>::min())));
    }
    if (floor_hit) {
        r.bound.outcome = Outcome::Inconclusive;
        return r;
    }
    const auto [slope, icpt] = fit_line(lx, ly);
    r.slope = slope;
    r.C = std::exp(icpt);
    r.bound.margin = slope - (-0.6);
    r.bound.outcome = slope >= -0.6 ? Outcome::Pass : Outcome::Fail;
    return r;
}

// ---------------------------------------------------------------------------
// pointwise estimate |grad G f|^p <= e^{sigma_p (t-s)} G |grad f|^p
// ---------------------------------------------------------------------------

struct PointwiseReport {
    FieldSample lhs;     ///< |grad G(t,s)f|^p on the reporting box
    FieldSample rhs;     ///< e^{sigma_p (t-s)} G(t,s)|grad f|^p
    FieldSample margin;  ///< rhs - lhs
    double min_margin = 0.0;
    double scale = 1.0;
    double tol = 1e-3;
    double relative_gap = 0.0;  ///< sup |rhs - lhs| / sup rhs on B_K
    GradientBound bound;
};

inline PointwiseReport verify_pointwise(const CoefficientField& cf, double s, double t, double p, double sigma_p,
                                        const Expression& f, const Discretization& disc = {}) {
    if (!(t > s)) throw Error("pointwise estimate needs t > s");
    const EvolutionOperator G(cf, s, t, disc);
    PointwiseReport r;
    r.lhs = restrict_to_box(gradient_power(G.apply_full(f), p), disc.K);
    r.rhs = G.apply(gradient_power(f, p));
    const double e = std::exp(sigma_p * (t - s));
    for (double& v : r.rhs.values) v *= e;
    r.margin = FieldSample(r.lhs.grid, t);
    double sup_rhs = 0.0, sup_diff = 0.0;
    r.min_margin = std::numeric_limits<double>::infinity();
    for (std::size_t n = 0; n < r.lhs.grid.size(); ++n) r.margin.values[n] = r.rhs.values[n] - r.lhs.values[n];
    for (std::size_t n : r.lhs.grid.nodes_within(disc.K)) {
        r.min_margin = std::min(r.min_margin, r.margin.values[n]);
        sup_rhs = std::max(sup_rhs, std::abs(r.rhs.values[n]));
        sup_diff = std::max(sup_diff, std::abs(r.margin.values[n]));
    }
    r.scale = std::max(1.0, sup_rhs);
    r.tol = 1e-3 * r.scale;
    r.relative_gap = sup_rhs > 0.0 ? sup_diff / sup_rhs : 0.0;
    r.bound = {BoundKind::Pointwise, p, sigma_p, s, t, r.min_margin,
               r.min_margin >= -r.tol ? Outcome::Pass : Outcome::Fail};
    return r;
}

// ---------------------------------------------------------------------------
// exponential decay
// ---------------------------------------------------------------------------

struct DecayReport {
    std::vector<double> tau;
    std::vector<double> sup_grad;
    double rate = 0.0;  ///< fitted d log sup|grad G f| / d tau
    double C = 0.0;
    GradientBound bound;
};

/// pass: fitted rate <= sigma_p/p + 0.1 |sigma_p/p|; not applicable unless sigma_p < 0.
inline DecayReport verify_exponential_decay(const CoefficientField& cf, double s, const Expression& f,
                                            const std::vector<double>& taus, double p, double sigma_p,
                                            const Discretization& disc = {}) {
    DecayReport r;
    r.bound.kind = BoundKind::Exponential;
    r.bound.p = p;
    r.bound.sigma_p = sigma_p;
    r.bound.s = s;
    r.bound.T = s + (taus.empty() ? 0.0 : taus.back());
    if (!(sigma_p < 0.0)) {
        r.bound.outcome = Outcome::NotApplicable;
        return r;
    }
    std::vector<double> ly;
    for (double tau : taus) {
        if (tau < 1.0) throw Error("exponential decay ladder must start at t - s >= 1");
        const double g = sup_gradient(EvolutionOperator(cf, s, s + tau, disc), f);
        r.tau.push_back(tau);
        r.sup_grad.push_back(g);
        if (g < kGradientNoiseFloor) {
            r.bound.outcome = Outcome::Inconclusive;
            return r;
        }
        ly.push_back(std::log(g));
    }
    const auto [rate, icpt] = fit_line(r.tau, ly);
    r.rate = rate;
    r.C = std::exp(icpt);
    const double allowed = sigma_p / p + 0.1 * std::abs(sigma_p / p);
    r.bound.margin = allowed - rate;
    r.bound.outcome = rate <= allowed ? Outcome::Pass : Outcome::Fail;
    return r;
}

// ---------------------------------------------------------------------------
// continuity at t = s
// ---------------------------------------------------------------------------

struct ContinuityAtSReport {
    std::vector<double> delta;
    std::vector<double> oscillation;  ///< sup_{B_K} |grad G(s+delta,s)f - grad f|
    bool decreasing = false;
};

/// The time step of each rung is capped at delta/20.
inline ContinuityAtSReport verify_gradient_continuity_at_s(const CoefficientField& cf, double s, const Expression& f,
                                                           const std::vector<double>& deltas,
                                                           const Discretization& disc = {}) {
    ContinuityAtSReport r;
    std::vector<expr::Program> df;
    for (int i = 0; i < cf.dim(); ++i) df.emplace_back(f.diff_x(i));
    for (double delta : deltas) {
        Discretization dk = disc;
        dk.dt = std::min(disc.dt, delta / 20.0);
        const EvolutionOperator G(cf, s, s + delta, dk);
        const auto u = G.apply_full(f);
        const auto g = discrete_gradient(u);
        double m = 0.0;
        for (std::size_t n : u.grid.nodes_within(disc.K)) {
            const Point x = u.grid.point(n);
            double d2 = 0.0;
            for (int i = 0; i < cf.dim(); ++i) {
                const double diff = g[static_cast<std::size_t>(i)].values[n] - df[static_cast<std::size_t>(i)](s, x);
                d2 += diff * diff;
            }
            m = std::max(m, std::sqrt(d2));
        }
        r.delta.push_back(delta);
        r.oscillation.push_back(m);
    }
    r.decreasing = true;
    for (std::size_t k = 1; k < r.oscillation.size(); ++k)
        r.decreasing = r.decreasing && r.oscillation[k] <= r.oscillation[k - 1] + 1e-12;
    return r;
}

} // namespace kolmo
