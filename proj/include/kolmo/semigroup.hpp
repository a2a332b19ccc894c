#pragma once

/**
 * @file semigroup.hpp
 * @brief The space-time evolution semigroup (T(t)f)(s,x) = (G(s,s-t)f(s-t,.))(x),
 *        the measure nu(dt dx) = mu_t(dx) dt, and the invariance and L^p
 *        contraction checks.
 *
 * Space-time fields live on a slab: a uniform time lattice a + j ds times a
 * spatial box grid. Shifts are restricted to lattice multiples.
 */

#include "kolmo/measures.hpp"
#include "kolmo/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace kolmo {

namespace detail {

/// j with a + j ds == s up to rounding; throws when s is off the lattice.
inline std::size_t lattice_index(double a, double ds, double s) {
    const double u = (s - a) / ds;
    const double j = std::round(u);
    if (j < 0.0 || std::abs(u - j) > 1e-9) throw Error("time " + format_double(s) + " is not on the slab lattice");
    return static_cast<std::size_t>(j);
}

/// Number of lattice steps in t; t must be a nonnegative lattice multiple.
inline std::size_t lattice_steps(double ds, double t) {
    if (t < 0.0) throw Error("semigroup time must be nonnegative");
    return lattice_index(0.0, ds, t);
}

inline bool is_constant(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

} // namespace detail

struct SpaceTimeField {
    Grid grid;
    double a = 0.0;  ///< first slab time
    double ds = 0.0;
    std::vector<FieldSample> slices;  ///< slice j at time a + j ds

    std::size_t size() const { return slices.size(); }
    double time(std::size_t j) const { return a + static_cast<double>(j) * ds; }
    double b() const { return time(slices.size() - 1); }

    static SpaceTimeField sample(const Expression& f, const Grid& g, double a, double b, double ds) {
        if (!(ds > 0.0) || !(b >= a)) throw Error("slab needs ds > 0 and b >= a");
        SpaceTimeField out{g, a, ds, {}};
        const std::size_t m = detail::lattice_index(a, ds, b);
        for (std::size_t j = 0; j <= m; ++j) out.slices.push_back(kolmo::sample(f, g, out.time(j)));
        return out;
    }

    const FieldSample& at(double s) const {
        const std::size_t j = detail::lattice_index(a, ds, s);
        if (j >= slices.size()) throw Error("time " + format_double(s) + " outside the slab");
        return slices[j];
    }

    /// Sub-slab [a2, b2] (lattice times).
    SpaceTimeField window(double a2, double b2) const {
        const std::size_t i = detail::lattice_index(a, ds, a2), k = detail::lattice_index(a, ds, b2);
        if (k >= slices.size() || i > k) throw Error("window outside the slab");
        SpaceTimeField out{grid, time(i), ds, {}};
        out.slices.assign(slices.begin() + static_cast<std::ptrdiff_t>(i), slices.begin() + static_cast<std::ptrdiff_t>(k) + 1);
        return out;
    }

    double sup() const {
        double m = 0.0;
        for (const auto& sl : slices)
            for (double v : sl.values) m = std::max(m, std::abs(v));
        return m;
    }

    double min() const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& sl : slices)
            for (double v : sl.values) m = std::min(m, v);
        return m;
    }

    /// Time length of the slices where the field is not identically zero.
    double support_length() const {
        std::size_t n = 0;
        for (const auto& sl : slices)
            if (std::any_of(sl.values.begin(), sl.values.end(), [](double v) { return v != 0.0; })) ++n;
        return static_cast<double>(n) * ds;
    }

    void validate() const {
        if (slices.empty()) throw Error("empty slab");
        for (const auto& sl : slices) {
            if (!(sl.grid == grid)) throw Error("slab slice on a different grid");
            sl.check_finite();
        }
    }

    void write_csv(std::ostream& out) const {
        CsvWriter w(out);
        w.meta("a", format_double(a));
        w.meta("ds", format_double(ds));
        std::vector<std::string> head{"s"};
        for (int k = 0; k < grid.dim(); ++k) head.push_back("x" + std::to_string(k + 1));
        head.push_back("value");
        w.header(head);
        for (std::size_t j = 0; j < slices.size(); ++j)
            for (std::size_t n = 0; n < grid.size(); ++n) {
                std::vector<double> row{time(j)};
                for (double x : grid.point(n)) row.push_back(x);
                row.push_back(slices[j].values[n]);
                w.row(row);
            }
    }
};

/**
 * (T(t)f)(s) = G(s, s-t) f(s-t) for every lattice s in [a+t, b]. The output
 * slab starts at a + t. Space-constant slices are translated without a solve
 * (G(s,r) c = c).
 */
inline SpaceTimeField apply_T(const CoefficientField& cf, double t, const SpaceTimeField& f,
                              const Discretization& disc = measure_discretization(), int workers = 1) {
    f.validate();
    const std::size_t k = detail::lattice_steps(f.ds, t);
    if (k >= f.size()) throw Error("lookback " + format_double(t) + " reaches outside the slab");
    SpaceTimeField out{f.grid, f.time(k), f.ds, std::vector<FieldSample>(f.size() - k)};
    if (k == 0) {
        out.slices = f.slices;
        return out;
    }
    parallel_for(out.size(), workers, [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) {
            const FieldSample& src = f.slices[j];
            const double s = out.time(j), r = f.time(j);
            if (detail::is_constant(src.values)) {
                out.slices[j] = FieldSample(f.grid, s, src.values);
                continue;
            }
            const EvolutionOperator G(cf, r, s, disc);
            FieldSample v = transfer(G.apply_full(src), f.grid);
            v.time = s;
            out.slices[j] = std::move(v);
        }
    });
    return out;
}

/// sup over B_K and the common window of |T(t2)T(t1)f - T(t1+t2)f|.
inline double check_semigroup_law(const CoefficientField& cf, const SpaceTimeField& f, double t1, double t2, double K,
                                  const Discretization& disc = measure_discretization(), int workers = 1) {
    const auto lhs = apply_T(cf, t2, apply_T(cf, t1, f, disc, workers), disc, workers);
    const auto rhs = apply_T(cf, t1 + t2, f, disc, workers);
    if (lhs.size() != rhs.size()) throw Error("semigroup law windows differ");
    double r = 0.0;
    for (std::size_t j = 0; j < lhs.size(); ++j) r = std::max(r, sup_diff_within(lhs.slices[j], rhs.slices[j], K));
    return r;
}

// ---------------------------------------------------------------------------
// the measure nu
// ---------------------------------------------------------------------------

struct SpaceTimeMeasure {
    double a = 0.0;
    double ds = 0.0;
    std::vector<DiscreteMeasure> slices;  ///< mu_{a + j ds}

    std::size_t size() const { return slices.size(); }
    double time(std::size_t j) const { return a + static_cast<double>(j) * ds; }
    double b() const { return time(slices.size() - 1); }
    const Grid& grid() const { return slices.front().grid; }

    const DiscreteMeasure& at(double s) const {
        const std::size_t j = detail::lattice_index(a, ds, s);
        if (j >= slices.size()) throw Error("time " + format_double(s) + " outside the measure slab");
        return slices[j];
    }

    void validate(double eps_meas) const {
        for (const auto& m : slices) m.validate(eps_meas);
    }

    /// nu(J x B_rho) for J = [t0, t1] on the lattice, trapezoid in time.
    double mass(double t0, double t1, double rho = std::numeric_limits<double>::infinity()) const {
        const std::size_t i = detail::lattice_index(a, ds, t0), k = detail::lattice_index(a, ds, t1);
        double s = 0.0;
        for (std::size_t j = i; j <= k; ++j) {
            const double w = (j == i || j == k) && i != k ? 0.5 * ds : (i == k ? 0.0 : ds);
            double m = 0.0;
            for (std::size_t n = 0; n < grid().size(); ++n)
                if (grid().norm(n) <= rho) m += slices[j].weights[n];
            s += w * m;
        }
        return s;
    }

    /// Slices on [a, b] pulled back slice by slice from mu_b.
    static SpaceTimeMeasure from_anchor(const CoefficientField& cf, const DiscreteMeasure& mu_b, double a, double ds,
                                        const Discretization& disc = measure_discretization()) {
        SpaceTimeMeasure nu{a, ds, {}};
        const std::size_t m = detail::lattice_index(a, ds, mu_b.time);
        nu.slices.resize(m + 1);
        nu.slices[m] = mu_b;
        for (std::size_t j = m; j-- > 0;) nu.slices[j] = adjoint_propagate(cf, nu.slices[j + 1], nu.time(j), disc);
        return nu;
    }
};

/// nu on the lattice of [a, b] from the evolution system built at anchor b.
inline SpaceTimeMeasure build_space_time_measure(const CoefficientField& cf, const Point& x0, double a, double b,
                                                 double ds, const SystemSettings& cfg = {},
                                                 const Discretization& disc = measure_discretization()) {
    detail::lattice_index(a, ds, b);
    const auto sys = build_evolution_system(cf, x0, {b}, cfg, disc);
    auto nu = SpaceTimeMeasure::from_anchor(cf, sys.anchors().front(), a, ds, disc);
    nu.validate(cfg.eps_meas);
    return nu;
}

/**
 * int phi dnu = sum_j w_j int phi(s_j, .) dmu_{s_j}, trapezoid weights on the
 * field's window.
 */
inline double nu_integral(const SpaceTimeField& phi, const SpaceTimeMeasure& nu) {
    if (std::abs(phi.ds - nu.ds) > 1e-12) throw Error("field and measure lattices differ");
    double s = 0.0;
    const std::size_t m = phi.size();
    for (std::size_t j = 0; j < m; ++j) {
        const double w = m == 1 ? 0.0 : (j == 0 || j + 1 == m ? 0.5 : 1.0) * phi.ds;
        if (w == 0.0) continue;
        s += w * nu.at(phi.time(j)).integrate(phi.slices[j]);
    }
    return s;
}

/// (int |f|^p dnu)^{1/p}
inline double lp_norm(const SpaceTimeField& f, const SpaceTimeMeasure& nu, double p) {
    if (!(p >= 1.0)) throw Error("L^p norm needs p >= 1");
    SpaceTimeField g = f;
    for (auto& sl : g.slices)
        for (double& v : sl.values) v = std::pow(std::abs(v), p);
    return std::pow(std::max(0.0, nu_integral(g, nu)), 1.0 / p);
}

// ---------------------------------------------------------------------------
// checks
// ---------------------------------------------------------------------------

struct NuInvarianceReport {
    double lhs = 0.0;  ///< int T(t)phi dnu
    double rhs = 0.0;  ///< int phi dnu
    double residual = 0.0;
    double scale = 0.0;  ///< ||phi||_inf |support|
    double tol = 0.0;
    bool pass = false;
};

/// |int T(t)phi dnu - int phi dnu|; phi must vanish on the last t of the slab.
inline NuInvarianceReport check_T_invariance(const CoefficientField& cf, const SpaceTimeField& phi, double t,
                                             const SpaceTimeMeasure& nu, double eps_inv = 2e-2,
                                             const Discretization& disc = measure_discretization(), int workers = 1) {
    NuInvarianceReport r;
    r.rhs = nu_integral(phi, nu);
    r.lhs = t == 0.0 ? r.rhs : nu_integral(apply_T(cf, t, phi, disc, workers), nu);
    r.residual = std::abs(r.lhs - r.rhs);
    r.scale = phi.sup() * phi.support_length();
    r.tol = eps_inv * r.scale;
    r.pass = r.residual <= r.tol;
    return r;
}

/// G phi = A(s) phi - d_s phi
inline Expression space_time_generator(const CoefficientField& cf, const Expression& phi) {
    return cf.apply_generator(phi) - phi.diff_t();
}

struct InfinitesimalReport {
    double integral = 0.0;  ///< int G phi dnu
    double sup_G = 0.0;
    double support = 0.0;
    double tol = 0.0;
    bool pass = false;
};

/**
 * int G phi dnu over the measure slab. phi must be negligible (relative
 * 1e-6) on the first and last slices.
 */
inline InfinitesimalReport infinitesimal_invariance_residual(const CoefficientField& cf, const Expression& phi,
                                                             const SpaceTimeMeasure& nu, double eps_inf = 2e-2) {
    const auto P = SpaceTimeField::sample(phi, nu.grid(), nu.a, nu.b(), nu.ds);
    const double top = P.sup();
    InfinitesimalReport r;
    if (top == 0.0) {
        r.pass = true;
        return r;
    }
    for (std::size_t j : {std::size_t{0}, P.size() - 1})
        for (double v : P.slices[j].values)
            if (std::abs(v) > 1e-6 * top) throw Error("test function support touches the slab boundary");
    const auto GP = SpaceTimeField::sample(space_time_generator(cf, phi), nu.grid(), nu.a, nu.b(), nu.ds);
    r.integral = nu_integral(GP, nu);
    r.sup_G = GP.sup();
    std::size_t n = 0;
    for (const auto& sl : P.slices)
        if (std::any_of(sl.values.begin(), sl.values.end(), [&](double v) { return std::abs(v) > 1e-6 * top; })) ++n;
    r.support = static_cast<double>(n) * nu.ds;
    r.tol = eps_inf * r.sup_G * r.support;
    r.pass = std::abs(r.integral) <= r.tol;
    return r;
}

struct ContractionReport {
    double p = 0.0;
    double norm_f = 0.0;
    double norm_Tf = 0.0;
    double ratio = 0.0;
    bool pass = false;
};

/// ||T(t)f||_{L^p(nu)} / ||f||_{L^p(nu)}; T(t)f is measured on [a+t, b].
inline ContractionReport check_Lp_contraction(const CoefficientField& cf, const SpaceTimeField& f, double t, double p,
                                              const SpaceTimeMeasure& nu,
                                              const Discretization& disc = measure_discretization(), int workers = 1) {
    ContractionReport r;
    r.p = p;
    r.norm_f = lp_norm(f, nu, p);
    if (!(r.norm_f > 0.0)) throw Error("L^p contraction needs a nonzero function");
    r.norm_Tf = lp_norm(apply_T(cf, t, f, disc, workers), nu, p);
    r.ratio = r.norm_Tf / r.norm_f;
    r.pass = r.ratio <= 1.0 + 1e-2;
    return r;
}

/// ||T(delta)f - f||_{L^p(nu)} on [a+delta, b] for each delta.
inline std::vector<double> strong_continuity(const CoefficientField& cf, const SpaceTimeField& f,
                                             const std::vector<double>& deltas, double p, const SpaceTimeMeasure& nu,
                                             const Discretization& disc = measure_discretization(), int workers = 1) {
    std::vector<double> out;
    for (double d : deltas) {
        auto Tf = apply_T(cf, d, f, disc, workers);
        const auto base = f.window(Tf.a, Tf.b());
        for (std::size_t j = 0; j < Tf.size(); ++j)
            for (std::size_t n = 0; n < Tf.grid.size(); ++n) Tf.slices[j].values[n] -= base.slices[j].values[n];
        out.push_back(lp_norm(Tf, nu, p));
    }
    return out;
}

} // namespace kolmo
