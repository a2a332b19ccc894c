#pragma once

/**
 * @file measures.hpp
 * @brief Evolution systems of measures: Krylov-Bogoliubov time averages of
 *        kernel rows, adjoint propagation, invariance, moments, tightness,
 *        asymptotics.
 *
 * A measure at time s is a vector of cell masses on a grid. The adjoint of
 * the discrete step is exact at matrix level, so pulling a measure back from
 * t to s is the transpose of pushing functions forward from s to t.
 */

#include "kolmo/evolution.hpp"
#include "kolmo/gradients.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace kolmo {

/// Box radius 8, h = 0.05, dt = 5e-3: the defaults for measure construction.
inline Discretization measure_discretization() {
    Discretization d;
    d.R0 = 8.0;
    d.K = 4.0;
    d.h = 0.05;
    d.dt = 5e-3;
    return d;
}

struct DiscreteMeasure {
    Grid grid;
    double time = 0.0;
    std::vector<double> weights;  ///< cell masses
    double renormalization = 1.0;  ///< factor applied by the last propagation

    DiscreteMeasure() = default;
    DiscreteMeasure(Grid g, double t) : grid(std::move(g)), time(t), weights(grid.size(), 0.0) {}

    static DiscreteMeasure point_mass(const Grid& g, double t, std::span<const double> x0) {
        DiscreteMeasure m(g, t);
        m.weights[g.nearest(x0)] = 1.0;
        return m;
    }

    double total_mass() const {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    }

    double integrate(const Expression& f) const { return integrate(sample(f, grid, time)); }

    double integrate(const FieldSample& f) const {
        const FieldSample g = f.grid == grid ? f : transfer(f, grid);
        double s = 0.0;
        for (std::size_t n = 0; n < weights.size(); ++n)
            if (weights[n] != 0.0) s += weights[n] * g.values[n];
        return s;
    }

    double density(std::size_t n) const { return weights[n] / grid.cell_volume(n); }

    /// weights >= -1e-14 and |mass - 1| <= eps_meas
    void validate(double eps_meas) const {
        for (double w : weights)
            if (!(w >= -1e-14)) throw NumericalError("negative measure weight " + format_double(w));
        if (std::abs(total_mass() - 1.0) > eps_meas)
            throw NumericalError("measure mass " + format_double(total_mass()) + " outside 1 +- eps_meas");
    }

    void write_csv(std::ostream& out) const {
        CsvWriter w(out);
        w.meta("time", format_double(time));
        w.meta("mass", format_double(total_mass()));
        std::vector<std::string> head;
        for (int a = 0; a < grid.dim(); ++a) head.push_back("x" + std::to_string(a + 1));
        head.push_back("weight");
        head.push_back("density");
        w.header(head);
        for (std::size_t n = 0; n < weights.size(); ++n) {
            std::vector<double> row = grid.point(n);
            row.push_back(weights[n]);
            row.push_back(density(n));
            w.row(row);
        }
    }
};

inline double total_variation(const DiscreteMeasure& a, const DiscreteMeasure& b) {
    if (!(a.grid == b.grid)) throw Error("measures on different grids");
    return total_variation(a.weights, b.weights);
}

/// sum of weights times |x|^p
inline double moments(const DiscreteMeasure& mu, double p) {
    if (!(p > 0.0)) throw Error("moment order must be positive");
    double s = 0.0;
    for (std::size_t n = 0; n < mu.weights.size(); ++n)
        if (mu.weights[n] != 0.0) s += mu.weights[n] * std::pow(mu.grid.norm(n), p);
    return s;
}

namespace detail {

/**
 * v <- M(t,s)^T v on the step ladder of [s,t], sweeping from t down to s.
 * Before each transposed step, inject(k, v) may add mass at step time k.
 */
template <class Inject>
void backward_sweep(const CoefficientField& cf, const Grid& g, const Discretization& disc, double s, double t,
                    std::vector<double>& v, Inject inject) {
    const int steps = step_count(s, t, disc.dt);
    ThetaStepper st(cf, g, disc.bc, disc.theta);
    inject(steps, v);
    for (int k = steps; k >= 1; --k) {
        st.step_transposed(v, step_time(s, t, steps, k - 1), step_time(s, t, steps, k));
        inject(k - 1, v);
    }
}

} // namespace detail

/**
 * mu_{t,s} = (t-s)^{-1} int_s^t p_{tau,s}(x0, .) dtau by the trapezoid rule on
 * every `stride`-th step of the ladder (the last panel absorbs the remainder).
 * The box is [-R0, R0]^d.
 */
inline DiscreteMeasure time_average_measure(const CoefficientField& cf, double s, const Point& x0, double t,
                                            const Discretization& disc = measure_discretization(), int stride = 1) {
    if (!(t > s)) throw Error("time average needs t > s");
    if (stride < 1) throw Error("quadrature stride must be positive");
    const Grid g(cf.dim(), disc.R0, disc.h);
    const std::size_t node = g.nearest(x0);
    const int steps = step_count(s, t, disc.dt);
    std::vector<int> nodes;
    for (int k = 0; k < steps; k += stride) nodes.push_back(k);
    nodes.push_back(steps);
    std::vector<double> w(static_cast<std::size_t>(steps) + 1, 0.0);
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
        const double a = step_time(s, t, steps, nodes[i]), b = step_time(s, t, steps, nodes[i + 1]);
        w[static_cast<std::size_t>(nodes[i])] += 0.5 * (b - a) / (t - s);
        w[static_cast<std::size_t>(nodes[i + 1])] += 0.5 * (b - a) / (t - s);
    }
    DiscreteMeasure mu(g, s);
    detail::backward_sweep(cf, g, disc, s, t, mu.weights,
                           [&](int k, std::vector<double>& v) { v[node] += w[static_cast<std::size_t>(k)]; });
    return mu;
}

/// mu_s = G(t,s)^* mu_t, renormalized to unit mass.
inline DiscreteMeasure adjoint_propagate(const CoefficientField& cf, const DiscreteMeasure& mu, double s,
                                         const Discretization& disc = measure_discretization()) {
    const double t = mu.time;
    if (s > t) throw Error("adjoint propagation needs s <= t");
    DiscreteMeasure out = mu;
    out.time = s;
    out.renormalization = 1.0;
    if (s == t) return out;
    const double before = mu.total_mass();
    detail::backward_sweep(cf, mu.grid, disc, s, t, out.weights, [](int, std::vector<double>&) {});
    const double after = out.total_mass();
    const double factor = before / after;
    if (!(std::abs(factor - 1.0) <= 10.0 * disc.eps_cons))
        throw NumericalError("adjoint propagation renormalization " + format_double(factor) + " out of range");
    for (double& v : out.weights) v *= factor;
    out.renormalization = factor;
    return out;
}

// ---------------------------------------------------------------------------
// evolution systems
// ---------------------------------------------------------------------------

struct SystemSettings {
    std::vector<double> horizons{5.0, 10.0, 20.0, 40.0};
    double eps_kb = 1e-2;
    double eps_meas = 1e-3;
    int stride = 1;
};

class EvolutionSystem {
public:
    EvolutionSystem(CoefficientField cf, Discretization disc, std::vector<DiscreteMeasure> anchors,
                    std::vector<double> horizon_used, std::vector<double> cauchy_tv)
        : cf_(std::move(cf)), disc_(disc), anchors_(std::move(anchors)), horizon_(std::move(horizon_used)),
          cauchy_(std::move(cauchy_tv)) {}

    const std::vector<DiscreteMeasure>& anchors() const { return anchors_; }
    const std::vector<double>& horizon_used() const { return horizon_; }  ///< per anchor
    const std::vector<double>& cauchy_tv() const { return cauchy_; }      ///< last TV step per anchor
    const Discretization& discretization() const { return disc_; }
    const CoefficientField& field() const { return cf_; }

    /// mu_s, pulled back from the nearest anchor at or after s.
    DiscreteMeasure at(double s) const {
        for (const auto& a : anchors_)
            if (a.time >= s - 1e-12) return std::abs(a.time - s) <= 1e-12 ? a : adjoint_propagate(cf_, a, s, disc_);
        throw Error("no anchor at or after s = " + format_double(s));
    }

private:
    CoefficientField cf_;
    Discretization disc_;
    std::vector<DiscreteMeasure> anchors_;
    std::vector<double> horizon_, cauchy_;
};

/**
 * For each anchor n, walk the horizon ladder until successive averages
 * mu_{n+H,n} are within eps_kb in total variation. The anchor is then the
 * average over the last window [n + H_{k-1}, n + H_k].
 */
inline EvolutionSystem build_evolution_system(const CoefficientField& cf, const Point& x0, std::vector<double> anchor_times,
                                              const SystemSettings& cfg = {},
                                              const Discretization& disc = measure_discretization()) {
    if (anchor_times.empty()) throw Error("evolution system needs at least one anchor");
    std::sort(anchor_times.begin(), anchor_times.end());
    std::vector<DiscreteMeasure> anchors;
    std::vector<double> used, tv;
    for (double n : anchor_times) {
        std::optional<DiscreteMeasure> prev;
        double prev_h = 0.0;
        bool done = false;
        for (double H : cfg.horizons) {
            auto mu = time_average_measure(cf, n, x0, n + H, disc, cfg.stride);
            mu.validate(cfg.eps_meas);
            if (prev) {
                const double d = total_variation(*prev, mu);
                if (d <= cfg.eps_kb) {
                    // H_k mu_k - H_{k-1} mu_{k-1} is the average over the tail window
                    // [n + H_{k-1}, n + H_k]; it drops the O(1/H) transient of the Cesaro mean.
                    const double a = prev_h / (H - prev_h), b = H / (H - prev_h);
                    for (std::size_t i = 0; i < mu.weights.size(); ++i)
                        mu.weights[i] = std::max(0.0, b * mu.weights[i] - a * prev->weights[i]);
                    anchors.push_back(std::move(mu));
                    used.push_back(H);
                    tv.push_back(d);
                    done = true;
                    break;
                }
            }
            prev = std::move(mu);
            prev_h = H;
        }
        if (!done)
            throw BudgetExceeded("Krylov-Bogoliubov averages not Cauchy within eps_kb at anchor " + format_double(n));
    }
    return {cf, disc, std::move(anchors), std::move(used), std::move(tv)};
}

// ---------------------------------------------------------------------------
// checks
// ---------------------------------------------------------------------------

struct InvarianceRow {
    std::size_t f = 0;
    double t = 0.0, s = 0.0;
    double lhs = 0.0;  ///< int G(t,s)f dmu_t
    double rhs = 0.0;  ///< int f dmu_s
    double residual = 0.0;
};

struct InvarianceReport {
    std::vector<InvarianceRow> rows;
    double max_residual = 0.0;
};

/// max |int G(t,s)f dmu_t - int f dmu_s| with G(t,s)f from the exhausting solver.
inline InvarianceReport invariance_residual(const EvolutionSystem& sys, const std::vector<Expression>& corpus,
                                            const std::vector<std::pair<double, double>>& pairs,
                                            const Discretization& disc = {}) {
    InvarianceReport rep;
    for (const auto& [t, s] : pairs) {
        if (s > t) throw Error("invariance pair needs s <= t");
        const auto mt = sys.at(t), ms = sys.at(s);
        const EvolutionOperator G(sys.field(), s, t, disc);
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            InvarianceRow r{i, t, s, 0.0, ms.integrate(corpus[i]), 0.0};
            r.lhs = t == s ? mt.integrate(corpus[i]) : mt.integrate(G.apply_full(corpus[i]));
            r.residual = std::abs(r.lhs - r.rhs);
            rep.max_residual = std::max(rep.max_residual, r.residual);
            rep.rows.push_back(r);
        }
    }
    return rep;
}

struct TightnessTable {
    std::vector<double> rho;
    std::vector<double> mass_outside;  ///< sup over the set of mu(|x| > rho)
    bool decays = false;               ///< last entry <= tol
};

inline TightnessTable tightness_diagnostic(const std::vector<DiscreteMeasure>& set, const std::vector<double>& rhos,
                                           double tol = 1e-3) {
    TightnessTable t;
    for (double rho : rhos) {
        double m = 0.0;
        for (const auto& mu : set) {
            double out = 0.0;
            for (std::size_t n = 0; n < mu.weights.size(); ++n)
                if (mu.grid.norm(n) > rho * (1 + 1e-12)) out += mu.weights[n];
            m = std::max(m, out);
        }
        t.rho.push_back(rho);
        t.mass_outside.push_back(m);
    }
    t.decays = !t.mass_outside.empty() && t.mass_outside.back() <= tol;
    return t;
}

/// min over nodes of B_K of weight / cell volume.
inline double check_lebesgue_equivalence(const DiscreteMeasure& mu, double K) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t n : mu.grid.nodes_within(K)) m = std::min(m, mu.density(n));
    return m;
}

struct AsymptoticsReport {
    std::vector<double> tau;
    std::vector<double> residual;  ///< sup_{B_K} |G(s+tau,s)f - int f dmu_s|
    double rate = 0.0;             ///< fitted exponential rate
    double C = 0.0;
    bool decays = false;
    Outcome outcome = Outcome::Pass;
};

/**
 * pass: residuals decrease along the ladder and the fitted rate is within
 * rel_tol |omega| of omega. Residuals all below floor pass trivially.
 */
inline AsymptoticsReport check_asymptotics(const CoefficientField& cf, const DiscreteMeasure& mu_s, const Expression& f,
                                           const std::vector<double>& taus, double K, double omega,
                                           const Discretization& disc = {}, double rel_tol = 0.15,
                                           double floor = 2e-3) {
    AsymptoticsReport r;
    if (!(omega < 0.0)) {
        r.outcome = Outcome::NotApplicable;
        return r;
    }
    const double s = mu_s.time;
    const double mean = mu_s.integrate(f);
    for (double tau : taus) {
        const auto u = EvolutionOperator(cf, s, s + tau, disc).apply_full(f);
        double m = 0.0;
        for (std::size_t n : u.grid.nodes_within(K)) m = std::max(m, std::abs(u.values[n] - mean));
        r.tau.push_back(tau);
        r.residual.push_back(m);
    }
    if (*std::max_element(r.residual.begin(), r.residual.end()) <= floor) {
        r.decays = true;
        r.outcome = Outcome::Pass;
        return r;
    }
    r.decays = true;
    for (std::size_t k = 1; k < r.residual.size(); ++k) r.decays = r.decays && r.residual[k] < r.residual[k - 1];
    std::vector<double> ly;
    for (double v : r.residual) ly.push_back(std::log(std::max(v, std::numeric_limits<double>::min())));
    const auto [rate, icpt] = fit_line(r.tau, ly);
    r.rate = rate;
    r.C = std::exp(icpt);
    r.outcome = r.decays && std::abs(rate - omega) <= rel_tol * std::abs(omega) ? Outcome::Pass : Outcome::Fail;
    return r;
}

} // namespace kolmo
