#pragma once

/**
 * @file evolution.hpp
 * @brief The evolution family G(t,s) realized by exhaustion, discrete
 *        transition kernels, and checks of the operator identities.
 */

#include "kolmo/csv.hpp"
#include "kolmo/parallel.hpp"
#include "kolmo/solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace kolmo {

/// Numerical settings shared by everything built on G(t,s).
struct Discretization {
    double R0 = 8.0;
    double h = 0.05;
    double dt = 1e-3;
    double theta = 0.5;
    Boundary bc = Boundary::Neumann;
    double K = 4.0;  ///< reporting compact B_K, default R0/2
    double tol = 1e-6;
    int max_refinements = 4;
    int snapshots = 4;
    double eps_cons = 1e-3;
    int workers = 1;

    ExhaustSettings exhaust_settings() const {
        ExhaustSettings e;
        e.R0 = R0;
        e.h = h;
        e.dt = dt;
        e.theta = theta;
        e.bc = bc;
        e.tol = tol;
        e.max_refinements = max_refinements;
        e.snapshots = snapshots;
        return e;
    }

    void validate() const {
        if (!(h > 0.0 && dt > 0.0)) throw ConfigError("h and dt must be positive");
        if (!(K > 0.0 && K < R0)) throw ConfigError("reporting radius K must lie in (0, R0)");
        if (theta < 0.5 || theta > 1.0) throw ConfigError("theta must lie in [0.5, 1]");
        if (!(eps_cons > 0.0)) throw ConfigError("eps_cons must be positive");
        (void)Grid(1, R0, h);
        (void)Grid(1, K, h);
    }
};

struct KernelEstimate {
    double s = 0.0, t = 0.0;
    Grid grid;                          ///< target cells are the nodes of this box
    std::vector<std::size_t> sources;   ///< node indices in grid
    Eigen::MatrixXd P;                  ///< P(i, j) ~ p_{t,s}(x_{sources[i]}, cell_j)
    std::vector<double> mass_defect;    ///< 1 - row sum

    double max_mass_defect() const {
        double m = 0.0;
        for (double v : mass_defect) m = std::max(m, std::abs(v));
        return m;
    }
    double min_entry() const { return P.size() ? P.minCoeff() : 0.0; }

    /// Entries P(i, j) for target nodes within the ball B_K.
    double min_entry_within(double K) const {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t j : grid.nodes_within(K)) m = std::min(m, P.col(static_cast<Eigen::Index>(j)).minCoeff());
        return m;
    }

    void write_csv(std::ostream& out) const {
        CsvWriter w(out);
        w.meta("s", format_double(s));
        w.meta("t", format_double(t));
        w.header({"i", "j", "P"});
        for (Eigen::Index i = 0; i < P.rows(); ++i)
            for (Eigen::Index j = 0; j < P.cols(); ++j)
                w.row({double(i), double(j), P(i, j)});
    }

    void write_metadata(std::ostream& out) const {
        CsvWriter w(out);
        w.meta("s", format_double(s));
        w.meta("t", format_double(t));
        w.meta("grid", "d=" + std::to_string(grid.dim()) + " R=" + format_double(grid.radius()) +
                           " h=" + format_double(grid.h()));
        w.header({"i", "node", "x1", "mass_defect"});
        for (std::size_t i = 0; i < sources.size(); ++i)
            w.row({double(i), double(sources[i]), grid.coordinate(sources[i], 0), mass_defect[i]});
    }
};

/// Total variation distance between two nonnegative vectors of cell masses.
inline double total_variation(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("total variation of vectors of different length");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
}

enum class KernelMode { Columns, Adjoint };

/**
 * Discrete kernel on the box of radius R0. Columns: the nodal indicator of every
 * box node is pushed forward and read at the sources. Adjoint: each source
 * indicator is pulled back by transposed steps. Both give the same matrix.
 */
inline KernelEstimate compute_kernel(const CoefficientField& cf, double s, double t, const Discretization& disc,
                                     KernelMode mode = KernelMode::Columns, std::vector<std::size_t> sources = {}) {
    disc.validate();
    if (t < s) throw Error("kernel needs s <= t");
    KernelEstimate k;
    k.s = s;
    k.t = t;
    k.grid = Grid(cf.dim(), disc.R0, disc.h);
    if (sources.empty()) sources = k.grid.nodes_within(disc.K);
    for (std::size_t i : sources)
        if (i >= k.grid.size() || k.grid.norm(i) > disc.K * (1 + 1e-12)) throw Error("kernel source outside the reporting compact");
    k.sources = std::move(sources);
    const auto n = static_cast<Eigen::Index>(k.grid.size());
    const auto m = static_cast<Eigen::Index>(k.sources.size());
    const int steps = step_count(s, t, disc.dt);
    k.P.resize(m, n);

    if (mode == KernelMode::Columns) {
        std::mutex mu;
        parallel_for(static_cast<std::size_t>(n), disc.workers, [&](std::size_t b, std::size_t e) {
            const auto cols = static_cast<Eigen::Index>(e - b);
            Eigen::MatrixXd U = Eigen::MatrixXd::Zero(n, cols);
            for (Eigen::Index c = 0; c < cols; ++c) U(static_cast<Eigen::Index>(b) + c, c) = 1.0;
            ThetaStepper st(cf, k.grid, disc.bc, disc.theta);
            for (int j = 1; j <= steps; ++j) st.step_batch(U, step_time(s, t, steps, j - 1), step_time(s, t, steps, j));
            std::lock_guard lock(mu);
            for (Eigen::Index i = 0; i < m; ++i)
                k.P.row(i).segment(static_cast<Eigen::Index>(b), cols) = U.row(static_cast<Eigen::Index>(k.sources[static_cast<std::size_t>(i)]));
        });
    } else {
        std::mutex mu;
        parallel_for(static_cast<std::size_t>(m), disc.workers, [&](std::size_t b, std::size_t e) {
            const auto cols = static_cast<Eigen::Index>(e - b);
            Eigen::MatrixXd V = Eigen::MatrixXd::Zero(n, cols);
            for (Eigen::Index c = 0; c < cols; ++c)
                V(static_cast<Eigen::Index>(k.sources[b + static_cast<std::size_t>(c)]), c) = 1.0;
            ThetaStepper st(cf, k.grid, disc.bc, disc.theta);
            for (int j = steps; j >= 1; --j)
                st.step_transposed_batch(V, step_time(s, t, steps, j - 1), step_time(s, t, steps, j));
            std::lock_guard lock(mu);
            k.P.middleRows(static_cast<Eigen::Index>(b), cols) = V.transpose();
        });
    }

    k.mass_defect.resize(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        k.mass_defect[static_cast<std::size_t>(i)] = 1.0 - k.P.row(i).sum();
        if (std::abs(k.mass_defect[static_cast<std::size_t>(i)]) > 10.0 * disc.eps_cons)
            throw NumericalError("kernel leaked off the computational box (row mass defect " +
                                 format_double(k.mass_defect[static_cast<std::size_t>(i)]) + "); enlarge R0");
    }
    return k;
}

/**
 * G(t,s) for s <= t. Immutable; the kernel is computed once on first request
 * and shared afterwards.
 */
class EvolutionOperator {
public:
    EvolutionOperator(CoefficientField cf, double s, double t, Discretization disc = {})
        : cf_(std::move(cf)), s_(s), t_(t), disc_(disc), kernel_(std::make_shared<KernelCache>()) {
        if (t < s) throw Error("evolution operator needs s <= t");
        disc_.validate();
    }

    double s() const { return s_; }
    double t() const { return t_; }
    const CoefficientField& field() const { return cf_; }
    const Discretization& discretization() const { return disc_; }

    /// Exhaustion run; throws BudgetExceeded when the tolerance is not reached.
    ExhaustResult run(const InitialData& f, std::vector<double> output_times = {}) const {
        auto cfg = disc_.exhaust_settings();
        cfg.output_times = std::move(output_times);
        auto r = exhaust(cf_, f, s_, t_, disc_.K, cfg);
        if (!r.converged)
            throw BudgetExceeded("exhaustion gap " + format_double(r.gap) + " above tol " + format_double(disc_.tol) +
                                 " after " + std::to_string(disc_.max_refinements) + " refinements");
        return r;
    }

    /// G(t,s)f on the largest exhaustion box.
    FieldSample apply_full(const InitialData& f) const { return run(f).trajectory.back(); }

    /// G(t,s)f on the reporting box [-K, K]^d.
    FieldSample apply(const InitialData& f) const {
        if (t_ == s_) {
            FieldSample out = detail::initial_on(f, Grid(cf_.dim(), disc_.K, disc_.h), s_);
            return out;
        }
        return restrict_to_box(apply_full(f), disc_.K);
    }

    const KernelEstimate& kernel() const {
        std::call_once(kernel_->once, [&] { kernel_->value = compute_kernel(cf_, s_, t_, disc_); });
        return *kernel_->value;
    }

private:
    struct KernelCache {
        std::once_flag once;
        std::optional<KernelEstimate> value;
    };

    CoefficientField cf_;
    double s_, t_;
    Discretization disc_;
    std::shared_ptr<KernelCache> kernel_;
};

/// Sup over the nodes of B_K (of the box grid) of |a - b|.
inline double sup_diff_within(const FieldSample& a, const FieldSample& b, double K) {
    if (!(a.grid == b.grid)) throw Error("samples on different grids");
    double m = 0.0;
    for (std::size_t n : a.grid.nodes_within(K)) m = std::max(m, std::abs(a.values[n] - b.values[n]));
    return m;
}

inline double sup_within(const FieldSample& a, double K) {
    double m = 0.0;
    for (std::size_t n : a.grid.nodes_within(K)) m = std::max(m, std::abs(a.values[n]));
    return m;
}

// ---------------------------------------------------------------------------
// corpus
// ---------------------------------------------------------------------------

struct TestFunction {
    std::string name;
    Expression f;
    bool bounded = true;
    bool nonnegative = false;
};

/// Constants, coordinates, Gaussians (seeded centers), a smoothed indicator and sin(x1).
inline std::vector<TestFunction> standard_corpus(int d, std::uint64_t seed = 1) {
    std::vector<TestFunction> c;
    c.push_back({"one", Expression::constant(1.0, d), true, true});
    c.push_back({"const", Expression::constant(-0.5, d), true, false});
    for (int i = 0; i < d; ++i) c.push_back({"x" + std::to_string(i + 1), Expression::coord(i, d), false, false});
    c.push_back({"gauss0", expr::exp(-0.5 * expr::abs2(d)), true, true});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int g = 1; g <= 2; ++g) {
        Expression r2 = Expression::constant(0.0, d);
        for (int i = 0; i < d; ++i) r2 = r2 + expr::pow(Expression::coord(i, d) - u(rng), 2);
        c.push_back({"gauss" + std::to_string(g), expr::exp(-2.0 * r2), true, true});
    }
    c.push_back({"smooth-step", 1.0 / (1.0 + expr::exp(-4.0 * Expression::coord(0, d))), true, true});
    c.push_back({"sin", expr::sin(Expression::coord(0, d)), true, false});
    return c;
}

/// 1_{x1 > 0}, with value 1/2 on the hyperplane x1 = 0.
inline Expression half_space_indicator(int d) {
    const Expression x = Expression::coord(0, d);
    return 0.5 * (1.0 + x / expr::sqrt(expr::pow(x, 2) + 1e-300));
}

// ---------------------------------------------------------------------------
// operator identities
// ---------------------------------------------------------------------------

/// max over the corpus of sup_{B_K} |G(t,r)G(r,s)f - G(t,s)f|.
inline double check_chapman_kolmogorov(const CoefficientField& cf, double s, double r, double t,
                                       const std::vector<Expression>& corpus, const Discretization& disc = {}) {
    if (!(s <= r && r <= t)) throw Error("Chapman-Kolmogorov needs s <= r <= t");
    double worst = 0.0;
    const EvolutionOperator inner(cf, s, r, disc), outer(cf, r, t, disc), whole(cf, s, t, disc);
    for (const auto& f : corpus) {
        if (r == s) continue;
        const FieldSample mid = inner.apply_full(f);
        const FieldSample lhs = r == t ? restrict_to_box(mid, disc.K) : outer.apply(mid);
        worst = std::max(worst, sup_diff_within(lhs, whole.apply(f), disc.K));
    }
    return worst;
}

/**
 * sup_{B_K} |(G(t,s+delta)f - G(t,s-delta)f)/(2 delta) + G(t,s)A(s)f|.
 * s - delta must lie in the time interval and s + delta <= t.
 */
inline double s_derivative_residual(const CoefficientField& cf, double t, double s, const Expression& f,
                                    const Discretization& disc = {}, double delta = 1e-3) {
    if (!(s + delta <= t)) throw Error("s-derivative needs s + delta <= t");
    if (!cf.interval().contains(s - delta)) throw Error("s - delta outside the time interval");
    const Expression af = cf.apply_generator(f).substitute(expr::Var::time(), Expression::constant(s, cf.dim()));
    const auto up = EvolutionOperator(cf, s + delta, t, disc).apply(f);
    const auto down = EvolutionOperator(cf, s - delta, t, disc).apply(f);
    const auto gaf = EvolutionOperator(cf, s, t, disc).apply(af);
    double m = 0.0;
    for (std::size_t n : up.grid.nodes_within(disc.K))
        m = std::max(m, std::abs((up.values[n] - down.values[n]) / (2.0 * delta) + gaf.values[n]));
    return m;
}

struct LipschitzReport {
    std::vector<double> h;
    std::vector<double> lipschitz;  ///< discrete Lipschitz constant on B_K per spacing
    bool stabilized = false;        ///< last successive ratio in [0.8, 1.25]
};

/// Max over axes and adjacent node pairs inside B_K of |u(x + h e_a) - u(x)| / h.
inline double discrete_lipschitz(const FieldSample& u, double K) {
    const Grid& g = u.grid;
    double m = 0.0;
    for (std::size_t n : g.nodes_within(K)) {
        auto o = g.offsets(n);
        for (int a = 0; a < g.dim(); ++a) {
            auto p = o;
            ++p[static_cast<std::size_t>(a)];
            if (!g.contains_offsets(p)) continue;
            const auto j = g.index(p);
            if (g.norm(j) > K * (1 + 1e-12)) continue;
            m = std::max(m, std::abs(u.values[j] - u.values[n]) / g.h());
        }
    }
    return m;
}

/// Discrete Lipschitz constant of G(t,s)f over a spacing ladder (h halves each rung).
inline LipschitzReport check_strong_feller(const CoefficientField& cf, double t, double s, const Expression& f,
                                           Discretization disc = {}, int rungs = 3) {
    if (!(t > s)) throw Error("strong Feller check needs t > s");
    LipschitzReport rep;
    double h = disc.h;
    for (int k = 0; k < rungs; ++k, h *= 0.5) {
        Discretization dk = disc;
        dk.h = h;
        const auto u = EvolutionOperator(cf, s, t, dk).apply(f);
        rep.h.push_back(h);
        rep.lipschitz.push_back(discrete_lipschitz(u, disc.K));
    }
    if (rep.lipschitz.size() >= 2) {
        const double ratio = rep.lipschitz.back() / rep.lipschitz[rep.lipschitz.size() - 2];
        rep.stabilized = std::isfinite(ratio) && ratio >= 0.8 && ratio <= 1.25;
    }
    return rep;
}

struct Probe {
    double t = 0.0, s = 0.0;
    Point x;
};

struct OscillationReport {
    std::vector<double> radius;
    std::vector<double> oscillation;  ///< max over probes, per radius
    bool decreasing = false;
};

/**
 * Oscillation of (t,s,x) -> G(t,s)f(x) over the neighborhood
 * {t0 - r, t0, t0 + r} x {s0 - r, s0, s0 + r} x (x0 +- r e_a), restricted to
 * s <= t (one-sided at the diagonal). Radii must be multiples of h and dt.
 */
inline OscillationReport check_joint_continuity(const CoefficientField& cf, const Expression& f,
                                                const std::vector<Probe>& probes, const std::vector<double>& radii,
                                                const Discretization& disc = {}) {
    OscillationReport rep;
    rep.radius = radii;
    for (double r : radii) {
        double worst = 0.0;
        for (const auto& p : probes) {
            std::vector<double> ts{p.t - r, p.t, p.t + r};
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (double s : {p.s - r, p.s, p.s + r}) {
                if (!cf.interval().contains(s)) continue;
                std::vector<double> out;
                for (double t : ts)
                    if (t >= s) out.push_back(t);
                if (out.empty()) continue;
                const double tmax = out.back();
                auto cfg = disc.exhaust_settings();
                cfg.output_times = out;
                const auto res = exhaust(cf, f, s, tmax, disc.K, cfg);
                for (const auto& u : res.trajectory.samples) {
                    std::vector<Point> xs{p.x};
                    for (int a = 0; a < cf.dim(); ++a)
                        for (double sg : {-1.0, 1.0}) {
                            Point y = p.x;
                            y[static_cast<std::size_t>(a)] += sg * r;
                            xs.push_back(y);
                        }
                    for (const auto& y : xs) {
                        const double v = u.value_at(y);
                        lo = std::min(lo, v);
                        hi = std::max(hi, v);
                    }
                }
            }
            worst = std::max(worst, hi - lo);
        }
        rep.oscillation.push_back(worst);
    }
    rep.decreasing = true;
    for (std::size_t k = 1; k < rep.oscillation.size(); ++k)
        rep.decreasing = rep.decreasing && rep.oscillation[k] <= rep.oscillation[k - 1] + 1e-12;
    return rep;
}

} // namespace kolmo
