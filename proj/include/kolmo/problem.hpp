#pragma once

/**
 * @file problem.hpp
 * @brief Hypothesis checks on a dense deterministic lattice, estimated
 *        constants (eta_0, k_0, rho_0, lambda_J, a, c, t_0, sigma_p) and the
 *        Lyapunov bound calculator for the drift family b(t,x) = C(t)x + b(t,0).
 */

#include "kolmo/coefficients.hpp"
#include "kolmo/csv.hpp"
#include "kolmo/error.hpp"
#include "kolmo/expr.hpp"
#include "kolmo/grid.hpp"
#include "kolmo/parallel.hpp"

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace kolmo {

/**
 * Verification lattice: n_times equispaced times on [t_min, t_max] times the
 * origin plus n_radial equispaced rings up to `radius` along n_directions
 * directions (two directions in 1D). Unit vectors xi for quadratic forms are
 * the extremal eigenvector plus n_xi seeded random directions.
 */
struct Lattice {
    double t_min = 0.0;
    double t_max = 10.0;
    int n_times = 41;
    double radius = 16.0;
    int n_radial = 64;
    int n_directions = 16;
    int n_xi = 8;
    std::uint64_t seed = 1;
    int workers = 1;

    std::vector<double> times() const {
        std::vector<double> t(static_cast<std::size_t>(n_times));
        for (int k = 0; k < n_times; ++k)
            t[static_cast<std::size_t>(k)] = n_times == 1 ? t_min : t_min + (t_max - t_min) * k / (n_times - 1);
        return t;
    }

    std::vector<Point> directions(int d) const {
        std::vector<Point> dirs;
        if (d == 1) return {{1.0}, {-1.0}};
        if (d == 2) {
            for (int j = 0; j < n_directions; ++j) {
                const double a = 2.0 * std::numbers::pi * j / n_directions;
                dirs.push_back({std::cos(a), std::sin(a)});
            }
            return dirs;
        }
        const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        for (int j = 0; j < n_directions; ++j) {
            const double z = 1.0 - 2.0 * (j + 0.5) / n_directions;
            const double r = std::sqrt(1.0 - z * z);
            dirs.push_back({r * std::cos(golden * j), r * std::sin(golden * j), z});
        }
        return dirs;
    }

    std::size_t direction_count(int d) const { return directions(d).size(); }

    /// Origin first, then ring by ring (ring k = 1..n_radial), direction fastest.
    std::vector<Point> points(int d) const {
        std::vector<Point> pts{Point(static_cast<std::size_t>(d), 0.0)};
        const auto dirs = directions(d);
        for (int k = 1; k <= n_radial; ++k) {
            const double r = radius * k / n_radial;
            for (const auto& u : dirs) {
                Point p(u.size());
                for (std::size_t a = 0; a < u.size(); ++a) p[a] = r * u[a];
                pts.push_back(std::move(p));
            }
        }
        return pts;
    }

    int ring(std::size_t point, int d) const {
        return point == 0 ? 0 : 1 + static_cast<int>((point - 1) / direction_count(d));
    }

    std::vector<std::vector<double>> xi_samples(int d) const {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> n01;
        std::vector<std::vector<double>> out;
        for (int k = 0; k < n_xi; ++k) {
            std::vector<double> v(static_cast<std::size_t>(d));
            double s = 0.0;
            for (auto& x : v) { x = n01(rng); s += x * x; }
            for (auto& x : v) x /= std::sqrt(s);
            out.push_back(std::move(v));
        }
        return out;
    }

    std::string describe(int d) const {
        std::ostringstream s;
        s << "t in [" << format_double(t_min) << ", " << format_double(t_max) << "] x " << n_times
          << " points; rings 0.." << n_radial << " up to R=" << format_double(radius) << " x "
          << direction_count(d) << " directions; xi: eigenvector + " << n_xi << " random (seed " << seed << ")";
        return s.str();
    }
};

enum class Verdict { Pass, Fail, FailUnbounded, NotApplicable };

inline const char* to_string(Verdict v) {
    switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Fail: return "fail";
    case Verdict::FailUnbounded: return "fail-unbounded";
    case Verdict::NotApplicable: return "n/a";
    }
    return "?";
}

struct Witness {
    double t = 0.0;
    Point x;
    std::vector<double> xi;
    double value = 0.0;

    std::string describe() const {
        std::string s = "t=" + format_double(t) + ";x=(";
        for (std::size_t i = 0; i < x.size(); ++i) s += (i ? " " : "") + format_double(x[i]);
        s += ")";
        if (!xi.empty()) {
            s += ";xi=(";
            for (std::size_t i = 0; i < xi.size(); ++i) s += (i ? " " : "") + format_double(xi[i]);
            s += ")";
        }
        return s + ";value=" + format_double(value);
    }
};

struct CheckResult {
    std::string name;
    Verdict verdict = Verdict::NotApplicable;
    std::vector<std::pair<std::string, double>> constants;
    std::optional<Witness> witness;
    std::string note;

    bool pass() const { return verdict == Verdict::Pass; }

    double constant(const std::string& key) const {
        for (const auto& [k, v] : constants)
            if (k == key) return v;
        throw Error("check " + name + " has no constant " + key);
    }
    bool has(const std::string& key) const {
        for (const auto& kv : constants)
            if (kv.first == key) return true;
        return false;
    }
};

struct HypothesisReport {
    std::string lattice;
    std::vector<CheckResult> checks;

    bool all_pass() const {
        for (const auto& c : checks)
            if (c.verdict == Verdict::Fail || c.verdict == Verdict::FailUnbounded) return false;
        return true;
    }

    const CheckResult& get(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return c;
        throw Error("report has no check " + name);
    }

    void write_text(std::ostream& out) const {
        out << "lattice: " << lattice << '\n';
        for (const auto& c : checks) {
            out << c.name << ": " << to_string(c.verdict);
            for (const auto& [k, v] : c.constants) out << ' ' << k << '=' << format_double(v);
            if (c.witness) out << " witness[" << c.witness->describe() << ']';
            if (!c.note.empty()) out << " (" << c.note << ')';
            out << '\n';
        }
    }

    void write_csv(std::ostream& out) const {
        CsvWriter w(out);
        w.meta("lattice", lattice);
        w.header({"name", "verdict", "constants", "witness", "note"});
        for (const auto& c : checks) {
            std::string consts;
            for (const auto& [k, v] : c.constants) consts += (consts.empty() ? "" : ";") + k + "=" + format_double(v);
            w.row_strings({c.name, to_string(c.verdict), consts, c.witness ? c.witness->describe() : "", c.note});
        }
    }
};

namespace detail {

inline double min_eigenvalue(const Eigen::MatrixXd& m) {
    if (m.rows() == 1) return m(0, 0);
    if (m.rows() == 2) {
        const double a = m(0, 0), c = m(1, 1), o = 0.5 * (m(0, 1) + m(1, 0));
        if (o == 0.0) return std::min(a, c);
        return 0.5 * (a + c) - std::sqrt(0.25 * (a - c) * (a - c) + o * o);
    }
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

/// Largest eigenvalue and a unit eigenvector of a symmetric matrix.
inline std::pair<double, std::vector<double>> max_eigenpair(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const auto n = m.rows();
    const Eigen::VectorXd v = es.eigenvectors().col(n - 1);
    return {es.eigenvalues()(n - 1), std::vector<double>(v.data(), v.data() + n)};
}

/// Values of fn(t, x) over the lattice, row per time.
struct Table {
    std::vector<double> times;
    std::vector<Point> points;
    std::vector<double> v;

    double at(std::size_t ti, std::size_t pi) const { return v[ti * points.size() + pi]; }
    std::size_t np() const { return points.size(); }

    struct Arg {
        std::size_t ti = 0, pi = 0;
        double value = -std::numeric_limits<double>::infinity();
    };

    template <class Pred>
    Arg argmax(Pred keep) const {
        Arg best;
        for (std::size_t ti = 0; ti < times.size(); ++ti)
            for (std::size_t pi = 0; pi < np(); ++pi)
                if (keep(ti, pi) && at(ti, pi) > best.value) best = {ti, pi, at(ti, pi)};
        return best;
    }
    Arg argmax() const { return argmax([](std::size_t, std::size_t) { return true; }); }

    Witness witness(const Arg& a) const { return {times[a.ti], points[a.pi], {}, a.value}; }
};

template <class Fn>
Table tabulate(const Lattice& lat, int d, Fn fn) {
    Table tab{lat.times(), lat.points(d), {}};
    tab.v.resize(tab.times.size() * tab.np());
    parallel_for(tab.times.size(), lat.workers, [&](std::size_t b, std::size_t e) {
        for (std::size_t ti = b; ti < e; ++ti)
            for (std::size_t pi = 0; pi < tab.np(); ++pi) {
                const double val = fn(tab.times[ti], tab.points[pi]);
                if (!std::isfinite(val))
                    throw CheckError("non-finite value on the lattice at t=" + format_double(tab.times[ti]));
                tab.v[ti * tab.np() + pi] = val;
            }
    });
    return tab;
}

/// Maximum over rings of the table restricted to ring k (all times and directions).
inline std::vector<double> ring_max(const Table& tab, const Lattice& lat, int d) {
    std::vector<double> m(static_cast<std::size_t>(lat.n_radial + 1), -std::numeric_limits<double>::infinity());
    for (std::size_t ti = 0; ti < tab.times.size(); ++ti)
        for (std::size_t pi = 0; pi < tab.np(); ++pi) {
            auto& slot = m[static_cast<std::size_t>(lat.ring(pi, d))];
            slot = std::max(slot, tab.at(ti, pi));
        }
    return m;
}

/// A sup is treated as unbounded when it is attained on the outer ring and still grows over the last quarter.
inline bool grows_at_boundary(const Table& tab, const Lattice& lat, int d) {
    const auto m = ring_max(tab, lat, d);
    const double outer = m.back();
    const double inner = m[static_cast<std::size_t>(3 * lat.n_radial / 4)];
    const double all = *std::max_element(m.begin(), m.end());
    return outer >= all && outer - inner > 1e-6 * std::max(1.0, std::abs(outer));
}

/// Local maximization of g(t) on [lo, hi] around a lattice maximizer (Brent).
template <class G>
std::pair<double, double> refine_max(G g, double t, double lo, double hi) {
    if (!(hi > lo)) return {t, g(t)};
    const auto r = boost::math::tools::brent_find_minima([&](double s) { return -g(s); }, lo, hi, 50);
    const double best = -r.second;
    return best > g(t) ? std::pair{r.first, best} : std::pair{t, g(t)};
}

inline std::vector<expr::Program> compile(const std::vector<Expression>& es) {
    std::vector<expr::Program> out;
    for (const auto& e : es) out.emplace_back(e);
    return out;
}

inline Eigen::MatrixXd eval_q(const std::vector<expr::Program>& q, int d, double t, const Point& x) {
    Eigen::MatrixXd m(d, d);
    std::size_t k = 0;
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j, ++k) m(i, j) = m(j, i) = q[k](t, x);
    return m;
}

} // namespace detail

// ---------------------------------------------------------------------------
// ellipticity
// ---------------------------------------------------------------------------

/// eta_0 = min over the lattice of the smallest eigenvalue of Q(t,x).
inline CheckResult check_ellipticity(const CoefficientField& cf, const Lattice& lat, double tol = 1e-12) {
    const int d = cf.dim();
    const auto q = detail::compile(cf.diffusion_upper());
    const auto tab = detail::tabulate(lat, d, [&](double t, const Point& x) {
        return -detail::min_eigenvalue(detail::eval_q(q, d, t, x));
    });
    auto arg = tab.argmax();
    CheckResult r{"H1(ii)", Verdict::Pass, {}, tab.witness(arg), ""};
    double eta0 = -arg.value;
    if (cf.diffusion_space_independent()) {
        const Point x0 = tab.points[arg.pi];
        const double h = (lat.t_max - lat.t_min) / std::max(1, lat.n_times - 1);
        const auto [t, v] = detail::refine_max(
            [&](double s) { return -detail::min_eigenvalue(detail::eval_q(q, d, s, x0)); }, tab.times[arg.ti],
            std::max(lat.t_min, tab.times[arg.ti] - h), std::min(lat.t_max, tab.times[arg.ti] + h));
        eta0 = -v;
        r.witness->t = t;
    }
    r.witness->value = eta0;
    r.constants.emplace_back("eta_0", eta0);
    if (!(eta0 > tol)) {
        r.verdict = Verdict::Fail;
        r.note = "smallest eigenvalue of Q not positive";
    }
    return r;
}

// ---------------------------------------------------------------------------
// dissipativity: k(t), k_0, rho, rho_0, sup r
// ---------------------------------------------------------------------------

struct DissipativityReport {
    double k0 = 0.0;      ///< sup of lambda_max(sym grad b)
    double rho0 = 0.0;    ///< sup |D_k q_ij| / sqrt(eta)
    double rho = 0.0;     ///< sup |D_k q_ij| / eta (rho(t) bounded by this)
    double sup_r = 0.0;   ///< sup of r(t,x) + d^3 rho(t)^2 eta / (4 min(p0-1, 1))
    double p0 = 2.0;
    CheckResult h2, h3i, h3ii;
};

/**
 * Estimates the constants of the dissipativity hypotheses. r(t,x) is taken as
 * lambda_max of the symmetric part of grad_x b, eta as lambda_min(Q).
 */
inline DissipativityReport check_dissipativity(const CoefficientField& cf, const Lattice& lat, double p0 = 2.0) {
    const int d = cf.dim();
    if (p0 <= 1.0) throw CheckError("p_0 must exceed 1");
    std::vector<Expression> jac, dq;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) jac.push_back(cf.b(i).diff_x(j));
    for (const auto& q : cf.diffusion_upper())
        for (int k = 0; k < d; ++k) dq.push_back(q.diff_x(k));
    const auto jp = detail::compile(jac);
    const auto dqp = detail::compile(dq);
    const auto qp = detail::compile(cf.diffusion_upper());
    const auto xis = lat.xi_samples(d);

    auto sym_grad = [&](double t, const Point& x) {
        Eigen::MatrixXd m(d, d);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) m(i, j) = jp[static_cast<std::size_t>(i * d + j)](t, x);
        return Eigen::MatrixXd(0.5 * (m + m.transpose()));
    };
    // largest quadratic form over the eigenvector and the sampled directions
    auto r_value = [&](double t, const Point& x) {
        const Eigen::MatrixXd s = sym_grad(t, x);
        double best = detail::max_eigenpair(s).first;
        for (const auto& xi : xis) {
            const Eigen::Map<const Eigen::VectorXd> v(xi.data(), d);
            best = std::max(best, v.dot(s * v));
        }
        return best;
    };
    auto dq_max = [&](double t, const Point& x) {
        double m = 0.0;
        for (const auto& p : dqp) m = std::max(m, std::abs(p(t, x)));
        return m;
    };
    auto eta = [&](double t, const Point& x) { return detail::min_eigenvalue(detail::eval_q(qp, d, t, x)); };

    DissipativityReport rep;
    rep.p0 = p0;
    const auto r_tab = detail::tabulate(lat, d, r_value);
    const auto rho0_tab = detail::tabulate(lat, d, [&](double t, const Point& x) {
        const double e = eta(t, x);
        if (!(e > 0.0)) throw CheckError("Q not positive definite on the lattice");
        return dq_max(t, x) / std::sqrt(e);
    });
    const auto rho_tab = detail::tabulate(lat, d, [&](double t, const Point& x) { return dq_max(t, x) / eta(t, x); });

    // k_0 with a local refinement in t at the maximizer
    auto karg = r_tab.argmax();
    rep.k0 = karg.value;
    Witness kw = r_tab.witness(karg);
    {
        const Point x0 = r_tab.points[karg.pi];
        const double h = (lat.t_max - lat.t_min) / std::max(1, lat.n_times - 1);
        const auto [t, v] = detail::refine_max([&](double s) { return r_value(s, x0); }, kw.t,
                                               std::max(lat.t_min, kw.t - h), std::min(lat.t_max, kw.t + h));
        rep.k0 = v;
        kw.t = t;
        kw.value = v;
        kw.xi = detail::max_eigenpair(sym_grad(t, x0)).second;
    }
    rep.rho0 = rho0_tab.argmax().value;
    rep.rho = rho_tab.argmax().value;

    // rho(t) = sup_x |Dq| / eta at each lattice time
    std::vector<double> rho_t(r_tab.times.size(), 0.0);
    for (std::size_t ti = 0; ti < rho_t.size(); ++ti)
        for (std::size_t pi = 0; pi < rho_tab.np(); ++pi) rho_t[ti] = std::max(rho_t[ti], rho_tab.at(ti, pi));
    const double dd = static_cast<double>(d) * d * d;
    const double denom = 4.0 * std::min(p0 - 1.0, 1.0);
    detail::Table h3_tab = r_tab;
    for (std::size_t ti = 0; ti < h3_tab.times.size(); ++ti)
        for (std::size_t pi = 0; pi < h3_tab.np(); ++pi)
            h3_tab.v[ti * h3_tab.np() + pi] +=
                dd * rho_t[ti] * rho_t[ti] * eta(h3_tab.times[ti], h3_tab.points[pi]) / denom;
    const auto h3arg = h3_tab.argmax();
    rep.sup_r = h3arg.value;

    const bool k_unb = detail::grows_at_boundary(r_tab, lat, d);
    const bool rho0_unb = detail::grows_at_boundary(rho0_tab, lat, d);
    const bool rho_unb = detail::grows_at_boundary(rho_tab, lat, d);
    const bool h3_unb = detail::grows_at_boundary(h3_tab, lat, d);

    rep.h2 = {"H2", Verdict::Pass, {{"k_sup", rep.k0}, {"rho", rep.rho}}, kw, "k(t) and rho(t) finite on the lattice"};
    if (k_unb || rho_unb) {
        rep.h2.verdict = Verdict::FailUnbounded;
        rep.h2.note = k_unb ? "sup_x of lambda_max(sym grad b) exceeds the lattice bound" : "rho(t) unbounded in x";
    }
    rep.h3ii = {"H3(ii)", Verdict::Pass, {{"k_0", rep.k0}, {"rho_0", rep.rho0}}, kw, ""};
    if (k_unb || rho0_unb) {
        rep.h3ii.verdict = Verdict::FailUnbounded;
        rep.h3ii.note = k_unb ? "k_0 exceeds the lattice bound" : "rho_0 exceeds the lattice bound";
    }
    rep.h3i = {"H3(i)", Verdict::Pass, {{"sup", rep.sup_r}, {"p_0", p0}}, h3_tab.witness(h3arg), ""};
    if (h3_unb) {
        rep.h3i.verdict = Verdict::FailUnbounded;
        rep.h3i.note = "sup of r + d^3 rho^2 eta / (4 min(p_0-1,1)) exceeds the lattice bound";
    }
    return rep;
}

// ---------------------------------------------------------------------------
// sigma_p
// ---------------------------------------------------------------------------

/// sigma_p = p (k_0 + d^3 rho_0^2 / (4 min(p-1, 1))); p = 1 only with rho_0 = 0, then sigma_1 = k_0.
inline double compute_sigma_p(double p, double k0, double rho0, int d) {
    if (p == 1.0) {
        if (rho0 != 0.0) throw CheckError("p = 1 requires x-independent diffusion (rho_0 = 0)");
        return k0;
    }
    if (!(p > 1.0)) throw CheckError("sigma_p needs p > 1 (or p = 1 with rho_0 = 0)");
    const double dd = static_cast<double>(d) * d * d;
    return p * (k0 + dd * rho0 * rho0 / (4.0 * std::min(p - 1.0, 1.0)));
}

/// sigma_p = p sup(r + d^3 rho^2 eta / (4 min(p_0-1, 1))) for p >= p_0.
inline double compute_sigma_p_sup(double p, double p0, double sup_value) {
    if (p < p0) throw CheckError("sigma_p from the r-variant needs p >= p_0");
    return p * sup_value;
}

// ---------------------------------------------------------------------------
// Lyapunov functions
// ---------------------------------------------------------------------------

enum class LyapunovKind { H1iii, H4, H34 };

struct LyapunovCandidate {
    Expression phi;
    LyapunovKind kind = LyapunovKind::H34;
    std::optional<double> a, c;  ///< user constants for the H4 inequality
    double t0 = 0.0;
};

namespace detail {

/// phi must grow along every lattice direction and be nondecreasing beyond half the radius.
inline void require_radial_divergence(const Expression& phi, const Lattice& lat) {
    const int d = phi.dim();
    const expr::Program p(phi);
    const auto pts = lat.points(d);
    const std::size_t nd = lat.direction_count(d);
    const int half = lat.n_radial / 2;
    for (std::size_t j = 0; j < nd; ++j) {
        auto at_ring = [&](int k) { return p(lat.t_min, pts[1 + static_cast<std::size_t>(k - 1) * nd + j]); };
        double prev = at_ring(std::max(1, half));
        for (int k = std::max(1, half) + 1; k <= lat.n_radial; ++k) {
            const double v = at_ring(k);
            if (v < prev - 1e-12 * std::max(1.0, std::abs(prev)))
                throw CheckError("phi is not radially divergent on the lattice (decreases beyond R/2)");
            prev = v;
        }
        if (!(prev > at_ring(std::max(1, half)))) throw CheckError("phi is not radially divergent on the lattice");
    }
}

} // namespace detail

/**
 * lambda_J = max(0, sup A(t)phi / phi) over J x lattice, where phi is shifted
 * by a constant to be >= 1 on the lattice if needed. Passes when the sup is
 * finite and A(t)phi - lambda_J phi is radially nonincreasing on the outer
 * quarter of the lattice.
 */
inline CheckResult check_lyapunov_h1iii(const CoefficientField& cf, const Expression& phi, const Lattice& lat) {
    const int d = cf.dim();
    detail::require_radial_divergence(phi, lat);
    const expr::Program p(phi), ap(cf.apply_generator(phi));
    const auto phi_tab = detail::tabulate(lat, d, [&](double t, const Point& x) { return -p(t, x); });
    const double shift = std::max(0.0, 1.0 + phi_tab.argmax().value);
    const auto ratio = detail::tabulate(lat, d, [&](double t, const Point& x) { return ap(t, x) / (p(t, x) + shift); });
    const auto arg = ratio.argmax();
    const double lambda = std::max(0.0, arg.value);
    CheckResult r{"H1(iii)", Verdict::Pass, {{"lambda_J", lambda}, {"phi_shift", shift}}, ratio.witness(arg), ""};
    if (detail::grows_at_boundary(ratio, lat, d)) {
        r.verdict = Verdict::FailUnbounded;
        r.note = "A(t)phi/phi still grows at the edge of the lattice";
        return r;
    }
    const auto pts = lat.points(d);
    const std::size_t nd = lat.direction_count(d);
    const auto times = lat.times();
    for (std::size_t ti = 0; ti < times.size(); ++ti)
        for (std::size_t j = 0; j < nd; ++j) {
            double prev = std::numeric_limits<double>::infinity();
            for (int k = (3 * lat.n_radial) / 4; k <= lat.n_radial; ++k) {
                const std::size_t pi = 1 + static_cast<std::size_t>(k - 1) * nd + j;
                const double g = ap(times[ti], pts[pi]) - lambda * (p(times[ti], pts[pi]) + shift);
                if (g > prev + 1e-9 * std::max(1.0, std::abs(prev))) {
                    r.verdict = Verdict::Fail;
                    r.witness = Witness{times[ti], pts[pi], {}, g};
                    r.note = "A(t)phi - lambda phi increases on the outer lattice";
                    return r;
                }
                prev = g;
            }
        }
    return r;
}

/**
 * A(t)phi <= a - c phi for t >= t_0 on the lattice (whose window should start
 * at t_0). Without user constants, c = -sup(A phi / phi) over the outer half
 * of the lattice and a = sup(A phi + c phi).
 */
inline CheckResult check_hyp4(const CoefficientField& cf, const LyapunovCandidate& lc, const Lattice& lat) {
    const int d = cf.dim();
    detail::require_radial_divergence(lc.phi, lat);
    const expr::Program p(lc.phi), ap(cf.apply_generator(lc.phi));
    const auto neg_phi = detail::tabulate(lat, d, [&](double t, const Point& x) { return -p(t, x); });
    if (neg_phi.argmax().value > 1e-12) throw CheckError("H4 needs a nonnegative phi");

    CheckResult r{"H4", Verdict::Pass, {}, std::nullopt, ""};
    double a, c;
    if (lc.a && lc.c) {
        a = *lc.a;
        c = *lc.c;
    } else {
        const auto ratio = detail::tabulate(lat, d, [&](double t, const Point& x) {
            const double v = p(t, x);
            return v > 0 ? ap(t, x) / v : -std::numeric_limits<double>::max();
        });
        const auto outer = ratio.argmax([&](std::size_t, std::size_t pi) { return lat.ring(pi, d) > lat.n_radial / 2; });
        c = -outer.value;
        if (!(c > 0.0)) {
            r.verdict = Verdict::Fail;
            r.witness = ratio.witness(outer);
            r.note = "no positive c: A(t)phi/phi >= 0 on the outer lattice";
            r.constants = {{"c", c}, {"t_0", lat.t_min}};
            return r;
        }
        const auto slack = detail::tabulate(lat, d, [&](double t, const Point& x) { return ap(t, x) + c * p(t, x); });
        a = std::max(slack.argmax().value, 1e-12);
    }
    r.constants = {{"a", a}, {"c", c}, {"t_0", lat.t_min}};
    const auto viol = detail::tabulate(lat, d, [&](double t, const Point& x) { return ap(t, x) - (a - c * p(t, x)); });
    const auto worst = viol.argmax();
    r.witness = viol.witness(worst);
    if (!(a > 0.0 && c > 0.0)) {
        r.verdict = Verdict::Fail;
        r.note = "a and c must be positive";
    } else if (worst.value > 1e-9 * std::max(1.0, std::abs(a))) {
        r.verdict = Verdict::Fail;
        r.note = "A(t)phi > a - c phi at the witness";
    }
    return r;
}

/// M_J = sup over J x lattice of A(t)phi; fails when the sup grows at the lattice edge.
inline CheckResult check_hyp5(const CoefficientField& cf, const Expression& phi, const Lattice& lat) {
    const int d = cf.dim();
    detail::require_radial_divergence(phi, lat);
    const expr::Program ap(cf.apply_generator(phi));
    const auto tab = detail::tabulate(lat, d, [&](double t, const Point& x) { return ap(t, x); });
    const auto arg = tab.argmax();
    CheckResult r{"H5", Verdict::Pass, {{"M_J", arg.value}}, tab.witness(arg), ""};
    if (detail::grows_at_boundary(tab, lat, d)) {
        r.verdict = Verdict::FailUnbounded;
        r.note = "A(t)phi unbounded above on the lattice";
    }
    return r;
}

/// Sampling surrogate for local Hoelder regularity: coefficients and their first x-derivatives are finite.
inline CheckResult check_regularity(const CoefficientField& cf, const Lattice& lat) {
    const int d = cf.dim();
    std::vector<Expression> all;
    for (const auto& q : cf.diffusion_upper()) all.push_back(q);
    for (const auto& b : cf.drift()) all.push_back(b);
    const std::size_t base = all.size();
    for (std::size_t k = 0; k < base; ++k)
        for (int i = 0; i < d; ++i) all.push_back(all[k].diff_x(i));
    const auto progs = detail::compile(all);
    CheckResult r{"H1(i)", Verdict::Pass, {}, std::nullopt, "coefficients and first derivatives finite on the lattice"};
    try {
        detail::tabulate(lat, d, [&](double t, const Point& x) {
            double s = 0.0;
            for (const auto& p : progs) s += std::abs(p(t, x));
            return s;
        });
    } catch (const Error& e) {
        r.verdict = Verdict::Fail;
        r.note = e.what();
    }
    return r;
}

// ---------------------------------------------------------------------------
// drift family b(t,x) = C(t) x + b(t,0), Q = I
// ---------------------------------------------------------------------------

struct LinearDriftFamily {
    int d = 1;
    int N = 1;                 ///< Lyapunov order: phi = 1 + |x|^{2N}
    Expression C;              ///< C(t)
    std::vector<Expression> b0;  ///< b(t,0), one entry per coordinate

    CoefficientField field(TimeInterval interval = {}) const {
        std::vector<Expression> q, b;
        for (int i = 0; i < d; ++i)
            for (int j = i; j < d; ++j) q.push_back(Expression::constant(i == j ? 1.0 : 0.0, d));
        for (int i = 0; i < d; ++i) b.push_back(C * Expression::coord(i, d) + b0[static_cast<std::size_t>(i)]);
        return {d, std::move(q), std::move(b), interval};
    }

    Expression phi() const { return 1.0 + expr::pow(expr::abs2(d), N); }

    /// |b(t,0)| as an expression in t.
    Expression b0_norm() const {
        bool zero = true;
        for (const auto& e : b0) zero = zero && e.is_constant() && *e.constant_value() == 0.0;
        if (zero) return Expression::constant(0.0, d);
        if (d == 1) return expr::abs(b0[0]);
        Expression s = Expression::constant(0.0, d);
        for (const auto& e : b0) s = s + expr::pow(e, 2);
        return expr::sqrt(s);
    }
};

/// C_m = (m/(m-1))^{1-m}/m, with the limit value C_1 = 1.
inline double young_constant(double m) {
    if (m == 1.0) return 1.0;
    return std::pow(m / (m - 1.0), 1.0 - m) / m;
}

struct LinearDriftBounds {
    Expression psi1, psi2;  ///< at the requested eps
    double eps = 1.0;
    double limsup_C = 0.0;
    double b0_sup = 0.0;
    double eps_N = 0.0;
    double t0 = 0.0;
    double lambda_bound = 0.0;  ///< max(sup_J psi_1, sup_J psi_2) at eps = 1
    double a = 0.0, c = 0.0;    ///< H4 constants at eps = eps_N, t >= t0
};

/// psi_1, psi_2 of the bound A(t)phi <= psi_1(t)|x|^{2N} + psi_2(t) for the family, as expressions in t.
inline std::pair<Expression, Expression> linear_drift_psi(const LinearDriftFamily& fam, double eps) {
    const double N = fam.N, d = fam.d;
    const double k = 2 * N * (d - 2) + 4 * N * N;
    const Expression nb = fam.b0_norm();
    const Expression psi1 = 2 * N * fam.C + eps * k + (2 * eps * N) * nb;
    const Expression psi2 = Expression::constant(young_constant(N) * k * std::pow(eps, 1 - N), fam.d) +
                            (2 * N * young_constant(2 * N) * std::pow(eps, 1 - 2 * N)) * nb;
    return {psi1, psi2};
}

/**
 * Bounds for the family on the lattice window J. limsup C is estimated over a
 * late window [t_min + late_start, t_min + late_start + late_span]; t_0 is the
 * smallest lattice time from which C(t) < limsup C / 2 holds on the rest of
 * the lattice and on the late window.
 */
inline LinearDriftBounds linear_drift_bounds(const LinearDriftFamily& fam, double eps, const Lattice& lat,
                                             double late_start = 1000.0, double late_span = 50.0) {
    if (!(eps > 0.0)) throw CheckError("eps must be positive");
    LinearDriftBounds out;
    out.eps = eps;
    std::tie(out.psi1, out.psi2) = linear_drift_psi(fam, eps);
    const Point x0(static_cast<std::size_t>(fam.d), 0.0);
    const expr::Program C(fam.C), nb(fam.b0_norm());

    const int late_n = 5001;
    const double late_lo = lat.t_min + late_start;
    double limsup = -std::numeric_limits<double>::infinity(), t_arg = late_lo;
    double b0_sup = 0.0;
    for (int k = 0; k < late_n; ++k) {
        const double t = late_lo + late_span * k / (late_n - 1);
        const double v = C(t, x0);
        if (v > limsup) { limsup = v; t_arg = t; }
        b0_sup = std::max(b0_sup, nb(t, x0));
    }
    const double h = late_span / (late_n - 1);
    limsup = detail::refine_max([&](double t) { return C(t, x0); }, t_arg, std::max(late_lo, t_arg - h),
                                std::min(late_lo + late_span, t_arg + h)).second;
    if (!(limsup < 0.0)) throw CheckError("limsup of C(t) is not negative");
    const auto times = lat.times();
    for (double t : times) b0_sup = std::max(b0_sup, nb(t, x0));
    out.limsup_C = limsup;
    out.b0_sup = b0_sup;
    out.eps_N = -0.5 * limsup / (fam.d - 2 + 2 * fam.N + b0_sup);

    out.t0 = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = times.size(); k-- > 0;) {
        if (!(C(times[k], x0) < 0.5 * limsup)) break;
        out.t0 = times[k];
    }

    const auto [p1, p2] = linear_drift_psi(fam, 1.0);
    const expr::Program P1(p1), P2(p2);
    double s1 = -std::numeric_limits<double>::infinity(), s2 = s1;
    for (double t : times) {
        s1 = std::max(s1, P1(t, x0));
        s2 = std::max(s2, P2(t, x0));
    }
    out.lambda_bound = std::max(s1, s2);

    const auto [q1, q2] = linear_drift_psi(fam, out.eps_N);
    const expr::Program Q1(q1), Q2(q2);
    double m1 = -std::numeric_limits<double>::infinity(), m2 = m1;
    for (double t : times)
        if (!(t < out.t0)) {
            m1 = std::max(m1, Q1(t, x0));
            m2 = std::max(m2, Q2(t, x0));
        }
    out.c = -m1;
    out.a = m2 + out.c;
    return out;
}

/**
 * Structural hypotheses of the family: b(.,0) bounded, C bounded above with
 * negative limsup, and <grad b xi, xi> <= C(t)|xi|^2 on the lattice.
 */
inline CheckResult check_linear_drift_family(const LinearDriftFamily& fam, const Lattice& lat) {
    CheckResult r{"drift-family", Verdict::Pass, {}, std::nullopt, ""};
    const auto cf = fam.field();
    const Point x0(static_cast<std::size_t>(fam.d), 0.0);
    const expr::Program C(fam.C);
    std::vector<Expression> jac;
    for (int i = 0; i < fam.d; ++i)
        for (int j = 0; j < fam.d; ++j) jac.push_back(cf.b(i).diff_x(j));
    const auto jp = detail::compile(jac);
    const auto tab = detail::tabulate(lat, fam.d, [&](double t, const Point& x) {
        Eigen::MatrixXd m(fam.d, fam.d);
        for (int i = 0; i < fam.d; ++i)
            for (int j = 0; j < fam.d; ++j) m(i, j) = jp[static_cast<std::size_t>(i * fam.d + j)](t, x);
        return detail::max_eigenpair(0.5 * (m + m.transpose())).first - C(t, x);
    });
    const auto worst = tab.argmax();
    double csup = -std::numeric_limits<double>::infinity();
    for (double t : lat.times()) csup = std::max(csup, C(t, x0));
    try {
        const auto b = linear_drift_bounds(fam, 1.0, lat);
        r.constants = {{"sup_C", csup}, {"limsup_C", b.limsup_C}, {"sup_b0", b.b0_sup}, {"t_0", b.t0}};
    } catch (const CheckError& e) {
        r.verdict = Verdict::Fail;
        r.note = e.what();
        return r;
    }
    if (worst.value > 1e-10) {
        r.verdict = Verdict::Fail;
        r.witness = tab.witness(worst);
        r.note = "<grad b xi, xi> exceeds C(t)|xi|^2";
    }
    return r;
}

} // namespace kolmo
