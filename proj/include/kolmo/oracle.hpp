#pragma once

/**
 * @file oracle.hpp
 * @brief Euler-Maruyama Monte Carlo for dX = b dt + (2Q)^{1/2} dW, used as an
 *        independent check of G(t,s)f and of the measures mu_s.
 *
 * G(t,s) propagates data forward from s, so G(t,s)f(x) = E f(Y_t) for the
 * process started at Y_s = x whose coefficients at clock time r are taken at
 * s + t - r (the clock runs through the coefficient times from t down to s).
 *
 * Normal variates come from Philox4x32-10 keyed by the seed with counter
 * (step, particle, block), so results do not depend on the worker count.
 */

#include "kolmo/csv.hpp"
#include "kolmo/evolution.hpp"
#include "kolmo/measures.hpp"
#include "kolmo/parallel.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

namespace kolmo {

/// Philox4x32 with 10 rounds.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter c, Key k) {
        for (int r = 0; r < 10; ++r) {
            if (r > 0) {
                k[0] += 0x9E3779B9u;
                k[1] += 0xBB67AE85u;
            }
            const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
            const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
            c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
                 static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
        }
        return c;
    }
};

namespace detail {

/// Uniform in (0, 1) from 53 bits.
inline double open_uniform(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t m = (std::uint64_t{hi} << 21) ^ (std::uint64_t{lo} >> 11);
    return (static_cast<double>(m) + 0.5) * 0x1.0p-53;
}

/// Two standard normals (Box-Muller) for one (seed, step, particle, block).
inline std::array<double, 2> normal_pair(std::uint64_t seed, std::uint64_t step, std::uint64_t particle,
                                         std::uint32_t block) {
    const auto r = Philox4x32::generate(
        {static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32) ^ (block << 16),
         static_cast<std::uint32_t>(particle), static_cast<std::uint32_t>(particle >> 32)},
        {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
    const double u1 = open_uniform(r[0], r[1]), u2 = open_uniform(r[2], r[3]);
    const double rad = std::sqrt(-2.0 * std::log(u1));
    const double ang = 2.0 * std::numbers::pi * u2;
    return {rad * std::cos(ang), rad * std::sin(ang)};
}

} // namespace detail

struct OracleSettings {
    double dt_mc = 1e-3;
    std::size_t N = 100000;
    std::uint64_t seed = 1;
    double drift_clip = 1e4;  ///< tamed increments: |b| capped here
    bool diffusion = true;    ///< false: deterministic ODE mode
    int workers = 1;
    std::size_t chunk = 4096;

    void validate() const {
        if (!(dt_mc > 0.0)) throw ConfigError("oracle dt must be positive");
        if (N == 0) throw ConfigError("oracle needs at least one particle");
        if (!(drift_clip > 0.0)) throw ConfigError("drift clip must be positive");
        if (chunk == 0) throw ConfigError("oracle chunk must be positive");
    }
};

struct SdeEnsemble {
    int dim = 1;
    double s = 0.0, t = 0.0;
    Point x0;
    std::uint64_t seed = 0;
    std::vector<std::vector<double>> X;  ///< X[a][i]: coordinate a of particle i
    std::size_t clip_count = 0;

    std::size_t size() const { return X.empty() ? 0 : X.front().size(); }
    Point particle(std::size_t i) const {
        Point p(static_cast<std::size_t>(dim));
        for (int a = 0; a < dim; ++a) p[static_cast<std::size_t>(a)] = X[static_cast<std::size_t>(a)][i];
        return p;
    }

    void write_csv(std::ostream& out) const {
        CsvWriter w(out);
        w.meta("s", s);
        w.meta("t", t);
        w.meta("seed", std::to_string(seed));
        w.meta("clipped", std::to_string(clip_count));
        std::vector<std::string> head{"particle"};
        for (int a = 0; a < dim; ++a) head.push_back("x" + std::to_string(a + 1));
        w.header(head);
        for (std::size_t i = 0; i < size(); ++i) {
            std::vector<double> row{static_cast<double>(i)};
            for (int a = 0; a < dim; ++a) row.push_back(X[static_cast<std::size_t>(a)][i]);
            w.row(row);
        }
    }
};

namespace detail {

/// (2Q)^{1/2} by symmetric eigendecomposition; throws on a negative eigenvalue.
inline Eigen::MatrixXd diffusion_root(const Eigen::MatrixXd& q) {
    if (q.rows() == 1) {
        if (!(q(0, 0) >= 0.0)) throw NumericalError("diffusion sample is negative");
        return Eigen::MatrixXd::Constant(1, 1, std::sqrt(2.0 * q(0, 0)));
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(2.0 * q);
    if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition of the diffusion failed");
    const Eigen::VectorXd ev = es.eigenvalues();
    if (ev.minCoeff() < -1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff()))
        throw NumericalError("diffusion sample is not positive semidefinite");
    return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

} // namespace detail

/// Ensemble at clock time t of the process started at (s, x); see the file comment for the clock.
inline SdeEnsemble simulate(const CoefficientField& cf, double s, const Point& x, double t,
                            const OracleSettings& cfg = {}) {
    cfg.validate();
    if (t < s) throw Error("simulation needs t >= s");
    const int d = cf.dim();
    if (static_cast<int>(x.size()) != d) throw Error("start point has the wrong dimension");
    const auto D = static_cast<std::size_t>(d);
    SdeEnsemble ens{d, s, t, x, cfg.seed, std::vector<std::vector<double>>(D, std::vector<double>(cfg.N)), 0};
    for (std::size_t a = 0; a < D; ++a) std::fill(ens.X[a].begin(), ens.X[a].end(), x[a]);
    if (t == s) return ens;

    const int steps = step_count(s, t, cfg.dt_mc);
    std::vector<expr::Program> drift;
    for (int a = 0; a < d; ++a) drift.emplace_back(cf.b(a));
    std::vector<expr::Program> diff;
    for (const auto& e : cf.diffusion_upper()) diff.emplace_back(e);
    const bool q_space_free = cf.diffusion_space_independent();

    // the coefficient time at the left end of clock step k
    auto coeff_time = [&](int k) { return s + t - step_time(s, t, steps, k); };

    // x-independent diffusion roots, one per step, shared by all chunks
    std::vector<Eigen::MatrixXd> roots;
    if (cfg.diffusion && q_space_free) {
        const Point zero(D, 0.0);
        for (int k = 0; k < steps; ++k) roots.push_back(detail::diffusion_root(cf.eval_q(coeff_time(k), zero)));
    }

    const std::size_t n_chunks = (cfg.N + cfg.chunk - 1) / cfg.chunk;
    std::vector<std::size_t> clips(n_chunks, 0);
    parallel_for(n_chunks, cfg.workers, [&](std::size_t c0, std::size_t c1) {
        for (std::size_t c = c0; c < c1; ++c) {
            const std::size_t i0 = c * cfg.chunk, m = std::min(cfg.N, i0 + cfg.chunk) - i0;
            std::vector<std::vector<double>> bv(D, std::vector<double>(m));
            std::vector<const double*> ptrs(D);
            std::array<double, kMaxDim> z{};
            std::vector<std::vector<double>> qv;
            if (cfg.diffusion && !q_space_free) qv.assign(diff.size(), std::vector<double>(m));
            for (int k = 0; k < steps; ++k) {
                const double tau = coeff_time(k);
                const double h = step_time(s, t, steps, k + 1) - step_time(s, t, steps, k);
                const double sh = std::sqrt(h);
                for (std::size_t a = 0; a < D; ++a) ptrs[a] = ens.X[a].data() + i0;
                for (std::size_t a = 0; a < D; ++a) drift[a].eval_batch(tau, ptrs, m, bv[a].data());
                for (std::size_t e = 0; e < qv.size(); ++e) diff[e].eval_batch(tau, ptrs, m, qv[e].data());
                for (std::size_t j = 0; j < m; ++j) {
                    double norm2 = 0.0;
                    for (std::size_t a = 0; a < D; ++a) norm2 += bv[a][j] * bv[a][j];
                    double scale = 1.0;
                    if (norm2 > cfg.drift_clip * cfg.drift_clip) {
                        scale = cfg.drift_clip / std::sqrt(norm2);
                        ++clips[c];
                    }
                    if (cfg.diffusion) {
                        for (std::size_t a = 0; a < D; a += 2) {
                            const auto g = detail::normal_pair(cfg.seed, static_cast<std::uint64_t>(k), i0 + j,
                                                               static_cast<std::uint32_t>(a / 2));
                            z[a] = g[0];
                            if (a + 1 < D) z[a + 1] = g[1];
                        }
                    }
                    std::array<double, kMaxDim> noise{};
                    if (cfg.diffusion) {
                        Eigen::MatrixXd local;
                        if (!q_space_free) {
                            Eigen::MatrixXd q(d, d);
                            std::size_t e = 0;
                            for (int r = 0; r < d; ++r)
                                for (int col = r; col < d; ++col, ++e) q(r, col) = q(col, r) = qv[e][j];
                            local = detail::diffusion_root(q);
                        }
                        const Eigen::MatrixXd& root = q_space_free ? roots[static_cast<std::size_t>(k)] : local;
                        for (int r = 0; r < d; ++r)
                            for (int col = 0; col < d; ++col)
                                noise[static_cast<std::size_t>(r)] += root(r, col) * z[static_cast<std::size_t>(col)];
                    }
                    for (std::size_t a = 0; a < D; ++a)
                        ens.X[a][i0 + j] += scale * bv[a][j] * h + sh * noise[a];
                }
            }
        }
    });
    for (std::size_t c : clips) ens.clip_count += c;
    return ens;
}

struct MonteCarloEstimate {
    double estimate = 0.0;
    double se = 0.0;  ///< standard error of the mean
};

/// Mean and standard error of f(X_t) over the ensemble; f is data at time s.
inline MonteCarloEstimate feynman_kac(const SdeEnsemble& ens, const Expression& f) {
    const std::size_t n = ens.size();
    std::vector<double> v(n);
    std::vector<const double*> ptrs;
    for (const auto& col : ens.X) ptrs.push_back(col.data());
    expr::Program(f).eval_batch(ens.s, ptrs, n, v.data());
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double var = n > 1 ? ss / static_cast<double>(n - 1) : 0.0;
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

/// Cell-count histogram on the grid, normalized to unit mass.
inline DiscreteMeasure ensemble_measure(const SdeEnsemble& ens, const Grid& g, double time) {
    if (g.dim() != ens.dim) throw Error("grid and ensemble dimensions differ");
    DiscreteMeasure mu(g, time);
    std::size_t inside = 0;
    const double R = g.radius() + 0.5 * g.h();
    for (std::size_t i = 0; i < ens.size(); ++i) {
        const Point p = ens.particle(i);
        bool in = true;
        for (double c : p) in = in && std::abs(c) <= R;
        if (!in) continue;
        mu.weights[g.nearest(p)] += 1.0;
        ++inside;
    }
    const std::size_t outside = ens.size() - inside;
    if (static_cast<double>(outside) > 0.01 * static_cast<double>(ens.size()))
        throw Error(std::to_string(outside) + " particles outside the grid; enlarge the grid");
    for (double& w : mu.weights) w /= static_cast<double>(inside);
    return mu;
}

// ---------------------------------------------------------------------------
// cross-check against the PDE
// ---------------------------------------------------------------------------

struct OracleProbe {
    std::string label;
    CoefficientField cf;
    Expression f;
    double s = 0.0, t = 0.0;
    Point x;
};

struct CrossCheckRow {
    std::string label;
    double s = 0.0, t = 0.0;
    Point x;
    double pde = 0.0;
    double mc = 0.0;
    double se = 0.0;
    double diff = 0.0;
    double bound = 0.0;  ///< 3 se + allowance
    std::size_t clipped = 0;
    bool pass = false;
};

struct CrossCheckReport {
    std::vector<CrossCheckRow> rows;
    bool all_pass() const {
        for (const auto& r : rows)
            if (!r.pass) return false;
        return !rows.empty();
    }
    double pass_rate() const {
        if (rows.empty()) return 0.0;
        std::size_t n = 0;
        for (const auto& r : rows) n += r.pass ? 1 : 0;
        return static_cast<double>(n) / static_cast<double>(rows.size());
    }
    void write_csv(std::ostream& out) const {
        CsvWriter w(out);
        w.header({"probe", "s", "t", "x1", "pde", "mc", "se", "diff", "bound", "clipped", "pass"});
        for (const auto& r : rows)
            w.row_strings({r.label, format_double(r.s), format_double(r.t), format_double(r.x.front()),
                           format_double(r.pde), format_double(r.mc), format_double(r.se), format_double(r.diff),
                           format_double(r.bound), std::to_string(r.clipped), r.pass ? "pass" : "fail"});
    }
};

/// |G(t,s)f(x) - MC| <= 3 se + allowance for every probe.
inline CrossCheckReport cross_check(const std::vector<OracleProbe>& probes, const Discretization& disc,
                                    const OracleSettings& cfg, double allowance = 1e-2) {
    CrossCheckReport rep;
    for (const auto& p : probes) {
        CrossCheckRow r{p.label, p.s, p.t, p.x};
        r.pde = EvolutionOperator(p.cf, p.s, p.t, disc).apply(p.f).value_at(p.x);
        const auto ens = simulate(p.cf, p.s, p.x, p.t, cfg);
        const auto est = feynman_kac(ens, p.f);
        r.mc = est.estimate;
        r.se = est.se;
        r.clipped = ens.clip_count;
        r.diff = std::abs(r.pde - r.mc);
        r.bound = 3.0 * r.se + allowance;
        r.pass = r.diff <= r.bound;
        rep.rows.push_back(std::move(r));
    }
    return rep;
}

/**
 * Weak order of the scheme: fit log|E_dt - E_{dt/2}| against log dt over a
 * halving ladder of time steps.
 */
inline double weak_error_order(const CoefficientField& cf, const Expression& f, double s, const Point& x, double t,
                               const std::vector<double>& dts, OracleSettings cfg) {
    if (dts.size() < 3) throw Error("weak order fit needs at least three time steps");
    std::vector<double> est;
    for (double dt : dts) {
        cfg.dt_mc = dt;
        est.push_back(feynman_kac(simulate(cf, s, x, t, cfg), f).estimate);
    }
    std::vector<double> lx, ly;
    for (std::size_t k = 0; k + 1 < dts.size(); ++k) {
        lx.push_back(std::log(dts[k]));
        ly.push_back(std::log(std::abs(est[k] - est[k + 1])));
    }
    return fit_line(lx, ly).first;
}

} // namespace kolmo
