#pragma once

/**
 * @file solver.hpp
 * @brief Theta-scheme finite differences for u_t = Tr(Q D^2 u) + <b, grad u>
 *        on boxes with Dirichlet or Neumann boundary rows, and the exhaustion
 *        loop over doubling radii.
 */

#include "kolmo/coefficients.hpp"
#include "kolmo/error.hpp"
#include "kolmo/expr.hpp"
#include "kolmo/grid.hpp"

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace kolmo {

enum class Boundary { Dirichlet, Neumann };

inline const char* to_string(Boundary b) { return b == Boundary::Dirichlet ? "dirichlet" : "neumann"; }

/// Truncated Cauchy problem on a box: coefficients, grid, boundary rows, window and step.
struct TruncatedProblem {
    CoefficientField cf;
    Grid grid;
    Boundary bc = Boundary::Neumann;
    double s = 0.0;
    double T = 1.0;
    double dt = 1e-3;
    double theta = 1.0;

    void validate() const {
        if (cf.dim() != grid.dim()) throw Error("coefficient and grid dimensions differ");
        if (!(dt > 0.0)) throw Error("time step must be positive");
        if (theta < 0.5 || theta > 1.0) throw Error("theta must lie in [0.5, 1]");
        if (T < s) throw Error("final time precedes initial time");
    }
};

/// Number of uniform steps covering [s, T] with step at most dt (0 when T == s).
inline int step_count(double s, double T, double dt) {
    if (T <= s) return 0;
    return std::max(1, static_cast<int>(std::ceil((T - s) / dt - 1e-9)));
}

inline double step_time(double s, double T, int n, int k) {
    return k >= n ? T : s + (T - s) * static_cast<double>(k) / static_cast<double>(n);
}

/// Nodal samples of f(t, .) on the grid, using the compiled batch evaluator.
inline FieldSample sample(const Expression& f, const Grid& grid, double t) {
    if (f.dim() != grid.dim()) throw Error("expression dimension differs from grid dimension");
    FieldSample out(grid, t);
    const auto coords = grid.coordinates();
    std::vector<const double*> ptrs;
    for (const auto& c : coords) ptrs.push_back(c.data());
    expr::Program(f).eval_batch(t, ptrs, grid.size(), out.values.data());
    out.check_finite();
    return out;
}

namespace detail {

/// Residual test shared by all solves: normwise backward error below 1e-12.
inline bool residual_ok(double residual, double rhs_norm, double a_norm, double x_norm) {
    return residual <= 1e-12 * std::max(1.0, rhs_norm + a_norm * x_norm);
}

inline double inf_norm(const double* v, std::size_t n) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::abs(v[i]));
    return m;
}

/// Tridiagonal matrix, row i = lo[i] x[i-1] + di[i] x[i] + up[i] x[i+1].
struct Tridiag {
    std::vector<double> lo, di, up;

    std::size_t size() const { return di.size(); }

    Tridiag transposed() const {
        const std::size_t n = size();
        Tridiag t{std::vector<double>(n, 0.0), di, std::vector<double>(n, 0.0)};
        for (std::size_t i = 1; i < n; ++i) t.lo[i] = up[i - 1];
        for (std::size_t i = 0; i + 1 < n; ++i) t.up[i] = lo[i + 1];
        return t;
    }

    void multiply(const double* x, double* y) const {
        const std::size_t n = size();
        for (std::size_t i = 0; i < n; ++i) {
            double v = di[i] * x[i];
            if (i > 0) v += lo[i] * x[i - 1];
            if (i + 1 < n) v += up[i] * x[i + 1];
            y[i] = v;
        }
    }

    double norm_inf() const {
        double m = 0.0;
        for (std::size_t i = 0; i < size(); ++i) m = std::max(m, std::abs(lo[i]) + std::abs(di[i]) + std::abs(up[i]));
        return m;
    }
};

/// Thomas factorization; the matrices here are diagonally dominant M-matrices, so no pivoting.
class Thomas {
public:
    Thomas() = default;
    explicit Thomas(Tridiag a) : a_(std::move(a)) {
        const std::size_t n = a_.size();
        inv_.resize(n);
        cp_.resize(n);
        double prev_cp = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double denom = a_.di[i] - (i > 0 ? a_.lo[i] * prev_cp : 0.0);
            if (denom == 0.0 || !std::isfinite(denom)) throw NumericalError("tridiagonal solve breakdown (zero pivot)");
            inv_[i] = 1.0 / denom;
            cp_[i] = a_.up[i] * inv_[i];
            prev_cp = cp_[i];
        }
        norm_ = a_.norm_inf();
    }

    /// Solve in place; `scratch` must hold n doubles.
    void solve(double* r, double* scratch) const {
        const std::size_t n = a_.size();
        std::copy(r, r + n, scratch);
        substitute(r);
        check(r, scratch);
    }

    const Tridiag& matrix() const { return a_; }

private:
    void substitute(double* r) const {
        const std::size_t n = a_.size();
        for (std::size_t i = 0; i < n; ++i) r[i] = (r[i] - (i > 0 ? a_.lo[i] * r[i - 1] : 0.0)) * inv_[i];
        for (std::size_t i = n - 1; i-- > 0;) r[i] -= cp_[i] * r[i + 1];
    }

    void check(double* x, const double* rhs) const {
        const std::size_t n = a_.size();
        std::vector<double> res(n);
        for (int pass = 0; pass < 2; ++pass) {
            a_.multiply(x, res.data());
            for (std::size_t i = 0; i < n; ++i) res[i] = rhs[i] - res[i];
            const double rn = inf_norm(res.data(), n);
            if (residual_ok(rn, inf_norm(rhs, n), norm_, inf_norm(x, n))) return;
            if (pass == 1) throw NumericalError("tridiagonal solve residual above 1e-12");
            substitute(res.data());
            for (std::size_t i = 0; i < n; ++i) x[i] += res[i];
        }
    }

    Tridiag a_;
    std::vector<double> inv_, cp_;
    double norm_ = 0.0;
};

using SpMat = Eigen::SparseMatrix<double>;

inline double sparse_norm_inf(const SpMat& a) {
    Eigen::VectorXd rows = Eigen::VectorXd::Zero(a.rows());
    for (int k = 0; k < a.outerSize(); ++k)
        for (SpMat::InnerIterator it(a, k); it; ++it) rows(it.row()) += std::abs(it.value());
    return rows.size() ? rows.maxCoeff() : 0.0;
}

} // namespace detail

/**
 * Discrete generator L(t) on a box, with boundary rows built in: Dirichlet
 * boundary rows are empty (the step turns them into identity rows with zero
 * right-hand side) and Neumann rows reflect neighbors across the face.
 */
class DiscreteGenerator {
public:
    DiscreteGenerator(const CoefficientField& cf, Grid grid, Boundary bc)
        : cf_(cf), grid_(std::move(grid)), bc_(bc), coords_(grid_.coordinates()) {
        if (cf_.dim() != grid_.dim()) throw Error("coefficient and grid dimensions differ");
        for (const auto& q : cf_.diffusion_upper()) q_prog_.emplace_back(q);
        for (const auto& b : cf_.drift()) b_prog_.emplace_back(b);
        for (const auto& c : coords_) coord_ptrs_.push_back(c.data());
        autonomous_ = cf_.autonomous();
    }

    const Grid& grid() const { return grid_; }
    Boundary boundary() const { return bc_; }
    bool autonomous() const { return autonomous_; }

    /// Compressed rows of L(t): row_ptr/cols/vals (CSR).
    struct Rows {
        double time = 0.0;
        std::vector<std::size_t> row_ptr;
        std::vector<std::size_t> cols;
        std::vector<double> vals;
        double max_peclet = 0.0;
        std::size_t upwinded = 0;
    };

    Rows assemble(double t) const {
        const int d = grid_.dim();
        const std::size_t n = grid_.size();
        const int m = grid_.half();
        const double h = grid_.h();
        const double h2 = h * h;

        std::vector<std::vector<double>> q(q_prog_.size(), std::vector<double>(n));
        std::vector<std::vector<double>> b(b_prog_.size(), std::vector<double>(n));
        for (std::size_t k = 0; k < q_prog_.size(); ++k) q_prog_[k].eval_batch(t, coord_ptrs_, n, q[k].data());
        for (std::size_t k = 0; k < b_prog_.size(); ++k) b_prog_[k].eval_batch(t, coord_ptrs_, n, b[k].data());
        auto qidx = [d](int i, int j) {
            if (i > j) std::swap(i, j);
            return static_cast<std::size_t>(i * d - i * (i - 1) / 2 + (j - i));
        };

        Rows rows;
        rows.time = t;
        rows.row_ptr.reserve(n + 1);
        rows.row_ptr.push_back(0);
        const std::size_t stencil = static_cast<std::size_t>(1 + 2 * d + 2 * d * (d - 1));
        rows.cols.reserve(n * stencil);
        rows.vals.reserve(n * stencil);

        std::vector<std::pair<std::size_t, double>> entries;
        auto add = [&](const Grid::Offsets& o, double v) {
            Grid::Offsets r = o;
            for (int a = 0; a < d; ++a) {
                int& k = r[static_cast<std::size_t>(a)];
                if (k > m) k = 2 * m - k;
                else if (k < -m) k = -2 * m - k;
            }
            const std::size_t col = grid_.index(r);
            for (auto& e : entries)
                if (e.first == col) { e.second += v; return; }
            entries.emplace_back(col, v);
        };

        for (std::size_t node = 0; node < n; ++node) {
            entries.clear();
            const auto o = grid_.offsets(node);
            const bool boundary = grid_.on_boundary(node);
            if (!(boundary && bc_ == Boundary::Dirichlet)) {
                add(o, 0.0);
                for (int a = 0; a < d; ++a) {
                    const auto ua = static_cast<std::size_t>(a);
                    const double qaa = q[qidx(a, a)][node];
                    const double ba = b[ua][node];
                    if (!std::isfinite(qaa) || !std::isfinite(ba))
                        throw NumericalError("non-finite coefficient at t=" + std::to_string(t));
                    Grid::Offsets p = o, mo = o;
                    ++p[ua];
                    --mo[ua];
                    add(p, qaa / h2);
                    add(mo, qaa / h2);
                    add(o, -2.0 * qaa / h2);
                    const bool face = std::abs(o[ua]) == m;
                    if (!face && std::abs(ba) * h > 2.0 * qaa) {
                        ++rows.upwinded;
                        if (ba > 0) { add(p, ba / h); add(o, -ba / h); }
                        else { add(o, ba / h); add(mo, -ba / h); }
                    } else {
                        add(p, ba / (2.0 * h));
                        add(mo, -ba / (2.0 * h));
                    }
                    for (int c = a + 1; c < d; ++c) {
                        const auto uc = static_cast<std::size_t>(c);
                        const double w = 2.0 * q[qidx(a, c)][node] / (4.0 * h2);
                        if (w == 0.0) continue;
                        for (int sa = -1; sa <= 1; sa += 2)
                            for (int sc = -1; sc <= 1; sc += 2) {
                                Grid::Offsets x = o;
                                x[ua] += sa;
                                x[uc] += sc;
                                add(x, w * sa * sc);
                            }
                    }
                }
                rows.max_peclet = std::max(rows.max_peclet, peclet(q, b, node, qidx));
            }
            std::sort(entries.begin(), entries.end());
            for (const auto& [col, v] : entries) {
                rows.cols.push_back(col);
                rows.vals.push_back(v);
            }
            rows.row_ptr.push_back(rows.cols.size());
        }
        return rows;
    }

    /// Tridiagonal form of L (1D only).
    static detail::Tridiag to_tridiag(const Rows& r) {
        const std::size_t n = r.row_ptr.size() - 1;
        detail::Tridiag t{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = r.row_ptr[i]; k < r.row_ptr[i + 1]; ++k) {
                const std::size_t j = r.cols[k];
                if (j + 1 == i) t.lo[i] = r.vals[k];
                else if (j == i) t.di[i] = r.vals[k];
                else if (j == i + 1) t.up[i] = r.vals[k];
                else throw Error("1D generator is not tridiagonal");
            }
        return t;
    }

    static detail::SpMat to_sparse(const Rows& r) {
        const std::size_t n = r.row_ptr.size() - 1;
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(r.vals.size());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = r.row_ptr[i]; k < r.row_ptr[i + 1]; ++k)
                trip.emplace_back(static_cast<int>(i), static_cast<int>(r.cols[k]), r.vals[k]);
        detail::SpMat a(static_cast<int>(n), static_cast<int>(n));
        a.setFromTriplets(trip.begin(), trip.end());
        return a;
    }

private:
    template <class Idx>
    double peclet(const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& b,
                  std::size_t node, Idx qidx) const {
        const int d = grid_.dim();
        double bn = 0.0;
        for (int a = 0; a < d; ++a) bn += b[static_cast<std::size_t>(a)][node] * b[static_cast<std::size_t>(a)][node];
        if (bn == 0.0) return 0.0;
        double lmin;
        if (d == 1) {
            lmin = q[0][node];
        } else if (d == 2) {
            const double a = q[qidx(0, 0)][node], c = q[qidx(1, 1)][node], o = q[qidx(0, 1)][node];
            lmin = 0.5 * (a + c) - std::sqrt(0.25 * (a - c) * (a - c) + o * o);
        } else {
            Eigen::MatrixXd mq(d, d);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) mq(i, j) = q[qidx(i, j)][node];
            lmin = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(mq, Eigen::EigenvaluesOnly).eigenvalues()(0);
        }
        if (lmin <= 0.0) return std::numeric_limits<double>::infinity();
        return std::sqrt(bn) * grid_.h() / (2.0 * lmin);
    }

    CoefficientField cf_;
    Grid grid_;
    Boundary bc_;
    bool autonomous_ = true;
    std::vector<std::vector<double>> coords_;
    std::vector<const double*> coord_ptrs_;
    std::vector<expr::Program> q_prog_, b_prog_;
};

/**
 * One theta step maps u(t0) to u(t1) by
 *   (I - dt Th L(t1)) u1 = Z (I + dt (I - Th) L(t0)) u0,
 * where Z zeroes Dirichlet boundary entries and Th = diag(theta_i). theta_i is
 * the requested theta, raised at nodes where the explicit diagonal
 * 1 + (1 - theta) dt L_ii would turn negative, so both matrices stay monotone. The transposed step applies the
 * adjoint of that map, used to propagate measures and kernel rows.
 *
 * Assembled generators and factorizations are cached: for autonomous
 * coefficients a fixed dt reuses one factorization for the whole run.
 */
class ThetaStepper {
public:
    ThetaStepper(const CoefficientField& cf, Grid grid, Boundary bc, double theta = 1.0)
        : gen_(cf, std::move(grid), bc), theta_(theta) {
        if (theta < 0.5 || theta > 1.0) throw Error("theta must lie in [0.5, 1]");
        const Grid& g = gen_.grid();
        if (bc == Boundary::Dirichlet)
            for (std::size_t n = 0; n < g.size(); ++n)
                if (g.on_boundary(n)) boundary_nodes_.push_back(n);
    }

    explicit ThetaStepper(const TruncatedProblem& tp) : ThetaStepper(tp.cf, tp.grid, tp.bc, tp.theta) {}

    const Grid& grid() const { return gen_.grid(); }
    double theta() const { return theta_; }
    double max_peclet() const { return max_peclet_; }
    std::size_t upwinded_nodes() const { return upwinded_; }

    /// Forward step of one vector, in place.
    void step(std::span<double> u, double t0, double t1) {
        Eigen::Map<Eigen::MatrixXd> m(u.data(), static_cast<Eigen::Index>(u.size()), 1);
        step_impl(m, t0, t1, false);
    }

    /// Forward step of every column.
    void step_batch(Eigen::MatrixXd& u, double t0, double t1) {
        Eigen::Map<Eigen::MatrixXd> m(u.data(), u.rows(), u.cols());
        step_impl(m, t0, t1, false);
    }

    /// v <- M(t1, t0)^T v for the forward step map M.
    void step_transposed(std::span<double> v, double t0, double t1) {
        Eigen::Map<Eigen::MatrixXd> m(v.data(), static_cast<Eigen::Index>(v.size()), 1);
        step_impl(m, t0, t1, true);
    }

    void step_transposed_batch(Eigen::MatrixXd& v, double t0, double t1) {
        Eigen::Map<Eigen::MatrixXd> m(v.data(), v.rows(), v.cols());
        step_impl(m, t0, t1, true);
    }

private:
    struct Assembled {
        DiscreteGenerator::Rows rows;
        detail::Tridiag tri;
        detail::SpMat sparse;
    };

    struct Factor {
        double t1 = 0.0, dt = 0.0;
        bool transposed = false;
        detail::Thomas thomas;
        detail::SpMat a;
        double a_norm = 0.0;
        std::vector<double> theta;  ///< per node; empty when theta == 1
        std::unique_ptr<Eigen::SparseLU<detail::SpMat>> lu;
    };

    bool one_dim() const { return gen_.grid().dim() == 1; }

    const Assembled& generator_at(double t) {
        const bool aut = gen_.autonomous();
        for (auto& c : cache_)
            if (c && (aut || c->rows.time == t)) return *c;
        auto a = std::make_shared<Assembled>();
        a->rows = gen_.assemble(t);
        max_peclet_ = std::max(max_peclet_, a->rows.max_peclet);
        upwinded_ = std::max(upwinded_, a->rows.upwinded);
        if (one_dim()) a->tri = DiscreteGenerator::to_tridiag(a->rows);
        else a->sparse = DiscreteGenerator::to_sparse(a->rows);
        cache_[1] = cache_[0];
        cache_[0] = a;
        return *a;
    }

    Factor& factor_for(double t0, double t1, bool transposed) {
        const double dt = t1 - t0;
        const bool aut = gen_.autonomous();
        for (auto& f : factors_)
            if (f && f->transposed == transposed && std::abs(f->dt - dt) <= 1e-12 * dt && (aut || f->t1 == t1)) return *f;
        auto f = std::make_shared<Factor>();
        f->t1 = t1;
        f->dt = dt;
        f->transposed = transposed;
        const std::size_t n = gen_.grid().size();
        if (theta_ < 1.0) {
            std::vector<double> d0(n);
            const Assembled& g0 = generator_at(t0);
            for (std::size_t i = 0; i < n; ++i) d0[i] = diagonal(g0, i);
            f->theta.assign(n, theta_);
            const Assembled& g1 = generator_at(t1);
            for (std::size_t i = 0; i < n; ++i) {
                const double lii = std::max(d0[i], diagonal(g1, i));
                if (lii * dt * (1.0 - theta_) > 1.0) f->theta[i] = 1.0 - 1.0 / (dt * lii);
            }
        }
        const Assembled& g = generator_at(t1);
        auto th = [&](std::size_t i) { return f->theta.empty() ? 1.0 : f->theta[i]; };
        if (one_dim()) {
            detail::Tridiag a{g.tri.lo, g.tri.di, g.tri.up};
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double c = th(i) * dt;
                a.lo[i] *= -c;
                a.up[i] *= -c;
                a.di[i] = 1.0 - c * a.di[i];
            }
            f->thomas = detail::Thomas(transposed ? a.transposed() : a);
        } else {
            Eigen::VectorXd w(static_cast<Eigen::Index>(n));
            for (std::size_t i = 0; i < n; ++i) w(static_cast<Eigen::Index>(i)) = th(i) * dt;
            detail::SpMat id(g.sparse.rows(), g.sparse.cols());
            id.setIdentity();
            detail::SpMat a = id - detail::SpMat(w.asDiagonal() * g.sparse);
            if (transposed) a = detail::SpMat(a.transpose());
            a.makeCompressed();
            f->a_norm = detail::sparse_norm_inf(a);
            f->a = std::move(a);
        }
        factors_[1] = std::move(factors_[0]);
        factors_[0] = std::move(f);
        return *factors_[0];
    }

    void zero_boundary(Eigen::Map<Eigen::MatrixXd>& u) const {
        for (std::size_t n : boundary_nodes_) u.row(static_cast<Eigen::Index>(n)).setZero();
    }

    /// |L_ii| from the assembled rows.
    static double diagonal(const Assembled& g, std::size_t i) {
        const auto& r = g.rows;
        for (std::size_t k = r.row_ptr[i]; k < r.row_ptr[i + 1]; ++k)
            if (r.cols[k] == i) return std::abs(r.vals[k]);
        return 0.0;
    }

    void explicit_part(Eigen::Map<Eigen::MatrixXd>& u, double t0, double dt, bool transposed, const Factor& f) {
        if (f.theta.empty()) return;
        const Assembled& g = generator_at(t0);
        const auto n = static_cast<std::size_t>(u.rows());
        // forward: u += dt (I - Th) L u;  transposed: u += dt L^T (I - Th) u
        if (one_dim()) {
            const detail::Tridiag l = transposed ? g.tri.transposed() : g.tri;
            std::vector<double> x(n), y(n);
            for (Eigen::Index k = 0; k < u.cols(); ++k) {
                double* col = u.col(k).data();
                if (transposed) {
                    for (std::size_t i = 0; i < n; ++i) x[i] = (1.0 - f.theta[i]) * col[i];
                    l.multiply(x.data(), y.data());
                    for (std::size_t i = 0; i < n; ++i) col[i] += dt * y[i];
                } else {
                    l.multiply(col, y.data());
                    for (std::size_t i = 0; i < n; ++i) col[i] += dt * (1.0 - f.theta[i]) * y[i];
                }
            }
        } else {
            Eigen::VectorXd w(static_cast<Eigen::Index>(n));
            for (std::size_t i = 0; i < n; ++i) w(static_cast<Eigen::Index>(i)) = dt * (1.0 - f.theta[i]);
            if (transposed) {
                Eigen::MatrixXd x = w.asDiagonal() * u;
                u += g.sparse.transpose() * x;
            } else {
                Eigen::MatrixXd y = g.sparse * u;
                u += w.asDiagonal() * y;
            }
        }
    }

    void implicit_solve(Eigen::Map<Eigen::MatrixXd>& u, Factor& f) {
        const auto n = static_cast<std::size_t>(u.rows());
        if (one_dim()) {
            std::vector<double> scratch(n);
            for (Eigen::Index k = 0; k < u.cols(); ++k) f.thomas.solve(u.col(k).data(), scratch.data());
            return;
        }
        const bool reuse = gen_.autonomous() || u.cols() > 1;
        if (!reuse && !f.lu) {
            Eigen::BiCGSTAB<detail::SpMat, Eigen::IncompleteLUT<double>> it;
            it.preconditioner().setDroptol(1e-4);
            it.setTolerance(1e-14);
            it.compute(f.a);
            Eigen::VectorXd rhs = u.col(0);
            Eigen::VectorXd x = it.solveWithGuess(rhs, rhs);
            const double res = detail::inf_norm(Eigen::VectorXd(rhs - f.a * x).data(), n);
            if (it.info() == Eigen::Success &&
                detail::residual_ok(res, rhs.lpNorm<Eigen::Infinity>(), f.a_norm, x.lpNorm<Eigen::Infinity>())) {
                u.col(0) = x;
                return;
            }
        }
        if (!f.lu) {
            f.lu = std::make_unique<Eigen::SparseLU<detail::SpMat>>();
            f.lu->analyzePattern(f.a);
            f.lu->factorize(f.a);
            if (f.lu->info() != Eigen::Success) throw NumericalError("sparse LU factorization failed");
        }
        Eigen::MatrixXd rhs = u;
        Eigen::MatrixXd x = f.lu->solve(rhs);
        for (int pass = 0; pass < 2; ++pass) {
            Eigen::MatrixXd r = rhs - f.a * x;
            bool ok = true;
            for (Eigen::Index k = 0; k < x.cols() && ok; ++k)
                ok = detail::residual_ok(r.col(k).lpNorm<Eigen::Infinity>(), rhs.col(k).lpNorm<Eigen::Infinity>(),
                                         f.a_norm, x.col(k).lpNorm<Eigen::Infinity>());
            if (ok) break;
            if (pass == 1) throw NumericalError("sparse solve residual above 1e-12");
            x += f.lu->solve(r);
        }
        u = x;
    }

    void step_impl(Eigen::Map<Eigen::MatrixXd> u, double t0, double t1, bool transposed) {
        if (static_cast<std::size_t>(u.rows()) != gen_.grid().size()) throw Error("vector size does not match grid");
        const double dt = t1 - t0;
        if (!(dt > 0.0)) throw Error("step requires t1 > t0");
        Factor& f = factor_for(t0, t1, transposed);
        if (!transposed) {
            explicit_part(u, t0, dt, false, f);
            zero_boundary(u);
            implicit_solve(u, f);
        } else {
            implicit_solve(u, f);
            zero_boundary(u);
            explicit_part(u, t0, dt, true, f);
        }
        if (!u.allFinite()) throw NumericalError("non-finite value after step to t=" + std::to_string(t1));
    }

    DiscreteGenerator gen_;
    double theta_;
    std::vector<std::size_t> boundary_nodes_;
    std::shared_ptr<Assembled> cache_[2];
    std::shared_ptr<Factor> factors_[2];
    double max_peclet_ = 0.0;
    std::size_t upwinded_ = 0;
};

/// One theta step of tp from u.time to u.time + tp.dt.
inline FieldSample step(const TruncatedProblem& tp, const FieldSample& u) {
    tp.validate();
    if (!(u.grid == tp.grid)) throw Error("field is not on the problem grid");
    ThetaStepper st(tp);
    FieldSample out = u;
    st.step(out.values, u.time, u.time + tp.dt);
    out.time = u.time + tp.dt;
    return out;
}

/// Sequence of samples at increasing times.
struct Trajectory {
    std::vector<FieldSample> samples;

    const FieldSample& at(double t) const {
        for (const auto& s : samples)
            if (std::abs(s.time - t) <= 1e-12 * std::max(1.0, std::abs(t))) return s;
        throw Error("trajectory has no sample at t=" + std::to_string(t));
    }
    const FieldSample& back() const { return samples.back(); }
    std::size_t size() const { return samples.size(); }
};

/**
 * Step indices (into the uniform step ladder of [s, T]) closest to the
 * requested output times.
 */
inline std::vector<int> output_steps(double s, double T, int n, std::span<const double> times) {
    std::vector<int> idx;
    for (double t : times) {
        if (t < s - 1e-12 || t > T + 1e-12) throw Error("output time outside [s, T]");
        idx.push_back(n == 0 ? 0 : static_cast<int>(std::lround((t - s) / (T - s) * n)));
    }
    return idx;
}

/**
 * Solve tp from f at tp.s to tp.T; samples are stored at the requested output
 * times (snapped to the step ladder). With no output times only u(T) is kept.
 */
inline Trajectory solve(const TruncatedProblem& tp, const FieldSample& f, std::span<const double> output_times = {}) {
    tp.validate();
    if (!(f.grid == tp.grid)) throw Error("initial data is not on the problem grid");
    f.check_finite();
    const int n = step_count(tp.s, tp.T, tp.dt);
    std::vector<double> times(output_times.begin(), output_times.end());
    if (times.empty()) times.push_back(tp.T);
    const auto idx = output_steps(tp.s, tp.T, n, times);

    Trajectory traj;
    std::vector<double> u = f.values;
    auto record = [&](int k) {
        for (int want : idx)
            if (want == k) {
                traj.samples.emplace_back(tp.grid, step_time(tp.s, tp.T, n, k), u);
                break;
            }
    };
    record(0);
    ThetaStepper st(tp);
    for (int k = 1; k <= n; ++k) {
        st.step(u, step_time(tp.s, tp.T, n, k - 1), step_time(tp.s, tp.T, n, k));
        record(k);
    }
    return traj;
}

inline Trajectory solve(const TruncatedProblem& tp, const Expression& f, std::span<const double> output_times = {}) {
    return solve(tp, sample(f, tp.grid, tp.s), output_times);
}

struct ExhaustSettings {
    double R0 = 8.0;
    double h = 0.05;
    double dt = 1e-3;
    double theta = 1.0;
    Boundary bc = Boundary::Neumann;
    double tol = 1e-6;
    int max_refinements = 4;
    int snapshots = 8;
    std::vector<double> output_times;  ///< overrides the uniform snapshots when non-empty
};

struct ExhaustResult {
    Trajectory trajectory;  ///< snapshots on the last (largest) box
    int n_final = 0;        ///< index of the last radius R0 2^n
    double gap = std::numeric_limits<double>::infinity();
    std::vector<double> gaps;  ///< gap after each refinement
    bool converged = false;    ///< false: budget exhausted, best result returned
    double max_peclet = 0.0;
};

/// Initial data for exhaustion: an expression, or a sample interpolated onto each box.
using InitialData = std::variant<Expression, FieldSample>;

namespace detail {

inline FieldSample initial_on(const InitialData& f, const Grid& g, double s) {
    if (const auto* e = std::get_if<Expression>(&f)) return sample(*e, g, s);
    FieldSample out = transfer(std::get<FieldSample>(f), g);
    out.time = s;
    return out;
}

inline double gap_on_ball(const Trajectory& small, const Trajectory& large, double K) {
    double gap = 0.0;
    const Grid& gs = small.samples.front().grid;
    const Grid& gl = large.samples.front().grid;
    const auto nodes = gs.nodes_within(K);
    for (std::size_t k = 0; k < small.size(); ++k)
        for (std::size_t n : nodes) {
            const auto j = gs.locate_in(gl, n);
            gap = std::max(gap, std::abs(small.samples[k].values[n] - large.samples[k].values[static_cast<std::size_t>(j)]));
        }
    return gap;
}

} // namespace detail

/**
 * Solve on boxes of radius R0 2^n (fixed h) until the sup over the snapshot
 * times and the ball B_K of successive differences is at most tol.
 */
inline ExhaustResult exhaust(const CoefficientField& cf, const InitialData& f, double s, double T, double K,
                             const ExhaustSettings& cfg = {}) {
    if (!(K < cfg.R0)) throw Error("compact radius must be smaller than the first box radius");
    if (T < s) throw Error("final time precedes initial time");
    std::vector<double> times = cfg.output_times;
    if (times.empty()) {
        const int snaps = std::max(1, cfg.snapshots);
        for (int j = 1; j <= snaps; ++j) times.push_back(s + (T - s) * j / snaps);
    }
    std::sort(times.begin(), times.end());

    ExhaustResult out;
    std::optional<Trajectory> prev;
    double radius = cfg.R0;
    for (int n = 0; n <= cfg.max_refinements; ++n, radius *= 2.0) {
        TruncatedProblem tp{cf, Grid(cf.dim(), radius, cfg.h), cfg.bc, s, T, cfg.dt, cfg.theta};
        Trajectory traj;
        if (T == s) {
            for (std::size_t k = 0; k < times.size(); ++k) traj.samples.push_back(detail::initial_on(f, tp.grid, s));
        } else {
            ThetaStepper st(tp);
            const int steps = step_count(s, T, cfg.dt);
            const auto idx = output_steps(s, T, steps, times);
            FieldSample u = detail::initial_on(f, tp.grid, s);
            std::size_t next = 0;
            while (next < idx.size() && idx[next] == 0) {
                traj.samples.emplace_back(tp.grid, s, u.values);
                ++next;
            }
            for (int k = 1; k <= steps; ++k) {
                st.step(u.values, step_time(s, T, steps, k - 1), step_time(s, T, steps, k));
                while (next < idx.size() && idx[next] == k) {
                    traj.samples.emplace_back(tp.grid, step_time(s, T, steps, k), u.values);
                    ++next;
                }
            }
            out.max_peclet = std::max(out.max_peclet, st.max_peclet());
        }
        out.n_final = n;
        if (prev) {
            out.gap = detail::gap_on_ball(*prev, traj, K);
            out.gaps.push_back(out.gap);
            if (out.gap <= cfg.tol) {
                out.trajectory = std::move(traj);
                out.converged = true;
                return out;
            }
        }
        prev = std::move(traj);
    }
    out.trajectory = std::move(*prev);
    out.converged = false;
    return out;
}

} // namespace kolmo
