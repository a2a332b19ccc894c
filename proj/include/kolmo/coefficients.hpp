#pragma once

/**
 * @file coefficients.hpp
 * @brief Coefficient fields Q(t,x), b(t,x) of the Kolmogorov operator
 *        A(t) = Tr(Q D^2) + <b, grad>.
 */

#include "kolmo/error.hpp"
#include "kolmo/expr.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace kolmo {

using expr::Expression;

struct TimeInterval {
    double t_min = 0.0;
    double t_max = std::numeric_limits<double>::infinity();

    bool unbounded() const { return std::isinf(t_max); }
    bool contains(double t) const { return t >= t_min && t <= t_max; }
};

/**
 * Diffusion matrix Q (upper triangle stored, symmetric by construction) and
 * drift b, both expressions in (t, x). Immutable.
 */
class CoefficientField {
public:
    CoefficientField() = default;

    /// `q_upper` lists q_11, q_12, .., q_1d, q_22, .., q_dd (row-major upper triangle).
    CoefficientField(int dim, std::vector<Expression> q_upper, std::vector<Expression> drift,
                     TimeInterval interval = {})
        : dim_(dim), q_(std::move(q_upper)), b_(std::move(drift)), interval_(interval) {
        if (dim < 1 || dim > 3) throw Error("coefficient field dimension must be 1..3");
        if (q_.size() != static_cast<std::size_t>(dim * (dim + 1) / 2))
            throw Error("diffusion needs d(d+1)/2 upper-triangle entries");
        if (b_.size() != static_cast<std::size_t>(dim)) throw Error("drift needs d entries");
        for (const auto& e : q_)
            if (e.dim() != dim) throw Error("diffusion entry has wrong dimension");
        for (const auto& e : b_)
            if (e.dim() != dim) throw Error("drift entry has wrong dimension");
    }

    static CoefficientField parse(int dim, const std::vector<std::string>& q_upper,
                                  const std::vector<std::string>& drift, TimeInterval interval = {}) {
        std::vector<Expression> q, b;
        for (const auto& s : q_upper) q.push_back(Expression::parse(s, dim));
        for (const auto& s : drift) b.push_back(Expression::parse(s, dim));
        return {dim, std::move(q), std::move(b), interval};
    }

    int dim() const noexcept { return dim_; }
    const TimeInterval& interval() const noexcept { return interval_; }

    const Expression& q(int i, int j) const {
        if (i > j) std::swap(i, j);
        return q_[static_cast<std::size_t>(i * dim_ - i * (i - 1) / 2 + (j - i))];
    }
    const Expression& b(int i) const { return b_[static_cast<std::size_t>(i)]; }
    const std::vector<Expression>& drift() const { return b_; }
    const std::vector<Expression>& diffusion_upper() const { return q_; }

    bool autonomous() const {
        for (const auto& e : q_) if (e.depends_on_time()) return false;
        for (const auto& e : b_) if (e.depends_on_time()) return false;
        return true;
    }
    bool diffusion_space_independent() const {
        for (const auto& e : q_) if (e.depends_on_space()) return false;
        return true;
    }
    bool diffusion_constant() const {
        for (const auto& e : q_) if (!e.is_constant()) return false;
        return true;
    }

    Eigen::MatrixXd eval_q(double t, std::span<const double> x) const {
        Eigen::MatrixXd m(dim_, dim_);
        for (int i = 0; i < dim_; ++i)
            for (int j = i; j < dim_; ++j) m(i, j) = m(j, i) = q(i, j).eval(t, x);
        return m;
    }
    Eigen::VectorXd eval_b(double t, std::span<const double> x) const {
        Eigen::VectorXd v(dim_);
        for (int i = 0; i < dim_; ++i) v(i) = b_[static_cast<std::size_t>(i)].eval(t, x);
        return v;
    }

    /// A(t)phi = sum_ij q_ij D_ij phi + sum_i b_i D_i phi, built symbolically.
    Expression apply_generator(const Expression& phi) const {
        Expression result = Expression::constant(0.0, dim_);
        for (int i = 0; i < dim_; ++i) {
            const Expression di = phi.diff_x(i);
            for (int j = 0; j < dim_; ++j) result = result + q(i, j) * di.diff_x(j);
            result = result + b(i) * di;
        }
        return result;
    }

private:
    int dim_ = 1;
    std::vector<Expression> q_;
    std::vector<Expression> b_;
    TimeInterval interval_;
};

} // namespace kolmo
