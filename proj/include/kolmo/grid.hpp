#pragma once

/**
 * @file grid.hpp
 * @brief Uniform tensor grids on boxes [-R, R]^d centered at the origin, and
 *        nodal field samples on them.
 */

#include "kolmo/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace kolmo {

inline constexpr int kMaxDim = 3;

using Point = std::vector<double>;

/**
 * Box [-R, R]^d with spacing h; R/h is an integer m so that 2R/h is even and
 * the origin is a node. Nodes are addressed by flat index (x1 fastest) or by
 * integer offsets in [-m, m]^d.
 *
 * Each node owns the cell [x - h/2, x + h/2]^d clipped to the box, so cells on
 * the boundary have half (or quarter) volume and the cells tile the box.
 */
class Grid {
public:
    using Offsets = std::array<int, kMaxDim>;

    Grid() = default;
    Grid(int dim, double radius, double h) : dim_(dim), h_(h) {
        if (dim < 1 || dim > kMaxDim) throw Error("grid dimension must be 1.." + std::to_string(kMaxDim));
        if (!(h > 0.0) || !(radius > 0.0)) throw Error("grid radius and spacing must be positive");
        const double ratio = radius / h;
        half_ = static_cast<int>(std::lround(ratio));
        if (half_ < 1 || std::abs(ratio - half_) > 1e-9 * std::max(1.0, ratio))
            throw Error("grid radius must be an integer multiple of the spacing (2R/h even)");
        axis_ = 2 * half_ + 1;
        size_ = 1;
        for (int a = 0; a < dim_; ++a) size_ *= static_cast<std::size_t>(axis_);
    }

    int dim() const noexcept { return dim_; }
    double h() const noexcept { return h_; }
    int half() const noexcept { return half_; }
    double radius() const noexcept { return half_ * h_; }
    int axis_count() const noexcept { return axis_; }
    std::size_t size() const noexcept { return size_; }

    Offsets offsets(std::size_t node) const {
        Offsets o{};
        for (int a = 0; a < dim_; ++a) {
            o[static_cast<std::size_t>(a)] = static_cast<int>(node % static_cast<std::size_t>(axis_)) - half_;
            node /= static_cast<std::size_t>(axis_);
        }
        return o;
    }

    std::size_t index(const Offsets& o) const {
        std::size_t idx = 0;
        for (int a = dim_ - 1; a >= 0; --a)
            idx = idx * static_cast<std::size_t>(axis_) + static_cast<std::size_t>(o[static_cast<std::size_t>(a)] + half_);
        return idx;
    }

    bool contains_offsets(const Offsets& o) const {
        for (int a = 0; a < dim_; ++a)
            if (std::abs(o[static_cast<std::size_t>(a)]) > half_) return false;
        return true;
    }

    std::size_t origin() const { return index(Offsets{}); }

    double coordinate(std::size_t node, int axis) const {
        return offsets(node)[static_cast<std::size_t>(axis)] * h_;
    }

    Point point(std::size_t node) const {
        const auto o = offsets(node);
        Point p(static_cast<std::size_t>(dim_));
        for (int a = 0; a < dim_; ++a) p[static_cast<std::size_t>(a)] = o[static_cast<std::size_t>(a)] * h_;
        return p;
    }

    double norm(std::size_t node) const {
        const auto o = offsets(node);
        double s = 0.0;
        for (int a = 0; a < dim_; ++a) s += double(o[static_cast<std::size_t>(a)]) * o[static_cast<std::size_t>(a)];
        return std::sqrt(s) * h_;
    }

    bool on_boundary(std::size_t node) const {
        const auto o = offsets(node);
        for (int a = 0; a < dim_; ++a)
            if (std::abs(o[static_cast<std::size_t>(a)]) == half_) return true;
        return false;
    }

    double cell_volume(std::size_t node) const {
        const auto o = offsets(node);
        double v = 1.0;
        for (int a = 0; a < dim_; ++a)
            v *= std::abs(o[static_cast<std::size_t>(a)]) == half_ ? 0.5 * h_ : h_;
        return v;
    }

    /// Coordinates as structure-of-arrays: result[a][node].
    std::vector<std::vector<double>> coordinates() const {
        std::vector<std::vector<double>> c(static_cast<std::size_t>(dim_), std::vector<double>(size_));
        for (std::size_t n = 0; n < size_; ++n) {
            const auto o = offsets(n);
            for (int a = 0; a < dim_; ++a) c[static_cast<std::size_t>(a)][n] = o[static_cast<std::size_t>(a)] * h_;
        }
        return c;
    }

    /// Nodes in the closed Euclidean ball of radius K.
    std::vector<std::size_t> nodes_within(double K) const {
        std::vector<std::size_t> out;
        for (std::size_t n = 0; n < size_; ++n)
            if (norm(n) <= K * (1.0 + 1e-12)) out.push_back(n);
        return out;
    }

    /// Index of the node of `other` with the same position, if `other` contains it.
    std::ptrdiff_t locate_in(const Grid& other, std::size_t node) const {
        const auto o = offsets(node);
        if (!other.contains_offsets(o)) return -1;
        return static_cast<std::ptrdiff_t>(other.index(o));
    }

    /// Nearest node to a point (clamped to the box).
    std::size_t nearest(std::span<const double> x) const {
        Offsets o{};
        for (int a = 0; a < dim_; ++a) {
            const int k = static_cast<int>(std::lround(x[static_cast<std::size_t>(a)] / h_));
            o[static_cast<std::size_t>(a)] = std::clamp(k, -half_, half_);
        }
        return index(o);
    }

    bool same_spacing(const Grid& other) const {
        return dim_ == other.dim_ && std::abs(h_ - other.h_) <= 1e-12 * h_;
    }

    friend bool operator==(const Grid& a, const Grid& b) {
        return a.dim_ == b.dim_ && a.half_ == b.half_ && a.h_ == b.h_;
    }

private:
    int dim_ = 1;
    double h_ = 1.0;
    int half_ = 1;
    int axis_ = 3;
    std::size_t size_ = 3;
};

/// Nodal values of a function on a grid at one time.
struct FieldSample {
    Grid grid;
    double time = 0.0;
    std::vector<double> values;

    FieldSample() = default;
    FieldSample(Grid g, double t) : grid(std::move(g)), time(t), values(grid.size(), 0.0) {}
    FieldSample(Grid g, double t, std::vector<double> v) : grid(std::move(g)), time(t), values(std::move(v)) {
        if (values.size() != grid.size()) throw Error("field size does not match grid");
    }

    /// Multilinear interpolation; points outside the box are clamped onto it.
    double value_at(std::span<const double> x) const {
        const int d = grid.dim();
        const double h = grid.h();
        const int m = grid.half();
        std::array<int, kMaxDim> lo{};
        std::array<double, kMaxDim> w{};
        for (int a = 0; a < d; ++a) {
            const double u = std::clamp(x[static_cast<std::size_t>(a)] / h, double(-m), double(m));
            int k = static_cast<int>(std::floor(u));
            if (k >= m) k = m - 1;
            lo[static_cast<std::size_t>(a)] = k;
            w[static_cast<std::size_t>(a)] = u - k;
        }
        double acc = 0.0;
        for (int corner = 0; corner < (1 << d); ++corner) {
            Grid::Offsets o{};
            double weight = 1.0;
            for (int a = 0; a < d; ++a) {
                const bool up = (corner >> a) & 1;
                o[static_cast<std::size_t>(a)] = lo[static_cast<std::size_t>(a)] + (up ? 1 : 0);
                weight *= up ? w[static_cast<std::size_t>(a)] : 1.0 - w[static_cast<std::size_t>(a)];
            }
            if (weight != 0.0) acc += weight * values[grid.index(o)];
        }
        return acc;
    }

    double sup_norm() const {
        double m = 0.0;
        for (double v : values) m = std::max(m, std::abs(v));
        return m;
    }

    void check_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) throw NumericalError("non-finite value in field at t=" + std::to_string(time));
    }
};

/**
 * Sample `field` onto `target` (same spacing): nodes present in both grids are
 * copied exactly, nodes outside field's box take the clamped interpolant.
 */
inline FieldSample transfer(const FieldSample& field, const Grid& target) {
    FieldSample out(target, field.time);
    for (std::size_t n = 0; n < target.size(); ++n) {
        const auto idx = field.grid.same_spacing(target) ? target.locate_in(field.grid, n) : -1;
        if (idx >= 0) out.values[n] = field.values[static_cast<std::size_t>(idx)];
        else out.values[n] = field.value_at(target.point(n));
    }
    return out;
}

/// Restriction to the nodes of the smaller centered box of radius `radius` (same spacing).
inline FieldSample restrict_to_box(const FieldSample& field, double radius) {
    const Grid small(field.grid.dim(), radius, field.grid.h());
    if (small.half() > field.grid.half()) throw Error("restriction box larger than field box");
    return transfer(field, small);
}

} // namespace kolmo
