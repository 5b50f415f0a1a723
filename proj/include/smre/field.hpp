#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"

namespace smre {

enum class BoundaryMode { periodic, extrapolate };

inline const char* to_string(BoundaryMode m) { return m == BoundaryMode::periodic ? "periodic" : "extrapolate"; }

/**
 * @brief Uniform u-grid. In periodic mode the last node duplicates the first.
 */
struct UGrid {
    double u_min = -8.0;
    double u_max = 8.0;
    int n_points = 257;
    BoundaryMode mode = BoundaryMode::extrapolate;
    /// Characteristics may leave [u_min, u_max] by at most this much in extrapolate mode.
    double margin = 4.0;

    static UGrid make(double u_min, double u_max, int n_points, BoundaryMode mode = BoundaryMode::extrapolate,
                      double margin = -1.0) {
        if (n_points < 16) throw ConfigError("u-grid needs at least 16 points");
        if (!(u_max > u_min)) throw ConfigError("u-grid needs u_max > u_min");
        UGrid g{u_min, u_max, n_points, mode, margin >= 0.0 ? margin : 0.25 * (u_max - u_min)};
        return g;
    }

    double spacing() const { return (u_max - u_min) / (n_points - 1); }
    double node(int i) const { return u_min + i * spacing(); }
    double length() const { return u_max - u_min; }

    bool operator==(const UGrid& o) const {
        return u_min == o.u_min && u_max == o.u_max && n_points == o.n_points && mode == o.mode;
    }
};

/**
 * @brief Values indexed by (state, grid node), stored state-major.
 */
class GridFunction {
  public:
    GridFunction() = default;
    GridFunction(const UGrid& grid, int n_states, double fill = 0.0)
        : grid_(grid), n_states_(n_states),
          values_(static_cast<std::size_t>(n_states) * static_cast<std::size_t>(grid.n_points), fill) {}

    const UGrid& grid() const { return grid_; }
    int n_states() const { return n_states_; }
    int n_points() const { return grid_.n_points; }
    std::size_t size() const { return values_.size(); }

    double& operator()(int x, int i) { return values_[index(x, i)]; }
    double operator()(int x, int i) const { return values_[index(x, i)]; }
    double* row(int x) { return values_.data() + index(x, 0); }
    const double* row(int x) const { return values_.data() + index(x, 0); }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    GridFunction& operator+=(const GridFunction& o) {
        check_shape(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
        return *this;
    }
    GridFunction& operator-=(const GridFunction& o) {
        check_shape(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
        return *this;
    }
    GridFunction& operator*=(double s) {
        for (double& v : values_) v *= s;
        return *this;
    }
    /// this += a * o
    GridFunction& axpy(double a, const GridFunction& o) {
        check_shape(o);
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * o.values_[i];
        return *this;
    }

    friend GridFunction operator+(GridFunction a, const GridFunction& b) { return a += b; }
    friend GridFunction operator-(GridFunction a, const GridFunction& b) { return a -= b; }
    friend GridFunction operator*(double s, GridFunction a) { return a *= s; }

    /// Replicates a single-state function across n_states rows.
    static GridFunction broadcast(const GridFunction& single, int n_states) {
        GridFunction out(single.grid(), n_states);
        for (int x = 0; x < n_states; ++x) std::copy(single.row(0), single.row(0) + single.n_points(), out.row(x));
        return out;
    }

  private:
    std::size_t index(int x, int i) const {
        return static_cast<std::size_t>(x) * static_cast<std::size_t>(grid_.n_points) + static_cast<std::size_t>(i);
    }
    void check_shape(const GridFunction& o) const {
        if (o.n_states_ != n_states_ || o.grid_.n_points != grid_.n_points)
            throw Error("grid function shape mismatch");
    }

    UGrid grid_{};
    int n_states_ = 0;
    std::vector<double> values_;
};

inline double sup_norm(const GridFunction& f) {
    double m = 0.0;
    for (double v : f.values()) m = std::max(m, std::abs(v));
    return m;
}

// ---------------------------------------------------------------------------
// Interpolation
// ---------------------------------------------------------------------------

/// Lagrange interpolation weights for one evaluation point.
struct Stencil {
    std::array<int, 6> idx{};
    std::array<double, 6> w{};
    int count = 0;

    double apply(const double* row) const {
        double s = 0.0;
        for (int j = 0; j < count; ++j) s += w[static_cast<std::size_t>(j)] * row[idx[static_cast<std::size_t>(j)]];
        return s;
    }
};

/// Builds a cubic (order 4) or quintic (order 6) Lagrange stencil. Outside the grid in
/// extrapolate mode the edge value is used.
inline Stencil make_stencil(const UGrid& g, double u, int order = 4) {
    Stencil st;
    const int n = g.n_points;
    const double h = g.spacing();
    double s = (u - g.u_min) / h;
    if (g.mode == BoundaryMode::periodic) {
        const double period = n - 1;
        s = std::fmod(s, period);
        if (s < 0.0) s += period;
    } else if (s <= 0.0 || s >= n - 1) {
        st.count = 1;
        st.idx[0] = s <= 0.0 ? 0 : n - 1;
        st.w[0] = 1.0;
        return st;
    }
    const int cell = std::min(static_cast<int>(std::floor(s)), n - 2);
    const double frac = s - cell;
    // Exact node hit: avoid roundoff in the weights.
    if (frac == 0.0) {
        st.count = 1;
        st.idx[0] = cell;
        st.w[0] = 1.0;
        return st;
    }
    int base = cell - (order / 2 - 1);
    if (g.mode == BoundaryMode::extrapolate) base = std::clamp(base, 0, n - order);
    st.count = order;
    for (int j = 0; j < order; ++j) {
        const double xj = base + j - cell;
        double w = 1.0;
        for (int m = 0; m < order; ++m) {
            if (m == j) continue;
            const double xm = base + m - cell;
            w *= (frac - xm) / (xj - xm);
        }
        int idx = base + j;
        if (g.mode == BoundaryMode::periodic) {
            idx %= (n - 1);
            if (idx < 0) idx += n - 1;
        }
        st.idx[static_cast<std::size_t>(j)] = idx;
        st.w[static_cast<std::size_t>(j)] = w;
    }
    return st;
}

inline double interpolate(const double* row, const UGrid& g, double u, int order = 4) {
    return make_stencil(g, u, order).apply(row);
}

// ---------------------------------------------------------------------------
// Differentiation
// ---------------------------------------------------------------------------

namespace detail {

/// Fourth-order first derivative of n equally spaced samples; one-sided 4th-order at the ends.
inline void diff4(const double* f, double* out, int n, double h, bool periodic, std::ptrdiff_t stride = 1) {
    auto F = [&](int i) { return f[i * stride]; };
    const double c = 1.0 / (12.0 * h);
    if (periodic) {
        const int p = n - 1;
        auto W = [&](int i) { return F(((i % p) + p) % p); };
        for (int i = 0; i < p; ++i) out[i * stride] = c * (W(i - 2) - 8.0 * W(i - 1) + 8.0 * W(i + 1) - W(i + 2));
        out[p * stride] = out[0];
        return;
    }
    for (int i = 2; i < n - 2; ++i) out[i * stride] = c * (F(i - 2) - 8.0 * F(i - 1) + 8.0 * F(i + 1) - F(i + 2));
    out[0] = c * (-25.0 * F(0) + 48.0 * F(1) - 36.0 * F(2) + 16.0 * F(3) - 3.0 * F(4));
    out[1 * stride] = c * (-3.0 * F(0) - 10.0 * F(1) + 18.0 * F(2) - 6.0 * F(3) + F(4));
    const int a = n - 1, b = n - 2;
    out[a * stride] = -c * (-25.0 * F(a) + 48.0 * F(a - 1) - 36.0 * F(a - 2) + 16.0 * F(a - 3) - 3.0 * F(a - 4));
    out[b * stride] = -c * (-3.0 * F(a) - 10.0 * F(a - 1) + 18.0 * F(a - 2) - 6.0 * F(a - 3) + F(a - 4));
}

} // namespace detail

/// Repeated fourth-order u-differentiation.
inline GridFunction u_derivative(const GridFunction& f, int order, int max_order = 8) {
    if (order < 0 || order > max_order)
        throw DomainError("u-derivative order " + std::to_string(order) + " exceeds maximum " + std::to_string(max_order));
    GridFunction cur = f;
    GridFunction next(f.grid(), f.n_states());
    const bool periodic = f.grid().mode == BoundaryMode::periodic;
    for (int k = 0; k < order; ++k) {
        for (int x = 0; x < f.n_states(); ++x) detail::diff4(cur.row(x), next.row(x), f.n_points(), f.grid().spacing(), periodic);
        std::swap(cur, next);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Velocity fields and flows
// ---------------------------------------------------------------------------

struct ConstantVelocity {
    double v = 0.0;
};
struct LinearVelocity {
    double a = 0.0;
    double b = 0.0;
};
/// Values on the field's u-grid, cubic-interpolated with constant extension.
struct TabulatedVelocity {
    std::vector<double> values;
};

using StateVelocity = std::variant<ConstantVelocity, LinearVelocity, TabulatedVelocity>;

/**
 * @brief Per-state velocity v(u; x) of the switched evolution.
 */
class VelocityField {
  public:
    VelocityField(const UGrid& grid, std::vector<StateVelocity> states, double flow_step = 2.5e-3)
        : grid_(grid), states_(std::move(states)), flow_step_(flow_step) {
        if (states_.empty()) throw ConfigError("velocity field needs at least one state");
        for (const auto& s : states_)
            if (const auto* t = std::get_if<TabulatedVelocity>(&s); t && static_cast<int>(t->values.size()) != grid_.n_points)
                throw ConfigError("tabulated velocity must have one value per grid node");
        on_grid_.resize(states_.size());
        for (int x = 0; x < n_states(); ++x) {
            auto& g = on_grid_[static_cast<std::size_t>(x)];
            g.resize(static_cast<std::size_t>(grid_.n_points));
            for (int i = 0; i < grid_.n_points; ++i) g[static_cast<std::size_t>(i)] = (*this)(x, grid_.node(i));
        }
    }

    int n_states() const { return static_cast<int>(states_.size()); }
    const UGrid& grid() const { return grid_; }
    const StateVelocity& state(int x) const { return states_[static_cast<std::size_t>(x)]; }
    double flow_step() const { return flow_step_; }
    void set_flow_step(double h) { flow_step_ = h; }

    double operator()(int x, double u) const {
        const auto& s = state(x);
        if (const auto* c = std::get_if<ConstantVelocity>(&s)) return c->v;
        if (const auto* l = std::get_if<LinearVelocity>(&s)) return l->a * u + l->b;
        return interpolate(std::get<TabulatedVelocity>(s).values.data(), grid_, u, 4);
    }

    const std::vector<double>& on_grid(int x) const { return on_grid_[static_cast<std::size_t>(x)]; }

    bool all_constant() const {
        return std::all_of(states_.begin(), states_.end(), [](const auto& s) { return std::holds_alternative<ConstantVelocity>(s); });
    }

    /// Condition (33) bound: sup over grid nodes and states of |v|.
    double bound() const {
        double m = 0.0;
        for (const auto& g : on_grid_)
            for (double v : g) m = std::max(m, std::abs(v));
        return m;
    }

  private:
    UGrid grid_;
    std::vector<StateVelocity> states_;
    std::vector<std::vector<double>> on_grid_;
    double flow_step_;
};

namespace detail {

inline void check_escape(const VelocityField& field, int x, double u0, double t, double u) {
    const UGrid& g = field.grid();
    if (g.mode == BoundaryMode::periodic) return;
    if (!std::isfinite(u) || u < g.u_min - g.margin || u > g.u_max + g.margin)
        throw DomainEscape("flow left the u-window: state " + std::to_string(x) + ", u0=" + fmt_double(u0) +
                           ", t=" + fmt_double(t));
}

} // namespace detail

/// Characteristic u_x(t) with u_x(0) = u0. Closed form for constant and linear fields, RK4 otherwise.
inline double flow(const VelocityField& field, int x, double u0, double t) {
    const auto& s = field.state(x);
    double u;
    if (const auto* c = std::get_if<ConstantVelocity>(&s)) {
        u = u0 + c->v * t;
    } else if (const auto* l = std::get_if<LinearVelocity>(&s)) {
        u = l->a == 0.0 ? u0 + l->b * t : u0 + (l->a * u0 + l->b) * std::expm1(l->a * t) / l->a;
    } else {
        const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(t) / field.flow_step())));
        const double h = t / steps;
        u = u0;
        for (int i = 0; i < steps; ++i) {
            const double k1 = field(x, u);
            const double k2 = field(x, u + 0.5 * h * k1);
            const double k3 = field(x, u + 0.5 * h * k2);
            const double k4 = field(x, u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            detail::check_escape(field, x, u0, t, u);
        }
    }
    detail::check_escape(field, x, u0, t, u);
    return u;
}

/// Stencils evaluating a row at u_x(t) for every grid node.
inline std::vector<Stencil> flow_stencils(const VelocityField& field, int x, double t, int order = 4) {
    const UGrid& g = field.grid();
    std::vector<Stencil> out(static_cast<std::size_t>(g.n_points));
    for (int i = 0; i < g.n_points; ++i) out[static_cast<std::size_t>(i)] = make_stencil(g, flow(field, x, g.node(i), t), order);
    return out;
}

/// (V_t(x) f)(y, u) = f(y, u_x(t)) for every row y of f.
inline GridFunction semigroup_apply(const VelocityField& field, int x, double t, const GridFunction& f, int order = 6) {
    if (t == 0.0) return f;
    const auto st = flow_stencils(field, x, t, order);
    GridFunction out(f.grid(), f.n_states());
    for (int y = 0; y < f.n_states(); ++y)
        for (int i = 0; i < f.n_points(); ++i) out(y, i) = st[static_cast<std::size_t>(i)].apply(f.row(y));
    return out;
}

/// Diagonal action (V_t f)(x, u) = f(x, u_x(t)).
inline GridFunction semigroup_apply(const VelocityField& field, double t, const GridFunction& f, int order = 6) {
    if (t == 0.0) return f;
    GridFunction out(f.grid(), f.n_states());
    for (int x = 0; x < f.n_states(); ++x) {
        const auto st = flow_stencils(field, field.n_states() == 1 ? 0 : x, t, order);
        for (int i = 0; i < f.n_points(); ++i) out(x, i) = st[static_cast<std::size_t>(i)].apply(f.row(x));
    }
    return out;
}

/// (V f)(x, u) = v(u; x) ∂_u f(x, u). A single-state field is broadcast over all rows.
inline GridFunction velocity_operator_apply(const VelocityField& field, const GridFunction& f) {
    if (field.n_states() != 1 && field.n_states() != f.n_states())
        throw Error("velocity field and grid function disagree on the number of states");
    GridFunction out(f.grid(), f.n_states());
    const bool periodic = f.grid().mode == BoundaryMode::periodic;
    for (int x = 0; x < f.n_states(); ++x) {
        detail::diff4(f.row(x), out.row(x), f.n_points(), f.grid().spacing(), periodic);
        const auto& v = field.on_grid(field.n_states() == 1 ? 0 : x);
        double* r = out.row(x);
        for (int i = 0; i < f.n_points(); ++i) r[i] *= v[static_cast<std::size_t>(i)];
    }
    return out;
}

/// v̂(u) = Σ_x π_x v(u; x), keeping constant or affine structure when every state shares it.
inline VelocityField averaged_velocity(const Eigen::VectorXd& pi, const VelocityField& field) {
    if (pi.size() != field.n_states()) throw Error("stationary vector length does not match the velocity field");
    bool all_affine = true;
    bool all_constant = true;
    double a = 0.0, b = 0.0;
    for (int x = 0; x < field.n_states(); ++x) {
        const auto& s = field.state(x);
        if (const auto* c = std::get_if<ConstantVelocity>(&s)) {
            b += pi(x) * c->v;
        } else if (const auto* l = std::get_if<LinearVelocity>(&s)) {
            all_constant = false;
            a += pi(x) * l->a;
            b += pi(x) * l->b;
        } else {
            all_affine = all_constant = false;
        }
    }
    std::vector<StateVelocity> avg;
    if (all_constant) {
        avg.emplace_back(ConstantVelocity{b});
    } else if (all_affine) {
        avg.emplace_back(LinearVelocity{a, b});
    } else {
        TabulatedVelocity t;
        t.values.assign(static_cast<std::size_t>(field.grid().n_points), 0.0);
        for (int x = 0; x < field.n_states(); ++x)
            for (int i = 0; i < field.grid().n_points; ++i) t.values[static_cast<std::size_t>(i)] += pi(x) * field.on_grid(x)[static_cast<std::size_t>(i)];
        avg.emplace_back(std::move(t));
    }
    return VelocityField(field.grid(), std::move(avg), field.flow_step());
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

struct Gaussian {
    double center = 0.0;
    double width = 1.0;
};
/// ((1 + cos(π(u-c)/w)) / 2)^power on |u-c| < w.
struct CosineBump {
    double center = 0.0;
    double width = 1.0;
    int power = 8;
};
/// (1 - ((u-c)/w)^2)^power on |u-c| < w.
struct PolynomialBump {
    double center = 0.0;
    double width = 1.0;
    int power = 8;
};

using TestFunction = std::variant<Gaussian, CosineBump, PolynomialBump>;

inline double evaluate(const TestFunction& phi, double u) {
    if (const auto* g = std::get_if<Gaussian>(&phi)) {
        const double z = (u - g->center) / g->width;
        return std::exp(-0.5 * z * z);
    }
    if (const auto* c = std::get_if<CosineBump>(&phi)) {
        const double z = (u - c->center) / c->width;
        if (std::abs(z) >= 1.0) return 0.0;
        return detail::ipow(0.5 * (1.0 + std::cos(std::numbers::pi * z)), c->power);
    }
    const auto& p = std::get<PolynomialBump>(phi);
    const double z = (u - p.center) / p.width;
    if (std::abs(z) >= 1.0) return 0.0;
    return detail::ipow(1.0 - z * z, p.power);
}

/// Samples φ onto a state-constant grid function.
inline GridFunction sample(const TestFunction& phi, const UGrid& grid, int n_states) {
    GridFunction f(grid, n_states);
    for (int i = 0; i < grid.n_points; ++i) {
        const double v = evaluate(phi, grid.node(i));
        for (int x = 0; x < n_states; ++x) f(x, i) = v;
    }
    return f;
}

} // namespace smre
