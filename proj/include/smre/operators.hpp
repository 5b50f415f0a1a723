#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "field.hpp"
#include "model.hpp"

namespace smre {

/**
 * @brief Uniform t-grid t_i = (i - pad) h, i = 0 .. n_steps + 2 pad.
 *
 * The pad nodes on both sides let every derivative needed at t = 0 and
 * t = T use central stencils; one-sided stencils only touch the pad.
 */
struct TimeGrid {
    double h = 1e-2;
    int n_steps = 100;
    int pad = 16;

    int size() const { return n_steps + 2 * pad + 1; }
    int zero_index() const { return pad; }
    int end_index() const { return pad + n_steps; }
    double time(int i) const { return (i - pad) * h; }
    double horizon() const { return n_steps * h; }

    /// Index of t, which must lie on the grid.
    int index_of(double t) const {
        const double s = t / h + pad;
        const int i = static_cast<int>(std::lround(s));
        if (std::abs(s - i) > 1e-9 || i < 0 || i >= size()) throw Error("time " + detail::fmt_double(t) + " is not on the t-grid");
        return i;
    }
};

/// GridFunctions on a TimeGrid.
struct TimeSeries {
    TimeGrid grid;
    std::vector<GridFunction> frames;

    TimeSeries() = default;
    TimeSeries(const TimeGrid& g, const UGrid& ug, int n_states) : grid(g), frames(static_cast<std::size_t>(g.size()), GridFunction(ug, n_states)) {}

    GridFunction& operator[](int i) { return frames[static_cast<std::size_t>(i)]; }
    const GridFunction& operator[](int i) const { return frames[static_cast<std::size_t>(i)]; }
    int size() const { return static_cast<int>(frames.size()); }
    const GridFunction& at_zero() const { return (*this)[grid.zero_index()]; }
};

/// Fourth-order time derivative (central inside, one-sided 4th-order at both ends).
inline TimeSeries time_derivative(const TimeSeries& s) {
    TimeSeries out = s;
    const int nt = s.size();
    if (nt < 5) throw DomainError("time derivative needs at least five frames");
    const std::size_t ne = s[0].size();
    std::vector<double> in(static_cast<std::size_t>(nt)), res(static_cast<std::size_t>(nt));
    for (std::size_t e = 0; e < ne; ++e) {
        for (int i = 0; i < nt; ++i) in[static_cast<std::size_t>(i)] = s[i].values()[e];
        detail::diff4(in.data(), res.data(), nt, s.grid.h, false);
        for (int i = 0; i < nt; ++i) out[i].values()[e] = res[static_cast<std::size_t>(i)];
    }
    return out;
}

/// D^0 .. D^max_order of a series.
inline std::vector<TimeSeries> time_derivatives(const TimeSeries& s, int max_order) {
    std::vector<TimeSeries> d;
    d.push_back(s);
    for (int k = 1; k <= max_order; ++k) d.push_back(time_derivative(d.back()));
    return d;
}

inline TimeSeries map_series(const TimeSeries& s, const auto& fn) {
    TimeSeries out;
    out.grid = s.grid;
    out.frames.reserve(s.frames.size());
    for (const auto& f : s.frames) out.frames.push_back(fn(f));
    return out;
}

// ---------------------------------------------------------------------------
// Statewise matrices
// ---------------------------------------------------------------------------

/// (M f)(x, u) = Σ_y M_xy f(y, u).
inline GridFunction apply_state_matrix(const Eigen::MatrixXd& M, const GridFunction& f) {
    GridFunction out(f.grid(), f.n_states());
    const int n = f.n_states();
    for (int x = 0; x < n; ++x) {
        double* o = out.row(x);
        for (int y = 0; y < n; ++y) {
            const double m = M(x, y);
            if (m == 0.0) continue;
            const double* r = f.row(y);
            for (int i = 0; i < f.n_points(); ++i) o[i] += m * r[i];
        }
    }
    return out;
}

/// Row-wise scaling (d ⊙ f)(x, u) = d_x f(x, u).
inline GridFunction scale_states(const Eigen::VectorXd& d, GridFunction f) {
    for (int x = 0; x < f.n_states(); ++x) {
        double* r = f.row(x);
        for (int i = 0; i < f.n_points(); ++i) r[i] *= d(x);
    }
    return f;
}

struct ProjectorData {
    Eigen::VectorXd pi;
};

/// (Π f)(x, u) = Σ_y π_y f(y, u), identical in every row.
inline GridFunction projector_apply(const Eigen::VectorXd& pi, const GridFunction& f) {
    GridFunction out(f.grid(), f.n_states());
    for (int i = 0; i < f.n_points(); ++i) {
        double s = 0.0;
        for (int y = 0; y < f.n_states(); ++y) s += pi(y) * f(y, i);
        for (int x = 0; x < f.n_states(); ++x) out(x, i) = s;
    }
    return out;
}

struct PotentialData {
    Eigen::MatrixXd R0;
    Eigen::MatrixXd Pi;
    double condition = 0.0;
    double residual_R0Q = 0.0;
    double residual_QR0 = 0.0;
    double residual_PiR0 = 0.0;
    double residual_R0Pi = 0.0;
};

inline double max_abs(const Eigen::MatrixXd& M) { return M.size() == 0 ? 0.0 : M.cwiseAbs().maxCoeff(); }

/// R₀ = (Q + Π)⁻¹ - Π with the defining identities checked.
inline PotentialData potential_build(const Eigen::MatrixXd& Q, const Eigen::VectorXd& pi) {
    const auto n = Q.rows();
    PotentialData pd;
    pd.Pi = Eigen::VectorXd::Ones(n) * pi.transpose();
    const Eigen::MatrixXd A = Q + pd.Pi;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const auto& sv = svd.singularValues();
    pd.condition = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
    if (!(pd.condition <= 1e12)) throw DomainError("Q + Pi is near singular (condition " + detail::fmt_double(pd.condition) + ")");
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    Eigen::MatrixXd inv = lu.solve(I);
    inv += lu.solve(I - A * inv);
    pd.R0 = inv - pd.Pi;
    pd.residual_R0Q = max_abs(pd.R0 * Q - (I - pd.Pi));
    pd.residual_QR0 = max_abs(Q * pd.R0 - (I - pd.Pi));
    pd.residual_PiR0 = max_abs(pd.Pi * pd.R0);
    pd.residual_R0Pi = max_abs(pd.R0 * pd.Pi);
    const double worst = std::max({pd.residual_R0Q, pd.residual_QR0, pd.residual_PiR0, pd.residual_R0Pi});
    if (!(worst < 1e-10)) throw DomainError("potential identities violated (residual " + detail::fmt_double(worst) + ")");
    return pd;
}

inline GridFunction potential_apply(const PotentialData& pd, const GridFunction& f) { return apply_state_matrix(pd.R0, f); }

// ---------------------------------------------------------------------------
// Operator set
// ---------------------------------------------------------------------------

/**
 * @brief Everything the expansion needs from the model and the field.
 *
 * L_k U = -(V - ∂_t)^k P U = -Σ_i C(k,i) (-1)^i V^{k-i} P U^{(i)},
 * which gives L_1 U = P U' - V P U and the binomial weights 1, 2, 1 at k = 2.
 */
class OperatorSet {
  public:
    OperatorSet(const SemiMarkovModel& model, const VelocityField& field, int max_order)
        : model_(model), field_(field), averaged_(field), max_order_(max_order) {
        if (field.n_states() != model.size()) throw ConfigError("velocity field must define one velocity per state");
        rho_ = embedded_stationary(model);
        const auto st = semi_markov_stationary(model, rho_);
        pi_ = st.pi;
        m_hat_ = st.m_hat;
        Q_ = generator(model);
        potential_ = potential_build(Q_, pi_);
        averaged_ = averaged_velocity(pi_, field);
        for (int k = 0; k <= max_order + 3; ++k) {
            moments_.push_back(model.moments(k));
            mu_.push_back(k == 0 ? Eigen::VectorXd::Ones(model.size()) : model.reduced_moments(k));
        }
    }

    const SemiMarkovModel& model() const { return model_; }
    const VelocityField& field() const { return field_; }
    const VelocityField& averaged_field() const { return averaged_; }
    int n_states() const { return model_.size(); }
    int max_order() const { return max_order_; }
    const Eigen::VectorXd& rho() const { return rho_; }
    const Eigen::VectorXd& pi() const { return pi_; }
    double m_hat() const { return m_hat_; }
    const Eigen::MatrixXd& Q() const { return Q_; }
    const Eigen::MatrixXd& P() const { return model_.P(); }
    const PotentialData& potential() const { return potential_; }
    /// m_k(x) per state.
    const Eigen::VectorXd& m(int k) const { return moments_.at(static_cast<std::size_t>(k)); }
    /// μ_k(x) per state.
    const Eigen::VectorXd& mu(int k) const { return mu_.at(static_cast<std::size_t>(k)); }

    GridFunction apply_P(const GridFunction& f) const { return apply_state_matrix(model_.P(), f); }
    GridFunction apply_Q(const GridFunction& f) const { return apply_state_matrix(Q_, f); }
    GridFunction apply_R0(const GridFunction& f) const { return potential_apply(potential_, f); }
    GridFunction apply_Pi(const GridFunction& f) const { return projector_apply(pi_, f); }
    GridFunction apply_V(const GridFunction& f, int power = 1) const {
        GridFunction g = f;
        for (int i = 0; i < power; ++i) g = velocity_operator_apply(field_, g);
        return g;
    }
    GridFunction apply_Vhat(const GridFunction& f, int power = 1) const {
        GridFunction g = f;
        for (int i = 0; i < power; ++i) g = velocity_operator_apply(averaged_, g);
        return g;
    }

    /// L_k at one time given D^0 U .. D^k U there.
    GridFunction L(int k, const std::vector<const GridFunction*>& d) const {
        if (static_cast<int>(d.size()) < k + 1) throw DomainError("L_" + std::to_string(k) + " needs " + std::to_string(k) + " time derivatives");
        GridFunction acc(d[0]->grid(), d[0]->n_states());
        for (int i = 0; i <= k; ++i) {
            const double c = -detail::binomial(k, i) * detail::sign_pow(i);
            acc.axpy(c, apply_V(apply_P(*d[static_cast<std::size_t>(i)]), k - i));
        }
        return acc;
    }

    /// Σ_n (-1)^n V^n P U^{(k-n)} without binomial weights; kept for adjudication only.
    GridFunction L_literal(int k, const std::vector<const GridFunction*>& d) const {
        if (static_cast<int>(d.size()) < k + 1) throw DomainError("literal L_k needs k time derivatives");
        GridFunction acc(d[0]->grid(), d[0]->n_states());
        for (int n = 0; n <= k; ++n) acc.axpy(detail::sign_pow(n), apply_V(apply_P(*d[static_cast<std::size_t>(k - n)]), n));
        return acc;
    }

    /// L_k over a whole series given its derivative list.
    TimeSeries L_series(int k, const std::vector<TimeSeries>& d) const {
        if (static_cast<int>(d.size()) < k + 1) throw DomainError("L_" + std::to_string(k) + " needs " + std::to_string(k) + " time derivatives");
        TimeSeries out = d[0];
        for (int t = 0; t < d[0].size(); ++t) out[t] = L(k, frame_ptrs(d, t, k));
        return out;
    }

    /// D^0 c .. D^max c for a solution of ∂_t c = V̂ c + g, taken from the equation: D^n c = V̂ D^{n-1} c + D^{n-1} g.
    std::vector<TimeSeries> transport_derivatives(const TimeSeries& c, const TimeSeries* g, int max_order) const {
        std::vector<TimeSeries> d{c};
        std::vector<TimeSeries> dg;
        if (g && max_order > 0) dg = time_derivatives(*g, max_order - 1);
        for (int n = 1; n <= max_order; ++n) {
            TimeSeries next = map_series(d.back(), [&](const GridFunction& f) { return apply_Vhat(f); });
            if (g)
                for (int t = 0; t < next.size(); ++t) next[t] += dg[static_cast<std::size_t>(n - 1)][t];
            d.push_back(std::move(next));
        }
        return d;
    }

    static std::vector<const GridFunction*> frame_ptrs(const std::vector<TimeSeries>& d, int t, int k) {
        std::vector<const GridFunction*> p;
        for (int i = 0; i <= k; ++i) p.push_back(&d[static_cast<std::size_t>(i)][t]);
        return p;
    }

    /**
     * @brief Unprojected 𝔏_0 c .. 𝔏_j c for a series c.
     *
     * 𝔏_0 = L_1 and 𝔏_j = Σ_{n=1}^j μ_n L_n R₀ 𝔏_{j-n} + μ_{j+1} L_{j+1}.
     */
    std::vector<TimeSeries> frak_L_all(int j, const std::vector<TimeSeries>& dc) const {
        if (static_cast<int>(dc.size()) < j + 2) throw DomainError("frak L_" + std::to_string(j) + " needs " + std::to_string(j + 1) + " derivatives");
        std::vector<TimeSeries> out;
        std::vector<std::vector<TimeSeries>> dR;  // derivatives of R₀ 𝔏_i c
        for (int jj = 0; jj <= j; ++jj) {
            TimeSeries cur = map_series(L_series(jj + 1, dc), [&](const GridFunction& f) { return scale_states(mu(jj + 1), f); });
            for (int n = 1; n <= jj; ++n) {
                const TimeSeries Ln = L_series(n, dR[static_cast<std::size_t>(jj - n)]);
                for (int t = 0; t < cur.size(); ++t) cur[t].axpy(1.0, scale_states(mu(n), Ln[t]));
            }
            out.push_back(cur);
            dR.push_back(time_derivatives(map_series(cur, [&](const GridFunction& f) { return apply_R0(f); }), j));
        }
        return out;
    }

  private:
    SemiMarkovModel model_;
    VelocityField field_;
    VelocityField averaged_;
    int max_order_;
    Eigen::VectorXd rho_;
    Eigen::VectorXd pi_;
    double m_hat_ = 0.0;
    Eigen::MatrixXd Q_;
    PotentialData potential_;
    std::vector<Eigen::VectorXd> moments_;
    std::vector<Eigen::VectorXd> mu_;
};

/// L_k U at one t-index, from the derivative list of U.
inline GridFunction L_apply(const OperatorSet& ops, int k, const std::vector<TimeSeries>& dU, int t_index) {
    return ops.L(k, OperatorSet::frame_ptrs(dU, t_index, k));
}

/// Π𝔏_k c at one t-index, from the derivative list of c.
inline GridFunction frak_L_apply(const OperatorSet& ops, int k, const std::vector<TimeSeries>& dc, int t_index) {
    if (k < 0) throw DomainError("frak L order must be nonnegative");
    return ops.apply_Pi(ops.frak_L_all(k, dc)[static_cast<std::size_t>(k)][t_index]);
}

} // namespace smre
