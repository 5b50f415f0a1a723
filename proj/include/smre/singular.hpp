#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "field.hpp"
#include "model.hpp"
#include "operators.hpp"
#include "regular.hpp"

namespace smre {

/// Uniform layer grid τ_j = j h, j = 0..n.
struct TauGrid {
    double h = 1e-2;
    int n = 0;

    int size() const { return n + 1; }
    double tau(int j) const { return j * h; }
    double tau_max() const { return n * h; }
};

/// Smallest τ with F̄(τ) below tol (b for uniform laws).
inline double survival_horizon(const SojournDistribution& d, double tol) {
    if (d.family() == SojournFamily::uniform) return d.upper();
    double hi = 1.0;
    while (d.survival(hi) >= tol) hi *= 2.0;
    double lo = 0.0;
    for (int i = 0; i < 200 && hi - lo > 1e-12 * hi; ++i) {
        const double mid = 0.5 * (lo + hi);
        (d.survival(mid) >= tol ? lo : hi) = mid;
    }
    return hi;
}

/// τ_max = max(10 max m₁, smallest τ with max_x F̄_x(τ) < 1e-10) unless overridden.
inline TauGrid make_tau_grid(const SemiMarkovModel& model, double h_tau, double tau_max_override = 0.0) {
    if (!(h_tau > 0.0)) throw ConfigError("layer step h_tau must be positive");
    double tmax = tau_max_override;
    if (!(tmax > 0.0)) {
        tmax = 10.0 * model.max_mean_sojourn();
        for (const auto& d : model.sojourns()) tmax = std::max(tmax, survival_horizon(d, 1e-10));
    }
    TauGrid g;
    g.h = h_tau;
    g.n = static_cast<int>(std::ceil(tmax / h_tau - 1e-9));
    return g;
}

/**
 * @brief Product-trapezoid weights for ∫_0^{τ_j} s^r F(ds) f(τ_j - s), exact against F for
 * piecewise-linear f.
 */
class ConvolutionWeights {
  public:
    ConvolutionWeights(const SojournDistribution& d, int r, const TauGrid& g) {
        const double tail_tol = 1e-18 * std::max(1.0, moment(d, r));
        std::vector<double> Mr, Mr1;
        for (int m = 0; m <= g.n; ++m) {
            const double s = g.tau(m);
            Mr.push_back(s <= 0.0 ? moment(d, r) : d.upper_partial_moment(r, s));
            Mr1.push_back(s <= 0.0 ? moment(d, r + 1) : d.upper_partial_moment(r + 1, s));
            if (Mr.back() < tail_tol && m > 0) break;
        }
        const int intervals = static_cast<int>(Mr.size()) - 1;
        a_.resize(static_cast<std::size_t>(std::max(intervals, 0)));
        b_.resize(a_.size());
        for (int m = 0; m < intervals; ++m) {
            const double s0 = g.tau(m), s1 = g.tau(m + 1);
            const double dA = Mr[static_cast<std::size_t>(m)] - Mr[static_cast<std::size_t>(m + 1)];
            const double dB = Mr1[static_cast<std::size_t>(m)] - Mr1[static_cast<std::size_t>(m + 1)];
            a_[static_cast<std::size_t>(m)] = (s1 * dA - dB) / g.h;
            b_[static_cast<std::size_t>(m)] = (dB - s0 * dA) / g.h;
        }
    }

    int intervals() const { return static_cast<int>(a_.size()); }
    double a(int m) const { return m < intervals() ? a_[static_cast<std::size_t>(m)] : 0.0; }
    double b(int m) const { return m < intervals() ? b_[static_cast<std::size_t>(m)] : 0.0; }

    /// Weight of f(τ_{j-i}) in the rule for τ_j.
    double combined(int j, int i) const {
        if (j == 0) return 0.0;
        if (i == 0) return a(0);
        if (i == j) return b(j - 1);
        return a(i) + b(i - 1);
    }

    /// Largest lag i with a nonzero weight.
    int reach() const { return intervals(); }

  private:
    std::vector<double> a_, b_;
};

namespace detail {

/// out_x += Σ_{i=i0}^{j} w_x(j, i) f_x(τ_{j-i}).
inline void convolve_add(GridFunction& out, const std::vector<GridFunction>& f, const std::vector<ConvolutionWeights>& w,
                         int j, int i0) {
    const int nu = out.n_points();
    for (int x = 0; x < out.n_states(); ++x) {
        const auto& wx = w[static_cast<std::size_t>(x)];
        const int top = std::min(j, wx.reach());
        double* o = out.row(x);
        for (int i = i0; i <= top; ++i) {
            const double c = wx.combined(j, i);
            if (c == 0.0) continue;
            const double* src = f[static_cast<std::size_t>(j - i)].row(x);
            for (int p = 0; p < nu; ++p) o[p] += c * src[p];
        }
    }
}

/// Fourth-order Gregory weights for ∫_0^{τ_n} on a uniform grid.
inline std::vector<double> gregory_weights(int n, double h) {
    std::vector<double> w(static_cast<std::size_t>(n + 1), h);
    if (n < 6) {
        w.front() = w.back() = 0.5 * h;
        return w;
    }
    const double c[3] = {3.0 / 8, 7.0 / 6, 23.0 / 24};
    for (int i = 0; i < 3; ++i) {
        w[static_cast<std::size_t>(i)] = c[i] * h;
        w[static_cast<std::size_t>(n - i)] = c[i] * h;
    }
    return w;
}

inline GridFunction state_constant(const UGrid& g, int n_states, const Eigen::VectorXd& values_by_node) {
    GridFunction f(g, n_states);
    for (int x = 0; x < n_states; ++x)
        for (int i = 0; i < g.n_points; ++i) f(x, i) = values_by_node(i);
    return f;
}

/// Σ_x w_x f(x, u) as a state-constant function.
inline GridFunction weighted_state_sum(const Eigen::VectorXd& w, const GridFunction& f) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(f.n_points());
    for (int x = 0; x < f.n_states(); ++x)
        for (int i = 0; i < f.n_points(); ++i) s(i) += w(x) * f(x, i);
    return state_constant(f.grid(), f.n_states(), s);
}

} // namespace detail

/// ψ^k(τ) = F̄^{(k)}_x(τ) (V^k P φ)(x, u); Vk_phi is V^k P φ.
inline GridFunction psi_k(const OperatorSet& ops, int k, const GridFunction& Vk_phi, double tau) {
    GridFunction out = Vk_phi;
    for (int x = 0; x < ops.n_states(); ++x) {
        const double c = integrated_survival(ops.model().sojourn(x), k, tau);
        double* r = out.row(x);
        for (int i = 0; i < out.n_points(); ++i) r[i] *= c;
    }
    return out;
}

/// W_k(τ) = W_k(0) - Σ_{n=1}^k τ^n/n! U^{(n)}_{k-n}(0) for τ < 0.
inline GridFunction negative_extension(int k, const GridFunction& Wk0, const RegularExpansion& reg, double tau) {
    GridFunction w = Wk0;
    for (int n = 1; n <= k; ++n) w.axpy(-detail::ipow(tau, n) / detail::factorial(n), time_derivatives_at_zero(reg, k - n, n));
    return w;
}

/// One order of the layer solution together with its diagnostics.
struct SingularOrder {
    int k = 0;
    std::vector<GridFunction> W;
    GridFunction W0;
    GridFunction Uk0;
    GridFunction ck0;
    /// ∫_0^{τ_max} W_k dτ.
    GridFunction integral;

    GridFunction ck0_nu_form;
    GridFunction ck0_alt_normalization;

    double tau0_consistency = 0.0;          // ‖G_k(0) + U_k(0)‖
    double tau0_consistency_no_factorial = 0.0;
    double regularity = 0.0;                // ‖(P - I)[U_k(0) + G_k(0)]‖
    double regularity_pinned = 0.0;         // ‖(P - I)[U_k(0) + W_k(0)]‖
    double complement_pinned = 0.0;         // ‖(I - Π)[U_k(0) + W_k(0)]‖
    double pinned_sum = 0.0;                // ‖W_k(0) + U_k(0)‖
    double renewal_limit_defect = 0.0;      // ‖Π W_k(τ_max)‖
    double decay_ratio = 0.0;
    bool tail_monotone = true;
    double tail_violation_tau = -1.0;
    int largest_slack_state = 0;
};

struct SingularExpansion {
    int order = 0;
    TauGrid grid;
    std::vector<SingularOrder> terms;  // terms[k-1] holds W_k

    const SingularOrder& at(int k) const { return terms.at(static_cast<std::size_t>(k - 1)); }
};

/// Interpolated W_k(τ) for τ ≥ 0; zero beyond τ_max.
inline GridFunction layer_value(const SingularExpansion& s, int k, double tau) {
    const auto& W = s.at(k).W;
    const TauGrid& g = s.grid;
    if (tau >= g.tau_max()) return GridFunction(W[0].grid(), W[0].n_states());
    const double pos = tau / g.h;
    const int cell = std::min(static_cast<int>(std::floor(pos)), g.n - 1);
    const double frac = pos - cell;
    if (frac == 0.0) return W[static_cast<std::size_t>(cell)];
    const int base = std::clamp(cell - 1, 0, std::max(0, g.n - 3));
    const int cnt = std::min(4, g.n + 1);
    GridFunction out(W[0].grid(), W[0].n_states());
    for (int j = 0; j < cnt; ++j) {
        double w = 1.0;
        const double xj = base + j;
        for (int m = 0; m < cnt; ++m)
            if (m != j) w *= (pos - (base + m)) / (xj - (base + m));
        out.axpy(w, W[static_cast<std::size_t>(base + j)]);
    }
    return out;
}

/**
 * @brief Builds and solves the layer equations order by order.
 *
 * Substituting Φ = U + W into the renewal identity for Φ and collecting ε^k gives
 * W_k(τ) - ∫_0^τ F(ds) P W_k(τ-s) = -ψ^k(τ) + ψ^k_0(τ) + ψ^k_1(τ), with the regular
 * part continued to t < 0 through its Taylor data at t = 0.
 */
class SingularSolver {
  public:
    SingularSolver(const OperatorSet& ops, const RegularExpansion& reg, const GridFunction& phi, const TauGrid& grid)
        : ops_(ops), reg_(reg), phi_(phi), grid_(grid) {
        const int n = ops.n_states();
        const int N = reg.order;
        for (int r = 0; r < std::max(N, 1); ++r) {
            std::vector<ConvolutionWeights> row;
            for (int x = 0; x < n; ++x) row.emplace_back(ops.model().sojourn(x), r, grid);
            weights_.push_back(std::move(row));
        }
        Eigen::VectorXd a0(n);
        for (int x = 0; x < n; ++x) a0(x) = weights_[0][static_cast<std::size_t>(x)].a(0);
        implicit_inverse_ = (Eigen::MatrixXd::Identity(n, n) - a0.asDiagonal() * ops.P()).inverse();
        for (int j = 0; j <= grid.n; ++j) {
            std::vector<double> fb;
            for (int x = 0; x < n; ++x) fb.push_back(ops.model().sojourn(x).survival(grid.tau(j)));
            survival_.push_back(fb);
        }
        gregory_ = detail::gregory_weights(grid.n, grid.h);
    }

    const TauGrid& grid() const { return grid_; }

    /**
     * @brief c_k(0) from the renewal-limit condition W_k(+∞) = 0.
     *
     * m̂ c_k(0) = Σ_x ρ_x m₁ Σ_{m<k} [ν̃_p L_p U_m + μ_{p+1} Δ_p U_m](0) + Σ_x ρ_x Σ_{r<k} (m_r/r!) V^r P ∫_0^∞ W_{k-r},
     * with p = k - m and ν̃_p = μ_{p+1} - m_p/p!. For k = 1 this reduces to Σ π ν₁ L₁ φ.
     */
    void initial_ck0(int k, SingularOrder& out, const std::vector<SingularOrder>& lower) const {
        const UGrid& ug = phi_.grid();
        const int n = ops_.n_states();
        GridFunction acc(ug, n);
        GridFunction nu_sum(ug, n);
        for (int m = 0; m < k; ++m) {
            const int p = k - m;
            const auto d = zero_ptrs(m, p);
            const GridFunction Lp = ops_.L(p, d);
            const GridFunction Dp = delta(p, m, d);
            Eigen::VectorXd nut(n), nu(n);
            for (int x = 0; x < n; ++x) {
                nut(x) = ops_.mu(p + 1)(x) - ops_.m(p)(x) / detail::factorial(p);
                nu(x) = nu_coefficient(ops_.model().sojourn(x), p);
            }
            acc.axpy(1.0, scale_states(ops_.m(1).cwiseProduct(nut), Lp));
            acc.axpy(1.0, scale_states(ops_.m(1).cwiseProduct(ops_.mu(p + 1)), Dp));
            nu_sum.axpy(1.0, scale_states(nu, Lp));
        }
        GridFunction wterm(ug, n);
        for (int r = 1; r < k; ++r) {
            const GridFunction VPW = ops_.apply_V(ops_.apply_P(lower[static_cast<std::size_t>(k - r - 1)].integral), r);
            wterm.axpy(1.0, scale_states(ops_.m(r) / detail::factorial(r), VPW));
        }
        const double mh = ops_.m_hat();
        out.ck0 = detail::weighted_state_sum(ops_.rho() / mh, acc + wterm);
        const GridFunction w_avg = detail::weighted_state_sum(ops_.rho() / mh, wterm);
        const GridFunction nu_avg = detail::weighted_state_sum(ops_.pi(), nu_sum);
        out.ck0_nu_form = nu_avg - w_avg;
        out.ck0_alt_normalization = (1.0 / mh) * nu_avg - w_avg;
    }

    /// Forcing G_k(τ_j) = -ψ^k + ψ^k_0 + ψ^k_1 for all j (needs U_k(0) and the lower layers).
    std::vector<GridFunction> forcing(int k, const GridFunction& Uk0, const std::vector<SingularOrder>& lower,
                                      bool factorial = true, int max_index = -1) const {
        const UGrid& ug = phi_.grid();
        const int n = ops_.n_states();
        const int top = max_index < 0 ? grid_.n : max_index;
        const GridFunction Vk_phi = ops_.apply_V(phi_, k);
        const GridFunction PUk0 = ops_.apply_P(Uk0);
        std::vector<GridFunction> PDU;  // P U^{(n)}_{k-n}(0), n = 1..k
        for (int q = 1; q <= k; ++q) PDU.push_back(ops_.apply_P(time_derivatives_at_zero(reg_, k - q, q)));
        // V^r P U^{(q)}_{k-r-q}(0) and the convolutions of P W_{k-r}.
        std::vector<std::vector<GridFunction>> VPDU(static_cast<std::size_t>(k));
        std::vector<std::vector<GridFunction>> PW(static_cast<std::size_t>(k));
        for (int r = 1; r < k; ++r) {
            for (int q = 0; q <= k - r; ++q)
                VPDU[static_cast<std::size_t>(r)].push_back(ops_.apply_V(ops_.apply_P(time_derivatives_at_zero(reg_, k - r - q, q)), r));
            if (top > 0) {
                auto& pw = PW[static_cast<std::size_t>(r)];
                const auto& Wl = lower[static_cast<std::size_t>(k - r - 1)].W;
                for (const auto& w : Wl) pw.push_back(ops_.apply_P(w - Wl.back()));
            }
        }
        auto fact = [&](int q) { return factorial ? detail::factorial(q) : 1.0; };

        std::vector<GridFunction> G;
        G.reserve(static_cast<std::size_t>(top + 1));
        for (int j = 0; j <= top; ++j) {
            const double tau = grid_.tau(j);
            GridFunction g(ug, n);
            for (int x = 0; x < n; ++x) {
                const auto& d = ops_.model().sojourn(x);
                double* o = g.row(x);
                const double cpsi = -integrated_survival(d, k, tau);
                const double cU = -survival_[static_cast<std::size_t>(j)][static_cast<std::size_t>(x)];
                const double* vk = Vk_phi.row(x);
                const double* pu = PUk0.row(x);
                for (int i = 0; i < ug.n_points; ++i) o[i] = cpsi * vk[i] + cU * pu[i];
                for (int q = 1; q <= k; ++q) {
                    const double c = -tail_kernel(d, 0, q, tau) / fact(q);
                    const double* src = PDU[static_cast<std::size_t>(q - 1)].row(x);
                    for (int i = 0; i < ug.n_points; ++i) o[i] += c * src[i];
                }
                for (int r = 1; r < k; ++r)
                    for (int q = 0; q <= k - r; ++q) {
                        const double c = -tail_kernel(d, r, q, tau) / (fact(q) * detail::factorial(r));
                        const double* src = VPDU[static_cast<std::size_t>(r)][static_cast<std::size_t>(q)].row(x);
                        for (int i = 0; i < ug.n_points; ++i) o[i] += c * src[i];
                    }
            }
            for (int r = 1; r < k && j > 0; ++r) {
                GridFunction Y(ug, n);
                detail::convolve_add(Y, PW[static_cast<std::size_t>(r)], weights_[static_cast<std::size_t>(r)], j, 0);
                g.axpy(1.0 / detail::factorial(r), ops_.apply_V(Y, r));
            }
            G.push_back(std::move(g));
        }
        return G;
    }

    /// Marches the renewal equation in τ with W_k(0) = -U_k(0).
    void solve_Wk(int k, SingularOrder& out, const std::vector<SingularOrder>& lower) const {
        const UGrid& ug = phi_.grid();
        const int n = ops_.n_states();
        const auto G = forcing(k, out.Uk0, lower);
        const auto& w0 = weights_[0];
        out.W.assign(static_cast<std::size_t>(grid_.size()), GridFunction(ug, n));
        std::vector<GridFunction> PW(static_cast<std::size_t>(grid_.size()), GridFunction(ug, n));
        out.W[0] = -1.0 * out.Uk0;
        out.W0 = out.W[0];
        PW[0] = ops_.apply_P(out.W[0]);
        for (int j = 1; j <= grid_.n; ++j) {
            GridFunction rhs = G[static_cast<std::size_t>(j)];
            detail::convolve_add(rhs, PW, w0, j, 1);
            out.W[static_cast<std::size_t>(j)] = apply_state_matrix(implicit_inverse_, rhs);
            PW[static_cast<std::size_t>(j)] = ops_.apply_P(out.W[static_cast<std::size_t>(j)]);
        }

        // Boundary diagnostics.
        const GridFunction Gsum = G[0] + out.Uk0;
        out.tau0_consistency = sup_norm(Gsum);
        out.regularity = sup_norm(ops_.apply_P(Gsum) - Gsum);
        const GridFunction pinned = out.W0 + out.Uk0;
        out.pinned_sum = sup_norm(pinned);
        out.regularity_pinned = sup_norm(ops_.apply_P(pinned) - pinned);
        out.complement_pinned = sup_norm(pinned - ops_.apply_Pi(pinned));
        const auto G_nf = forcing(k, out.Uk0, lower, false, 0);
        out.tau0_consistency_no_factorial = sup_norm(G_nf[0] + out.Uk0);

        // Integral, decay and tail monotonicity.
        out.integral = GridFunction(ug, n);
        for (int j = 0; j <= grid_.n; ++j) {
            out.integral.axpy(gregory_[static_cast<std::size_t>(j)], out.W[static_cast<std::size_t>(j)]);
            out.integral.axpy(-gregory_[static_cast<std::size_t>(j)], out.W.back());
        }
        const double w0n = sup_norm(out.W0);
        const GridFunction& last = out.W.back();
        const double wl = sup_norm(last);
        out.decay_ratio = w0n > 0.0 ? wl / w0n : (wl > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        out.renewal_limit_defect = sup_norm(ops_.apply_Pi(last));
        double worst = -1.0;
        for (int x = 0; x < n; ++x)
            for (int i = 0; i < ug.n_points; ++i)
                if (std::abs(last(x, i)) > worst) {
                    worst = std::abs(last(x, i));
                    out.largest_slack_state = x;
                }
        const double tail_start = 3.0 * ops_.model().max_mean_sojourn();
        double prev = std::numeric_limits<double>::infinity();
        out.tail_monotone = true;
        for (int j = 0; j <= grid_.n; ++j) {
            if (grid_.tau(j) < tail_start) continue;
            const double cur = sup_norm(out.W[static_cast<std::size_t>(j)] - last);
            if (cur > prev + 1e-12 * w0n) {
                out.tail_monotone = false;
                out.tail_violation_tau = grid_.tau(j);
                break;
            }
            prev = cur;
        }
    }

    /// ψ^k_0(τ) by composite Simpson against the density, using the negative extension for τ - s < 0.
    GridFunction psi_k0(int k, const std::vector<SingularOrder>& lower, double tau, double h_s) const {
        const UGrid& ug = phi_.grid();
        const int n = ops_.n_states();
        GridFunction total(ug, n);
        SingularExpansion view;
        view.grid = grid_;
        view.terms = lower;
        for (int r = 1; r < k; ++r) {
            const int kr = k - r;
            GridFunction Y(ug, n);
            for (int x = 0; x < n; ++x) {
                const auto& d = ops_.model().sojourn(x);
                double lo = 0.0, hi = std::max(tau, 0.0) + 60.0 / std::max(1e-3, cramer_margin(d));
                if (d.family() == SojournFamily::uniform) {
                    lo = d.lower();
                    hi = d.upper();
                }
                // The layer meets its negative extension at s = τ with a kink, so split there.
                std::vector<double> cuts{lo};
                if (tau > lo && tau < hi) cuts.push_back(tau);
                cuts.push_back(hi);
                for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
                    const double a = cuts[seg], b = cuts[seg + 1];
                    const int steps = 2 * std::max(1, static_cast<int>(std::ceil((b - a) / (2.0 * h_s))));
                    const double hs = (b - a) / steps;
                    for (int s = 0; s <= steps; ++s) {
                        const double sv = a + s * hs;
                        const double w = (s == 0 || s == steps) ? 1.0 : (s % 2 == 1 ? 4.0 : 2.0);
                        const double dens = d.density(sv) * detail::ipow(sv, r) / detail::factorial(r) * w * hs / 3.0;
                        if (dens == 0.0) continue;
                        const double arg = tau - sv;
                        const GridFunction Wv = arg >= 0.0 ? layer_value(view, kr, arg)
                                                           : negative_extension(kr, lower[static_cast<std::size_t>(kr - 1)].W0, reg_, arg);
                        const GridFunction PWv = ops_.apply_P(Wv);
                        double* o = Y.row(x);
                        const double* src = PWv.row(x);
                        for (int i = 0; i < ug.n_points; ++i) o[i] += dens * src[i];
                    }
                }
            }
            total.axpy(1.0, ops_.apply_V(Y, r));
        }
        return total;
    }

  private:
    std::vector<const GridFunction*> zero_ptrs(int m, int p) const {
        std::vector<const GridFunction*> d;
        for (int i = 0; i <= p; ++i) d.push_back(&time_derivatives_at_zero(reg_, m, i));
        return d;
    }

    /// Δ_p U_m = -Σ_{r=1}^p C(p, r-1) V^r (-D)^{p-r} P U_m, with the U₀ variant absorbing ψ^k.
    GridFunction delta(int p, int m, const std::vector<const GridFunction*>& d) const {
        GridFunction out(d[0]->grid(), d[0]->n_states());
        const int top = (m == 0) ? p - 1 : p;
        for (int r = 1; r <= top; ++r) {
            const GridFunction base = m == 0 ? *d[static_cast<std::size_t>(p - r)] : ops_.apply_P(*d[static_cast<std::size_t>(p - r)]);
            out.axpy(-detail::binomial(p, r - 1) * detail::sign_pow(p - r), ops_.apply_V(base, r));
        }
        if (m == 0) out.axpy(1.0 - p, ops_.apply_V(*d[0], p));
        return out;
    }

    const OperatorSet& ops_;
    const RegularExpansion& reg_;
    GridFunction phi_;
    TauGrid grid_;
    std::vector<std::vector<ConvolutionWeights>> weights_;
    Eigen::MatrixXd implicit_inverse_;
    std::vector<std::vector<double>> survival_;
    std::vector<double> gregory_;
};

} // namespace smre
