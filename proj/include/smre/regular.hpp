#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <vector>

#include "field.hpp"
#include "operators.hpp"

namespace smre {

/**
 * @brief Interpolation stencils for the averaged flow over every signed lag of a TimeGrid.
 *
 * at(l)[i] evaluates a row at û_{u_i}(l h).
 */
class CharacteristicTable {
  public:
    CharacteristicTable(const VelocityField& averaged, const TimeGrid& tg, int order = 6)
        : max_lag_(tg.size() - 1) {
        if (averaged.n_states() != 1) throw Error("characteristic table needs a single-state field");
        table_.reserve(static_cast<std::size_t>(2 * max_lag_ + 1));
        for (int l = -max_lag_; l <= max_lag_; ++l) table_.push_back(flow_stencils(averaged, 0, l * tg.h, order));
    }

    const std::vector<Stencil>& at(int lag) const {
        if (std::abs(lag) > max_lag_) throw Error("lag outside the characteristic table");
        return table_[static_cast<std::size_t>(lag + max_lag_)];
    }

  private:
    int max_lag_;
    std::vector<std::vector<Stencil>> table_;
};

namespace detail {

/// Fourth-order weights on nodes 0..len-1 for ∫ over m unit intervals (len may exceed m + 1 when m = 1).
inline std::vector<double> duhamel_weights(int m) {
    if (m == 0) return {0.0};
    if (m == 1) return {9.0 / 24, 19.0 / 24, -5.0 / 24, 1.0 / 24};
    std::vector<double> w(static_cast<std::size_t>(m + 1), 0.0);
    const int simpson = (m % 2 == 0) ? m : m - 3;
    for (int i = 0; i + 2 <= simpson; i += 2) {
        w[static_cast<std::size_t>(i)] += 1.0 / 3;
        w[static_cast<std::size_t>(i + 1)] += 4.0 / 3;
        w[static_cast<std::size_t>(i + 2)] += 1.0 / 3;
    }
    if (simpson != m) {
        const double c[4] = {3.0 / 8, 9.0 / 8, 9.0 / 8, 3.0 / 8};
        for (int j = 0; j < 4; ++j) w[static_cast<std::size_t>(simpson + j)] += c[j];
    }
    return w;
}

inline void copy_row_to_all(GridFunction& f, const std::vector<double>& row) {
    for (int x = 0; x < f.n_states(); ++x) std::copy(row.begin(), row.end(), f.row(x));
}

} // namespace detail

/// c₀(t, u) = φ(û_u(t)), evaluated in closed form along the averaged characteristics.
inline TimeSeries solve_c0(const TestFunction& phi, const VelocityField& averaged, const TimeGrid& tg, int n_states) {
    const UGrid& ug = averaged.grid();
    TimeSeries c(tg, ug, n_states);
    std::vector<double> row(static_cast<std::size_t>(ug.n_points));
    for (int t = 0; t < tg.size(); ++t) {
        for (int i = 0; i < ug.n_points; ++i)
            row[static_cast<std::size_t>(i)] = evaluate(phi, flow(averaged, 0, ug.node(i), tg.time(t)));
        detail::copy_row_to_all(c[t], row);
    }
    return c;
}

/**
 * @brief Solves ∂_t c = V̂ c + g with c(0) = c0 by Duhamel's formula along the averaged characteristics:
 * c(t, u) = c0(û_u(t)) + ∫_0^t g(s, û_u(t - s)) ds, for t of either sign.
 */
inline TimeSeries solve_ck(const TimeSeries& g, const GridFunction& c0, const CharacteristicTable& table) {
    const TimeGrid& tg = g.grid;
    const UGrid& ug = c0.grid();
    const int n_states = c0.n_states();
    const int nu = ug.n_points;
    TimeSeries c(tg, ug, n_states);
    std::vector<double> row(static_cast<std::size_t>(nu));
    for (int t = 0; t < tg.size(); ++t) {
        const int m = t - tg.zero_index();
        const auto& home = table.at(m);
        for (int i = 0; i < nu; ++i) row[static_cast<std::size_t>(i)] = home[static_cast<std::size_t>(i)].apply(c0.row(0));
        const int dir = m >= 0 ? 1 : -1;
        const auto w = detail::duhamel_weights(std::abs(m));
        for (std::size_t j = 0; j < w.size(); ++j) {
            if (w[j] == 0.0) continue;
            const int node = tg.zero_index() + dir * static_cast<int>(j);
            const auto& st = table.at(t - node);
            const double* src = g[node].row(0);
            const double wj = dir * tg.h * w[j];
            for (int i = 0; i < nu; ++i) row[static_cast<std::size_t>(i)] += wj * st[static_cast<std::size_t>(i)].apply(src);
        }
        detail::copy_row_to_all(c[t], row);
    }
    return c;
}

/// X_k = Σ_{n=1}^k μ_n L_n U_{k-n}, from the derivative lists dU[m] of the lower terms.
inline TimeSeries regular_range_source(const OperatorSet& ops, int k, const std::vector<std::vector<TimeSeries>>& dU) {
    TimeSeries X = dU[0][0];
    for (auto& f : X.frames) f *= 0.0;
    for (int n = 1; n <= k; ++n) {
        const TimeSeries Ln = ops.L_series(n, dU[static_cast<std::size_t>(k - n)]);
        for (int t = 0; t < X.size(); ++t) X[t].axpy(1.0, scale_states(ops.mu(n), Ln[t]));
    }
    return X;
}

/// U_k^R = R₀ X_k.
inline TimeSeries regular_term_range(const OperatorSet& ops, int k, const std::vector<std::vector<TimeSeries>>& dU) {
    return map_series(regular_range_source(ops, k, dU), [&](const GridFunction& f) { return ops.apply_R0(f); });
}

/**
 * @brief Regular part U_k = c_k 𝟏 + U_k^R for k = 0..N on a padded t-grid.
 */
struct RegularExpansion {
    int order = 0;
    TimeGrid grid;
    std::vector<TimeSeries> c;
    std::vector<TimeSeries> U;
    std::vector<TimeSeries> UR;
    /// dU[k][n] = n-th time derivative of U_k.
    std::vector<std::vector<TimeSeries>> dU;
    /// Projected sources g_k = -Σ_j Π𝔏_j c_{k-j} that drive c_k.
    std::vector<TimeSeries> sources;
};

/// U_k(t) at one t-index.
inline const GridFunction& regular_term(const RegularExpansion& reg, int k, int t_index) {
    return reg.U.at(static_cast<std::size_t>(k))[t_index];
}

/// U^{(n)}_k(0).
inline const GridFunction& time_derivatives_at_zero(const RegularExpansion& reg, int k, int n) {
    const auto& d = reg.dU.at(static_cast<std::size_t>(k));
    if (n >= static_cast<int>(d.size()))
        throw DomainError("U_" + std::to_string(k) + " has no derivative of order " + std::to_string(n));
    return d[static_cast<std::size_t>(n)].at_zero();
}

/// Sup over the unpadded part [0, T] of the grid.
inline double interior_sup(const TimeSeries& s) {
    double m = 0.0;
    for (int t = s.grid.zero_index(); t <= s.grid.end_index(); ++t) m = std::max(m, sup_norm(s[t]));
    return m;
}

} // namespace smre
