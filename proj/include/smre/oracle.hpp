#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "field.hpp"
#include "model.hpp"
#include "random.hpp"
#include "singular.hpp"

namespace smre {

enum class OracleMethod { monte_carlo, direct };

inline const char* to_string(OracleMethod m) { return m == OracleMethod::monte_carlo ? "mc" : "direct"; }

struct OracleEstimate {
    GridFunction values;
    /// Per-entry standard error (zero for the direct solver). Unevaluated entries hold NaN in both arrays.
    GridFunction stderr_;
    OracleMethod method = OracleMethod::direct;
    double eps = 0.0;
    double t = 0.0;
    long long sample_count = 0;
    std::uint64_t seed = 0;
};

/// u^ε(t) along one path of the switched evolution started at a renewal in state x0.
inline double sample_trajectory(const SemiMarkovModel& model, const VelocityField& field, double u0, int x0, double t,
                                double eps, CounterStream& rng) {
    const int n = model.size();
    double u = u0;
    int x = x0;
    double left = t;
    while (left > 0.0) {
        const double theta = eps * sample_sojourn(model.sojourn(x), rng);
        if (theta >= left) {
            u = flow(field, x, u, left);
            break;
        }
        u = flow(field, x, u, theta);
        left -= theta;
        const double v = rng.uniform();
        double cum = 0.0;
        int next = n - 1;
        for (int y = 0; y < n; ++y) {
            cum += model.P()(x, y);
            if (v < cum) {
                next = y;
                break;
            }
        }
        x = next;
    }
    return u;
}

struct MonteCarloOptions {
    long long n_samples = 100000;
    std::uint64_t seed = 1;
    int workers = 0;  // 0 = hardware concurrency
    int u_stride = 1;
};

/// Sample mean of φ(u^ε(t)) per start (x, u_i), keyed streams (seed, x, i, replicate).
inline OracleEstimate mc_expectation(const SemiMarkovModel& model, const VelocityField& field, const TestFunction& phi,
                                     double t, double eps, const MonteCarloOptions& opt) {
    if (opt.n_samples < 2) throw ConfigError("Monte Carlo needs at least two samples");
    const UGrid& g = field.grid();
    const int n = model.size();
    OracleEstimate est;
    est.method = OracleMethod::monte_carlo;
    est.eps = eps;
    est.t = t;
    est.sample_count = opt.n_samples;
    est.seed = opt.seed;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    est.values = GridFunction(g, n, nan);
    est.stderr_ = GridFunction(g, n, nan);

    std::vector<std::pair<int, int>> tasks;
    for (int x = 0; x < n; ++x)
        for (int i = 0; i < g.n_points; i += std::max(1, opt.u_stride)) tasks.emplace_back(x, i);

    std::atomic<std::size_t> next{0};
    auto work = [&]() {
        for (std::size_t k = next++; k < tasks.size(); k = next++) {
            const auto [x, i] = tasks[k];
            double mean = 0.0, m2 = 0.0;
            for (long long r = 0; r < opt.n_samples; ++r) {
                CounterStream rng(opt.seed, {static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(r)});
                const double y = evaluate(phi, sample_trajectory(model, field, g.node(i), x, t, eps, rng));
                const double d = y - mean;
                mean += d / static_cast<double>(r + 1);
                m2 += d * (y - mean);
            }
            est.values(x, i) = mean;
            est.stderr_(x, i) = std::sqrt(m2 / static_cast<double>(opt.n_samples - 1) / static_cast<double>(opt.n_samples));
        }
    };
    int workers = opt.workers > 0 ? opt.workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    workers = std::min<int>(workers, static_cast<int>(tasks.size()));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    return est;
}

struct DirectOptions {
    double h_s = 2e-2;
    int interpolation_order = 6;
    /// Guardrail on lag-steps × states × nodes.
    double max_work = 4e11;
    /// Guardrail on stored interpolation stencils (bytes) for non-constant fields.
    double max_stencil_bytes = 2e9;
};

namespace detail {

/// Stencils evaluating a row at u_x(εs_i) for one lag. Constant fields share one stencil away from the edges.
struct LagStencils {
    bool uniform = false;
    Stencil shared;   // offsets relative to the target node when uniform
    int lo = 0, hi = -1;  // interior node range where the shared stencil applies
    std::vector<Stencil> per_node;

    double apply(const double* row, int p) const {
        if (uniform && p >= lo && p <= hi) {
            double s = 0.0;
            for (int j = 0; j < shared.count; ++j) s += shared.w[static_cast<std::size_t>(j)] * row[p + shared.idx[static_cast<std::size_t>(j)]];
            return s;
        }
        return per_node[static_cast<std::size_t>(p)].apply(row);
    }
};

inline LagStencils make_lag_stencils(const VelocityField& field, int x, double shift_time, int order) {
    const UGrid& g = field.grid();
    LagStencils ls;
    const auto& s = field.state(x);
    if (const auto* c = std::get_if<ConstantVelocity>(&s); c && g.mode == BoundaryMode::extrapolate) {
        const double d = c->v * shift_time;
        ls.uniform = true;
        // Reference stencil at a node far from both edges.
        const int ref = g.n_points / 2;
        ls.shared = make_stencil(g, g.node(ref) + d, order);
        for (int j = 0; j < ls.shared.count; ++j) ls.shared.idx[static_cast<std::size_t>(j)] -= ref;
        int mn = 0, mx = 0;
        for (int j = 0; j < ls.shared.count; ++j) {
            mn = std::min(mn, ls.shared.idx[static_cast<std::size_t>(j)]);
            mx = std::max(mx, ls.shared.idx[static_cast<std::size_t>(j)]);
        }
        ls.lo = -mn + order;
        ls.hi = g.n_points - 1 - mx - order;
        ls.per_node.resize(static_cast<std::size_t>(g.n_points));
        for (int p = 0; p < g.n_points; ++p)
            if (p < ls.lo || p > ls.hi) ls.per_node[static_cast<std::size_t>(p)] = make_stencil(g, flow(field, x, g.node(p), shift_time), order);
        return ls;
    }
    ls.per_node = flow_stencils(field, x, shift_time, order);
    return ls;
}

} // namespace detail

/**
 * @brief Marches Φ_t = F̄(t/ε) V_t(x) φ + ∫_0^{t/ε} F(ds) V_{εs}(x) P Φ_{t-εs} forward in t.
 *
 * The s-integral uses the same product-trapezoid weights as the layer solver, on the step
 * h = ε h_s chosen so that every requested time lies on the grid.
 */
inline std::vector<OracleEstimate> direct_solve_phi(const SemiMarkovModel& model, const VelocityField& field, const TestFunction& phi,
                                                    const std::vector<double>& times, double eps, const DirectOptions& opt = {}) {
    if (times.empty()) throw ConfigError("direct solver needs at least one output time");
    if (!(eps > 0.0)) throw ConfigError("epsilon must be positive");
    const double t_max = *std::max_element(times.begin(), times.end());
    const UGrid& g = field.grid();
    const int n = model.size();
    const int nu = g.n_points;

    int steps = 0;
    std::vector<int> out_index;
    if (t_max > 0.0) {
        steps = std::max(2, 2 * static_cast<int>(std::ceil(t_max / (2.0 * eps * opt.h_s) - 1e-9)));
    }
    const double h_t = steps > 0 ? t_max / steps : 0.0;
    for (double t : times) {
        if (t == 0.0) {
            out_index.push_back(0);
            continue;
        }
        const double pos = t / h_t;
        const int idx = static_cast<int>(std::lround(pos));
        if (std::abs(pos - idx) > 1e-6) throw ConfigError("output time " + detail::fmt_double(t) + " does not fit the direct-solver grid");
        out_index.push_back(idx);
    }

    TauGrid sg;
    sg.h = steps > 0 ? h_t / eps : opt.h_s;
    sg.n = steps;
    std::vector<ConvolutionWeights> w;
    int reach = 0;
    for (int x = 0; x < n; ++x) {
        w.emplace_back(model.sojourn(x), 0, sg);
        reach = std::max(reach, w.back().reach());
    }
    const double work = static_cast<double>(steps) * std::min(steps, reach) * n * nu;
    if (work > opt.max_work)
        throw DomainError("direct solver cost guardrail exceeded (" + detail::fmt_double(work) + "); use a coarser grid or the mc oracle");

    const bool constant = field.all_constant() && g.mode == BoundaryMode::extrapolate;
    if (!constant) {
        const double bytes = static_cast<double>(n) * reach * nu * sizeof(Stencil);
        if (bytes > opt.max_stencil_bytes)
            throw DomainError("direct solver stencil storage exceeds the guardrail; use a coarser grid or the mc oracle");
    }
    std::vector<std::vector<detail::LagStencils>> lag(static_cast<std::size_t>(n));
    for (int x = 0; x < n; ++x)
        for (int i = 0; i <= std::min(steps, reach); ++i)
            lag[static_cast<std::size_t>(x)].push_back(detail::make_lag_stencils(field, x, eps * sg.tau(i), opt.interpolation_order));

    Eigen::VectorXd a0(n);
    for (int x = 0; x < n; ++x) a0(x) = w[static_cast<std::size_t>(x)].a(0);
    const Eigen::MatrixXd inv = (Eigen::MatrixXd::Identity(n, n) - a0.asDiagonal() * model.P()).inverse();

    std::vector<GridFunction> PPhi;
    PPhi.reserve(static_cast<std::size_t>(steps + 1));
    std::vector<GridFunction> keep(times.size());
    const GridFunction phi0 = sample(phi, g, n);
    PPhi.push_back(apply_state_matrix(model.P(), phi0));
    for (std::size_t q = 0; q < times.size(); ++q)
        if (out_index[q] == 0) keep[q] = phi0;

    for (int j = 1; j <= steps; ++j) {
        const double t = j * h_t;
        GridFunction rhs(g, n);
        for (int x = 0; x < n; ++x) {
            const auto& wx = w[static_cast<std::size_t>(x)];
            const double fbar = model.sojourn(x).survival(sg.tau(j));
            double* o = rhs.row(x);
            if (fbar > 0.0)
                for (int p = 0; p < nu; ++p) o[p] = fbar * evaluate(phi, flow(field, x, g.node(p), t));
            const int top = std::min(j, wx.reach());
            for (int i = 1; i <= top; ++i) {
                const double c = wx.combined(j, i);
                if (c == 0.0) continue;
                const double* src = PPhi[static_cast<std::size_t>(j - i)].row(x);
                const auto& st = lag[static_cast<std::size_t>(x)][static_cast<std::size_t>(i)];
                for (int p = 0; p < nu; ++p) o[p] += c * st.apply(src, p);
            }
        }
        GridFunction phi_j = apply_state_matrix(inv, rhs);
        for (std::size_t q = 0; q < times.size(); ++q)
            if (out_index[q] == j) keep[q] = phi_j;
        PPhi.push_back(apply_state_matrix(model.P(), phi_j));
    }

    std::vector<OracleEstimate> out;
    for (std::size_t q = 0; q < times.size(); ++q) {
        OracleEstimate e;
        e.method = OracleMethod::direct;
        e.eps = eps;
        e.t = times[q];
        e.values = keep[q];
        e.stderr_ = GridFunction(g, n, 0.0);
        out.push_back(std::move(e));
    }
    return out;
}

} // namespace smre
