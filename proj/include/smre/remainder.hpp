#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "expansion.hpp"
#include "oracle.hpp"

namespace smre {

/// Sup-norm of Φ^ε - Φ^{ε,N'} at one (ε, t) together with the oracle noise floor.
struct RemainderPoint {
    double eps = 0.0;
    double t = 0.0;
    int order = 0;
    double error = 0.0;
    /// 4 standard errors for Monte Carlo, zero for the direct solver.
    double noise_floor = 0.0;
    bool included = true;
};

struct SlopeFit {
    int order = 0;
    double t = 0.0;
    double slope = std::numeric_limits<double>::quiet_NaN();
    double intercept = std::numeric_limits<double>::quiet_NaN();
    int points = 0;
    /// "ok", "MC-noise-limited" or "discretization-floor".
    std::string status = "ok";
};

struct RemainderReport {
    OracleMethod method = OracleMethod::direct;
    std::vector<RemainderPoint> points;
    std::vector<SlopeFit> fits;
};

/// Errors below this level are treated as the discretization floor.
inline constexpr double discretization_floor = 1e-5;

/// Sup over entries the oracle evaluated.
inline double remainder_error(const OracleEstimate& oracle, const GridFunction& approx, double* max_stderr = nullptr) {
    double err = 0.0, se = 0.0;
    const auto& v = oracle.values.values();
    const auto& s = oracle.stderr_.values();
    const auto& a = approx.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (std::isnan(v[i])) continue;
        err = std::max(err, std::abs(v[i] - a[i]));
        se = std::max(se, s[i]);
    }
    if (max_stderr) *max_stderr = se;
    return err;
}

/// Least-squares line through (log ε, log error).
inline void fit_log_log(const std::vector<double>& eps, const std::vector<double>& err, double& slope, double& intercept) {
    const double n = static_cast<double>(eps.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double x = std::log(eps[i]), y = std::log(err[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double den = n * sxx - sx * sx;
    slope = (n * sxy - sx * sy) / den;
    intercept = (sy - slope * sx) / n;
}

/// Fits one slope per (order, t) from the collected points.
inline std::vector<SlopeFit> fit_slopes(std::vector<RemainderPoint>& points, OracleMethod method) {
    std::vector<SlopeFit> fits;
    std::vector<std::pair<int, double>> keys;
    for (const auto& p : points)
        if (std::find(keys.begin(), keys.end(), std::make_pair(p.order, p.t)) == keys.end()) keys.emplace_back(p.order, p.t);
    for (const auto& [order, t] : keys) {
        SlopeFit f;
        f.order = order;
        f.t = t;
        std::vector<double> e, r;
        bool all_floor = true;
        for (auto& p : points) {
            if (p.order != order || p.t != t) continue;
            all_floor &= p.error < discretization_floor;
            p.included = p.error > p.noise_floor && p.error > 0.0;
            if (p.included) {
                e.push_back(p.eps);
                r.push_back(p.error);
            }
        }
        f.points = static_cast<int>(e.size());
        if (all_floor) {
            f.status = "discretization-floor";
        } else if (e.size() < 2) {
            f.status = method == OracleMethod::monte_carlo ? "MC-noise-limited" : "insufficient-points";
        } else {
            fit_log_log(e, r, f.slope, f.intercept);
        }
        fits.push_back(f);
    }
    return fits;
}

/**
 * @brief Compares Φ^{ε,N'} with an oracle for every ε, t and N' = 0..N.
 *
 * `oracle(eps, times)` returns one estimate per requested time.
 */
template <class Oracle>
RemainderReport compute_remainder(const ExpansionResult& r, const std::vector<double>& epsilons, const std::vector<double>& times,
                                  OracleMethod method, Oracle&& oracle) {
    RemainderReport rep;
    rep.method = method;
    for (double eps : epsilons) {
        const std::vector<OracleEstimate> est = oracle(eps, times);
        for (std::size_t q = 0; q < times.size(); ++q)
            for (int order = 0; order <= r.regular.order; ++order) {
                RemainderPoint p;
                p.eps = eps;
                p.t = times[q];
                p.order = order;
                double se = 0.0;
                p.error = remainder_error(est[q], evaluate_expansion(r, eps, order, times[q]), &se);
                p.noise_floor = 4.0 * se;
                rep.points.push_back(p);
            }
    }
    rep.fits = fit_slopes(rep.points, method);
    return rep;
}

} // namespace smre
