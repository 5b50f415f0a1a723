#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "random.hpp"

namespace smre {

enum class SojournFamily { exponential, erlang, uniform };

inline const char* to_string(SojournFamily f) {
    switch (f) {
    case SojournFamily::exponential: return "exponential";
    case SojournFamily::erlang: return "erlang";
    case SojournFamily::uniform: return "uniform";
    }
    return "?";
}

/**
 * @brief Parametric sojourn-time law with analytic CDF, partial moments and sampler.
 */
class SojournDistribution {
  public:
    static SojournDistribution exponential(double rate) {
        if (!(rate > 0.0) || !std::isfinite(rate)) throw DomainError("exponential sojourn needs rate > 0");
        SojournDistribution d;
        d.family_ = SojournFamily::exponential;
        d.rate_ = rate;
        return d;
    }

    static SojournDistribution erlang(int shape, double rate) {
        if (shape < 1) throw DomainError("erlang sojourn needs shape >= 1");
        if (!(rate > 0.0) || !std::isfinite(rate)) throw DomainError("erlang sojourn needs rate > 0");
        SojournDistribution d;
        d.family_ = SojournFamily::erlang;
        d.shape_ = shape;
        d.rate_ = rate;
        return d;
    }

    static SojournDistribution uniform(double a, double b) {
        if (!(a >= 0.0) || !(b > a) || !std::isfinite(b)) throw DomainError("uniform sojourn needs 0 <= a < b");
        SojournDistribution d;
        d.family_ = SojournFamily::uniform;
        d.a_ = a;
        d.b_ = b;
        return d;
    }

    SojournFamily family() const { return family_; }
    double rate() const { return rate_; }
    int shape() const { return shape_; }
    double lower() const { return a_; }
    double upper() const { return b_; }

    /// Upper end of the support (infinity for exponential and erlang).
    double support_end() const {
        return family_ == SojournFamily::uniform ? b_ : std::numeric_limits<double>::infinity();
    }

    /// Upper partial moment M_p(τ) = ∫_τ^∞ s^p F(ds).
    double upper_partial_moment(int p, double tau) const {
        switch (family_) {
        case SojournFamily::exponential: return gamma_tail(p, 1, tau);
        case SojournFamily::erlang: return gamma_tail(p, shape_, tau);
        case SojournFamily::uniform: {
            const double c = std::clamp(tau, a_, b_);
            return (detail::ipow(b_, p + 1) - detail::ipow(c, p + 1)) / ((p + 1) * (b_ - a_));
        }
        }
        return 0.0;
    }

    double survival(double t) const {
        if (t <= 0.0) return 1.0;
        return upper_partial_moment(0, t);
    }

    double cdf(double t) const { return t < 0.0 ? 0.0 : 1.0 - survival(t); }

    double density(double t) const {
        if (t < 0.0) return 0.0;
        switch (family_) {
        case SojournFamily::exponential: return rate_ * std::exp(-rate_ * t);
        case SojournFamily::erlang:
            return detail::ipow(rate_, shape_) * detail::ipow(t, shape_ - 1) * std::exp(-rate_ * t) /
                   detail::factorial(shape_ - 1);
        case SojournFamily::uniform: return (t >= a_ && t <= b_) ? 1.0 / (b_ - a_) : 0.0;
        }
        return 0.0;
    }

    std::string describe() const {
        std::ostringstream os;
        os << to_string(family_) << '(';
        switch (family_) {
        case SojournFamily::exponential: os << "rate=" << rate_; break;
        case SojournFamily::erlang: os << "shape=" << shape_ << ", rate=" << rate_; break;
        case SojournFamily::uniform: os << "a=" << a_ << ", b=" << b_; break;
        }
        os << ')';
        return os.str();
    }

  private:
    SojournDistribution() = default;

    // ∫_τ^∞ s^p λ^k s^{k-1} e^{-λs}/(k-1)! ds = (p+k-1)!/((k-1)! λ^p) e^{-λτ} Σ_{j<p+k} (λτ)^j/j!
    double gamma_tail(int p, int k, double tau) const {
        const double lead = detail::factorial(p + k - 1) / (detail::factorial(k - 1) * detail::ipow(rate_, p));
        if (tau <= 0.0) return lead;
        const double x = rate_ * tau;
        double term = 1.0, sum = 1.0;
        for (int j = 1; j < p + k; ++j) {
            term *= x / j;
            sum += term;
        }
        return lead * std::exp(-x) * sum;
    }

    SojournFamily family_ = SojournFamily::exponential;
    double rate_ = 1.0;
    int shape_ = 1;
    double a_ = 0.0;
    double b_ = 1.0;
};

/// Raw moment m_k = ∫ s^k F(ds).
inline double moment(const SojournDistribution& d, int k) {
    if (k < 0) throw DomainError("moment order must be nonnegative");
    switch (d.family()) {
    case SojournFamily::exponential: return detail::factorial(k) / detail::ipow(d.rate(), k);
    case SojournFamily::erlang:
        return detail::factorial(k + d.shape() - 1) / (detail::factorial(d.shape() - 1) * detail::ipow(d.rate(), k));
    case SojournFamily::uniform:
        return (detail::ipow(d.upper(), k + 1) - detail::ipow(d.lower(), k + 1)) / ((k + 1) * (d.upper() - d.lower()));
    }
    return 0.0;
}

/// μ_k = m_k / (k! m_1), with μ_1 = 1 exactly.
inline double reduced_moment(const SojournDistribution& d, int k) {
    if (k < 1) throw DomainError("reduced moment order must be >= 1");
    if (k == 1) return 1.0;
    // Closed form keeps μ_2 bitwise equal to m_1 so that ν_1 vanishes exactly.
    if (d.family() == SojournFamily::exponential) return 1.0 / detail::ipow(d.rate(), k - 1);
    return moment(d, k) / (detail::factorial(k) * moment(d, 1));
}

/// ν_k = (-1)^{k+1} (μ_{k+1} - m_k).
inline double nu_coefficient(const SojournDistribution& d, int k) {
    if (k < 1) throw DomainError("nu coefficient order must be >= 1");
    return detail::sign_pow(k + 1) * (reduced_moment(d, k + 1) - moment(d, k));
}

/// F̄^{(k)}(τ) = ∫_τ^∞ s^{k-1}/(k-1)! F̄(s) ds = (M_k(τ) - τ^k F̄(τ)) / k!.
inline double integrated_survival(const SojournDistribution& d, int k, double tau) {
    if (k < 1) throw DomainError("integrated survival order must be >= 1");
    tau = std::max(tau, 0.0);
    return (d.upper_partial_moment(k, tau) - detail::ipow(tau, k) * d.survival(tau)) / detail::factorial(k);
}

/// K_{j,n}(τ) = ∫_τ^∞ s^j (τ - s)^n F(ds).
inline double tail_kernel(const SojournDistribution& d, int j, int n, double tau) {
    tau = std::max(tau, 0.0);
    double sum = 0.0;
    for (int i = 0; i <= n; ++i)
        sum += detail::binomial(n, i) * detail::ipow(tau, n - i) * detail::sign_pow(i) * d.upper_partial_moment(j + i, tau);
    return sum;
}

/// Largest h with ∫ e^{hs} F(ds) ≤ bound, from the closed-form moment generating function.
inline double cramer_margin(const SojournDistribution& d, double bound = 1e6) {
    switch (d.family()) {
    case SojournFamily::exponential: return d.rate() * (1.0 - 1.0 / bound);
    case SojournFamily::erlang: return d.rate() * (1.0 - std::pow(bound, -1.0 / d.shape()));
    case SojournFamily::uniform: return std::log(bound) / d.upper();
    }
    return 0.0;
}

inline double sample_sojourn(const SojournDistribution& d, CounterStream& rng) {
    switch (d.family()) {
    case SojournFamily::exponential: return -std::log1p(-rng.uniform()) / d.rate();
    case SojournFamily::erlang: {
        double s = 0.0;
        for (int i = 0; i < d.shape(); ++i) s += -std::log1p(-rng.uniform());
        return s / d.rate();
    }
    case SojournFamily::uniform: return d.lower() + (d.upper() - d.lower()) * rng.uniform();
    }
    return 0.0;
}

/**
 * @brief Finite-state semi-Markov kernel Q(x, B, t) = P(x, B) F_x(t).
 */
class SemiMarkovModel {
  public:
    SemiMarkovModel(std::vector<std::string> states, Eigen::MatrixXd P, std::vector<SojournDistribution> sojourns)
        : states_(std::move(states)), P_(std::move(P)), sojourns_(std::move(sojourns)) {
        const auto n = static_cast<Eigen::Index>(states_.size());
        if (n < 1) throw ConfigError("model needs at least one state");
        if (P_.rows() != n || P_.cols() != n)
            throw ConfigError("transition matrix must be " + std::to_string(n) + "x" + std::to_string(n));
        if (sojourns_.size() != states_.size()) throw ConfigError("one sojourn distribution per state is required");
        if (!P_.allFinite()) throw ConfigError("transition matrix has non-finite entries");
    }

    int size() const { return static_cast<int>(states_.size()); }
    const std::vector<std::string>& states() const { return states_; }
    const Eigen::MatrixXd& P() const { return P_; }
    const std::vector<SojournDistribution>& sojourns() const { return sojourns_; }
    const SojournDistribution& sojourn(int x) const { return sojourns_[static_cast<std::size_t>(x)]; }

    /// Per-state raw moments m_k(x).
    Eigen::VectorXd moments(int k) const {
        Eigen::VectorXd m(size());
        for (int x = 0; x < size(); ++x) m(x) = moment(sojourn(x), k);
        return m;
    }

    /// Per-state reduced moments μ_k(x).
    Eigen::VectorXd reduced_moments(int k) const {
        Eigen::VectorXd m(size());
        for (int x = 0; x < size(); ++x) m(x) = reduced_moment(sojourn(x), k);
        return m;
    }

    double max_mean_sojourn() const { return moments(1).maxCoeff(); }

  private:
    std::vector<std::string> states_;
    Eigen::MatrixXd P_;
    std::vector<SojournDistribution> sojourns_;
};

struct ModelDiagnostics {
    std::vector<double> row_sum_errors;
    bool nonnegative = true;
    bool irreducible = false;
    bool aperiodic = false;
    int period = 0;
    std::vector<double> cramer_margin;
    double spectral_gap = 0.0;
    std::vector<std::string> issues;

    /// Aperiodicity is reported but not required.
    bool usable() const { return issues.empty(); }
};

namespace detail {

inline std::vector<int> bfs_levels(const Eigen::MatrixXd& P, bool transpose) {
    const int n = static_cast<int>(P.rows());
    std::vector<int> level(static_cast<std::size_t>(n), -1);
    std::queue<int> q;
    level[0] = 0;
    q.push(0);
    while (!q.empty()) {
        const int a = q.front();
        q.pop();
        for (int b = 0; b < n; ++b) {
            const double w = transpose ? P(b, a) : P(a, b);
            if (w > 0.0 && level[static_cast<std::size_t>(b)] < 0) {
                level[static_cast<std::size_t>(b)] = level[static_cast<std::size_t>(a)] + 1;
                q.push(b);
            }
        }
    }
    return level;
}

} // namespace detail

inline ModelDiagnostics validate_model(const SemiMarkovModel& model) {
    ModelDiagnostics diag;
    const int n = model.size();
    const Eigen::MatrixXd& P = model.P();

    for (int x = 0; x < n; ++x) {
        const double err = P.row(x).sum() - 1.0;
        diag.row_sum_errors.push_back(err);
        if (std::abs(err) > 1e-12)
            diag.issues.push_back("row " + std::to_string(x) + " (" + model.states()[static_cast<std::size_t>(x)] +
                                  ") sums to " + detail::fmt_double(1.0 + err));
        for (int y = 0; y < n; ++y) {
            if (P(x, y) < 0.0) {
                diag.nonnegative = false;
                diag.issues.push_back("negative entry P(" + std::to_string(x) + "," + std::to_string(y) + ")");
            }
        }
    }

    const auto fwd = detail::bfs_levels(P, false);
    const auto bwd = detail::bfs_levels(P, true);
    diag.irreducible = std::all_of(fwd.begin(), fwd.end(), [](int l) { return l >= 0; }) &&
                       std::all_of(bwd.begin(), bwd.end(), [](int l) { return l >= 0; });
    if (!diag.irreducible) {
        for (int x = 0; x < n; ++x)
            if (fwd[static_cast<std::size_t>(x)] < 0 || bwd[static_cast<std::size_t>(x)] < 0) {
                diag.issues.push_back("embedded chain reducible: state " + std::to_string(x) + " (" +
                                      model.states()[static_cast<std::size_t>(x)] +
                                      ") not mutually reachable with state 0");
                break;
            }
    } else {
        int g = 0;
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b)
                if (P(a, b) > 0.0) g = std::gcd(g, std::abs(fwd[static_cast<std::size_t>(a)] + 1 - fwd[static_cast<std::size_t>(b)]));
        diag.period = g;
        diag.aperiodic = (g == 1);
    }

    for (int x = 0; x < n; ++x) {
        const auto& d = model.sojourn(x);
        const double h = cramer_margin(d);
        diag.cramer_margin.push_back(h);
        if (!(h > 0.0)) diag.issues.push_back("state " + std::to_string(x) + " violates the Cramer condition");
        if (!(moment(d, 1) > 0.0)) diag.issues.push_back("state " + std::to_string(x) + " has zero mean sojourn");
    }

    if (n == 1) {
        diag.spectral_gap = 1.0;
    } else {
        Eigen::EigenSolver<Eigen::MatrixXd> es(P, false);
        std::vector<double> mags;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) mags.push_back(std::abs(es.eigenvalues()(i)));
        std::sort(mags.begin(), mags.end(), std::greater<>());
        diag.spectral_gap = mags[0] - mags[1];
    }
    return diag;
}

/// Stationary law ρ of the embedded chain: ρP = ρ, Σρ = 1.
inline Eigen::VectorXd embedded_stationary(const SemiMarkovModel& model) {
    const int n = model.size();
    Eigen::MatrixXd A = model.P().transpose() - Eigen::MatrixXd::Identity(n, n);
    A.row(n - 1).setOnes();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    b(n - 1) = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) throw DomainError("embedded stationary solve is singular (chain not irreducible?)");
    Eigen::VectorXd rho = lu.solve(b);
    rho += lu.solve(b - A * rho);
    const double residual = (model.P().transpose() * rho - rho).cwiseAbs().maxCoeff();
    if (!(residual < 1e-12) || rho.minCoeff() < -1e-12)
        throw DomainError("embedded stationary solve did not converge (residual " + detail::fmt_double(residual) + ")");
    return rho.cwiseMax(0.0) / rho.cwiseMax(0.0).sum();
}

struct SemiMarkovStationary {
    Eigen::VectorXd pi;
    double m_hat = 0.0;
};

/// π_x = ρ_x m_1(x) / m̂ with m̂ = Σ ρ_x m_1(x).
inline SemiMarkovStationary semi_markov_stationary(const SemiMarkovModel& model, const Eigen::VectorXd& rho) {
    const Eigen::VectorXd w = rho.cwiseProduct(model.moments(1));
    SemiMarkovStationary s;
    s.m_hat = w.sum();
    s.pi = w / s.m_hat;
    return s;
}

inline SemiMarkovStationary semi_markov_stationary(const SemiMarkovModel& model) {
    return semi_markov_stationary(model, embedded_stationary(model));
}

/// Q = diag(1/m_1) (P - I).
inline Eigen::MatrixXd generator(const SemiMarkovModel& model) {
    const int n = model.size();
    const Eigen::VectorXd q = model.moments(1).cwiseInverse();
    return q.asDiagonal() * (model.P() - Eigen::MatrixXd::Identity(n, n));
}

} // namespace smre
