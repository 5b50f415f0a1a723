#include <cmath>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace smre;

namespace {

/// Product that treats 0·∞ as 0 far out in the tail.
double guarded(double a, double b) { return b == 0.0 || !std::isfinite(a) ? 0.0 : a * b; }

/// ∫ s^k f(s) ds by adaptive quadrature on the density.
double quad_moment(const SojournDistribution& d, int k) {
    auto f = [&](double s) { return guarded(std::pow(s, k), d.density(s)); };
    if (d.family() == SojournFamily::uniform)
        return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, d.lower(), d.upper(), 10, 1e-14);
    boost::math::quadrature::exp_sinh<double> integrator;
    return integrator.integrate(f, 0.0, std::numeric_limits<double>::infinity());
}

double quad_upper_moment(const SojournDistribution& d, int k, double tau) {
    auto f = [&](double s) { return guarded(std::pow(s, k), d.density(s)); };
    if (d.family() == SojournFamily::uniform) {
        const double lo = std::max(tau, d.lower());
        if (lo >= d.upper()) return 0.0;
        return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, d.upper(), 10, 1e-14);
    }
    boost::math::quadrature::exp_sinh<double> integrator;
    return integrator.integrate(f, tau, std::numeric_limits<double>::infinity());
}

} // namespace

TEST(SojournMoments, ClosedFormValues) {
    EXPECT_DOUBLE_EQ(moment(SojournDistribution::exponential(2.0), 1), 0.5);
    EXPECT_DOUBLE_EQ(moment(SojournDistribution::erlang(2, 1.0), 2), 6.0);
    EXPECT_DOUBLE_EQ(moment(SojournDistribution::uniform(0.0, 1.0), 3), 0.25);
}

TEST(SojournMoments, MatchDensityQuadrature) {
    const std::vector<SojournDistribution> laws{SojournDistribution::exponential(1.7), SojournDistribution::erlang(3, 0.8),
                                                SojournDistribution::uniform(0.3, 2.1)};
    for (const auto& d : laws)
        for (int k = 0; k <= 5; ++k) EXPECT_NEAR(moment(d, k), quad_moment(d, k), 1e-10 * std::max(1.0, moment(d, k))) << d.describe();
}

TEST(SojournMoments, UpperPartialMomentsMatchQuadrature) {
    const std::vector<SojournDistribution> laws{SojournDistribution::exponential(1.7), SojournDistribution::erlang(2, 1.0),
                                                SojournDistribution::uniform(0.3, 2.1)};
    for (const auto& d : laws)
        for (int k = 0; k <= 4; ++k)
            for (double tau : {0.1, 0.7, 1.5, 4.0})
                EXPECT_NEAR(d.upper_partial_moment(k, tau), quad_upper_moment(d, k, tau), 1e-10) << d.describe() << " k=" << k;
}

TEST(SojournMoments, ReducedMoments) {
    for (double lam : {0.3, 1.0, 2.5}) EXPECT_DOUBLE_EQ(reduced_moment(SojournDistribution::exponential(lam), 2), 1.0 / lam);
    EXPECT_EQ(reduced_moment(SojournDistribution::uniform(0.2, 0.9), 1), 1.0);
    EXPECT_EQ(reduced_moment(SojournDistribution::erlang(4, 3.0), 1), 1.0);
    EXPECT_DOUBLE_EQ(reduced_moment(SojournDistribution::erlang(2, 1.0), 2), 1.5);
}

TEST(SojournMoments, NuCoefficients) {
    for (double lam : {0.3, 1.0, 2.0, 7.0}) EXPECT_EQ(nu_coefficient(SojournDistribution::exponential(lam), 1), 0.0);
    // Quadrature oracle for m_1, m_2 then μ_2 - m_1.
    const auto e = SojournDistribution::erlang(2, 1.0);
    EXPECT_NEAR(nu_coefficient(e, 1), quad_moment(e, 2) / (2.0 * quad_moment(e, 1)) - quad_moment(e, 1), 1e-12);
    EXPECT_NEAR(nu_coefficient(e, 1), -0.5, 1e-14);
    const auto u = SojournDistribution::uniform(0.0, 1.0);
    EXPECT_NEAR(nu_coefficient(u, 1), quad_moment(u, 2) / (2.0 * quad_moment(u, 1)) - quad_moment(u, 1), 1e-12);
    EXPECT_NEAR(nu_coefficient(u, 1), -1.0 / 6.0, 1e-14);
}

TEST(SojournMoments, IntegratedSurvivalAndTailKernels) {
    const auto d = SojournDistribution::exponential(1.5);
    for (double tau : {0.0, 0.4, 2.0}) EXPECT_NEAR(integrated_survival(d, 1, tau), std::exp(-1.5 * tau) / 1.5, 1e-14);
    EXPECT_EQ(integrated_survival(SojournDistribution::uniform(0.0, 1.0), 1, 1.0), 0.0);
    EXPECT_EQ(integrated_survival(SojournDistribution::uniform(0.0, 1.0), 2, 1.7), 0.0);
    // K_{j,n} against direct quadrature of s^j (τ - s)^n.
    const auto e = SojournDistribution::erlang(2, 1.3);
    boost::math::quadrature::exp_sinh<double> integrator;
    for (int j = 0; j <= 2; ++j)
        for (int n = 0; n <= 3; ++n) {
            const double tau = 0.8;
            const double q = integrator.integrate(
                [&](double s) { return guarded(std::pow(s, j) * std::pow(tau - s, n), e.density(s)); }, tau, std::numeric_limits<double>::infinity());
            EXPECT_NEAR(tail_kernel(e, j, n, tau), q, 1e-10) << "j=" << j << " n=" << n;
        }
}

TEST(SojournDistribution, RejectsBadParameters) {
    EXPECT_THROW(SojournDistribution::exponential(0.0), DomainError);
    EXPECT_THROW(SojournDistribution::erlang(0, 1.0), DomainError);
    EXPECT_THROW(SojournDistribution::uniform(1.0, 1.0), DomainError);
    EXPECT_THROW(SojournDistribution::uniform(-0.5, 1.0), DomainError);
}

TEST(SojournSampling, ExponentialMeanWithinThreeSigma) {
    const auto d = SojournDistribution::exponential(2.0);
    const int n = 1000000;
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        CounterStream rng(11, {static_cast<std::uint64_t>(i)});
        s += sample_sojourn(d, rng);
    }
    const double sigma = 0.5 / std::sqrt(static_cast<double>(n));
    EXPECT_LT(std::abs(s / n - 0.5), 3.0 * sigma);
}

TEST(SojournSampling, UniformSupport) {
    const auto d = SojournDistribution::uniform(0.25, 0.75);
    CounterStream rng(3, {1});
    for (int i = 0; i < 100000; ++i) {
        const double v = sample_sojourn(d, rng);
        ASSERT_GE(v, 0.25);
        ASSERT_LE(v, 0.75);
    }
}

TEST(SojournSampling, ErlangVarianceWithinThreeSigma) {
    const double lam = 1.5;
    const auto d = SojournDistribution::erlang(2, lam);
    const int n = 1000000;
    double mean = 0.0, m2 = 0.0;
    CounterStream rng(5, {2});
    for (int i = 0; i < n; ++i) {
        const double v = sample_sojourn(d, rng);
        const double delta = v - mean;
        mean += delta / (i + 1);
        m2 += delta * (v - mean);
    }
    const double var = m2 / (n - 1);
    const double theta = 1.0 / lam;
    // Gamma(2, θ): σ² = 2θ², central fourth moment 24θ⁴.
    const double se = std::sqrt((24.0 - 4.0) / n) * theta * theta;
    EXPECT_LT(std::abs(var - 2.0 * theta * theta), 3.0 * se);
}

TEST(ValidateModel, FlipChainIsIrreducibleWithPeriodTwo) {
    const auto diag = validate_model(fixtures::model_a());
    EXPECT_TRUE(diag.irreducible);
    EXPECT_FALSE(diag.aperiodic);
    EXPECT_EQ(diag.period, 2);
    EXPECT_TRUE(diag.usable());
}

TEST(ValidateModel, IdentityChainIsReducible) {
    const SemiMarkovModel m({"a", "b"}, Eigen::MatrixXd::Identity(2, 2),
                            {SojournDistribution::exponential(1.0), SojournDistribution::exponential(1.0)});
    const auto diag = validate_model(m);
    EXPECT_FALSE(diag.irreducible);
    EXPECT_FALSE(diag.usable());
}

TEST(ValidateModel, SymmetricChainFlags) {
    Eigen::MatrixXd P = Eigen::MatrixXd::Constant(2, 2, 0.5);
    const SemiMarkovModel m({"a", "b"}, P, {SojournDistribution::exponential(1.0), SojournDistribution::exponential(1.0)});
    const auto diag = validate_model(m);
    EXPECT_TRUE(diag.irreducible);
    EXPECT_TRUE(diag.aperiodic);
    EXPECT_TRUE(diag.nonnegative);
    EXPECT_TRUE(diag.usable());
    for (double h : diag.cramer_margin) {
        EXPECT_GT(h, 0.0);
        EXPECT_LT(h, 1.0);
    }
    EXPECT_NEAR(diag.spectral_gap, 1.0, 1e-12);
}

TEST(ValidateModel, RowSumErrorNamesRow) {
    Eigen::MatrixXd P(2, 2);
    P << 0.0, 1.0, 0.9, 0.0;
    const SemiMarkovModel m({"a", "b"}, P, {SojournDistribution::exponential(1.0), SojournDistribution::exponential(1.0)});
    const auto diag = validate_model(m);
    ASSERT_FALSE(diag.usable());
    EXPECT_NE(diag.issues.front().find("row 1"), std::string::npos);
    EXPECT_NEAR(diag.row_sum_errors[1], -0.1, 1e-15);
}

TEST(ValidateModel, ShapeErrorsAreConfigErrors) {
    EXPECT_THROW(SemiMarkovModel({"a", "b"}, Eigen::MatrixXd::Identity(3, 3),
                                 {SojournDistribution::exponential(1.0), SojournDistribution::exponential(1.0)}),
                 ConfigError);
    EXPECT_THROW(SemiMarkovModel({"a"}, Eigen::MatrixXd::Identity(1, 1), {}), ConfigError);
}

TEST(Stationary, EmbeddedChainExamples) {
    const auto rho_flip = embedded_stationary(fixtures::model_a());
    EXPECT_NEAR(rho_flip(0), 0.5, 1e-15);
    EXPECT_NEAR(rho_flip(1), 0.5, 1e-15);

    Eigen::MatrixXd P(2, 2);
    P << 0.9, 0.1, 0.1, 0.9;
    const auto exp1 = SojournDistribution::exponential(1.0);
    EXPECT_NEAR(embedded_stationary(SemiMarkovModel({"a", "b"}, P, {exp1, exp1}))(0), 0.5, 1e-15);

    // Elimination by hand: ρ_0 = 0.5 ρ_0 + ρ_1 and ρ_0 + ρ_1 = 1.
    P << 0.5, 0.5, 1.0, 0.0;
    const auto rho = embedded_stationary(SemiMarkovModel({"a", "b"}, P, {exp1, exp1}));
    EXPECT_NEAR(rho(0), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(rho(1), 1.0 / 3.0, 1e-15);
}

TEST(Stationary, SemiMarkovLawForModelA) {
    const auto s = semi_markov_stationary(fixtures::model_a());
    EXPECT_NEAR(s.m_hat, 0.75, 1e-15);
    EXPECT_NEAR(s.pi(0), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(s.pi(1), 1.0 / 3.0, 1e-15);
}

TEST(Stationary, IdenticalSojournsGivePiEqualRho) {
    std::mt19937_64 rng(17);
    auto m = fixtures::random_model(rng, 5);
    const SemiMarkovModel same(m.states(), m.P(), std::vector<SojournDistribution>(5, SojournDistribution::erlang(3, 2.0)));
    const auto rho = embedded_stationary(same);
    EXPECT_LT((semi_markov_stationary(same).pi - rho).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Stationary, SingleState) {
    const SemiMarkovModel m({"only"}, Eigen::MatrixXd::Identity(1, 1), {SojournDistribution::uniform(0.0, 2.0)});
    const auto s = semi_markov_stationary(m);
    EXPECT_DOUBLE_EQ(s.pi(0), 1.0);
    EXPECT_DOUBLE_EQ(s.m_hat, 1.0);
}

TEST(Generator, ModelAValues) {
    const auto m = fixtures::model_a();
    const Eigen::MatrixXd Q = generator(m);
    Eigen::MatrixXd expected(2, 2);
    expected << -1, 1, 2, -2;
    EXPECT_LT((Q - expected).cwiseAbs().maxCoeff(), 1e-15);
    Eigen::RowVector2d pi(2.0 / 3.0, 1.0 / 3.0);
    EXPECT_LT((pi * Q).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Generator, RandomModelInvariants) {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 20; ++trial) {
        const auto m = fixtures::random_model(rng, 2 + trial % 9);
        const Eigen::MatrixXd Q = generator(m);
        EXPECT_LT((Q * Eigen::VectorXd::Ones(m.size())).cwiseAbs().maxCoeff(), 1e-12);
        const auto rho = embedded_stationary(m);
        EXPECT_LT((m.P().transpose() * rho - rho).cwiseAbs().maxCoeff(), 1e-12);
        const auto s = semi_markov_stationary(m);
        EXPECT_LT((s.pi.transpose() * Q).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(s.pi.sum(), 1.0, 1e-14);
    }
}
