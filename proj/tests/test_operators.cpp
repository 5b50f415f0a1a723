#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace smre;

namespace {

UGrid small_grid() { return UGrid::make(-8.0, 8.0, 129); }

TimeGrid small_time_grid() {
    TimeGrid tg;
    tg.h = 1e-2;
    tg.n_steps = 40;
    tg.pad = 12;
    return tg;
}

GridFunction random_gf(const UGrid& g, int n, std::mt19937_64& rng) {
    std::normal_distribution<double> N;
    GridFunction f(g, n);
    for (auto& v : f.values()) v = N(rng);
    return f;
}

double max_over(int from, int to, const auto& fn) {
    double m = 0.0;
    for (int t = from; t <= to; ++t) m = std::max(m, fn(t));
    return m;
}

} // namespace

TEST(Projector, Examples) {
    const auto g = small_grid();
    Eigen::VectorXd pi(2);
    pi << 2.0 / 3.0, 1.0 / 3.0;
    GridFunction f(g, 2);
    for (int i = 0; i < g.n_points; ++i) f(0, i) = 3.0;
    const auto p = projector_apply(pi, f);
    for (int x = 0; x < 2; ++x)
        for (int i = 0; i < g.n_points; ++i) EXPECT_NEAR(p(x, i), 2.0, 1e-15);
    const auto c = sample(fixtures::gaussian(), g, 2);
    EXPECT_LT(sup_norm(projector_apply(pi, c) - c), 1e-15);
}

TEST(Potential, ModelAValues) {
    const OperatorSet ops(fixtures::model_a(), fixtures::telegraph(small_grid()), 1);
    Eigen::MatrixXd R0(2, 2), R0Q(2, 2);
    R0 << -1.0 / 9, 1.0 / 9, 2.0 / 9, -2.0 / 9;
    R0Q << 1.0 / 3, -1.0 / 3, -2.0 / 3, 2.0 / 3;
    EXPECT_LT((ops.potential().R0 - R0).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((ops.potential().R0 * ops.Q() - R0Q).cwiseAbs().maxCoeff(), 1e-14);
    const auto c = sample(fixtures::gaussian(), small_grid(), 2);
    EXPECT_LT(sup_norm(ops.apply_R0(c)), 1e-15);
}

TEST(Potential, RandomModelIdentities) {
    std::mt19937_64 rng(31);
    const auto g = small_grid();
    for (int trial = 0; trial < 25; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 19);
        const auto m = fixtures::random_model(rng, n);
        const auto st = semi_markov_stationary(m);
        const Eigen::MatrixXd Q = generator(m);
        const auto pd = potential_build(Q, st.pi);
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
        EXPECT_LT((pd.Pi * pd.Pi - pd.Pi).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((pd.R0 * Q - (I - pd.Pi)).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((Q * pd.R0 - (I - pd.Pi)).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((pd.Pi * pd.R0).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((pd.R0 * pd.Pi).cwiseAbs().maxCoeff(), 1e-10);

        const auto f = random_gf(g, n, rng);
        const auto lhs = potential_apply(pd, apply_state_matrix(Q, f));
        EXPECT_LT(sup_norm(lhs - (f - projector_apply(st.pi, f))), 1e-10);
        const auto pf = projector_apply(st.pi, f);
        EXPECT_LT(sup_norm(projector_apply(st.pi, pf) - pf), 1e-12);
        EXPECT_LT(sup_norm(projector_apply(st.pi, apply_state_matrix(m.P(), pf)) - pf), 1e-12);
    }
}

TEST(Potential, SingularSumIsRejected) {
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(2, 2);
    Eigen::VectorXd pi(2);
    pi << 0.5, 0.5;
    EXPECT_THROW(potential_build(Q, pi), DomainError);
}

TEST(LOperator, FirstOrderOnStaticStateConstantU) {
    const auto g = small_grid();
    const OperatorSet ops(fixtures::model_a(), fixtures::telegraph(g), 1);
    const auto U = sample(fixtures::gaussian(), g, 2);
    const GridFunction zero(g, 2);
    const auto out = ops.L(1, {&U, &zero});
    const auto dU = u_derivative(U, 1);
    GridFunction expected(g, 2);
    for (int i = 0; i < g.n_points; ++i) {
        expected(0, i) = -dU(0, i);
        expected(1, i) = dU(1, i);
    }
    EXPECT_LT(sup_norm(out - expected), 1e-14);
    EXPECT_LT(sup_norm(ops.L_literal(1, {&U, &zero}) - expected), 1e-14);
}

TEST(LOperator, LiteralAndBinomialAgreeAtFirstOrder) {
    std::mt19937_64 rng(4);
    const auto g = small_grid();
    const OperatorSet ops(fixtures::model_a(), fixtures::telegraph(g), 1);
    for (int trial = 0; trial < 5; ++trial) {
        const auto a = random_gf(g, 2, rng), b = random_gf(g, 2, rng);
        const auto d = ops.L(1, {&a, &b});
        const auto expected = ops.apply_P(b) - ops.apply_V(ops.apply_P(a));
        EXPECT_LT(sup_norm(d - expected), 1e-12);
        EXPECT_LT(sup_norm(d - ops.L_literal(1, {&a, &b})), 1e-12);
    }
}

TEST(LOperator, SolvabilityOfAveragedTransport) {
    const auto g = small_grid();
    const auto tg = small_time_grid();
    const OperatorSet ops(fixtures::model_a(), fixtures::telegraph(g), 2);
    const auto c0 = solve_c0(fixtures::gaussian(), ops.averaged_field(), tg, 2);
    const auto d = ops.transport_derivatives(c0, nullptr, 1);
    double worst = 0.0;
    for (int t = tg.zero_index(); t <= tg.end_index(); ++t) worst = std::max(worst, sup_norm(ops.apply_Pi(L_apply(ops, 1, d, t))));
    EXPECT_LT(worst, 1e-6);
}

TEST(LOperator, SolvabilityWithFiniteDifferenceDerivativesConverges) {
    // t-derivatives by finite differences see the exact flow, V sees the u-grid: the gap shrinks like h_u⁴.
    std::vector<double> worst;
    for (int n : {129, 257}) {
        const auto g = UGrid::make(-8.0, 8.0, n);
        const auto tg = small_time_grid();
        const OperatorSet ops(fixtures::model_a(), fixtures::telegraph(g), 1);
        const auto d = time_derivatives(solve_c0(fixtures::gaussian(), ops.averaged_field(), tg, 2), 1);
        double w = 0.0;
        for (int t = tg.zero_index(); t <= tg.end_index(); ++t) w = std::max(w, sup_norm(ops.apply_Pi(L_apply(ops, 1, d, t))));
        worst.push_back(w);
    }
    EXPECT_LT(worst[1], 2e-6);
    EXPECT_GT(worst[0] / worst[1], 10.0);
}

TEST(LOperator, BinomialFormCollapsesForSharedVelocity) {
    const auto g = small_grid();
    const auto tg = small_time_grid();
    const OperatorSet ops(fixtures::model_a(), fixtures::same_velocity(g, 2, 1.0), 3);
    const auto c = solve_c0(fixtures::gaussian(), ops.averaged_field(), tg, 2);
    const auto d = ops.transport_derivatives(c, nullptr, 4);
    std::vector<double> binomial, literal;
    for (int k = 1; k <= 3; ++k) {
        double b = 0.0, l = 0.0;
        for (int t = tg.zero_index(); t <= tg.end_index(); ++t) {
            const auto p = OperatorSet::frame_ptrs(d, t, k);
            b = std::max(b, sup_norm(ops.L(k, p)));
            l = std::max(l, sup_norm(ops.L_literal(k, p)));
        }
        binomial.push_back(b);
        literal.push_back(l);
    }
    for (double b : binomial) EXPECT_LT(b, 1e-6);
    // The unweighted form leaves V²c at k = 2.
    EXPECT_GT(literal[1], 0.1);
}

TEST(LOperator, SecondOrderBinomialWeightsByHand) {
    std::mt19937_64 rng(8);
    const auto g = small_grid();
    const OperatorSet ops(fixtures::model_b(), VelocityField(g, {LinearVelocity{0.1, 1.0}, ConstantVelocity{-0.5}}), 2);
    const auto a = random_gf(g, 2, rng), b = random_gf(g, 2, rng), c = random_gf(g, 2, rng);
    const auto expected = -1.0 * ops.apply_V(ops.apply_P(a), 2) + 2.0 * ops.apply_V(ops.apply_P(b)) - ops.apply_P(c);
    EXPECT_LT(sup_norm(ops.L(2, {&a, &b, &c}) - expected), 1e-9 * sup_norm(expected));
}

TEST(LOperator, TooFewDerivativesThrow) {
    const auto g = small_grid();
    const OperatorSet ops(fixtures::model_a(), fixtures::telegraph(g), 2);
    const GridFunction a(g, 2);
    EXPECT_THROW(ops.L(2, {&a, &a}), DomainError);
}

TEST(FrakL, FirstOrderMatchesExplicitFormula) {
    const auto g = small_grid();
    const auto tg = small_time_grid();
    const OperatorSet ops(fixtures::model_b(), fixtures::telegraph(g), 2);
    const auto c0 = solve_c0(fixtures::gaussian(), ops.averaged_field(), tg, 2);
    const auto dc = time_derivatives(c0, 3);
    // Π L₁ R₀ L₁ c + Π μ₂ L₂ c built step by step.
    const auto L1c = ops.L_series(1, dc);
    const auto R0L1 = map_series(L1c, [&](const GridFunction& f) { return ops.apply_R0(f); });
    const auto dR = time_derivatives(R0L1, 1);
    const auto L2c = ops.L_series(2, dc);
    double worst = 0.0, scale = 0.0;
    for (int t = tg.zero_index(); t <= tg.end_index(); ++t) {
        const auto expected = ops.apply_Pi(scale_states(ops.mu(1), ops.L(1, OperatorSet::frame_ptrs(dR, t, 1))) + scale_states(ops.mu(2), L2c[t]));
        const auto got = frak_L_apply(ops, 1, dc, t);
        worst = std::max(worst, sup_norm(got - expected));
        scale = std::max(scale, sup_norm(expected));
    }
    EXPECT_GT(scale, 1e-3);
    EXPECT_LT(worst, 1e-10 * scale);
}

TEST(FrakL, ZeroOrderIsProjectedL1) {
    const auto g = small_grid();
    const auto tg = small_time_grid();
    const OperatorSet ops(fixtures::model_a(), fixtures::telegraph(g), 1);
    const auto c0 = solve_c0(fixtures::gaussian(), ops.averaged_field(), tg, 2);
    const auto dc = ops.transport_derivatives(c0, nullptr, 2);
    for (int t : {tg.zero_index(), tg.end_index()})
        EXPECT_LT(sup_norm(frak_L_apply(ops, 0, dc, t) - ops.apply_Pi(L_apply(ops, 1, dc, t))), 1e-15);
}

TEST(FrakL, VanishesForSharedVelocity) {
    const auto g = small_grid();
    const auto tg = small_time_grid();
    const OperatorSet ops(fixtures::model_b(), fixtures::same_velocity(g, 2, -0.6), 3);
    const auto c0 = solve_c0(fixtures::gaussian(), ops.averaged_field(), tg, 2);
    const auto dc = time_derivatives(c0, 5);
    for (int k = 1; k <= 3; ++k) {
        const double worst = max_over(tg.zero_index(), tg.end_index(), [&](int t) { return sup_norm(frak_L_apply(ops, k, dc, t)); });
        EXPECT_LT(worst, 1e-6) << "k=" << k;
    }
}

TEST(FrakL, SingleStateReducesToHigherL) {
    const auto g = small_grid();
    const auto tg = small_time_grid();
    const SemiMarkovModel m({"only"}, Eigen::MatrixXd::Identity(1, 1), {SojournDistribution::erlang(3, 2.0)});
    const OperatorSet ops(m, VelocityField(g, {LinearVelocity{0.2, 0.4}}), 3);
    EXPECT_EQ(ops.potential().R0(0, 0), 0.0);
    // Arbitrary smooth series, not a transport solution, so L_k does not vanish.
    TimeSeries c(tg, g, 1);
    for (int t = 0; t < tg.size(); ++t)
        for (int i = 0; i < g.n_points; ++i) c[t](0, i) = std::exp(-0.5 * g.node(i) * g.node(i)) * std::cos(tg.time(t));
    const auto dc = time_derivatives(c, 4);
    for (int k = 1; k <= 3; ++k)
        for (int t : {tg.zero_index(), tg.end_index()}) {
            const auto expected = scale_states(ops.mu(k + 1), L_apply(ops, k + 1, dc, t));
            EXPECT_LT(sup_norm(frak_L_apply(ops, k, dc, t) - expected), 1e-12 * std::max(1.0, sup_norm(expected))) << "k=" << k;
        }
}

TEST(TimeDerivatives, FourthOrderOnSmoothSeries) {
    const auto g = small_grid();
    const auto tg = small_time_grid();
    TimeSeries s(tg, g, 1);
    for (int t = 0; t < tg.size(); ++t)
        for (int i = 0; i < g.n_points; ++i) s[t](0, i) = std::sin(2.0 * tg.time(t) + 0.1 * i);
    const auto d = time_derivatives(s, 2);
    double e1 = 0.0, e2 = 0.0;
    for (int t = 0; t < tg.size(); ++t)
        for (int i = 0; i < g.n_points; ++i) {
            e1 = std::max(e1, std::abs(d[1][t](0, i) - 2.0 * std::cos(2.0 * tg.time(t) + 0.1 * i)));
            e2 = std::max(e2, std::abs(d[2][t](0, i) + 4.0 * std::sin(2.0 * tg.time(t) + 0.1 * i)));
        }
    EXPECT_LT(e1, 1e-7);
    EXPECT_LT(e2, 1e-4);
}
