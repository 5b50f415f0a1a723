#pragma once

#include <random>

#include "smre/smre.hpp"

namespace fixtures {

inline smre::UGrid default_grid() { return smre::UGrid::make(-8.0, 8.0, 257, smre::BoundaryMode::extrapolate); }

inline Eigen::MatrixXd flip() {
    Eigen::MatrixXd P(2, 2);
    P << 0, 1, 1, 0;
    return P;
}

/// Two states, P antidiagonal, exp(1)/exp(2) sojourns.
inline smre::SemiMarkovModel model_a() {
    return smre::SemiMarkovModel({"up", "down"}, flip(),
                                 {smre::SojournDistribution::exponential(1.0), smre::SojournDistribution::exponential(2.0)});
}

/// Model A with erlang(2,1)/erlang(2,2) sojourns.
inline smre::SemiMarkovModel model_b() {
    return smre::SemiMarkovModel({"up", "down"}, flip(),
                                 {smre::SojournDistribution::erlang(2, 1.0), smre::SojournDistribution::erlang(2, 2.0)});
}

inline smre::VelocityField telegraph(const smre::UGrid& g) {
    return smre::VelocityField(g, {smre::ConstantVelocity{1.0}, smre::ConstantVelocity{-1.0}});
}

inline smre::VelocityField same_velocity(const smre::UGrid& g, int n, double v = 1.0) {
    return smre::VelocityField(g, std::vector<smre::StateVelocity>(static_cast<std::size_t>(n), smre::ConstantVelocity{v}));
}

inline smre::TestFunction gaussian() { return smre::Gaussian{0.0, 1.0}; }

/// Random irreducible model with strictly positive P entries and mixed sojourn families.
inline smre::SemiMarkovModel random_model(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> U(0.05, 1.0);
    Eigen::MatrixXd P(n, n);
    for (int x = 0; x < n; ++x) {
        for (int y = 0; y < n; ++y) P(x, y) = U(rng);
        P.row(x) /= P.row(x).sum();
    }
    std::vector<smre::SojournDistribution> so;
    std::vector<std::string> names;
    for (int x = 0; x < n; ++x) {
        names.push_back("s" + std::to_string(x));
        switch (x % 3) {
        case 0: so.push_back(smre::SojournDistribution::exponential(0.5 + 2.0 * U(rng))); break;
        case 1: so.push_back(smre::SojournDistribution::erlang(1 + x % 4, 0.5 + 3.0 * U(rng))); break;
        default: so.push_back(smre::SojournDistribution::uniform(0.1 * U(rng), 0.2 + 2.0 * U(rng))); break;
        }
    }
    return smre::SemiMarkovModel(names, P, so);
}

} // namespace fixtures
