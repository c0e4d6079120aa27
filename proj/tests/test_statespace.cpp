#include "misspec/models/ar1.hpp"
#include "misspec/models/heston.hpp"
#include "misspec/models/sqrt_model.hpp"
#include "misspec/residuals.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace misspec;
using namespace misspec::models;

namespace {

double rel_err(const Matrix& a, const Matrix& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(ParamVector, EntrywiseArithmetic) {
    ParamVector a{{1.0, 2.0}, {"gamma", "alpha"}};
    ParamVector b{{0.5, -1.0}, {"gamma", "alpha"}};
    EXPECT_DOUBLE_EQ((a + b)[0], 1.5);
    EXPECT_DOUBLE_EQ((a - b)[1], 3.0);
    EXPECT_EQ(a.index_of("alpha"), 1);
    EXPECT_DOUBLE_EQ(a.with("gamma", 7.0)[0], 7.0);
    ParamVector c{{1.0}, {"gamma"}};
    EXPECT_THROW(a + c, ConfigError);
}

TEST(Simulate, NoiseFreeAR1Recursion) {
    AR1Params p;
    p.beta2 = 0.0;
    p.sigma2 = 0.0;
    p.x0 = 1.0;
    const auto spec = make_ar1(p);
    const Trajectory tr = simulate(spec, ar1_theta(p), 3, 11);
    ASSERT_EQ(tr.states.size(), 4u);
    ASSERT_EQ(tr.observations.size(), 3u);
    const double xs[] = {1.0, 0.9, 0.81, 0.729};
    for (int t = 0; t < 4; ++t) EXPECT_NEAR(tr.states[t][0], xs[t], 1e-15);
    const double ys[] = {2.7, 2.43, 2.187};
    for (int t = 0; t < 3; ++t) EXPECT_NEAR(tr.observations[t][0], ys[t], 1e-14);
}

TEST(Simulate, AR1StationaryVariance) {
    const AR1Params p;
    const auto spec = make_ar1(p);
    const Trajectory tr = simulate(spec, ar1_theta(p), 100000, 3);
    double mean = 0.0;
    for (std::size_t t = 1; t < tr.states.size(); ++t) mean += tr.states[t][0];
    mean /= 100000.0;
    double var = 0.0;
    for (std::size_t t = 1; t < tr.states.size(); ++t) var += std::pow(tr.states[t][0] - mean, 2);
    var /= 99999.0;
    const double expected = p.beta2 / (1.0 - p.gamma * p.gamma);
    EXPECT_NEAR(expected, 0.5263, 1e-4);
    EXPECT_NEAR(var / expected, 1.0, 0.03);
}

TEST(Simulate, SameSeedSameTrajectory) {
    const auto spec = make_sqrt_model({});
    const auto theta = sqrt_theta({});
    EXPECT_EQ(simulate(spec, theta, 200, 5), simulate(spec, theta, 200, 5));
    EXPECT_FALSE(simulate(spec, theta, 200, 5) == simulate(spec, theta, 200, 6));
    SimulationOptions other;
    other.replicate = 1;
    EXPECT_FALSE(simulate(spec, theta, 200, 5) == simulate(spec, theta, 200, 5, other));
}

TEST(Simulate, NoiseIncrementsAreStandardNormal) {
    // Reconstruct η_t = (x_t - γ x_{t-1})/β and ε_t = (y_t - α x_t)/σ.
    const AR1Params p;
    const Index N = 20000;
    const Trajectory tr = simulate(make_ar1(p), ar1_theta(p), N, 9);
    std::vector<double> eta, eps;
    for (Index t = 1; t <= N; ++t) {
        const double x = tr.states[t][0], xp = tr.states[t - 1][0];
        eta.push_back((x - p.gamma * xp) / std::sqrt(p.beta2));
        eps.push_back((tr.observations[t - 1][0] - p.alpha * x) / std::sqrt(p.sigma2));
    }
    const double band = 4.0 / std::sqrt(static_cast<double>(N));
    for (const auto* s : {&eta, &eps}) {
        double m = 0.0, v = 0.0;
        for (double z : *s) m += z;
        m /= N;
        for (double z : *s) v += (z - m) * (z - m);
        v /= N - 1;
        EXPECT_LT(std::abs(m), band);
        EXPECT_LT(std::abs(v - 1.0), band * std::sqrt(2.0));
    }
    double cross = 0.0;
    for (Index i = 0; i < N; ++i) cross += eta[i] * eps[i];
    EXPECT_LT(std::abs(cross / N), band);
}

TEST(Simulate, RejectsInadmissibleTheta) {
    const auto spec = make_ar1({});
    EXPECT_THROW(simulate(spec, {{1.5, 3.0}, {"gamma", "alpha"}}, 10, 1), DomainError);
    EXPECT_THROW(simulate(spec, ar1_theta({}), 0, 1), ConfigError);
}

TEST(Linearize, LinearFamilyIgnoresPoints) {
    const auto spec = make_ar1({});
    const auto theta = ar1_theta({});
    for (double x : {-3.0, 0.0, 1.7}) {
        const Linearization lin = linearize(spec, theta, Vector::Constant(1, x), Vector::Constant(1, 2 * x));
        EXPECT_DOUBLE_EQ(lin.A(0, 0), 0.9);
        EXPECT_DOUBLE_EQ(lin.C(0, 0), 3.0);
        EXPECT_DOUBLE_EQ(lin.u[0], 0.0);
        EXPECT_DOUBLE_EQ(lin.d[0], 0.0);
    }
}

TEST(Linearize, SqrtModelByHand) {
    const auto spec = make_sqrt_model({});
    const auto theta = sqrt_theta({});
    const Linearization lin = linearize(spec, theta, Vector::Constant(1, 1.0), Vector::Constant(1, 1.0));
    const double A = 5.0 / (2.0 * std::sqrt(0.992));
    EXPECT_NEAR(lin.A(0, 0), A, 1e-14);
    EXPECT_NEAR(lin.A(0, 0), 2.51006, 1e-5);
    EXPECT_NEAR(lin.u[0], 5.0 * std::sqrt(0.992) - A, 1e-14);
    EXPECT_DOUBLE_EQ(lin.C(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(lin.d[0], 0.0);

    const Linearization at = linearize(spec, theta, Vector::Constant(1, 1.008), Vector::Constant(1, 1.0));
    EXPECT_NEAR(at.A(0, 0), 2.5, 1e-14);
    // finite-difference cross-check
    auto model = spec.bind(theta);
    const Matrix fd = fd_jacobian([&](const Vector& x) { return model->transition(x, 1); }, Vector::Constant(1, 1.0));
    EXPECT_NEAR(fd(0, 0), A, 1e-7);
}

TEST(Linearize, SqrtModelDomain) {
    const auto spec = make_sqrt_model({});
    auto model = spec.bind(sqrt_theta({}));
    EXPECT_THROW(model->transition(Vector::Constant(1, 0.008), 1), DomainError);
    EXPECT_THROW(model->transition_jacobian(Vector::Constant(1, 0.0), 1), DomainError);
}

TEST(Jacobians, MatchFiniteDifferencesAR1AndSqrt) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto ar1 = make_ar1({});
    const auto sq = make_sqrt_model({});
    for (int i = 0; i < 100; ++i) {
        const ParamVector ta{{-0.99 + 1.98 * u(rng), -5.0 + 10.0 * u(rng)}, {"gamma", "alpha"}};
        const Vector x = Vector::Constant(1, -5.0 + 10.0 * u(rng));
        auto ma = ar1.bind(ta);
        EXPECT_LE(rel_err(ma->transition_jacobian(x, 1),
                          fd_jacobian([&](const Vector& z) { return ma->transition(z, 1); }, x)),
                  1e-5);
        EXPECT_LE(rel_err(ma->observation_jacobian(x, 1),
                          fd_jacobian([&](const Vector& z) { return ma->observe(z, 1); }, x)),
                  1e-5);

        const ParamVector ts{{0.02 * u(rng), 1.0 + 9.0 * u(rng)}, {"gamma", "alpha"}};
        const Vector xs = Vector::Constant(1, ts[0] + 0.05 + 40.0 * u(rng));
        auto ms = sq.bind(ts);
        EXPECT_LE(rel_err(ms->transition_jacobian(xs, 1),
                          fd_jacobian([&](const Vector& z) { return ms->transition(z, 1); }, xs)),
                  1e-5);
        EXPECT_LE(rel_err(ms->observation_jacobian(xs, 1),
                          fd_jacobian([&](const Vector& z) { return ms->observe(z, 1); }, xs)),
                  1e-5);
    }
}

TEST(Jacobians, MatchFiniteDifferencesHeston) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    HestonSetup setup;
    auto spot = std::make_shared<const std::vector<double>>(std::vector<double>{100.0, 97.0, 104.0});
    const auto spec = make_heston(setup, spot);
    int checked = 0;
    while (checked < 100) {
        const ParamVector th{{2.0 + 4.0 * u(rng), 0.02 + 0.03 * u(rng), 0.2 + 0.3 * u(rng), -0.9 + 1.2 * u(rng)},
                             {"kappa", "gamma", "beta", "rho"}};
        if (!spec.admissible(th)) continue;
        ++checked;
        const Vector v = Vector::Constant(1, 0.01 + 0.08 * u(rng));
        const Index t = 1 + checked % 2;
        auto m = spec.bind(th);
        EXPECT_LE(rel_err(m->transition_jacobian(v, t),
                          fd_jacobian([&](const Vector& z) { return m->transition(z, t); }, v)),
                  1e-5);
        // step tuned to the pricer's smoothness in v
        const double h = 1e-4 * v[0];
        const Matrix fd = (m->observe(v + Vector::Constant(1, h), t) - m->observe(v - Vector::Constant(1, h), t)) /
                          (2.0 * h);
        EXPECT_LE(rel_err(m->observation_jacobian(v, t), fd), 1e-5) << "at " << format_params(th);
    }
}

TEST(Trajectory, CsvRoundTrip) {
    const auto spec = make_ar1({});
    const Trajectory tr = simulate(spec, ar1_theta({}), 25, 4);
    std::stringstream ss;
    write_trajectory_csv(ss, tr);
    std::string header;
    std::getline(std::stringstream(ss.str()), header);
    EXPECT_EQ(header, "t,x1,y1");
    const Trajectory back = read_trajectory_csv(ss, spec.x0_mean);
    ASSERT_EQ(back.length(), 25);
    for (std::size_t t = 0; t < tr.states.size(); ++t) EXPECT_EQ(back.states[t], tr.states[t]);
    for (std::size_t t = 0; t < tr.observations.size(); ++t) EXPECT_EQ(back.observations[t], tr.observations[t]);
}

TEST(Trajectory, BinaryRoundTripKeepsSeedRecord) {
    const Trajectory tr = simulate_heston(HestonSetup{}, heston_theta({}), 12, 77);
    std::stringstream ss;
    write_trajectory_binary(ss, tr);
    const Trajectory back = read_trajectory_binary(ss);
    EXPECT_EQ(back, tr);
    EXPECT_EQ(back.seed, 77u);
    EXPECT_EQ(back.exogenous.size(), 13u);
}

TEST(Trajectory, CsvRejectsMalformedInput) {
    std::stringstream bad("t,x1,q\n1,2,3\n");
    EXPECT_THROW(read_trajectory_csv(bad, Vector::Zero(1)), ConfigError);
}
