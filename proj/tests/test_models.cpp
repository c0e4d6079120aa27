#include "misspec/models/ar1.hpp"
#include "misspec/models/heston.hpp"
#include "misspec/models/sqrt_model.hpp"

#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>

using namespace misspec;
using namespace misspec::models;

namespace {

double black_scholes_call(double S, double K, double tau, double r, double vol) {
    const boost::math::normal n01;
    const double sd = vol * std::sqrt(tau);
    const double d1 = (std::log(S / K) + (r + 0.5 * vol * vol) * tau) / sd;
    return S * boost::math::cdf(n01, d1) - K * std::exp(-r * tau) * boost::math::cdf(n01, d1 - sd);
}

}  // namespace

TEST(AR1Family, Construction) {
    EXPECT_NO_THROW(make_ar1({}));
    AR1Params bad;
    bad.gamma = 1.5;
    EXPECT_THROW(make_ar1(bad), DomainError);
    const auto spec = make_ar1({});
    EXPECT_TRUE(spec.linear);
    EXPECT_TRUE(spec.admissible(ar1_theta({})));
    EXPECT_FALSE(spec.admissible({{-1.0, 3.0}, {"gamma", "alpha"}}));
}

TEST(SqrtFamily, Construction) {
    const auto spec = make_sqrt_model({});
    EXPECT_FALSE(spec.linear);
    EXPECT_TRUE(spec.admissible(sqrt_theta({})));
    SqrtModelParams bad;
    bad.alpha = -1.0;
    EXPECT_THROW(make_sqrt_model(bad), DomainError);
    const double x = sqrt_model_fixed_point(0.008, 5.0);
    EXPECT_NEAR(x, 5.0 * std::sqrt(x - 0.008), 1e-12);
    EXPECT_NEAR(spec.x0_mean[0], x, 0.0);
}

TEST(CIR, OneStepMomentsLimits) {
    const double k = 4.0, g = 0.03, b = 0.4;
    EXPECT_DOUBLE_EQ(cir_mean(g, k, g, 1.0 / 252), g);
    EXPECT_NEAR(cir_mean(0.05, k, g, 1e-12), 0.05, 1e-12);
    EXPECT_NEAR(cir_variance(0.05, k, g, b, 1e3), g * b * b / (2.0 * k), 1e-15);
    // small-step limit: β² v Δ
    const double dt = 1e-7;
    EXPECT_NEAR(cir_variance(0.05, k, g, b, dt) / (b * b * 0.05 * dt), 1.0, 1e-5);
}

TEST(CIR, ExactTransitionMoments) {
    const double k = 4.0, g = 0.03, b = 0.4, dt = 1.0 / 252, v = 0.05;
    Rng rng(2024);
    const int n = 1000000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = cir_transition_sample(v, k, g, b, dt, rng);
        s += x;
        s2 += x * x;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    const double m = cir_mean(v, k, g, dt), V = cir_variance(v, k, g, b, dt);
    EXPECT_LE(std::abs(mean - m), 4.0 * std::sqrt(V / n));
    // Var of the sample variance ≈ (μ₄ - V²)/n; bound μ₄ by 3V² plus a skew margin
    EXPECT_LE(std::abs(var - V), 4.0 * std::sqrt(3.0 * V * V / n));
}

TEST(CIR, InvariantLaw) {
    const double k = 4.0, g = 0.03, b = 0.4, dt = 1.0 / 252;
    Rng rng(5);
    double v = g;
    const int burn = 1000, n = 100000;
    for (int i = 0; i < burn; ++i) v = cir_transition_sample(v, k, g, b, dt, rng);
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        v = cir_transition_sample(v, k, g, b, dt, rng);
        s += v;
        s2 += v * v;
    }
    const double mean = s / n, var = s2 / n - mean * mean;
    const double stat_var = g * b * b / (2.0 * k);
    // strongly autocorrelated chain: effective sample size ≈ n κΔ / 2
    const double n_eff = n * (1.0 - std::exp(-k * dt)) / (1.0 + std::exp(-k * dt));
    EXPECT_LE(std::abs(mean - g), 4.0 * std::sqrt(stat_var / n_eff));
    EXPECT_NEAR(var / stat_var, 1.0, 0.15);
}

TEST(CIR, FellerEnforced) {
    Rng rng(1);
    EXPECT_THROW(cir_transition_sample(0.03, 1.0, 0.01, 0.5, 1.0 / 252, rng), DomainError);
    EXPECT_FALSE(feller_holds(1.0, 0.01, 0.5));
    const auto spec = make_heston(HestonSetup{});
    EXPECT_FALSE(spec.admissible({{1.0, 0.01, 0.5, -0.5}, {"kappa", "gamma", "beta", "rho"}}));
    EXPECT_TRUE(spec.admissible(heston_theta({})));
}

TEST(HestonPricing, PutCallParity) {
    const HestonParams p;
    for (double tau : {0.1, 0.5, 1.0})
        for (double K : {80.0, 100.0, 120.0}) {
            const double c = heston_call_price(100.0, 0.04, tau, K, p);
            const double put = heston_put_price(100.0, 0.04, tau, K, p);
            EXPECT_NEAR(c - put, 100.0 - K * std::exp(-p.r * tau), 1e-6 * 100.0);
            EXPECT_GT(put, 0.0);
        }
}

TEST(HestonPricing, BlackScholesLimit) {
    // β → 0 and v₀ = γ: constant variance γ. The ρβ skew term is first order
    // in β (about 1.7β relative for the 110 strike at τ = 0.1).
    HestonParams p;
    p.beta = 1e-5;
    for (double tau : {0.1, 0.5, 1.0})
        for (double m : {0.9, 1.0, 1.1}) {
            const double h = heston_call_price(100.0, p.gamma, tau, m * 100.0, p);
            const double bs = black_scholes_call(100.0, m * 100.0, tau, p.r, std::sqrt(p.gamma));
            EXPECT_NEAR(h / bs, 1.0, 1e-4) << "tau=" << tau << " K=" << m * 100.0;
        }
}

TEST(HestonPricing, SkewTermIsLinearInBeta) {
    HestonParams p;
    const double bs = black_scholes_call(100.0, 110.0, 0.1, p.r, std::sqrt(p.gamma));
    p.beta = 1e-4;
    const double d4 = heston_call_price(100.0, p.gamma, 0.1, 110.0, p) / bs - 1.0;
    p.beta = 1e-5;
    const double d5 = heston_call_price(100.0, p.gamma, 0.1, 110.0, p) / bs - 1.0;
    EXPECT_NEAR(d4 / d5, 10.0, 0.05);
    p.rho = 0.0;
    p.beta = 1e-4;
    EXPECT_NEAR(heston_call_price(100.0, p.gamma, 0.1, 110.0, p) / bs, 1.0, 1e-7);
}

TEST(HestonPricing, ShapeAndDerivative) {
    const HestonParams p;
    double prev = 1e300;
    for (double K = 60.0; K <= 140.0; K += 5.0) {
        const double c = heston_call_price(100.0, 0.03, 0.5, K, p);
        EXPECT_LT(c, prev);
        EXPECT_GE(c, std::max(0.0, 100.0 - K * std::exp(-p.r * 0.5)) - 1e-8);
        prev = c;
    }
    EXPECT_NEAR(heston_call_price(100.0, 0.03, 0.1, 20.0, p), 100.0 - 20.0 * std::exp(-p.r * 0.1), 1e-6);

    HestonPricer pr(p.kappa, p.gamma, p.beta, p.rho, p.r, {0.5});
    const double v = 0.03, h = 1e-6;
    const double fd = (pr.call(0, v + h, 100.0, 100.0).price - pr.call(0, v - h, 100.0, 100.0).price) / (2.0 * h);
    EXPECT_NEAR(pr.call(0, v, 100.0, 100.0).dprice_dv / fd, 1.0, 1e-5);
    EXPECT_GT(fd, 0.0);
}

TEST(HestonFamily, SimulatedPricesBehave) {
    HestonSetup setup;
    setup.obs_sd = 1e-12;
    const auto theta = heston_theta({});
    const Trajectory tr = simulate_heston(setup, theta, 30, 8);
    ASSERT_EQ(tr.exogenous.size(), 31u);
    ASSERT_EQ(tr.observations.size(), 30u);
    const Index ns = static_cast<Index>(setup.grid.strikes.size());
    for (const Vector& y : tr.observations) {
        ASSERT_EQ(y.size(), setup.grid.size());
        for (Index j = 0; j < static_cast<Index>(setup.grid.maturities.size()); ++j)
            for (Index i = 0; i < ns; ++i) {
                EXPECT_GT(y[j * ns + i], 0.0);
                if (i > 0) {
                    EXPECT_LT(y[j * ns + i], y[j * ns + i - 1]);
                }
            }
    }
    for (std::size_t t = 1; t < tr.states.size(); ++t) EXPECT_GT(tr.states[t][0], 0.0);

    auto spot = std::make_shared<const std::vector<double>>(tr.exogenous);
    auto m = make_heston(setup, spot).bind(theta);
    EXPECT_EQ(m->observe(Vector::Constant(1, 0.03), 4), m->observe(Vector::Constant(1, 0.03), 4));
    EXPECT_THROW(make_heston(setup).bind(theta)->observe(Vector::Constant(1, 0.03), 1), ConfigError);
}

TEST(HestonFamily, TransitionIsCirMean) {
    const HestonSetup setup;
    auto m = make_heston(setup).bind(heston_theta({}));
    EXPECT_DOUBLE_EQ(m->transition(Vector::Constant(1, 0.03), 1)[0], 0.03);
    EXPECT_NEAR(m->transition_jacobian(Vector::Constant(1, 0.07), 1)(0, 0), std::exp(-4.0 / 252.0), 1e-15);
    // floored below zero
    EXPECT_DOUBLE_EQ(m->transition(Vector::Constant(1, -0.5), 1)[0], cir_mean(kVarianceFloor, 4.0, 0.03, setup.dt));
}
