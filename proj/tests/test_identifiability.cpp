// Recovery properties of the bias estimator on the linear AR(1) family.
// The observation coefficient is weakly identified by residual
// autocovariances, so these are expected to be fragile.

#include "misspec/models/ar1.hpp"
#include "misspec/residuals.hpp"

#include <gtest/gtest.h>

using namespace misspec;
using namespace misspec::models;

namespace {

const ParamVector kStart{{0.8, 2.8}, {"gamma", "alpha"}};
const ParamVector kZero{{0.0, 0.0}, {"gamma", "alpha"}};

}  // namespace

TEST(Identifiability, GridMinimumNearTrueBias) {
    const auto spec = make_ar1({});
    const Trajectory tr = simulate(spec, ar1_theta({}), 500, 1);
    const ObjectiveSpec os;
    double best = std::numeric_limits<double>::infinity();
    Vector arg(2);
    for (int i = 0; i <= 38; ++i)
        for (int j = 0; j <= 80; ++j) {
            const ParamVector nu{{-0.19 + 0.005 * i, -0.6 + 0.01 * j}, {"gamma", "alpha"}};
            if (!spec.admissible(kStart - nu)) continue;
            const double J = objective(spec, kStart, tr.observations, nu, os);
            if (J < best) {
                best = J;
                arg = nu.values;
            }
        }
    EXPECT_NEAR(arg[0], -0.1, 0.02);
    EXPECT_NEAR(arg[1], -0.2, 0.02);
}

TEST(Identifiability, LagCapBarelyMovesEstimate) {
    const auto spec = make_ar1({});
    const Trajectory tr = simulate(spec, ar1_theta({}), 500, 2);
    ObjectiveSpec a, b;
    a.h_star = 2;
    b.h_star = 10;
    const EstimationResult ra = estimate_bias(spec, kStart, tr.observations, a, kZero);
    const EstimationResult rb = estimate_bias(spec, kStart, tr.observations, b, kZero);
    EXPECT_LT(std::abs(ra.theta_hat[0] - rb.theta_hat[0]), 0.02);
    EXPECT_LT(std::abs(ra.theta_hat[1] - rb.theta_hat[1]), 0.02);
}

TEST(Identifiability, WellSpecifiedStartStaysPut) {
    const auto spec = make_ar1({});
    const Trajectory tr = simulate(spec, ar1_theta({}), 500, 3);
    const EstimationResult r = estimate_bias(spec, ar1_theta({}), tr.observations, ObjectiveSpec{}, kZero);
    EXPECT_LE(std::abs(r.epsilon_hat[0]), 0.05);
    EXPECT_LE(std::abs(r.epsilon_hat[1]), 0.05);
}
