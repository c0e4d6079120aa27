#pragma once

// Linear AR(1) signal observed with scaled noise:
//   x_t = γ x_{t-1} + β η_t
//   y_t = α x_t     + σ ε_t
// Estimated parameters θ = (γ, α); the noise variances are known.

#include "misspec/statespace.hpp"

#include <cmath>
#include <limits>
#include <memory>

namespace misspec::models {

struct AR1Params {
    double gamma = 0.9;
    double alpha = 3.0;
    double beta2 = 0.1;   // state noise variance
    double sigma2 = 0.2;  // observation noise variance
    double x0 = 0.0;
};

namespace detail {

class AR1Instance final : public ModelInstance {
public:
    AR1Instance(double gamma, double alpha, double beta, double sigma)
        : gamma_(gamma), alpha_(alpha), beta_(beta), sigma_(sigma) {}

    Vector transition(const Vector& x, Index) const override { return gamma_ * x; }
    Vector observe(const Vector& x, Index) const override { return alpha_ * x; }
    Matrix transition_jacobian(const Vector&, Index) const override { return Matrix::Constant(1, 1, gamma_); }
    Matrix observation_jacobian(const Vector&, Index) const override { return Matrix::Constant(1, 1, alpha_); }
    Matrix state_noise(const Vector&, Index) const override { return Matrix::Constant(1, 1, beta_); }
    Matrix observation_noise(Index) const override { return Matrix::Constant(1, 1, sigma_); }

private:
    double gamma_, alpha_, beta_, sigma_;
};

}  // namespace detail

inline ModelSpec make_ar1(const AR1Params& p) {
    if (!(std::abs(p.gamma) < 1.0))
        throw DomainError("ar1: |gamma| must be < 1 for a stationary process, got " + std::to_string(p.gamma));
    if (!(p.beta2 >= 0.0) || !(p.sigma2 >= 0.0))
        throw DomainError("ar1: noise variances must be non-negative");

    constexpr double inf = std::numeric_limits<double>::infinity();
    ModelSpec spec;
    spec.family = "ar1";
    spec.state_dim = 1;
    spec.obs_dim = 1;
    spec.param_labels = {"gamma", "alpha"};
    spec.x0_mean = Vector::Constant(1, p.x0);
    spec.x0_cov = Matrix::Zero(1, 1);
    spec.linear = true;
    spec.lower_bounds = Vector{{-1.0, -inf}};
    spec.upper_bounds = Vector{{1.0, inf}};
    const double beta = std::sqrt(p.beta2), sigma = std::sqrt(p.sigma2);
    spec.make_instance = [beta, sigma](const ParamVector& theta) -> std::shared_ptr<const ModelInstance> {
        return std::make_shared<detail::AR1Instance>(theta[0], theta[1], beta, sigma);
    };
    return spec;
}

inline ParamVector ar1_theta(const AR1Params& p) { return {{p.gamma, p.alpha}, {"gamma", "alpha"}}; }

}  // namespace misspec::models
