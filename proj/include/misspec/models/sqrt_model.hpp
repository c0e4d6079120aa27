#pragma once

// Weakly nonlinear square-root dynamics observed directly:
//   x_t = α √(x_{t-1} - γ) + β η_t
//   y_t = x_t + σ ε_t
// Estimated parameters θ = (γ, α).

#include "misspec/statespace.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

namespace misspec::models {

struct SqrtModelParams {
    double gamma = 0.008;
    double alpha = 5.0;
    double beta2 = 0.1;
    double sigma2 = 0.2;
    /// Start of the state path; NaN selects the noise-free fixed point of b.
    double x0 = std::numeric_limits<double>::quiet_NaN();
};

/// Fixed point x = α√(x - γ) of the noise-free recursion (the larger root).
inline double sqrt_model_fixed_point(double gamma, double alpha) {
    const double a2 = alpha * alpha;
    return 0.5 * (a2 + std::sqrt(a2 * a2 - 4.0 * a2 * gamma));
}

namespace detail {

/// Simulation clamps x - γ at this floor before the root.
inline constexpr double kSqrtDomainFloor = 1e-12;

class SqrtInstance final : public ModelInstance {
public:
    SqrtInstance(double gamma, double alpha, double beta, double sigma)
        : gamma_(gamma), alpha_(alpha), beta_(beta), sigma_(sigma) {}

    Vector transition(const Vector& x, Index) const override {
        return Vector::Constant(1, alpha_ * std::sqrt(checked_gap(x[0])));
    }
    Vector observe(const Vector& x, Index) const override { return x; }
    Matrix transition_jacobian(const Vector& x, Index) const override {
        return Matrix::Constant(1, 1, alpha_ / (2.0 * std::sqrt(checked_gap(x[0]))));
    }
    Matrix observation_jacobian(const Vector&, Index) const override { return Matrix::Identity(1, 1); }
    Matrix state_noise(const Vector&, Index) const override { return Matrix::Constant(1, 1, beta_); }
    Matrix observation_noise(Index) const override { return Matrix::Constant(1, 1, sigma_); }

    Vector sample_transition(const Vector& x, Index, Rng& rng, std::size_t& domain_events) const override {
        double gap = x[0] - gamma_;
        if (gap < kSqrtDomainFloor) {
            gap = kSqrtDomainFloor;
            ++domain_events;
        }
        std::normal_distribution<double> n01;
        return Vector::Constant(1, alpha_ * std::sqrt(gap) + beta_ * n01(rng));
    }

private:
    double checked_gap(double x) const {
        const double gap = x - gamma_;
        if (!(gap > 0.0)) {
            std::ostringstream os;
            os << "sqrt model: state " << x << " is not above gamma = " << gamma_;
            throw DomainError(os.str());
        }
        return gap;
    }

    double gamma_, alpha_, beta_, sigma_;
};

}  // namespace detail

inline ModelSpec make_sqrt_model(const SqrtModelParams& p) {
    if (!(p.alpha > 0.0)) throw DomainError("sqrt model: alpha must be positive");
    if (!(p.beta2 >= 0.0) || !(p.sigma2 >= 0.0))
        throw DomainError("sqrt model: noise variances must be non-negative");

    constexpr double inf = std::numeric_limits<double>::infinity();
    ModelSpec spec;
    spec.family = "sqrt";
    spec.state_dim = 1;
    spec.obs_dim = 1;
    spec.param_labels = {"gamma", "alpha"};
    const double x0 = std::isnan(p.x0) ? sqrt_model_fixed_point(p.gamma, p.alpha) : p.x0;
    spec.x0_mean = Vector::Constant(1, x0);
    spec.x0_cov = Matrix::Zero(1, 1);
    spec.linear = false;
    spec.lower_bounds = Vector{{-inf, 0.0}};
    spec.upper_bounds = Vector{{inf, inf}};
    const double beta = std::sqrt(p.beta2), sigma = std::sqrt(p.sigma2);
    spec.make_instance = [beta, sigma](const ParamVector& theta) -> std::shared_ptr<const ModelInstance> {
        return std::make_shared<detail::SqrtInstance>(theta[0], theta[1], beta, sigma);
    };
    return spec;
}

inline ParamVector sqrt_theta(const SqrtModelParams& p) { return {{p.gamma, p.alpha}, {"gamma", "alpha"}}; }

}  // namespace misspec::models
