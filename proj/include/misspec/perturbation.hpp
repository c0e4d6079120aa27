#pragma once

// First-order propagation of a parameter bias through the Kalman filter.
//
// The filter runs at θ while the data come from θ₀ = θ - ε·dir, with dir a
// unit direction in parameter space and ε a scalar. Derivatives ∂g/∂θ are
// directional derivatives along dir, taken at θ.
//
// Covariances of the first-order processes are assembled two ways: from the
// closed-form sums over the transition products Φ(t,l) = Ã_t ⋯ Ã_{l+1}
// (CovarianceBlocks), and by propagating the joint covariance of (e_t, x_t)
// (augmented_interpolation_autocov). exact_interpolation_autocov propagates
// the joint law of (x_t, x̂_t) without any expansion in ε.

#include "misspec/filters.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <vector>

namespace misspec {

struct BiasDirection {
    Vector direction;  // unit vector
    double epsilon = 0.0;

    /// θ₀ = θ - ε·dir
    ParamVector true_theta(const ParamVector& theta) const {
        return {theta.values - epsilon * direction, theta.labels};
    }
    /// θ = θ₀ + ε·dir
    ParamVector filter_theta(const ParamVector& theta0) const {
        return {theta0.values + epsilon * direction, theta0.labels};
    }
};

/// Bias of size `epsilon` along the normalized `direction`.
inline BiasDirection make_bias(const Vector& direction, double epsilon) {
    const double norm = direction.norm();
    if (!(norm > 0.0)) throw ConfigError("bias direction must be nonzero");
    return {direction / norm, epsilon};
}

/// Bias on a single named parameter.
inline BiasDirection make_bias(const ParamVector& theta, const std::string& label, double epsilon) {
    Vector dir = Vector::Zero(theta.size());
    dir[theta.index_of(label)] = 1.0;
    return {dir, epsilon};
}

// ---------------------------------------------------------------------------
// Directional derivatives

struct ThetaDerivatives {
    Vector du, dd;
    Matrix dA, dC, dbeta, dsigma;
};

struct StepQuantities {
    Linearization lin;
    Matrix beta, sigma;
};

inline StepQuantities step_quantities(const ModelInstance& model, const Vector& x_post_prev, const Vector& x_prior,
                                      Index t) {
    StepQuantities q;
    q.lin = linearize(model, x_post_prev, x_prior, t);
    q.beta = model.state_noise(x_post_prev, t);
    q.sigma = model.observation_noise(t);
    return q;
}

/// Central differences along dir at fixed linearization points.
inline ThetaDerivatives theta_derivatives(const ModelSpec& spec, const ParamVector& theta, const Vector& direction,
                                          const Vector& x_post_prev, const Vector& x_prior, Index t = 1,
                                          double step = 1e-5) {
    const double h = step * std::max(1.0, theta.values.cwiseAbs().maxCoeff());
    const ParamVector plus{theta.values + h * direction, theta.labels};
    const ParamVector minus{theta.values - h * direction, theta.labels};
    const StepQuantities qp = step_quantities(*spec.bind(plus), x_post_prev, x_prior, t);
    const StepQuantities qm = step_quantities(*spec.bind(minus), x_post_prev, x_prior, t);
    const double s = 1.0 / (2.0 * h);
    ThetaDerivatives d;
    d.du = (qp.lin.u - qm.lin.u) * s;
    d.dd = (qp.lin.d - qm.lin.d) * s;
    d.dA = (qp.lin.A - qm.lin.A) * s;
    d.dC = (qp.lin.C - qm.lin.C) * s;
    d.dbeta = (qp.beta - qm.beta) * s;
    d.dsigma = (qp.sigma - qm.sigma) * s;
    return d;
}

/// Everything the expansion needs at one filter step under θ.
struct FilterStep {
    Matrix A, C;
    Vector u, d;
    Matrix beta, sigma;
    Matrix K;
    ThetaDerivatives deriv;
};

/// Runs the filter at θ and collects per-step linearizations, gains and derivatives.
inline std::vector<FilterStep> filter_steps(const ModelSpec& spec, const ParamVector& theta, const Vector& direction,
                                            const std::vector<Vector>& observations) {
    auto model = spec.bind(theta);
    const FilterTrace trace = run_filter(spec, *model, theta, observations, natural_mode(spec));
    std::vector<FilterStep> out;
    out.reserve(trace.steps.size());
    for (std::size_t k = 0; k < trace.steps.size(); ++k) {
        const Index t = static_cast<Index>(k) + 1;
        const Vector& x_prev = k == 0 ? spec.x0_mean : trace.steps[k - 1].x_post;
        const Vector& x_prior = trace.steps[k].x_prior;
        FilterStep s;
        s.A = trace.linearized[k].A;
        s.C = trace.linearized[k].C;
        s.u = trace.linearized[k].u;
        s.d = trace.linearized[k].d;
        s.beta = model->state_noise(x_prev, t);
        s.sigma = model->observation_noise(t);
        s.K = trace.steps[k].K;
        s.deriv = theta_derivatives(spec, theta, direction, x_prev, x_prior, t);
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corrective terms

struct PerturbationTerms {
    Vector E_x;
    Matrix F_x;
    Matrix W_x_eta, W_x_eps;  // 𝓦_x = W_x_eta η_t + W_x_eps ε_t
    Vector E_y;
    Matrix F_y;
    Matrix W_y_eps;           // 𝓦_y = W_y_eps ε_t
    Vector E_yminus;
    Matrix F_yminus;
    Matrix W_yminus_eta, W_yminus_eps;

    Vector W_x(const Vector& eta, const Vector& eps) const { return W_x_eta * eta + W_x_eps * eps; }
    Vector W_y(const Vector& eps) const { return W_y_eps * eps; }
    Vector W_yminus(const Vector& eta, const Vector& eps) const { return W_yminus_eta * eta + W_yminus_eps * eps; }
};

inline PerturbationTerms corrective_terms(const FilterStep& s, double eps) {
    const ThetaDerivatives& g = s.deriv;
    const Index n = s.A.rows();
    const Matrix IKC = Matrix::Identity(n, n) - s.K * s.C;
    PerturbationTerms p;
    p.E_x = -eps * (IKC * g.du - s.K * g.dd - s.K * g.dC * s.u);
    p.F_x = -eps * (IKC * g.dA - s.K * g.dC * s.A);
    p.W_x_eta = -eps * (g.dbeta - s.K * s.C * g.dbeta - s.K * g.dC * s.beta);
    p.W_x_eps = eps * s.K * g.dsigma;
    p.E_y = -eps * g.dd;
    p.F_y = -eps * g.dC;
    p.W_y_eps = -eps * g.dsigma;
    p.E_yminus = -eps * (g.dd + s.C * g.du + g.dC * s.u);
    p.F_yminus = -eps * (s.C * g.dA + g.dC * s.A);
    p.W_yminus_eta = -eps * (g.dC * s.beta + s.C * g.dbeta);
    p.W_yminus_eps = -eps * g.dsigma;
    return p;
}

/// Terms at one step from the raw ingredients: derivatives along dir are
/// evaluated at θ and the given linearization points.
inline PerturbationTerms corrective_terms(const ModelSpec& spec, const ParamVector& theta, const BiasDirection& bias,
                                         const Matrix& K, const Vector& x_post_prev, const Vector& x_prior,
                                         Index t = 1) {
    auto model = spec.bind(theta);
    const StepQuantities q = step_quantities(*model, x_post_prev, x_prior, t);
    FilterStep s{q.lin.A, q.lin.C, q.lin.u, q.lin.d, q.beta, q.sigma, K,
                 theta_derivatives(spec, theta, bias.direction, x_post_prev, x_prior, t)};
    return corrective_terms(s, bias.epsilon);
}

/// e_t = (I - KC)A e_{t-1} - K(σε_t + Cβη_t) + βη_t + 𝓔_x + 𝓕_x x_{t-1} + 𝓦_x
inline Vector predict_error_step(const Vector& e_prev, const Vector& x_prev, const Vector& eta, const Vector& eps,
                                 const PerturbationTerms& p, const Matrix& K, const Matrix& A, const Matrix& C,
                                 const Matrix& beta, const Matrix& sigma) {
    const Index n = A.rows();
    return (Matrix::Identity(n, n) - K * C) * A * e_prev - K * (sigma * eps + C * beta * eta) + beta * eta + p.E_x +
           p.F_x * x_prev + p.W_x(eta, eps);
}

/// ζ_t = C e_t + σε_t + 𝓔_y + 𝓕_y x_t + 𝓦_y
inline Vector predict_interpolation_step(const Vector& e, const Vector& x, const Vector& eps,
                                         const PerturbationTerms& p, const Matrix& C, const Matrix& sigma) {
    return C * e + sigma * eps + p.E_y + p.F_y * x + p.W_y(eps);
}

/// ζ⁻_t = C A e_{t-1} + σε_t + Cβη_t + 𝓔_{y⁻} + 𝓕_{y⁻} x_{t-1} + 𝓦_{y⁻}
inline Vector predict_innovation_step(const Vector& e_prev, const Vector& x_prev, const Vector& eta,
                                      const Vector& eps, const PerturbationTerms& p, const Matrix& A,
                                      const Matrix& C, const Matrix& beta, const Matrix& sigma) {
    return C * A * e_prev + sigma * eps + C * beta * eta + p.E_yminus + p.F_yminus * x_prev +
           p.W_yminus(eta, eps);
}

// ---------------------------------------------------------------------------
// Simulation that keeps the standard-normal draws

struct NoisyPath {
    Trajectory traj;
    std::vector<Vector> eta;  // η_1..η_N
    std::vector<Vector> eps;  // ε_1..ε_N
};

/// Same streams and draw order as simulate() for families using the plain
/// additive transition b + βη.
inline NoisyPath simulate_with_draws(const ModelSpec& spec, const ParamVector& theta, Index n_steps,
                                     std::uint64_t seed, std::uint64_t replicate = 0) {
    auto model = spec.bind(theta);
    NoisyPath out;
    out.traj.family = spec.family;
    out.traj.seed = seed;
    out.traj.replicate = replicate;
    Rng state_rng = make_stream(seed, replicate, Stream::state_noise);
    Rng obs_rng = make_stream(seed, replicate, Stream::observation_noise);
    out.traj.states.push_back(spec.x0_mean);
    for (Index t = 1; t <= n_steps; ++t) {
        const Vector& x = out.traj.states.back();
        Vector eta = standard_normal(state_rng, spec.state_dim);
        out.traj.states.push_back(model->transition(x, t) + model->state_noise(x, t) * eta);
        out.eta.push_back(std::move(eta));
    }
    for (Index t = 1; t <= n_steps; ++t) {
        const Vector& x = out.traj.states[static_cast<std::size_t>(t)];
        Vector eps = standard_normal(obs_rng, spec.obs_dim);
        out.traj.observations.push_back(model->observe(x, t) + model->observation_noise(t) * eps);
        out.eps.push_back(std::move(eps));
    }
    return out;
}

struct ExpansionDeviation {
    double e = 0.0;            // max_t ‖e_t - ê_t‖∞
    double zeta = 0.0;         // max_t ‖ζ_t - ζ̂_t‖∞ (ζ̂_t built on ê_t)
    double zeta_minus = 0.0;   // max_t ‖ζ⁻_t - ζ̂⁻_t‖∞
};

/// Simulates at θ₀, filters at θ₀ + ε·dir, and compares the actual residuals
/// with their one-step first-order predictions (each step starts from the
/// actual e_{t-1}).
inline ExpansionDeviation expansion_deviation(const ModelSpec& spec, const ParamVector& theta0,
                                              const BiasDirection& bias, Index n_steps, std::uint64_t seed) {
    const NoisyPath path = simulate_with_draws(spec, theta0, n_steps, seed);
    const ParamVector theta = bias.filter_theta(theta0);
    const auto& states = path.traj.states;
    const FilterTrace trace = run_filter(spec, theta, path.traj.observations, natural_mode(spec), &states);
    const std::vector<FilterStep> steps = filter_steps(spec, theta, bias.direction, path.traj.observations);

    ExpansionDeviation dev;
    Vector e_prev = states[0] - spec.x0_mean;
    for (std::size_t k = 0; k < steps.size(); ++k) {
        const FilterStep& s = steps[k];
        const PerturbationTerms p = corrective_terms(s, bias.epsilon);
        const Vector e_hat = predict_error_step(e_prev, states[k], path.eta[k], path.eps[k], p, s.K, s.A, s.C,
                                                s.beta, s.sigma);
        const Vector z_hat = predict_interpolation_step(e_hat, states[k + 1], path.eps[k], p, s.C, s.sigma);
        const Vector zm_hat =
            predict_innovation_step(e_prev, states[k], path.eta[k], path.eps[k], p, s.A, s.C, s.beta, s.sigma);
        dev.e = std::max(dev.e, (trace.residuals.e[k] - e_hat).cwiseAbs().maxCoeff());
        dev.zeta = std::max(dev.zeta, (trace.residuals.zeta[k] - z_hat).cwiseAbs().maxCoeff());
        dev.zeta_minus = std::max(dev.zeta_minus, (trace.residuals.zeta_minus[k] - zm_hat).cwiseAbs().maxCoeff());
        e_prev = trace.residuals.e[k];
    }
    return dev;
}

// ---------------------------------------------------------------------------
// Covariance building blocks

/// True-system constants of a linear family at θ₀.
struct TrueSystem {
    Matrix A0, C0, beta0, sigma0;
    Vector u0, d0;
    Matrix P0;  // covariance of x_0
};

inline TrueSystem true_system(const ModelSpec& spec, const ParamVector& theta0) {
    if (!spec.linear) throw ConfigError("covariance blocks require a linear family, got " + spec.family);
    auto model = spec.bind(theta0);
    const Vector zero = Vector::Zero(spec.state_dim);
    TrueSystem ts;
    ts.A0 = model->transition_jacobian(zero, 1);
    ts.C0 = model->observation_jacobian(zero, 1);
    ts.u0 = model->transition(zero, 1);
    ts.d0 = model->observe(zero, 1);
    ts.beta0 = model->state_noise(zero, 1);
    ts.sigma0 = model->observation_noise(1);
    ts.P0 = spec.x0_cov.size() ? spec.x0_cov : Matrix::Zero(spec.state_dim, spec.state_dim);
    return ts;
}

class CovarianceBlocks {
    static Matrix& at(std::vector<Matrix>& v, Index i) { return v[static_cast<std::size_t>(i)]; }
    static const Matrix& at(const std::vector<Matrix>& v, Index i) { return v[static_cast<std::size_t>(i)]; }

public:
    CovarianceBlocks(std::vector<FilterStep> steps, TrueSystem truth, double eps)
        : steps_(std::move(steps)), truth_(std::move(truth)), eps_(eps) {
        T_ = static_cast<Index>(steps_.size());
        n_ = truth_.A0.rows();
        const Matrix I = Matrix::Identity(n_, n_);
        A_tilde_.assign(static_cast<std::size_t>(T_ + 1), Matrix());
        B_tilde_ = C_tilde_ = F_tilde_ = F_y_ = sigma_eff_ = A_tilde_;
        G_tilde_.assign(static_cast<std::size_t>(T_ + 1), Vector());
        for (Index t = 1; t <= T_; ++t) {
            const FilterStep& s = step(t);
            const ThetaDerivatives& g = s.deriv;
            const PerturbationTerms p = corrective_terms(s, eps_);
            at(A_tilde_, t) = (I - s.K * s.C) * s.A;
            at(B_tilde_, t) = s.K * s.sigma - eps_ * s.K * g.dsigma;
            at(C_tilde_, t) = eps_ * (g.dbeta - s.K * s.C * g.dbeta - s.K * g.dC * s.beta) + s.K * s.C * s.beta - s.beta;
            at(F_tilde_, t) = p.F_x;
            G_tilde_[static_cast<std::size_t>(t)] = p.E_x;
            at(F_y_, t) = p.F_y;
            at(sigma_eff_, t) = s.sigma - eps_ * g.dsigma;
        }

        // Φ(t,l) = Ã_t Φ(t-1,l), Φ(l,l) = I
        phi_.resize(static_cast<std::size_t>(T_ + 1));
        for (Index t = 0; t <= T_; ++t) {
            auto& row = phi_[static_cast<std::size_t>(t)];
            row.resize(static_cast<std::size_t>(t + 1));
            row[static_cast<std::size_t>(t)] = I;
            for (Index l = 0; l < t; ++l)
                row[static_cast<std::size_t>(l)] = at(A_tilde_, t) * phi_[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(l)];
        }

        A0_pow_.assign(static_cast<std::size_t>(T_ + 1), I);
        for (Index k = 1; k <= T_; ++k) at(A0_pow_, k) = truth_.A0 * at(A0_pow_, k - 1);
        X_diag_.assign(static_cast<std::size_t>(T_ + 1), truth_.P0);
        const Matrix Q0 = truth_.beta0 * truth_.beta0.transpose();
        for (Index k = 1; k <= T_; ++k) at(X_diag_, k) = truth_.A0 * at(X_diag_, k - 1) * truth_.A0.transpose() + Q0;
    }

    Index horizon() const { return T_; }
    double epsilon() const { return eps_; }
    const FilterStep& step(Index t) const { return steps_[static_cast<std::size_t>(t - 1)]; }
    const TrueSystem& truth() const { return truth_; }

    const Matrix& A_tilde(Index t) const { return at(A_tilde_, t); }
    const Matrix& B_tilde(Index t) const { return at(B_tilde_, t); }
    const Matrix& C_tilde(Index t) const { return at(C_tilde_, t); }
    const Matrix& F_tilde(Index t) const { return at(F_tilde_, t); }
    const Vector& G_tilde(Index t) const { return G_tilde_[static_cast<std::size_t>(t)]; }
    const Matrix& F_y(Index t) const { return at(F_y_, t); }
    const Matrix& sigma_eff(Index t) const { return at(sigma_eff_, t); }

    /// Φ(t,l) = Ã_t ⋯ Ã_{l+1}; the empty product (l = t) is the identity.
    const Matrix& transition(Index t, Index l) const {
        check(t);
        if (l < 0 || l > t) throw ConfigError("transition product needs 0 <= l <= t");
        return phi_[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)];
    }

    /// X_{l,k} = Cov(x_l, x_k)
    Matrix X(Index l, Index k) const {
        check(l);
        check(k);
        if (l >= k) return at(A0_pow_, l - k) * at(X_diag_, k);
        return (at(A0_pow_, k - l) * at(X_diag_, l)).transpose();
    }

    /// X_{l,k} from the explicit sum A₀ˡP₀(A₀ᵏ)* + Σ_{p=1..l∧k} A₀^{l-p}Q₀(A₀^{k-p})*.
    Matrix X_sum(Index l, Index k) const {
        check(l);
        check(k);
        const Matrix Q0 = truth_.beta0 * truth_.beta0.transpose();
        Matrix out = at(A0_pow_, l) * truth_.P0 * at(A0_pow_, k).transpose();
        for (Index p = 1; p <= std::min(l, k); ++p) out += at(A0_pow_, l - p) * Q0 * at(A0_pow_, k - p).transpose();
        return out;
    }

    /// Cov(η_l, x_k) = (A₀^{k-l} β₀)* for l ≤ k, else 0.
    Matrix cov_eta_x(Index l, Index k) const {
        if (l > k || l < 1) return Matrix::Zero(truth_.beta0.cols(), n_);
        return (at(A0_pow_, k - l) * truth_.beta0).transpose();
    }
    Matrix cov_x_eta(Index k, Index l) const { return cov_eta_x(l, k).transpose(); }

    /// Cov(e_0, x_k) with x̂_0 deterministic.
    Matrix cov_e0_x(Index k) const { return truth_.P0 * at(A0_pow_, k).transpose(); }

    /// Cov(e_t, e_s) from the decomposition e_t = Φ(t,0)e_0 + Σ_l Φ(t,l)H_l.
    Matrix cov_e_e(Index t, Index s) const {
        check(t);
        check(s);
        const Matrix& phit0 = transition(t, 0);
        const Matrix& phis0 = transition(s, 0);
        Matrix out = phit0 * truth_.P0 * phis0.transpose();
        // e_0 against the x_{k-1} terms
        for (Index k = 1; k <= s; ++k)
            out += phit0 * cov_e0_x(k - 1) * F_tilde(k).transpose() * transition(s, k).transpose();
        for (Index l = 1; l <= t; ++l)
            out += transition(t, l) * F_tilde(l) * cov_e0_x(l - 1).transpose() * phis0.transpose();
        // (a), (b): the white-noise paths
        for (Index l = 1; l <= std::min(t, s); ++l)
            out += transition(t, l) *
                   (B_tilde(l) * B_tilde(l).transpose() + C_tilde(l) * C_tilde(l).transpose()) *
                   transition(s, l).transpose();
        // (c), (d), (e): η against x, x against x, x against η
        for (Index l = 1; l <= t; ++l) {
            const Matrix left_c = transition(t, l) * C_tilde(l);
            const Matrix left_f = transition(t, l) * F_tilde(l);
            for (Index k = 1; k <= s; ++k) {
                const Matrix right_f = F_tilde(k).transpose() * transition(s, k).transpose();
                if (l <= k - 1) out -= left_c * cov_eta_x(l, k - 1) * right_f;
                out += left_f * X(l - 1, k - 1) * right_f;
                if (k <= l - 1)
                    out -= left_f * cov_x_eta(l - 1, k) * C_tilde(k).transpose() * transition(s, k).transpose();
            }
        }
        return out;
    }

    /// Cov(e_t, x_s)
    Matrix cov_e_x(Index t, Index s) const {
        check(t);
        check(s);
        Matrix out = transition(t, 0) * cov_e0_x(s);
        for (Index l = 1; l <= t; ++l)
            out += transition(t, l) * (F_tilde(l) * X(l - 1, s) - C_tilde(l) * cov_eta_x(l, s));
        return out;
    }

    /// Cov(x_t, e_s)
    Matrix cov_x_e(Index t, Index s) const { return cov_e_x(s, t).transpose(); }

    /// Cov(e_t, ε_s) = -Φ(t,s) B̃_s for 1 ≤ s ≤ t.
    Matrix cov_e_eps(Index t, Index s) const {
        check(t);
        if (s < 1 || s > t) return Matrix::Zero(n_, B_tilde(1).cols());
        return -transition(t, s) * B_tilde(s);
    }

private:
    void check(Index t) const {
        if (t < 0 || t > T_)
            throw ConfigError("covariance blocks: time " + std::to_string(t) + " outside 0.." + std::to_string(T_));
    }

    std::vector<FilterStep> steps_;
    TrueSystem truth_;
    double eps_;
    Index T_ = 0, n_ = 0;
    std::vector<Matrix> A_tilde_, B_tilde_, C_tilde_, F_tilde_, F_y_, sigma_eff_;
    std::vector<Vector> G_tilde_;
    std::vector<std::vector<Matrix>> phi_;
    std::vector<Matrix> A0_pow_, X_diag_;
};

/// Blocks for a filter at θ over `horizon` steps against data from θ - ε·dir.
/// Linear families only; the gains do not depend on the data, so a zero
/// observation sequence is used for the reference pass.
inline CovarianceBlocks covariance_blocks(const ModelSpec& spec, const ParamVector& theta, const BiasDirection& bias,
                                          Index horizon) {
    if (!spec.linear) throw ConfigError("covariance blocks require a linear family, got " + spec.family);
    if (horizon < 1) throw ConfigError("covariance blocks: horizon must be at least 1");
    const std::vector<Vector> zeros(static_cast<std::size_t>(horizon), Vector::Zero(spec.obs_dim));
    return CovarianceBlocks(filter_steps(spec, theta, bias.direction, zeros), true_system(spec, bias.true_theta(theta)),
                            bias.epsilon);
}

/// Cov(ζ_t, ζ_{t-h}) ≅ C Cov(e_t,e_{t-h}) C* + C Cov(e_t,x_{t-h}) 𝓕_y* + C Cov(e_t,ε_{t-h}) (σ - ε∂σ)*
///                    + 𝓕_y Cov(x_t,e_{t-h}) C* + 𝓕_y X_{t,t-h} 𝓕_y*
inline Matrix interpolation_autocov(const CovarianceBlocks& b, Index t, Index h) {
    if (h <= 0) throw ConfigError("interpolation_autocov: lag must be positive");
    if (t <= h || t > b.horizon()) throw ConfigError("interpolation_autocov: need h < t <= horizon");
    const Index s = t - h;
    const Matrix& Ct = b.step(t).C;
    const Matrix& Cs = b.step(s).C;
    return Ct * b.cov_e_e(t, s) * Cs.transpose() + Ct * b.cov_e_x(t, s) * b.F_y(s).transpose() +
           Ct * b.cov_e_eps(t, s) * b.sigma_eff(s).transpose() + b.F_y(t) * b.cov_x_e(t, s) * Cs.transpose() +
           b.F_y(t) * b.X(t, s) * b.F_y(s).transpose();
}

namespace detail {

// Lagged covariance of ζ for a linear system z_t = M_t z_{t-1} + N_t w_t,
// w_t = (ε_t, η_t), ζ_t = G_t z_t + S_t ε_t.
struct LinearSystemPath {
    std::vector<Matrix> M, N, G, S;  // index 1..T
    Matrix V0;
    Index eps_dim = 0;

    Matrix autocov(Index t, Index h) const {
        const Index s = t - h;
        Matrix V = V0;
        for (Index k = 1; k <= s; ++k) {
            const auto i = static_cast<std::size_t>(k);
            V = M[i] * V * M[i].transpose() + N[i] * N[i].transpose();
        }
        const auto is = static_cast<std::size_t>(s);
        Matrix cross_z = V;                                 // Cov(z_k, z_s)
        Matrix cross_w = N[is].leftCols(eps_dim);           // Cov(z_k, ε_s)
        for (Index k = s + 1; k <= t; ++k) {
            const auto i = static_cast<std::size_t>(k);
            cross_z = M[i] * cross_z;
            cross_w = M[i] * cross_w;
        }
        const auto it = static_cast<std::size_t>(t);
        return G[it] * cross_z * G[is].transpose() + G[it] * cross_w * S[is].transpose();
    }
};

}  // namespace detail

/// Same first-order quantity as interpolation_autocov, from the joint
/// covariance recursion of (e_t, x_t).
inline Matrix augmented_interpolation_autocov(const CovarianceBlocks& b, Index t, Index h) {
    if (h <= 0 || t <= h || t > b.horizon()) throw ConfigError("augmented_interpolation_autocov: need 0 < h < t <= horizon");
    const TrueSystem& ts = b.truth();
    const Index n = ts.A0.rows(), q = ts.beta0.cols();
    const Index m = b.step(1).C.rows();
    detail::LinearSystemPath path;
    path.eps_dim = b.B_tilde(1).cols();
    path.V0 = Matrix::Zero(2 * n, 2 * n);
    path.V0 << ts.P0, ts.P0, ts.P0, ts.P0;
    const auto T = static_cast<std::size_t>(b.horizon());
    path.M.resize(T + 1);
    path.N.resize(T + 1);
    path.G.resize(T + 1);
    path.S.resize(T + 1);
    for (Index k = 1; k <= b.horizon(); ++k) {
        const auto i = static_cast<std::size_t>(k);
        path.M[i] = Matrix::Zero(2 * n, 2 * n);
        path.M[i] << b.A_tilde(k), b.F_tilde(k), Matrix::Zero(n, n), ts.A0;
        path.N[i] = Matrix::Zero(2 * n, path.eps_dim + q);
        path.N[i] << -b.B_tilde(k), -b.C_tilde(k), Matrix::Zero(n, path.eps_dim), ts.beta0;
        path.G[i] = Matrix::Zero(m, 2 * n);
        path.G[i] << b.step(k).C, b.F_y(k);
        path.S[i] = b.sigma_eff(k);
    }
    return path.autocov(t, h);
}

/// Cov(ζ_t, ζ_{t-h}) of the actual misspecified filter, from the joint law of
/// (x_t, x̂_t); no expansion in ε.
inline Matrix exact_interpolation_autocov(const CovarianceBlocks& b, Index t, Index h) {
    if (h <= 0 || t <= h || t > b.horizon()) throw ConfigError("exact_interpolation_autocov: need 0 < h < t <= horizon");
    const TrueSystem& ts = b.truth();
    const Index n = ts.A0.rows(), q = ts.beta0.cols(), r = ts.sigma0.cols();
    const Index m = ts.C0.rows();
    detail::LinearSystemPath path;
    path.eps_dim = r;
    path.V0 = Matrix::Zero(2 * n, 2 * n);
    path.V0.topLeftCorner(n, n) = ts.P0;
    const auto T = static_cast<std::size_t>(b.horizon());
    path.M.resize(T + 1);
    path.N.resize(T + 1);
    path.G.resize(T + 1);
    path.S.resize(T + 1);
    for (Index k = 1; k <= b.horizon(); ++k) {
        const auto i = static_cast<std::size_t>(k);
        const FilterStep& s = b.step(k);
        const Matrix IKC = Matrix::Identity(n, n) - s.K * s.C;
        path.M[i] = Matrix::Zero(2 * n, 2 * n);
        path.M[i] << ts.A0, Matrix::Zero(n, n), s.K * ts.C0 * ts.A0, IKC * s.A;
        path.N[i] = Matrix::Zero(2 * n, r + q);
        path.N[i] << Matrix::Zero(n, r), ts.beta0, s.K * ts.sigma0, s.K * ts.C0 * ts.beta0;
        path.G[i] = Matrix::Zero(m, 2 * n);
        path.G[i] << ts.C0, -s.C;
        path.S[i] = ts.sigma0;
    }
    return path.autocov(t, h);
}

// ---------------------------------------------------------------------------
// Monte Carlo oracle

struct AutocovCheck {
    Index t = 0, h = 0;
    Matrix closed_form;
    Matrix mc_estimate;
    Matrix mc_stderr;
};

/// Estimates Cov(ζ_t, ζ_{t-h}) for each requested (t, h) from `replicates`
/// independent runs of the misspecified filter, alongside the closed form.
inline std::vector<AutocovCheck> mc_interpolation_autocov(const ModelSpec& spec, const ParamVector& theta,
                                                          const BiasDirection& bias,
                                                          const std::vector<std::pair<Index, Index>>& lags,
                                                          Index replicates, std::uint64_t seed) {
    if (replicates < 2) throw ConfigError("mc_interpolation_autocov: need at least 2 replicates");
    Index horizon = 0;
    for (auto [t, h] : lags) {
        if (h <= 0 || t <= h) throw ConfigError("mc_interpolation_autocov: need 0 < h < t");
        horizon = std::max(horizon, t);
    }
    const CovarianceBlocks blocks = covariance_blocks(spec, theta, bias, horizon);
    const ParamVector theta0 = bias.true_theta(theta);
    auto filter_model = spec.bind(theta);
    const Index m = spec.obs_dim;

    // ζ_t samples for every time that appears in a requested pair
    std::vector<std::vector<Vector>> samples(static_cast<std::size_t>(horizon + 1));
    std::vector<bool> needed(static_cast<std::size_t>(horizon + 1), false);
    for (auto [t, h] : lags) needed[static_cast<std::size_t>(t)] = needed[static_cast<std::size_t>(t - h)] = true;
    FilterOptions fo;
    fo.keep_steps = false;
    for (Index r = 0; r < replicates; ++r) {
        SimulationOptions so;
        so.replicate = static_cast<std::uint64_t>(r);
        const Trajectory traj = simulate(spec, theta0, horizon, seed, so);
        const FilterTrace trace = run_filter(spec, *filter_model, theta, traj.observations, natural_mode(spec), nullptr, fo);
        for (Index t = 1; t <= horizon; ++t)
            if (needed[static_cast<std::size_t>(t)])
                samples[static_cast<std::size_t>(t)].push_back(trace.residuals.zeta[static_cast<std::size_t>(t - 1)]);
    }

    const double R = static_cast<double>(replicates);
    std::vector<AutocovCheck> out;
    for (auto [t, h] : lags) {
        const auto& a = samples[static_cast<std::size_t>(t)];
        const auto& c = samples[static_cast<std::size_t>(t - h)];
        Vector ma = Vector::Zero(m), mc = Vector::Zero(m);
        for (Index r = 0; r < replicates; ++r) {
            ma += a[static_cast<std::size_t>(r)];
            mc += c[static_cast<std::size_t>(r)];
        }
        ma /= R;
        mc /= R;
        Matrix sum = Matrix::Zero(m, m), sumsq = Matrix::Zero(m, m);
        for (Index r = 0; r < replicates; ++r) {
            const Matrix prod = (a[static_cast<std::size_t>(r)] - ma) * (c[static_cast<std::size_t>(r)] - mc).transpose();
            sum += prod;
            sumsq += prod.cwiseProduct(prod);
        }
        AutocovCheck chk;
        chk.t = t;
        chk.h = h;
        chk.closed_form = interpolation_autocov(blocks, t, h);
        chk.mc_estimate = sum / (R - 1.0);
        const Matrix mean_prod = sum / R;
        chk.mc_stderr = ((sumsq / R - mean_prod.cwiseProduct(mean_prod)) * (R / (R - 1.0))).cwiseSqrt() / std::sqrt(R);
        out.push_back(std::move(chk));
    }
    return out;
}

/// CSV: t, h, closed_form, mc_estimate, mc_stderr (with coordinate columns when m > 1).
inline void write_autocov_check_csv(std::ostream& os, const std::vector<AutocovCheck>& checks) {
    const bool multi = !checks.empty() && checks.front().closed_form.size() > 1;
    os << "t,h" << (multi ? ",i,j" : "") << ",closed_form,mc_estimate,mc_stderr\n" << std::setprecision(17);
    for (const auto& c : checks)
        for (Index i = 0; i < c.closed_form.rows(); ++i)
            for (Index j = 0; j < c.closed_form.cols(); ++j) {
                os << c.t << ',' << c.h;
                if (multi) os << ',' << i + 1 << ',' << j + 1;
                os << ',' << c.closed_form(i, j) << ',' << c.mc_estimate(i, j) << ',' << c.mc_stderr(i, j) << '\n';
            }
}

}  // namespace misspec
