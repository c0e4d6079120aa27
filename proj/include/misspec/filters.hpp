#pragma once

// Kalman filter / extended Kalman filter run under a (possibly wrong)
// parameter θ, recording the filter error, innovation and interpolation
// residual processes.

#include "misspec/statespace.hpp"

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace misspec {

struct FilterState {
    Vector x_prior;  // x̂⁻_t
    Vector x_post;   // x̂_t
    Matrix P_prior;  // P⁻_t
    Matrix P_post;   // P_t
    Matrix K;        // K_t
};

struct ResidualSeries {
    std::vector<Vector> e;           // x_t - x̂_t, only when the truth is known
    std::vector<Vector> zeta_minus;  // y_t - (d_t + C x̂⁻_t)
    std::vector<Vector> zeta;        // y_t - (d_t + C x̂_t)
};

struct FilterTrace {
    ParamVector theta;
    std::vector<FilterState> steps;         // t = 1..N
    std::vector<Linearization> linearized;  // t = 1..N
    ResidualSeries residuals;

    Index length() const { return static_cast<Index>(residuals.zeta.size()); }
};

enum class FilterMode { linear, extended };

struct FilterOptions {
    /// Joseph-form covariance update instead of P = (I - KC)P⁻.
    bool joseph = false;
    /// P_0; defaults to the family's x0_cov, or Q(θ) at x0_mean when that is zero.
    std::optional<Matrix> initial_cov;
    /// Keep per-step states and linearizations (objective evaluation turns this off).
    bool keep_steps = true;
};

/// One predict/update cycle. `step` is only used in error messages.
inline FilterState kalman_step(const FilterState& prev, const Vector& y, const Matrix& A, const Matrix& C,
                               const Vector& u, const Vector& d, const Matrix& Q, const Matrix& R,
                               Index step = 0, bool joseph = false) {
    FilterState s;
    s.x_prior = u + A * prev.x_post;
    s.P_prior = A * prev.P_post * A.transpose() + Q;
    symmetrize(s.P_prior);

    Matrix S = C * s.P_prior * C.transpose() + R;
    symmetrize(S);
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0))
        throw NumericalError("singular innovation covariance at step " + std::to_string(step));
    // K = P⁻ C* S⁻¹  ⇔  Kᵀ = S⁻¹ C P⁻
    s.K = llt.solve(C * s.P_prior).transpose();

    const Index n = A.rows();
    const Matrix IKC = Matrix::Identity(n, n) - s.K * C;
    s.x_post = IKC * s.x_prior + s.K * (y - d);
    if (joseph)
        s.P_post = IKC * s.P_prior * IKC.transpose() + s.K * R * s.K.transpose();
    else
        s.P_post = IKC * s.P_prior;
    symmetrize(s.P_post);
    return s;
}

inline Matrix default_initial_cov(const ModelSpec& spec, const ModelInstance& model) {
    if (spec.x0_cov.size() > 0 && spec.x0_cov.norm() > 0.0) return spec.x0_cov;
    const Matrix beta = model.state_noise(spec.x0_mean, 1);
    return beta * beta.transpose();
}

/// Runs the filter over `observations` (y_1..y_N) with the model bound at θ.
/// `truth`, when given, holds x_0..x_N and populates the filter error.
inline FilterTrace run_filter(const ModelSpec& spec, const ModelInstance& model, const ParamVector& theta,
                              const std::vector<Vector>& observations, FilterMode mode,
                              const std::vector<Vector>* truth = nullptr, const FilterOptions& opts = {}) {
    if (observations.empty()) throw ConfigError("run_filter: no observations");
    if (mode == FilterMode::linear && !spec.linear)
        throw ConfigError("run_filter: linear Kalman filter requested for nonlinear family " + spec.family);
    if (truth && truth->size() != observations.size() + 1)
        throw ConfigError("run_filter: truth must hold x_0..x_N (" + std::to_string(observations.size() + 1) +
                          " states), got " + std::to_string(truth->size()));

    const Index n = spec.state_dim, m = spec.obs_dim;
    const std::size_t N = observations.size();

    FilterTrace trace;
    trace.theta = theta;
    trace.residuals.zeta.reserve(N);
    trace.residuals.zeta_minus.reserve(N);
    if (opts.keep_steps) {
        trace.steps.reserve(N);
        trace.linearized.reserve(N);
    }

    FilterState state;
    state.x_post = spec.x0_mean;
    state.P_post = opts.initial_cov ? *opts.initial_cov : default_initial_cov(spec, model);
    const Vector zero_state = Vector::Zero(n);

    Linearization lin;
    for (std::size_t k = 0; k < N; ++k) {
        const Index t = static_cast<Index>(k) + 1;
        const Vector& y = observations[k];
        if (y.size() != m)
            throw ConfigError("run_filter: observation " + std::to_string(t) + " has dimension " +
                              std::to_string(y.size()) + ", model expects " + std::to_string(m));

        if (mode == FilterMode::linear) {
            // Affine family: offsets are the functions evaluated at the origin.
            lin.A = model.transition_jacobian(zero_state, t);
            lin.u = model.transition(zero_state, t);
            lin.C = model.observation_jacobian(zero_state, t);
            lin.d = model.observe(zero_state, t);
        } else {
            linearize_transition(model, state.x_post, t, lin);
            const Vector x_prior = lin.u + lin.A * state.x_post;
            linearize_observation(model, x_prior, t, lin);
        }
        const Matrix beta = model.state_noise(state.x_post, t);
        const Matrix sigma = model.observation_noise(t);
        const Matrix Q = beta * beta.transpose();
        const Matrix R = sigma * sigma.transpose();

        state = kalman_step(state, y, lin.A, lin.C, lin.u, lin.d, Q, R, t, opts.joseph);

        trace.residuals.zeta_minus.push_back(y - (lin.d + lin.C * state.x_prior));
        trace.residuals.zeta.push_back(y - (lin.d + lin.C * state.x_post));
        if (truth) trace.residuals.e.push_back((*truth)[k + 1] - state.x_post);
        if (opts.keep_steps) {
            trace.steps.push_back(state);
            trace.linearized.push_back(lin);
        }
    }
    return trace;
}

inline FilterTrace run_filter(const ModelSpec& spec, const ParamVector& theta,
                              const std::vector<Vector>& observations, FilterMode mode,
                              const std::vector<Vector>* truth = nullptr, const FilterOptions& opts = {}) {
    auto model = spec.bind(theta);
    return run_filter(spec, *model, theta, observations, mode, truth, opts);
}

/// EKF for nonlinear families, plain Kalman filter for linear ones.
inline FilterMode natural_mode(const ModelSpec& spec) {
    return spec.linear ? FilterMode::linear : FilterMode::extended;
}

/// CSV columns: t, x̂⁻, x̂, diag(P), ζ⁻, ζ, and e when the truth was supplied.
inline void write_trace_csv(std::ostream& os, const FilterTrace& trace) {
    if (trace.steps.empty()) throw ConfigError("write_trace_csv: trace was recorded without steps");
    const Index n = trace.steps.front().x_post.size();
    const Index m = trace.residuals.zeta.front().size();
    const bool has_e = !trace.residuals.e.empty();
    os << "t";
    for (Index i = 1; i <= n; ++i) os << ",xprior" << i;
    for (Index i = 1; i <= n; ++i) os << ",xpost" << i;
    for (Index i = 1; i <= n; ++i) os << ",P" << i;
    for (Index j = 1; j <= m; ++j) os << ",zeta_minus" << j;
    for (Index j = 1; j <= m; ++j) os << ",zeta" << j;
    if (has_e)
        for (Index i = 1; i <= n; ++i) os << ",e" << i;
    os << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < trace.steps.size(); ++k) {
        const auto& s = trace.steps[k];
        os << k + 1;
        for (Index i = 0; i < n; ++i) os << ',' << s.x_prior[i];
        for (Index i = 0; i < n; ++i) os << ',' << s.x_post[i];
        for (Index i = 0; i < n; ++i) os << ',' << s.P_post(i, i);
        for (Index j = 0; j < m; ++j) os << ',' << trace.residuals.zeta_minus[k][j];
        for (Index j = 0; j < m; ++j) os << ',' << trace.residuals.zeta[k][j];
        if (has_e)
            for (Index i = 0; i < n; ++i) os << ',' << trace.residuals.e[k][i];
        os << '\n';
    }
}

}  // namespace misspec
