#pragma once

// Additive-Gaussian state-space models
//
//   x_t = b(θ, x_{t-1}) + β_θ η_t,      η_t ~ N(0, I_n)
//   y_t = h(θ, x_t)     + σ_θ ε_t,      ε_t ~ N(0, I_m)
//
// A ModelSpec describes a family; binding it to a parameter vector yields a
// ModelInstance whose member functions are the model evaluated at that θ.

#include "misspec/core.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace misspec {

/// Central finite-difference Jacobian with relative step 1e-6·max(1,|x_i|).
template <class F>
Matrix fd_jacobian(F&& f, const Vector& x) {
    const Vector f0 = f(x);
    Matrix jac(f0.size(), x.size());
    for (Index i = 0; i < x.size(); ++i) {
        const double step = 1e-6 * std::max(1.0, std::abs(x[i]));
        Vector xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        jac.col(i) = (f(xp) - f(xm)) / (2.0 * step);
    }
    return jac;
}

/// A model family evaluated at one parameter vector. Implementations are
/// immutable from the caller's point of view; some cache expensive setup
/// (e.g. characteristic-function tables) and are then not safe to share
/// between threads.
class ModelInstance {
public:
    virtual ~ModelInstance() = default;

    /// b(θ, x) for the step ending at time t.
    virtual Vector transition(const Vector& x, Index t) const = 0;
    /// h(θ, x) at time t.
    virtual Vector observe(const Vector& x, Index t) const = 0;
    /// β_θ, possibly depending on the state it is evaluated at.
    virtual Matrix state_noise(const Vector& x, Index t) const = 0;
    /// σ_θ.
    virtual Matrix observation_noise(Index t) const = 0;

    virtual Matrix transition_jacobian(const Vector& x, Index t) const {
        return fd_jacobian([&](const Vector& p) { return transition(p, t); }, x);
    }
    virtual Matrix observation_jacobian(const Vector& x, Index t) const {
        return fd_jacobian([&](const Vector& p) { return observe(p, t); }, x);
    }

    /// Draw x_t given x_{t-1}. The default is b + β η; families with an exact
    /// transition law override it. `domain_events` counts clamps applied to
    /// keep the draw inside the state domain.
    virtual Vector sample_transition(const Vector& x, Index t, Rng& rng,
                                     std::size_t& domain_events) const {
        (void)domain_events;
        return transition(x, t) + state_noise(x, t) * standard_normal(rng, x.size());
    }
};

struct ModelSpec {
    std::string family;
    Index state_dim = 0;
    Index obs_dim = 0;
    std::vector<std::string> param_labels;
    Vector x0_mean;
    Matrix x0_cov;
    bool linear = false;

    /// Open bounds on each parameter; ±inf when unconstrained.
    Vector lower_bounds;
    Vector upper_bounds;

    /// Family-specific admissibility beyond the box (e.g. Feller). Throws DomainError.
    std::function<void(const ParamVector&)> extra_check;
    std::function<std::shared_ptr<const ModelInstance>(const ParamVector&)> make_instance;

    void check_admissible(const ParamVector& theta) const {
        if (static_cast<std::size_t>(theta.size()) != param_labels.size())
            throw DomainError(family + ": expected " + std::to_string(param_labels.size()) +
                              " parameters, got " + std::to_string(theta.size()));
        for (Index i = 0; i < theta.size(); ++i) {
            const double v = theta[i];
            if (!std::isfinite(v) || !(v > lower_bounds[i]) || !(v < upper_bounds[i])) {
                std::ostringstream os;
                os << family << ": parameter " << param_labels[static_cast<std::size_t>(i)] << " = " << v
                   << " outside admissible range (" << lower_bounds[i] << ", " << upper_bounds[i] << ")";
                throw DomainError(os.str());
            }
        }
        if (extra_check) extra_check(theta);
    }

    bool admissible(const ParamVector& theta) const noexcept {
        try {
            check_admissible(theta);
            return true;
        } catch (const Error&) {
            return false;
        }
    }

    std::shared_ptr<const ModelInstance> bind(const ParamVector& theta) const {
        check_admissible(theta);
        return make_instance(theta);
    }

    ParamVector params(const Vector& values) const { return {values, param_labels}; }
};

// ---------------------------------------------------------------------------
// Linearization

struct Linearization {
    Matrix A;  // ∂b/∂x at x̂_{t-1}
    Matrix C;  // ∂h/∂x at x̂⁻_t
    Vector u;  // b(x̂_{t-1}) - A x̂_{t-1}
    Vector d;  // h(x̂⁻_t) - C x̂⁻_t
};

inline void linearize_transition(const ModelInstance& model, const Vector& x_post_prev, Index t,
                                 Linearization& out) {
    out.A = model.transition_jacobian(x_post_prev, t);
    out.u = model.transition(x_post_prev, t) - out.A * x_post_prev;
}

inline void linearize_observation(const ModelInstance& model, const Vector& x_prior, Index t,
                                  Linearization& out) {
    out.C = model.observation_jacobian(x_prior, t);
    out.d = model.observe(x_prior, t) - out.C * x_prior;
}

inline Linearization linearize(const ModelInstance& model, const Vector& x_post_prev,
                               const Vector& x_prior, Index t = 1) {
    Linearization lin;
    linearize_transition(model, x_post_prev, t, lin);
    linearize_observation(model, x_prior, t, lin);
    return lin;
}

inline Linearization linearize(const ModelSpec& spec, const ParamVector& theta, const Vector& x_post_prev,
                               const Vector& x_prior, Index t = 1) {
    return linearize(*spec.bind(theta), x_post_prev, x_prior, t);
}

// ---------------------------------------------------------------------------
// Trajectories

struct Trajectory {
    std::string family;
    std::vector<Vector> states;        // x_0 .. x_N
    std::vector<Vector> observations;  // y_1 .. y_N (index t-1)
    std::vector<double> exogenous;     // optional per-time covariate (index 0..N), e.g. spot
    std::uint64_t seed = 0;
    std::uint64_t replicate = 0;
    std::size_t domain_events = 0;

    Index length() const { return static_cast<Index>(observations.size()); }
    Index state_dim() const { return states.empty() ? 0 : states.front().size(); }
    Index obs_dim() const { return observations.empty() ? 0 : observations.front().size(); }

    /// First `n` observations (and matching states) as a new trajectory.
    Trajectory prefix(Index n) const {
        Trajectory out = *this;
        out.observations.resize(static_cast<std::size_t>(n));
        out.states.resize(static_cast<std::size_t>(n + 1));
        if (!out.exogenous.empty()) out.exogenous.resize(static_cast<std::size_t>(n + 1));
        return out;
    }

    bool operator==(const Trajectory&) const = default;
};

struct SimulationOptions {
    bool gaussian_start = false;  // otherwise x_0 = x0_mean exactly
    std::uint64_t replicate = 0;
};

/// Draw x_0..x_N with the state streams of (seed, replicate).
inline Trajectory simulate_states(const ModelSpec& spec, const ModelInstance& model, Index n_steps,
                                  std::uint64_t seed, const SimulationOptions& opts = {}) {
    Trajectory traj;
    traj.family = spec.family;
    traj.seed = seed;
    traj.replicate = opts.replicate;
    traj.states.reserve(static_cast<std::size_t>(n_steps + 1));

    Vector x0 = spec.x0_mean;
    if (opts.gaussian_start) {
        Rng init = make_stream(seed, opts.replicate, Stream::initial_state);
        Eigen::LDLT<Matrix> ldlt(spec.x0_cov);
        Matrix root = ldlt.transpositionsP().transpose() * Matrix(ldlt.matrixL()) *
                      ldlt.vectorD().cwiseMax(0.0).cwiseSqrt().asDiagonal();
        x0 += root * standard_normal(init, spec.state_dim);
    }
    traj.states.push_back(x0);

    Rng state_rng = make_stream(seed, opts.replicate, Stream::state_noise);
    for (Index t = 1; t <= n_steps; ++t)
        traj.states.push_back(model.sample_transition(traj.states.back(), t, state_rng, traj.domain_events));
    return traj;
}

/// Fill y_1..y_N from the states already in `traj`.
inline void observe_states(const ModelInstance& model, Trajectory& traj) {
    Rng obs_rng = make_stream(traj.seed, traj.replicate, Stream::observation_noise);
    const Index n_steps = static_cast<Index>(traj.states.size()) - 1;
    traj.observations.clear();
    traj.observations.reserve(static_cast<std::size_t>(n_steps));
    for (Index t = 1; t <= n_steps; ++t) {
        const Vector& x = traj.states[static_cast<std::size_t>(t)];
        Vector y = model.observe(x, t);
        y += model.observation_noise(t) * standard_normal(obs_rng, y.size());
        traj.observations.push_back(std::move(y));
    }
}

/// Simulate a trajectory of length N at parameter θ.
inline Trajectory simulate(const ModelSpec& spec, const ParamVector& theta, Index n_steps, std::uint64_t seed,
                           const SimulationOptions& opts = {}) {
    if (n_steps < 1) throw ConfigError("simulate: N must be at least 1");
    auto model = spec.bind(theta);
    Trajectory traj = simulate_states(spec, *model, n_steps, seed, opts);
    observe_states(*model, traj);
    return traj;
}

// ---------------------------------------------------------------------------
// Serialization

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    const Index n = traj.state_dim(), m = traj.obs_dim();
    os << "t";
    for (Index i = 1; i <= n; ++i) os << ",x" << i;
    for (Index j = 1; j <= m; ++j) os << ",y" << j;
    if (!traj.exogenous.empty()) os << ",s";
    os << '\n';
    os << std::setprecision(17);
    for (Index t = 1; t <= traj.length(); ++t) {
        os << t;
        const auto& x = traj.states[static_cast<std::size_t>(t)];
        const auto& y = traj.observations[static_cast<std::size_t>(t - 1)];
        for (Index i = 0; i < n; ++i) os << ',' << x[i];
        for (Index j = 0; j < m; ++j) os << ',' << y[j];
        if (!traj.exogenous.empty()) os << ',' << traj.exogenous[static_cast<std::size_t>(t)];
        os << '\n';
    }
}

/// Reads the CSV layout written above. x_0 and the t=0 covariate are not part
/// of the CSV; they are filled from `x0` and `exogenous0`.
inline Trajectory read_trajectory_csv(std::istream& is, const Vector& x0, double exogenous0 = 0.0) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("trajectory CSV: empty input");
    Index n = 0, m = 0;
    bool has_s = false;
    {
        std::stringstream hs(line);
        std::string col;
        std::getline(hs, col, ',');
        if (col != "t") throw ConfigError("trajectory CSV: first column must be 't'");
        while (std::getline(hs, col, ',')) {
            if (!col.empty() && col.back() == '\r') col.pop_back();
            if (col.rfind('x', 0) == 0) ++n;
            else if (col.rfind('y', 0) == 0) ++m;
            else if (col == "s") has_s = true;
            else throw ConfigError("trajectory CSV: unknown column '" + col + "'");
        }
    }
    if (n != x0.size())
        throw ConfigError("trajectory CSV: " + std::to_string(n) + " state columns, model has " +
                          std::to_string(x0.size()));
    Trajectory traj;
    traj.states.push_back(x0);
    if (has_s) traj.exogenous.push_back(exogenous0);
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::stringstream ls(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ls, cell, ',')) {
            try {
                vals.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError("trajectory CSV line " + std::to_string(lineno) + ": bad number '" + cell + "'");
            }
        }
        const std::size_t expect = 1 + static_cast<std::size_t>(n + m) + (has_s ? 1 : 0);
        if (vals.size() != expect)
            throw ConfigError("trajectory CSV line " + std::to_string(lineno) + ": expected " +
                              std::to_string(expect) + " fields, got " + std::to_string(vals.size()));
        traj.states.push_back(Eigen::Map<const Vector>(vals.data() + 1, n));
        traj.observations.push_back(Eigen::Map<const Vector>(vals.data() + 1 + n, m));
        if (has_s) traj.exogenous.push_back(vals.back());
    }
    return traj;
}

namespace detail {
inline constexpr char kTrajectoryMagic[4] = {'M', 'S', 'T', 'J'};
inline constexpr std::uint32_t kTrajectoryVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw ConfigError("trajectory binary: truncated input");
    return v;
}
}  // namespace detail

/// Binary layout (native endianness): magic "MSTJ", u32 version, u64 seed,
/// u64 replicate, u64 domain_events, u64 n, u64 m, u64 N, u64 len(exogenous),
/// u64 len(family), family bytes, then x_0..x_N, y_1..y_N, exogenous as f64.
inline void write_trajectory_binary(std::ostream& os, const Trajectory& traj) {
    using detail::put;
    os.write(detail::kTrajectoryMagic, 4);
    put(os, detail::kTrajectoryVersion);
    put<std::uint64_t>(os, traj.seed);
    put<std::uint64_t>(os, traj.replicate);
    put<std::uint64_t>(os, traj.domain_events);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(traj.state_dim()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(traj.obs_dim()));
    put<std::uint64_t>(os, static_cast<std::uint64_t>(traj.length()));
    put<std::uint64_t>(os, traj.exogenous.size());
    put<std::uint64_t>(os, traj.family.size());
    os.write(traj.family.data(), static_cast<std::streamsize>(traj.family.size()));
    for (const auto& x : traj.states) os.write(reinterpret_cast<const char*>(x.data()), x.size() * 8);
    for (const auto& y : traj.observations) os.write(reinterpret_cast<const char*>(y.data()), y.size() * 8);
    os.write(reinterpret_cast<const char*>(traj.exogenous.data()),
             static_cast<std::streamsize>(traj.exogenous.size() * 8));
}

inline Trajectory read_trajectory_binary(std::istream& is) {
    using detail::get;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, detail::kTrajectoryMagic, 4) != 0)
        throw ConfigError("trajectory binary: bad magic");
    if (get<std::uint32_t>(is) != detail::kTrajectoryVersion)
        throw ConfigError("trajectory binary: unsupported version");
    Trajectory traj;
    traj.seed = get<std::uint64_t>(is);
    traj.replicate = get<std::uint64_t>(is);
    traj.domain_events = get<std::uint64_t>(is);
    const auto n = static_cast<Index>(get<std::uint64_t>(is));
    const auto m = static_cast<Index>(get<std::uint64_t>(is));
    const auto len = static_cast<Index>(get<std::uint64_t>(is));
    const auto n_exo = get<std::uint64_t>(is);
    const auto n_family = get<std::uint64_t>(is);
    traj.family.resize(n_family);
    is.read(traj.family.data(), static_cast<std::streamsize>(n_family));
    auto read_vec = [&](Index dim) {
        Vector v(dim);
        is.read(reinterpret_cast<char*>(v.data()), dim * 8);
        if (!is) throw ConfigError("trajectory binary: truncated input");
        return v;
    };
    for (Index t = 0; t <= len; ++t) traj.states.push_back(read_vec(n));
    for (Index t = 0; t < len; ++t) traj.observations.push_back(read_vec(m));
    traj.exogenous.resize(n_exo);
    is.read(reinterpret_cast<char*>(traj.exogenous.data()), static_cast<std::streamsize>(n_exo * 8));
    if (!is && n_exo > 0) throw ConfigError("trajectory binary: truncated input");
    return traj;
}

}  // namespace misspec
