#pragma once

// Discrete-time Heston model with option-price observations.
//
// State: the CIR variance v_t sampled at step Δ. The filter sees
//   v_t = Ψ(v_{t-1}) + Φ(v_{t-1})^{1/2} η_t
//   y_t = (call prices on a strike × maturity grid at (v_t, S_t)) + σ ε_t
// with the spot path S_t exogenous. Estimated parameters θ = (κ, γ, β, ρ);
// r, v_0, S_0, Δ, the grid and σ are fixed by the setup.

#include "misspec/statespace.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <unordered_map>
#include <vector>

namespace misspec::models {

struct HestonParams {
    double kappa = 4.0;  // mean reversion rate
    double gamma = 0.03; // long-run variance
    double beta = 0.4;   // volatility of variance
    double rho = -0.5;
    double r = 0.05;
    double v0 = 0.03;
    double s0 = 100.0;
};

struct ObservationGrid {
    std::vector<double> strikes{0.90, 1.00, 1.10};  // fractions of spot
    std::vector<double> maturities{0.1, 0.5, 1.0};  // years
    Index size() const { return static_cast<Index>(strikes.size() * maturities.size()); }
};

struct PricerTolerances {
    double tail = 1e-10;        // integrand magnitude at the truncation point
    double convergence = 1e-8;  // change in price between panel doublings
    double base_panel = 8.0;    // panel width (in φ) at the coarsest level
    int max_level = 7;
    double max_upper = 1e6;
};

/// Everything the Heston family needs besides θ.
struct HestonSetup {
    double r = 0.05;
    double v0 = 0.03;
    double s0 = 100.0;
    double dt = 1.0 / 252.0;
    /// Observation noise standard deviation; NaN means 0.01·S₀.
    double obs_sd = std::numeric_limits<double>::quiet_NaN();
    ObservationGrid grid;
    PricerTolerances tolerances;

    double observation_sd() const { return std::isnan(obs_sd) ? 0.01 * s0 : obs_sd; }
};

inline constexpr double kVarianceFloor = 1e-8;

inline bool feller_holds(double kappa, double gamma, double beta) { return 2.0 * kappa * gamma > beta * beta; }

inline void require_feller(double kappa, double gamma, double beta) {
    if (!feller_holds(kappa, gamma, beta)) {
        std::ostringstream os;
        os << "heston: Feller condition 2*kappa*gamma > beta^2 violated (2*" << kappa << "*" << gamma << " = "
           << 2.0 * kappa * gamma << " <= " << beta * beta << ")";
        throw DomainError(os.str());
    }
}

// ---------------------------------------------------------------------------
// CIR one-step moments and exact transition

/// Ψ: conditional mean of v_{t+Δ} given v_t.
inline double cir_mean(double v, double kappa, double gamma, double dt) {
    const double e = std::exp(-kappa * dt);
    return gamma * (1.0 - e) + e * v;
}

/// Φ: conditional variance of v_{t+Δ} given v_t.
inline double cir_variance(double v, double kappa, double gamma, double beta, double dt) {
    const double e = std::exp(-kappa * dt);
    const double one_me = -std::expm1(-kappa * dt);
    return gamma * beta * beta / (2.0 * kappa) * one_me * one_me + beta * beta / kappa * e * one_me * v;
}

/// Exact draw: v_next = X / (2c) with X ~ χ'²(2d+2, 2w),
/// c = 2κ / (β²(1 - e^{-κΔ})), w = c v e^{-κΔ}, d = 2κγ/β² - 1.
/// The non-central χ² is drawn as a Poisson mixture of central χ².
inline double cir_transition_sample(double v_prev, double kappa, double gamma, double beta, double dt, Rng& rng) {
    require_feller(kappa, gamma, beta);
    if (v_prev < 0.0) throw DomainError("cir_transition_sample: negative variance");
    const double c = 2.0 * kappa / (beta * beta * -std::expm1(-kappa * dt));
    const double w = c * v_prev * std::exp(-kappa * dt);
    const double dof = 4.0 * kappa * gamma / (beta * beta);  // 2d + 2
    long long mix = 0;
    if (w > 0.0) mix = std::poisson_distribution<long long>(w)(rng);  // λ/2 = w
    std::gamma_distribution<double> chi2(0.5 * dof + static_cast<double>(mix), 2.0);
    return chi2(rng) / (2.0 * c);
}

// ---------------------------------------------------------------------------
// Semi-closed-form pricing
//
// Call = S P₁ - K e^{-rτ} P₂ with P_j recovered from the characteristic
// functions f_j = exp(C_j + D_j v + iφ ln S). Both probabilities are merged
// into one integrand:
//   Call = (S - K e^{-rτ})/2 + (1/π) ∫₀^∞ Re[ e^{iφ ln(S/K)} (S E₁ - K e^{-rτ} E₂) / (iφ) ] dφ,
//   E_j = exp(C_j + D_j v).
// ∂Call/∂v uses the same integrand with E_j replaced by D_j E_j.
// C_j, D_j use the "little trap" form, rewritten so that β → 0 stays finite.

namespace detail {

using cplx = std::complex<double>;

inline cplx log1p_over_x(cplx z) {
    if (std::abs(z) < 1e-5) return 1.0 - z / 2.0 + z * z / 3.0;
    return std::log(1.0 + z) / z;
}

struct CfTerms {
    cplx C;
    cplx D;
};

inline CfTerms heston_cf_terms(double phi, int j, double kappa, double gamma, double beta, double rho, double r,
                               double tau) {
    const cplx i(0.0, 1.0);
    const double uj = j == 1 ? 0.5 : -0.5;
    const double bj = j == 1 ? kappa - rho * beta : kappa;
    const cplx B = bj - rho * beta * i * phi;
    const cplx s = 2.0 * uj * i * phi - phi * phi;
    const cplx d = std::sqrt(B * B - beta * beta * s);
    const cplx bpd = B + d;
    const cplx bmd_over_b2 = s / bpd;  // (B - d)/β²
    const cplx g_over_b2 = s / (bpd * bpd);
    const cplx g = beta * beta * g_over_b2;  // (B - d)/(B + d)
    const cplx E = std::exp(-d * tau);
    const cplx D = bmd_over_b2 * (1.0 - E) / (1.0 - g * E);
    // log((1 - gE)/(1 - g)) / β² = log1p(z)/β² with z = g(1 - E)/(1 - g)
    const cplx z_over_b2 = g_over_b2 * (1.0 - E) / (1.0 - g);
    const cplx log_term = z_over_b2 * log1p_over_x(beta * beta * z_over_b2);
    const cplx C = r * i * phi * tau + kappa * gamma * (bmd_over_b2 * tau - 2.0 * log_term);
    return {C, D};
}

}  // namespace detail

struct CallQuote {
    double price = 0.0;
    double dprice_dv = 0.0;
};

/// Prices calls for fixed (κ, γ, β, ρ, r) on a set of maturities. Tables of
/// C_j, D_j are filled lazily per quadrature panel and reused across (v, S, K);
/// the cache makes the pricer unsuitable for concurrent use.
class HestonPricer {
public:
    HestonPricer(double kappa, double gamma, double beta, double rho, double r, std::vector<double> maturities,
                 PricerTolerances tol = {})
        : kappa_(kappa), gamma_(gamma), beta_(beta), rho_(rho), r_(r), maturities_(std::move(maturities)),
          tol_(tol), cache_(maturities_.size()) {
        if (!(kappa > 0.0) || !(gamma > 0.0) || !(beta > 0.0) || !(std::abs(rho) < 1.0))
            throw DomainError("heston pricer: need kappa, gamma, beta > 0 and |rho| < 1");
        for (double tau : maturities_)
            if (!(tau > 0.0)) throw DomainError("heston pricer: maturities must be positive");
        const auto& x = Rule::abscissa();
        const auto& w = Rule::weights();
        for (std::size_t k = 0; k < x.size(); ++k) {
            nodes_[2 * k] = {-x[k], w[k]};
            nodes_[2 * k + 1] = {x[k], w[k]};
        }
    }

    std::size_t maturity_count() const { return maturities_.size(); }
    double maturity(std::size_t i) const { return maturities_[i]; }

    /// Calls at absolute strikes `strikes` for maturity index `mat`.
    void price(std::size_t mat, double v, double spot, std::span<const double> strikes,
               std::span<CallQuote> out) const {
        if (!(spot > 0.0) || !(v >= 0.0)) throw DomainError("heston pricer: need spot > 0 and v >= 0");
        const double tau = maturities_[mat];
        const double disc = std::exp(-r_ * tau);
        const std::size_t ns = strikes.size();
        double k_max = 0.0;
        for (double k : strikes) {
            if (!(k > 0.0)) throw DomainError("heston pricer: strikes must be positive");
            k_max = std::max(k_max, k);
        }

        // Truncation point: double until the integrand envelope is below tolerance.
        double upper = 4.0 * tol_.base_panel;
        for (;;) {
            const auto t1 = detail::heston_cf_terms(upper, 1, kappa_, gamma_, beta_, rho_, r_, tau);
            const auto t2 = detail::heston_cf_terms(upper, 2, kappa_, gamma_, beta_, rho_, r_, tau);
            const double env = (spot * std::exp((t1.C + t1.D * v).real()) +
                                k_max * disc * std::exp((t2.C + t2.D * v).real())) /
                               upper;
            if (env < tol_.tail) break;
            upper *= 2.0;
            if (upper > tol_.max_upper) throw_nonconvergence(mat, v, spot, "tail does not decay");
        }

        std::vector<double> log_moneyness(ns);
        for (std::size_t i = 0; i < ns; ++i) log_moneyness[i] = std::log(spot / strikes[i]);

        std::vector<double> prev(2 * ns), cur(2 * ns);
        integrate(mat, 0, upper, v, spot, disc, strikes, log_moneyness, prev);
        for (int level = 1;; ++level) {
            integrate(mat, level, upper, v, spot, disc, strikes, log_moneyness, cur);
            bool done = true;
            for (std::size_t i = 0; i < ns; ++i) {
                if (std::abs(cur[i] - prev[i]) > tol_.convergence) done = false;
                if (std::abs(cur[ns + i] - prev[ns + i]) > tol_.convergence * std::max(1.0, std::abs(cur[ns + i])))
                    done = false;
            }
            if (done) break;
            if (level >= tol_.max_level) throw_nonconvergence(mat, v, spot, "panel refinement did not converge");
            std::swap(prev, cur);
        }
        for (std::size_t i = 0; i < ns; ++i) {
            out[i].price = 0.5 * (spot - strikes[i] * disc) + cur[i] / std::numbers::pi;
            out[i].dprice_dv = cur[ns + i] / std::numbers::pi;
        }
    }

    CallQuote call(std::size_t mat, double v, double spot, double strike) const {
        CallQuote q;
        price(mat, v, spot, std::span<const double>(&strike, 1), std::span<CallQuote>(&q, 1));
        return q;
    }

    /// Put through the same integrals: P = C - S + K e^{-rτ}.
    double put(std::size_t mat, double v, double spot, double strike) const {
        return call(mat, v, spot, strike).price - spot + strike * std::exp(-r_ * maturities_[mat]);
    }

private:
    using Rule = boost::math::quadrature::gauss<double, 20>;
    static constexpr std::size_t kNodes = 20;

    struct Node {
        double x;
        double w;
    };

    struct Panel {
        std::array<double, kNodes> phi;
        std::array<double, kNodes> weight;
        std::array<detail::cplx, kNodes> C1, D1, C2, D2;
    };

    const Panel& panel(std::size_t mat, int level, std::uint64_t index) const {
        const std::uint64_t key = (static_cast<std::uint64_t>(level) << 48) | index;
        auto& table = cache_[mat];
        if (auto it = table.find(key); it != table.end()) return it->second;
        const double width = tol_.base_panel / static_cast<double>(1ULL << level);
        const double lo = width * static_cast<double>(index);
        Panel p;
        for (std::size_t k = 0; k < kNodes; ++k) {
            const double phi = lo + 0.5 * width * (nodes_[k].x + 1.0);
            p.phi[k] = phi;
            p.weight[k] = 0.5 * width * nodes_[k].w;
            const auto t1 = detail::heston_cf_terms(phi, 1, kappa_, gamma_, beta_, rho_, r_, maturities_[mat]);
            const auto t2 = detail::heston_cf_terms(phi, 2, kappa_, gamma_, beta_, rho_, r_, maturities_[mat]);
            p.C1[k] = t1.C;
            p.D1[k] = t1.D;
            p.C2[k] = t2.C;
            p.D2[k] = t2.D;
        }
        return table.emplace(key, p).first->second;
    }

    // out[0..ns) = ∫ price integrand, out[ns..2ns) = ∫ v-derivative integrand
    void integrate(std::size_t mat, int level, double upper, double v, double spot, double disc,
                   std::span<const double> strikes, const std::vector<double>& log_moneyness,
                   std::vector<double>& out) const {
        const std::size_t ns = strikes.size();
        std::fill(out.begin(), out.end(), 0.0);
        const double width = tol_.base_panel / static_cast<double>(1ULL << level);
        const auto panels = static_cast<std::uint64_t>(std::ceil(upper / width - 1e-9));
        const detail::cplx i(0.0, 1.0);
        for (std::uint64_t pi = 0; pi < panels; ++pi) {
            const Panel& p = panel(mat, level, pi);
            for (std::size_t k = 0; k < kNodes; ++k) {
                const detail::cplx e1 = spot * std::exp(p.C1[k] + p.D1[k] * v);
                const detail::cplx e2 = disc * std::exp(p.C2[k] + p.D2[k] * v);
                const detail::cplx de1 = p.D1[k] * e1, de2 = p.D2[k] * e2;
                const detail::cplx inv_iphi = 1.0 / (i * p.phi[k]);
                for (std::size_t s = 0; s < ns; ++s) {
                    const detail::cplx rot = std::polar(1.0, p.phi[k] * log_moneyness[s]) * inv_iphi;
                    out[s] += p.weight[k] * (rot * (e1 - strikes[s] * e2)).real();
                    out[ns + s] += p.weight[k] * (rot * (de1 - strikes[s] * de2)).real();
                }
            }
        }
    }

    [[noreturn]] void throw_nonconvergence(std::size_t mat, double v, double spot, const char* why) const {
        std::ostringstream os;
        os << "heston pricing: " << why << " (kappa=" << kappa_ << ", gamma=" << gamma_ << ", beta=" << beta_
           << ", rho=" << rho_ << ", tau=" << maturities_[mat] << ", v=" << v << ", S=" << spot << ")";
        throw NumericalError(os.str());
    }

    double kappa_, gamma_, beta_, rho_, r_;
    std::vector<double> maturities_;
    PricerTolerances tol_;
    std::array<Node, kNodes> nodes_{};
    mutable std::vector<std::unordered_map<std::uint64_t, Panel>> cache_;
};

inline double heston_call_price(double spot, double v, double tau, double strike, const HestonParams& p,
                                 PricerTolerances tol = {}) {
    require_feller(p.kappa, p.gamma, p.beta);
    return HestonPricer(p.kappa, p.gamma, p.beta, p.rho, p.r, {tau}, tol).call(0, v, spot, strike).price;
}

inline double heston_put_price(double spot, double v, double tau, double strike, const HestonParams& p,
                               PricerTolerances tol = {}) {
    require_feller(p.kappa, p.gamma, p.beta);
    return HestonPricer(p.kappa, p.gamma, p.beta, p.rho, p.r, {tau}, tol).put(0, v, spot, strike);
}

// ---------------------------------------------------------------------------
// State-space family

namespace detail {

class HestonInstance final : public ModelInstance {
public:
    HestonInstance(const ParamVector& theta, const HestonSetup& setup,
                   std::shared_ptr<const std::vector<double>> spot)
        : kappa_(theta[0]), gamma_(theta[1]), beta_(theta[2]), rho_(theta[3]), setup_(setup),
          spot_(std::move(spot)),
          pricer_(kappa_, gamma_, beta_, rho_, setup.r, setup.grid.maturities, setup.tolerances),
          decay_(std::exp(-kappa_ * setup.dt)) {}

    Vector transition(const Vector& x, Index) const override {
        return Vector::Constant(1, cir_mean(floored(x[0]), kappa_, gamma_, setup_.dt));
    }
    Matrix transition_jacobian(const Vector&, Index) const override { return Matrix::Constant(1, 1, decay_); }

    Matrix state_noise(const Vector& x, Index) const override {
        return Matrix::Constant(1, 1, std::sqrt(cir_variance(floored(x[0]), kappa_, gamma_, beta_, setup_.dt)));
    }
    Matrix observation_noise(Index) const override {
        return setup_.observation_sd() * Matrix::Identity(setup_.grid.size(), setup_.grid.size());
    }

    Vector observe(const Vector& x, Index t) const override {
        evaluate(x[0], t);
        return last_prices_;
    }
    Matrix observation_jacobian(const Vector& x, Index t) const override {
        evaluate(x[0], t);
        return last_dprices_;
    }

    Vector sample_transition(const Vector& x, Index, Rng& rng, std::size_t&) const override {
        return Vector::Constant(1, cir_transition_sample(x[0], kappa_, gamma_, beta_, setup_.dt, rng));
    }

private:
    static double floored(double v) { return std::max(v, kVarianceFloor); }

    void evaluate(double v_raw, Index t) const {
        if (has_last_ && v_raw == last_v_ && t == last_t_) return;
        if (!spot_) throw ConfigError("heston: observation requested without a spot path");
        if (t < 0 || static_cast<std::size_t>(t) >= spot_->size())
            throw ConfigError("heston: no spot for time " + std::to_string(t));
        const double v = floored(v_raw);
        const double spot = (*spot_)[static_cast<std::size_t>(t)];
        const auto& grid = setup_.grid;
        const std::size_t ns = grid.strikes.size();
        last_prices_.resize(grid.size());
        last_dprices_.resize(grid.size(), 1);
        std::vector<double> strikes(ns);
        for (std::size_t i = 0; i < ns; ++i) strikes[i] = grid.strikes[i] * spot;
        std::vector<CallQuote> quotes(ns);
        for (std::size_t j = 0; j < grid.maturities.size(); ++j) {
            pricer_.price(j, v, spot, strikes, quotes);
            for (std::size_t i = 0; i < ns; ++i) {
                last_prices_[static_cast<Index>(j * ns + i)] = quotes[i].price;
                last_dprices_(static_cast<Index>(j * ns + i), 0) = quotes[i].dprice_dv;
            }
        }
        has_last_ = true;
        last_v_ = v_raw;
        last_t_ = t;
    }

    double kappa_, gamma_, beta_, rho_;
    HestonSetup setup_;
    std::shared_ptr<const std::vector<double>> spot_;
    HestonPricer pricer_;
    double decay_;

    mutable bool has_last_ = false;
    mutable double last_v_ = 0.0;
    mutable Index last_t_ = -1;
    mutable Vector last_prices_;
    mutable Matrix last_dprices_;
};

}  // namespace detail

/// Heston family bound to one spot path (S_0..S_N). Observation index is
/// maturity-major: y[j·|strikes| + i] is strike i at maturity j.
inline ModelSpec make_heston(const HestonSetup& setup, std::shared_ptr<const std::vector<double>> spot = nullptr) {
    if (!(setup.dt > 0.0)) throw ConfigError("heston: dt must be positive");
    if (!(setup.v0 >= 0.0) || !(setup.s0 > 0.0)) throw ConfigError("heston: need v0 >= 0 and s0 > 0");
    if (!(setup.observation_sd() > 0.0)) throw ConfigError("heston: observation noise must be positive");
    if (setup.grid.size() == 0) throw ConfigError("heston: empty observation grid");

    constexpr double inf = std::numeric_limits<double>::infinity();
    ModelSpec spec;
    spec.family = "heston";
    spec.state_dim = 1;
    spec.obs_dim = setup.grid.size();
    spec.param_labels = {"kappa", "gamma", "beta", "rho"};
    spec.x0_mean = Vector::Constant(1, setup.v0);
    spec.x0_cov = Matrix::Zero(1, 1);
    spec.linear = false;
    spec.lower_bounds = Vector{{0.0, 0.0, 0.0, -1.0}};
    spec.upper_bounds = Vector{{inf, inf, inf, 1.0}};
    spec.extra_check = [](const ParamVector& theta) { require_feller(theta[0], theta[1], theta[2]); };
    spec.make_instance = [setup, spot](const ParamVector& theta) -> std::shared_ptr<const ModelInstance> {
        return std::make_shared<detail::HestonInstance>(theta, setup, spot);
    };
    return spec;
}

inline ParamVector heston_theta(const HestonParams& p) {
    return {{p.kappa, p.gamma, p.beta, p.rho}, {"kappa", "gamma", "beta", "rho"}};
}

/// Log-Euler spot path conditional on the variance path. The Brownian part
/// driving v is recovered from the variance increment, giving correlation ρ:
///   ln S_t = ln S_{t-1} + (r - v/2)Δ + (ρ/β)(v_t - v_{t-1} - κ(γ - v_{t-1})Δ) + √(1-ρ²) √(vΔ) Z_t
inline std::vector<double> simulate_spot_path(const std::vector<Vector>& variance, const ParamVector& theta,
                                              const HestonSetup& setup, Rng& rng) {
    const double kappa = theta[0], gamma = theta[1], beta = theta[2], rho = theta[3];
    const double dt = setup.dt;
    std::normal_distribution<double> n01;
    std::vector<double> spot(variance.size());
    spot[0] = setup.s0;
    double log_s = std::log(setup.s0);
    for (std::size_t t = 1; t < variance.size(); ++t) {
        const double v_prev = std::max(variance[t - 1][0], 0.0);
        const double v_next = variance[t][0];
        const double driven = (v_next - v_prev - kappa * (gamma - v_prev) * dt) / beta;
        log_s += (setup.r - 0.5 * v_prev) * dt + rho * driven +
                 std::sqrt((1.0 - rho * rho) * v_prev * dt) * n01(rng);
        spot[t] = std::exp(log_s);
    }
    return spot;
}

/// Simulates v_0..v_N (exact CIR), the spot path, and the noisy prices.
/// The spot path is stored in `exogenous`.
inline Trajectory simulate_heston(const HestonSetup& setup, const ParamVector& theta, Index n_steps,
                                  std::uint64_t seed, const SimulationOptions& opts = {}) {
    if (n_steps < 1) throw ConfigError("simulate: N must be at least 1");
    const ModelSpec bare = make_heston(setup);
    auto bare_model = bare.bind(theta);
    Trajectory traj = simulate_states(bare, *bare_model, n_steps, seed, opts);
    Rng spot_rng = make_stream(seed, opts.replicate, Stream::spot);
    auto spot = std::make_shared<const std::vector<double>>(simulate_spot_path(traj.states, theta, setup, spot_rng));
    const ModelSpec spec = make_heston(setup, spot);
    observe_states(*spec.bind(theta), traj);
    traj.exogenous = *spot;
    return traj;
}

}  // namespace misspec::models
