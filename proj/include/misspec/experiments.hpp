#pragma once

// Monte Carlo studies of the bias estimator: repeated simulate → estimate
// cycles, parameter sweeps and the interpolation/innovation comparison.

#include "misspec/models/ar1.hpp"
#include "misspec/models/heston.hpp"
#include "misspec/models/sqrt_model.hpp"
#include "misspec/residuals.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace misspec {

struct ExperimentConfig {
    std::string family = "ar1";  // ar1 | sqrt | heston
    models::AR1Params ar1;
    models::SqrtModelParams sqrt;
    models::HestonParams heston;  // true θ₀ plus r, v0, s0
    models::HestonSetup heston_setup;

    /// θ⁽⁰⁾; empty selects the family default.
    std::vector<double> start;
    /// Estimated coordinates; empty means all.
    std::vector<std::string> active;

    Index N = 500;
    Index mc = 100;
    ObjectiveSpec objective;
    std::uint64_t seed = 1;
    /// σ̃ of the Gaussian jitter added to the active start coordinates per replicate; 0 disables it.
    double init_jitter = 0.0;
    unsigned threads = 1;
    EstimateOptions estimate;

    void validate() const {
        if (family != "ar1" && family != "sqrt" && family != "heston")
            throw ConfigError("unknown family '" + family + "' (expected ar1, sqrt or heston)");
        if (mc < 1) throw ConfigError("mc must be at least 1");
        objective.validate();
        if (N <= objective.h_star + 1)
            throw ConfigError("N = " + std::to_string(N) + " must exceed h* + 1 = " + std::to_string(objective.h_star + 1));
        if (init_jitter < 0.0) throw ConfigError("init_jitter must be non-negative");
        if (threads < 1) throw ConfigError("threads must be at least 1");
    }
};

/// Heston setup with r, v0, s0 taken from the parameter block.
inline models::HestonSetup resolved_heston_setup(const ExperimentConfig& cfg) {
    models::HestonSetup s = cfg.heston_setup;
    s.r = cfg.heston.r;
    s.v0 = cfg.heston.v0;
    s.s0 = cfg.heston.s0;
    return s;
}

inline ParamVector true_theta(const ExperimentConfig& cfg) {
    if (cfg.family == "ar1") return models::ar1_theta(cfg.ar1);
    if (cfg.family == "sqrt") return models::sqrt_theta(cfg.sqrt);
    if (cfg.family == "heston") return models::heston_theta(cfg.heston);
    throw ConfigError("unknown family '" + cfg.family + "'");
}

inline ParamVector default_start(const std::string& family) {
    if (family == "ar1") return {{0.8, 2.8}, {"gamma", "alpha"}};
    if (family == "sqrt") return {{0.007, 5.1}, {"gamma", "alpha"}};
    if (family == "heston") return {{4.0, 0.025, 0.4, -0.5}, {"kappa", "gamma", "beta", "rho"}};
    throw ConfigError("unknown family '" + family + "'");
}

inline ParamVector start_theta(const ExperimentConfig& cfg) {
    ParamVector start = default_start(cfg.family);
    if (!cfg.start.empty()) {
        if (static_cast<Index>(cfg.start.size()) != start.size())
            throw ConfigError("start has " + std::to_string(cfg.start.size()) + " values, family " + cfg.family +
                              " expects " + std::to_string(start.size()));
        for (Index i = 0; i < start.size(); ++i) start[i] = cfg.start[static_cast<std::size_t>(i)];
    }
    return start;
}

/// Model family (for Heston: bound to `spot`) as used by the filter.
inline ModelSpec family_spec(const ExperimentConfig& cfg, std::shared_ptr<const std::vector<double>> spot = nullptr) {
    if (cfg.family == "ar1") return models::make_ar1(cfg.ar1);
    if (cfg.family == "sqrt") return models::make_sqrt_model(cfg.sqrt);
    if (cfg.family == "heston") return models::make_heston(resolved_heston_setup(cfg), std::move(spot));
    throw ConfigError("unknown family '" + cfg.family + "'");
}

struct Dataset {
    ModelSpec spec;
    Trajectory traj;
};

/// Trajectory of replicate `r` at θ₀ together with the matching filter family.
inline Dataset make_dataset(const ExperimentConfig& cfg, std::uint64_t replicate, std::optional<Index> n = {}) {
    SimulationOptions so;
    so.replicate = replicate;
    const Index steps = n.value_or(cfg.N);
    Dataset ds;
    if (cfg.family == "heston") {
        ds.traj = models::simulate_heston(resolved_heston_setup(cfg), true_theta(cfg), steps, cfg.seed, so);
        ds.spec = family_spec(cfg, std::make_shared<const std::vector<double>>(ds.traj.exogenous));
    } else {
        ds.spec = family_spec(cfg);
        ds.traj = simulate(ds.spec, true_theta(cfg), steps, cfg.seed, so);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Monte Carlo

struct ReplicateResult {
    std::uint64_t replicate = 0;
    bool ok = false;
    std::string error;
    ParamVector start;
    EstimationResult estimate;
    std::size_t domain_events = 0;
};

struct MCReport {
    ExperimentConfig config;
    ParamVector theta0;
    std::vector<ReplicateResult> replicates;
    Vector mean;  // over included replicates
    Vector mse;   // (1/M) Σ_m (θ̂_{m,j} - θ₀_j)²
    Index included = 0;
    Index excluded = 0;
    double wall_seconds = 0.0;

    double exclusion_rate() const {
        return replicates.empty() ? 0.0 : static_cast<double>(excluded) / static_cast<double>(replicates.size());
    }
    /// Runs with at least 5% failed replicates are flagged.
    bool invalid() const { return included == 0 || exclusion_rate() >= 0.05; }
};

inline ReplicateResult run_replicate(const ExperimentConfig& cfg, std::uint64_t r) {
    ReplicateResult out;
    out.replicate = r;
    try {
        const Dataset ds = make_dataset(cfg, r);
        out.domain_events = ds.traj.domain_events;
        out.start = start_theta(cfg);
        if (cfg.init_jitter > 0.0) {
            Rng rng = make_stream(cfg.seed, r, Stream::start_jitter);
            std::normal_distribution<double> n01;
            for (Index i : active_indices(out.start, cfg.active)) out.start[i] += cfg.init_jitter * n01(rng);
        }
        EstimateOptions eo = cfg.estimate;
        eo.active = cfg.active;
        const ParamVector nu0{Vector::Zero(out.start.size()), out.start.labels};
        out.estimate = estimate_bias(ds.spec, out.start, ds.traj.observations, cfg.objective, nu0, eo);
        out.ok = true;
    } catch (const Error& e) {
        out.ok = false;
        out.error = e.what();
    }
    return out;
}

/// Runs `count` independent jobs on up to `threads` workers; results are stored by index.
template <class Job>
void parallel_for(std::size_t count, unsigned threads, Job&& job) {
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) job(i);
        });
    for (auto& t : pool) t.join();
}

inline void aggregate(MCReport& rep) {
    const Index k = rep.theta0.size();
    rep.mean = Vector::Zero(k);
    rep.mse = Vector::Zero(k);
    rep.included = rep.excluded = 0;
    for (const auto& r : rep.replicates) {
        if (!r.ok) {
            ++rep.excluded;
            continue;
        }
        ++rep.included;
        rep.mean += r.estimate.theta_hat.values;
        rep.mse += (r.estimate.theta_hat.values - rep.theta0.values).cwiseAbs2();
    }
    if (rep.included > 0) {
        rep.mean /= static_cast<double>(rep.included);
        rep.mse /= static_cast<double>(rep.included);
    } else {
        rep.mean.setConstant(std::numeric_limits<double>::quiet_NaN());
        rep.mse.setConstant(std::numeric_limits<double>::quiet_NaN());
    }
}

inline MCReport run_mc(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    MCReport rep;
    rep.config = cfg;
    rep.theta0 = true_theta(cfg);
    rep.replicates.resize(static_cast<std::size_t>(cfg.mc));
    parallel_for(rep.replicates.size(), cfg.threads,
                 [&](std::size_t i) { rep.replicates[i] = run_replicate(cfg, static_cast<std::uint64_t>(i)); });
    aggregate(rep);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Sweeps and comparisons

enum class SweepAxis { lag, sample_size };

inline SweepAxis parse_sweep_axis(const std::string& s) {
    if (s == "lag" || s == "hstar") return SweepAxis::lag;
    if (s == "n" || s == "N" || s == "sample_size") return SweepAxis::sample_size;
    throw ConfigError("unknown sweep axis '" + s + "' (expected lag or n)");
}

struct SweepPoint {
    Index value = 0;
    MCReport report;
};

/// Re-runs run_mc per value; every point uses the same base seed, so
/// replicate r sees the same random streams at every value.
inline std::vector<SweepPoint> sensitivity_sweep(const ExperimentConfig& cfg, SweepAxis axis,
                                                 const std::vector<Index>& values) {
    if (values.empty()) throw ConfigError("sweep: no values");
    std::vector<SweepPoint> out;
    for (Index v : values) {
        ExperimentConfig c = cfg;
        if (axis == SweepAxis::lag)
            c.objective.h_star = v;
        else
            c.N = v;
        out.push_back({v, run_mc(c)});
    }
    return out;
}

struct ComparisonReport {
    MCReport interpolation;
    MCReport innovation;
    Vector mse_ratio;         // MSE(ζ) / MSE(ζ⁻) per coordinate
    Index paired = 0;         // replicates valid in both arms
    Index interpolation_wins = 0;  // paired replicates with smaller squared error for ζ

    double win_fraction() const {
        return paired == 0 ? 0.0 : static_cast<double>(interpolation_wins) / static_cast<double>(paired);
    }
};

/// Squared error over the active coordinates.
inline double active_squared_error(const ReplicateResult& r, const ParamVector& theta0,
                                   const std::vector<std::string>& active) {
    double s = 0.0;
    for (Index i : active_indices(theta0, active)) {
        const double d = r.estimate.theta_hat[i] - theta0[i];
        s += d * d;
    }
    return s;
}

inline ComparisonReport paired_comparison(MCReport interp, MCReport innov) {
    ComparisonReport out;
    out.interpolation = std::move(interp);
    out.innovation = std::move(innov);
    out.mse_ratio = out.interpolation.mse.cwiseQuotient(out.innovation.mse);
    const auto& active = out.interpolation.config.active;
    for (std::size_t i = 0; i < out.interpolation.replicates.size(); ++i) {
        const auto& a = out.interpolation.replicates[i];
        const auto& b = out.innovation.replicates[i];
        if (!a.ok || !b.ok) continue;
        ++out.paired;
        if (active_squared_error(a, out.interpolation.theta0, active) <
            active_squared_error(b, out.innovation.theta0, active))
            ++out.interpolation_wins;
    }
    return out;
}

/// Same trajectories and seeds for both series kinds.
inline ComparisonReport compare_series(const ExperimentConfig& cfg) {
    ExperimentConfig a = cfg, b = cfg;
    a.objective.series_kind = SeriesKind::interpolation;
    b.objective.series_kind = SeriesKind::innovation;
    return paired_comparison(run_mc(a), run_mc(b));
}

// ---------------------------------------------------------------------------
// Output

/// Per-replicate rows; contains no timing so identical configs give identical bytes.
inline void write_mc_csv(std::ostream& os, const MCReport& rep) {
    os << "replicate,status";
    for (const auto& l : rep.theta0.labels) os << ",start_" << l;
    for (const auto& l : rep.theta0.labels) os << ",theta_hat_" << l;
    os << ",objective,iterations,evaluations,converged,domain_events,error\n" << std::setprecision(17);
    for (const auto& r : rep.replicates) {
        os << r.replicate << ',' << (r.ok ? "ok" : "excluded");
        for (Index i = 0; i < rep.theta0.size(); ++i) os << ',' << (r.start.size() ? r.start[i] : std::nan(""));
        for (Index i = 0; i < rep.theta0.size(); ++i) os << ',' << (r.ok ? r.estimate.theta_hat[i] : std::nan(""));
        os << ',' << (r.ok ? r.estimate.objective_value : std::nan("")) << ',' << r.estimate.iterations << ','
           << r.estimate.evaluations << ',' << int(r.estimate.converged) << ',' << r.domain_events << ",\"";
        for (char c : r.error) os << (c == '"' ? '\'' : c);
        os << "\"\n";
    }
}

/// coordinate, theta0, mean, mse
inline void write_mse_csv(std::ostream& os, const MCReport& rep) {
    os << "coordinate,theta0,mean,mse\n" << std::setprecision(17);
    for (Index i = 0; i < rep.theta0.size(); ++i)
        os << rep.theta0.labels[static_cast<std::size_t>(i)] << ',' << rep.theta0[i] << ',' << rep.mean[i] << ','
           << rep.mse[i] << '\n';
}

inline void write_mc_summary(std::ostream& os, const MCReport& rep) {
    const auto& c = rep.config;
    os << "family: " << c.family << "\nN: " << c.N << "\nmc: " << c.mc << "\nh_star: " << c.objective.h_star
       << "\nobjective: " << to_string(c.objective.variant) << "\nseries: " << to_string(c.objective.series_kind)
       << "\nseed: " << c.seed << "\nincluded: " << rep.included << "\nexcluded: " << rep.excluded
       << "\ninvalid: " << (rep.invalid() ? "yes" : "no") << '\n'
       << std::setprecision(6);
    os << "coordinate        theta0          mean           mse\n";
    for (Index i = 0; i < rep.theta0.size(); ++i)
        os << std::left << std::setw(12) << rep.theta0.labels[static_cast<std::size_t>(i)] << std::right
           << std::setw(14) << rep.theta0[i] << std::setw(14) << rep.mean[i] << std::setw(14) << rep.mse[i] << '\n';
    os << "wall_seconds: " << rep.wall_seconds << '\n';
}

inline void write_sweep_csv(std::ostream& os, SweepAxis axis, const std::vector<SweepPoint>& pts) {
    os << (axis == SweepAxis::lag ? "h_star" : "N") << ",coordinate,theta0,mean,mse,included,excluded\n"
       << std::setprecision(17);
    for (const auto& p : pts)
        for (Index i = 0; i < p.report.theta0.size(); ++i)
            os << p.value << ',' << p.report.theta0.labels[static_cast<std::size_t>(i)] << ',' << p.report.theta0[i]
               << ',' << p.report.mean[i] << ',' << p.report.mse[i] << ',' << p.report.included << ','
               << p.report.excluded << '\n';
}

inline void write_comparison_csv(std::ostream& os, const ComparisonReport& cmp) {
    os << "coordinate,theta0,mse_interp,mse_innov,ratio\n" << std::setprecision(17);
    const auto& t0 = cmp.interpolation.theta0;
    for (Index i = 0; i < t0.size(); ++i)
        os << t0.labels[static_cast<std::size_t>(i)] << ',' << t0[i] << ',' << cmp.interpolation.mse[i] << ','
           << cmp.innovation.mse[i] << ',' << cmp.mse_ratio[i] << '\n';
}

}  // namespace misspec
