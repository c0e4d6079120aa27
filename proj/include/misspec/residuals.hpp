#pragma once

// Empirical autocovariance of residual series, whiteness diagnostics, the
// bias objective Ĵ(ν) and its minimization.

#include "misspec/filters.hpp"
#include "misspec/nelder_mead.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace misspec {

enum class SeriesKind { interpolation, innovation };
enum class ObjectiveVariant { signed_sum, sum_of_squares };

inline const char* to_string(SeriesKind k) { return k == SeriesKind::interpolation ? "interp" : "innov"; }
inline const char* to_string(ObjectiveVariant v) { return v == ObjectiveVariant::signed_sum ? "signed" : "squared"; }

inline SeriesKind parse_series_kind(const std::string& s) {
    if (s == "interp" || s == "interpolation") return SeriesKind::interpolation;
    if (s == "innov" || s == "innovation") return SeriesKind::innovation;
    throw ConfigError("unknown series kind '" + s + "' (expected interp or innov)");
}

inline ObjectiveVariant parse_objective_variant(const std::string& s) {
    if (s == "signed") return ObjectiveVariant::signed_sum;
    if (s == "squared") return ObjectiveVariant::sum_of_squares;
    throw ConfigError("unknown objective variant '" + s + "' (expected signed or squared)");
}

inline const std::vector<Vector>& select_series(const FilterTrace& trace, SeriesKind kind) {
    return kind == SeriesKind::interpolation ? trace.residuals.zeta : trace.residuals.zeta_minus;
}

// ---------------------------------------------------------------------------
// Autocovariance

inline Vector series_mean(const std::vector<Vector>& series) {
    Vector mean = Vector::Zero(series.front().size());
    for (const auto& z : series) mean += z;
    return mean / static_cast<double>(series.size());
}

/// Γ̂ʲ(h) = (1/(N-1)) Σ_{t=h+1..N} (ζʲ_t - ζ̄ʲ)(ζʲ_{t-h} - ζ̄ʲ), with the full-sample mean.
inline Vector empirical_autocov(const std::vector<Vector>& series, Index h) {
    if (h < 0) throw ConfigError("empirical_autocov: negative lag");
    const auto N = static_cast<Index>(series.size());
    if (N <= h + 1)
        throw InsufficientData("empirical_autocov: lag " + std::to_string(h) + " needs at least " +
                                   std::to_string(h + 2) + " samples, got " + std::to_string(N),
                               static_cast<std::size_t>(h + 2));
    const Vector mean = series_mean(series);
    Vector acc = Vector::Zero(mean.size());
    for (Index t = h; t < N; ++t)
        acc += (series[static_cast<std::size_t>(t)] - mean).cwiseProduct(series[static_cast<std::size_t>(t - h)] - mean);
    return acc / static_cast<double>(N - 1);
}

struct AutocovTable {
    Matrix gamma;  // m × (h*+1); column h is lag h
    Index N = 0;
    SeriesKind series_kind = SeriesKind::interpolation;

    Index coordinates() const { return gamma.rows(); }
    Index max_lag() const { return gamma.cols() - 1; }
};

inline AutocovTable autocov_table(const std::vector<Vector>& series, Index h_star,
                                  SeriesKind kind = SeriesKind::interpolation) {
    if (series.empty()) throw InsufficientData("autocov_table: empty series", static_cast<std::size_t>(h_star + 2));
    AutocovTable table;
    table.N = static_cast<Index>(series.size());
    table.series_kind = kind;
    table.gamma.resize(series.front().size(), h_star + 1);
    for (Index h = 0; h <= h_star; ++h) table.gamma.col(h) = empirical_autocov(series, h);
    return table;
}

inline void write_autocov_csv(std::ostream& os, const AutocovTable& table) {
    os << "coordinate,lag,autocov\n" << std::setprecision(17);
    for (Index j = 0; j < table.coordinates(); ++j)
        for (Index h = 0; h <= table.max_lag(); ++h) os << j + 1 << ',' << h << ',' << table.gamma(j, h) << '\n';
}

// ---------------------------------------------------------------------------
// Whiteness

struct WhitenessReport {
    Matrix rho;                     // m × h*; column h-1 is lag h
    std::vector<bool> degenerate;   // Γ̂ʲ(0) = 0
    std::vector<std::vector<bool>> flagged;  // [j][h-1]
    double band = 0.0;              // 1.96/√N
    Index N = 0;
    Index flagged_cells = 0;
    Index tested_cells = 0;

    double flagged_fraction() const {
        return tested_cells == 0 ? 0.0 : static_cast<double>(flagged_cells) / static_cast<double>(tested_cells);
    }
};

inline WhitenessReport whiteness_report(const std::vector<Vector>& series, Index h_star) {
    if (h_star < 1) throw ConfigError("whiteness_report: h* must be at least 1");
    const AutocovTable table = autocov_table(series, h_star);
    const Index m = table.coordinates();
    WhitenessReport rep;
    rep.N = table.N;
    rep.band = 1.96 / std::sqrt(static_cast<double>(table.N));
    rep.rho = Matrix::Constant(m, h_star, std::numeric_limits<double>::quiet_NaN());
    rep.degenerate.assign(static_cast<std::size_t>(m), false);
    rep.flagged.assign(static_cast<std::size_t>(m), std::vector<bool>(static_cast<std::size_t>(h_star), false));
    for (Index j = 0; j < m; ++j) {
        const double g0 = table.gamma(j, 0);
        if (!(g0 > 0.0)) {
            rep.degenerate[static_cast<std::size_t>(j)] = true;
            continue;
        }
        for (Index h = 1; h <= h_star; ++h) {
            const double r = table.gamma(j, h) / g0;
            rep.rho(j, h - 1) = r;
            const bool flag = std::abs(r) > rep.band;
            rep.flagged[static_cast<std::size_t>(j)][static_cast<std::size_t>(h - 1)] = flag;
            rep.flagged_cells += flag ? 1 : 0;
            ++rep.tested_cells;
        }
    }
    return rep;
}

/// Plot-ready long format: coordinate, lag, autocorrelation, band bounds, flag.
inline void write_whiteness_csv(std::ostream& os, const WhitenessReport& rep) {
    os << "coordinate,lag,autocorr,lower,upper,flagged,degenerate\n" << std::setprecision(17);
    for (Index j = 0; j < rep.rho.rows(); ++j)
        for (Index h = 1; h <= rep.rho.cols(); ++h) {
            const bool deg = rep.degenerate[static_cast<std::size_t>(j)];
            os << j + 1 << ',' << h << ',';
            if (deg)
                os << "nan";
            else
                os << rep.rho(j, h - 1);
            os << ',' << -rep.band << ',' << rep.band << ','
               << (deg ? 0 : int(rep.flagged[static_cast<std::size_t>(j)][static_cast<std::size_t>(h - 1)])) << ','
               << int(deg) << '\n';
        }
}

// ---------------------------------------------------------------------------
// Objective

struct ObjectiveSpec {
    Index h_star = 2;
    ObjectiveVariant variant = ObjectiveVariant::sum_of_squares;
    SeriesKind series_kind = SeriesKind::interpolation;

    void validate() const {
        if (h_star < 1) throw ConfigError("objective: h* must be at least 1, got " + std::to_string(h_star));
    }
};

/// Σ_j Σ_{h=1..h*} Γ̂ʲ(h), or the sum of squares of the same terms.
inline double objective_from_series(const std::vector<Vector>& series, const ObjectiveSpec& spec) {
    spec.validate();
    double total = 0.0;
    for (Index h = 1; h <= spec.h_star; ++h) {
        const Vector g = empirical_autocov(series, h);
        total += spec.variant == ObjectiveVariant::signed_sum ? g.sum() : g.squaredNorm();
    }
    return total;
}

inline std::string format_params(const ParamVector& p) {
    std::ostringstream os;
    os << std::setprecision(10) << '(';
    for (Index i = 0; i < p.size(); ++i) {
        if (i) os << ", ";
        os << p.labels[static_cast<std::size_t>(i)] << '=' << p[i];
    }
    os << ')';
    return os.str();
}

/// Ĵ(ν): runs the filter at θ - ν on `observations` and scores the chosen series.
inline double objective(const ModelSpec& model, const ParamVector& theta, const std::vector<Vector>& observations,
                        const ParamVector& nu, const ObjectiveSpec& spec, const FilterOptions& filter_opts = {}) {
    spec.validate();
    const ParamVector shifted = theta - nu;
    try {
        FilterOptions fo = filter_opts;
        fo.keep_steps = false;
        const FilterTrace trace = run_filter(model, shifted, observations, natural_mode(model), nullptr, fo);
        return objective_from_series(select_series(trace, spec.series_kind), spec);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " at nu=" + format_params(nu));
    } catch (const DomainError& e) {
        throw DomainError(std::string(e.what()) + " at nu=" + format_params(nu));
    }
}

// ---------------------------------------------------------------------------
// Bias estimation

struct EstimationResult {
    ParamVector epsilon_hat;
    ParamVector theta_hat;  // θ - ε̂
    double objective_value = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

struct EstimateOptions {
    NelderMeadOptions optimizer;
    /// Each θ_i - ν_i is kept inside θ_i ± box_fraction·|θ_i| (and the family bounds).
    double box_fraction = 0.5;
    /// Coordinates of ν that are optimized; empty means all. Inactive ones stay at ν_init.
    std::vector<std::string> active;
    FilterOptions filter;
};

inline std::vector<Index> active_indices(const ParamVector& theta, const std::vector<std::string>& active) {
    std::vector<Index> idx;
    if (active.empty()) {
        for (Index i = 0; i < theta.size(); ++i) idx.push_back(i);
    } else {
        for (const auto& label : active) idx.push_back(theta.index_of(label));
    }
    return idx;
}

inline EstimationResult estimate_bias(const ModelSpec& model, const ParamVector& theta,
                                      const std::vector<Vector>& observations, const ObjectiveSpec& spec,
                                      const ParamVector& nu_init, const EstimateOptions& opts = {}) {
    spec.validate();
    require_same_shape(theta, nu_init);
    model.check_admissible(theta - nu_init);
    const std::vector<Index> idx = active_indices(theta, opts.active);
    const auto k = static_cast<Index>(idx.size());

    Vector box_lo(k), box_hi(k), x0(k), step(k);
    for (Index a = 0; a < k; ++a) {
        const Index i = idx[static_cast<std::size_t>(a)];
        const double half = opts.box_fraction * std::abs(theta[i]);
        box_lo[a] = theta[i] - half;
        box_hi[a] = theta[i] + half;
        x0[a] = nu_init[i];
        // 0.05·max(1,|θ_i|), kept within half of the box half-width
        step[a] = std::min(0.05 * std::max(1.0, std::abs(theta[i])), 0.5 * half);
        if (!(step[a] > 0.0)) step[a] = 0.05;
    }

    auto expand = [&](const Vector& x) {
        ParamVector nu = nu_init;
        for (Index a = 0; a < k; ++a) nu[idx[static_cast<std::size_t>(a)]] = x[a];
        return nu;
    };
    constexpr double inf = std::numeric_limits<double>::infinity();
    auto f = [&](const Vector& x) -> double {
        const ParamVector nu = expand(x);
        for (Index a = 0; a < k; ++a) {
            const double value = theta[idx[static_cast<std::size_t>(a)]] - x[a];
            if (value < box_lo[a] || value > box_hi[a]) return inf;
        }
        if (!model.admissible(theta - nu)) return inf;
        try {
            return objective(model, theta, observations, nu, spec, opts.filter);
        } catch (const InsufficientData&) {
            throw;
        } catch (const Error&) {
            return inf;
        }
    };

    const NelderMeadResult nm = nelder_mead(f, x0, step, opts.optimizer);
    EstimationResult res;
    res.epsilon_hat = expand(nm.x);
    res.theta_hat = theta - res.epsilon_hat;
    res.objective_value = nm.value;
    res.iterations = nm.iterations;
    res.evaluations = nm.evaluations;
    res.converged = nm.converged;
    if (!std::isfinite(nm.value)) throw DomainError("estimate_bias: no admissible point found");
    return res;
}

}  // namespace misspec
