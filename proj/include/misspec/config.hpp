#pragma once

// INI configuration for the command-line runs. Sections:
//   [experiment] [ar1] [sqrt] [heston] [grid] [pricer] [objective] [optimizer] [filter] [sweep]

#include "misspec/experiments.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace misspec {

struct RunConfig {
    ExperimentConfig experiment;
    /// θ used by filter/detect; empty means θ₀.
    std::vector<double> filter_theta;
    /// Trajectory CSV for filter/detect; empty means simulate replicate 0.
    std::string trajectory;
    SweepAxis sweep_axis = SweepAxis::lag;
    std::vector<Index> sweep_values{2, 6, 8, 10};
};

namespace detail {

inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
std::string fmt_list(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ", ";
        if constexpr (std::is_floating_point_v<T>)
            out += fmt_double(xs[i]);
        else
            out += std::to_string(xs[i]);
    }
    return out;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// "section.key" -> line number, for diagnostics.
inline std::map<std::string, int> key_lines(const std::string& text) {
    std::map<std::string, int> out;
    std::istringstream is(text);
    std::string line, section;
    for (int n = 1; std::getline(is, line); ++n) {
        line = trim(line);
        if (line.empty() || line[0] == ';' || line[0] == '#') continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq != std::string::npos) out[section + "." + trim(line.substr(0, eq))] = n;
    }
    return out;
}

class IniReader {
public:
    IniReader(const boost::property_tree::ptree& tree, std::map<std::string, int> lines, std::string source)
        : tree_(tree), lines_(std::move(lines)), source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        std::string where = source_;
        if (auto it = lines_.find(key); it != lines_.end()) where += ":" + std::to_string(it->second);
        throw ConfigError(where + ": " + key + ": " + msg);
    }

    std::optional<std::string> raw(const std::string& key) {
        seen_.insert(key);
        auto v = tree_.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '.'));
        if (!v) return std::nullopt;
        return trim(*v);
    }

    void get(const std::string& key, double& out) {
        if (auto s = raw(key)) out = to_double(key, *s);
    }
    void get(const std::string& key, Index& out) {
        if (auto s = raw(key)) out = to_int(key, *s);
    }
    void get(const std::string& key, int& out) {
        if (auto s = raw(key)) out = static_cast<int>(to_int(key, *s));
    }
    void get(const std::string& key, unsigned& out) {
        if (auto s = raw(key)) {
            const Index v = to_int(key, *s);
            if (v < 1) fail(key, "must be at least 1");
            out = static_cast<unsigned>(v);
        }
    }
    void get(const std::string& key, std::uint64_t& out) {
        if (auto s = raw(key)) {
            const Index v = to_int(key, *s);
            if (v < 0) fail(key, "must be non-negative");
            out = static_cast<std::uint64_t>(v);
        }
    }
    void get(const std::string& key, bool& out) {
        if (auto s = raw(key)) {
            if (*s == "true" || *s == "1" || *s == "yes") out = true;
            else if (*s == "false" || *s == "0" || *s == "no") out = false;
            else fail(key, "expected true or false, got '" + *s + "'");
        }
    }
    void get(const std::string& key, std::string& out) {
        if (auto s = raw(key)) out = *s;
    }
    void get(const std::string& key, std::vector<double>& out) {
        if (auto s = raw(key)) {
            out.clear();
            for (const auto& item : split(*s)) out.push_back(to_double(key, item));
        }
    }
    void get(const std::string& key, std::vector<Index>& out) {
        if (auto s = raw(key)) {
            out.clear();
            for (const auto& item : split(*s)) out.push_back(to_int(key, item));
        }
    }
    void get(const std::string& key, std::vector<std::string>& out) {
        if (auto s = raw(key)) out = split(*s);
    }

    /// Rejects keys that were never asked for.
    void check_unknown() const {
        for (const auto& [sec, sub] : tree_) {
            if (sub.empty() && !sub.data().empty()) fail(sec, "key outside of any section");
            for (const auto& [key, val] : sub) {
                const std::string full = sec + "." + key;
                if (!seen_.count(full)) fail(full, "unknown key");
            }
        }
    }

private:
    static std::vector<std::string> split(const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    double to_double(const std::string& key, const std::string& s) const {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            fail(key, "expected a number, got '" + s + "'");
        }
    }

    Index to_int(const std::string& key, const std::string& s) const {
        Index v = 0;
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) fail(key, "expected an integer, got '" + s + "'");
        return v;
    }

    const boost::property_tree::ptree& tree_;
    std::map<std::string, int> lines_;
    std::string source_;
    std::set<std::string> seen_;
};

}  // namespace detail

/// Parses INI text; `source` names the input in diagnostics.
inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream is(text);
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    detail::IniReader in(tree, detail::key_lines(text), source);

    RunConfig rc;
    ExperimentConfig& c = rc.experiment;
    in.get("experiment.family", c.family);
    in.get("experiment.N", c.N);
    in.get("experiment.mc", c.mc);
    in.get("experiment.seed", c.seed);
    in.get("experiment.threads", c.threads);
    in.get("experiment.init_jitter", c.init_jitter);
    in.get("experiment.start", c.start);
    in.get("experiment.active", c.active);
    in.get("experiment.trajectory", rc.trajectory);

    in.get("ar1.gamma", c.ar1.gamma);
    in.get("ar1.alpha", c.ar1.alpha);
    in.get("ar1.beta2", c.ar1.beta2);
    in.get("ar1.sigma2", c.ar1.sigma2);
    in.get("ar1.x0", c.ar1.x0);

    in.get("sqrt.gamma", c.sqrt.gamma);
    in.get("sqrt.alpha", c.sqrt.alpha);
    in.get("sqrt.beta2", c.sqrt.beta2);
    in.get("sqrt.sigma2", c.sqrt.sigma2);
    in.get("sqrt.x0", c.sqrt.x0);

    in.get("heston.kappa", c.heston.kappa);
    in.get("heston.gamma", c.heston.gamma);
    in.get("heston.beta", c.heston.beta);
    in.get("heston.rho", c.heston.rho);
    in.get("heston.r", c.heston.r);
    in.get("heston.v0", c.heston.v0);
    in.get("heston.s0", c.heston.s0);
    in.get("heston.dt", c.heston_setup.dt);
    in.get("heston.obs_sd", c.heston_setup.obs_sd);

    in.get("grid.strikes", c.heston_setup.grid.strikes);
    in.get("grid.maturities", c.heston_setup.grid.maturities);

    in.get("pricer.tail", c.heston_setup.tolerances.tail);
    in.get("pricer.convergence", c.heston_setup.tolerances.convergence);
    in.get("pricer.base_panel", c.heston_setup.tolerances.base_panel);
    in.get("pricer.max_level", c.heston_setup.tolerances.max_level);
    in.get("pricer.max_upper", c.heston_setup.tolerances.max_upper);

    in.get("objective.h_star", c.objective.h_star);
    if (auto s = in.raw("objective.variant")) {
        try {
            c.objective.variant = parse_objective_variant(*s);
        } catch (const ConfigError& e) {
            in.fail("objective.variant", e.what());
        }
    }
    if (auto s = in.raw("objective.series")) {
        try {
            c.objective.series_kind = parse_series_kind(*s);
        } catch (const ConfigError& e) {
            in.fail("objective.series", e.what());
        }
    }

    auto& nm = c.estimate.optimizer;
    in.get("optimizer.x_tolerance", nm.x_tolerance);
    in.get("optimizer.f_tolerance", nm.f_tolerance);
    in.get("optimizer.max_iter", nm.max_iter);
    in.get("optimizer.box_fraction", c.estimate.box_fraction);

    in.get("filter.joseph", c.estimate.filter.joseph);
    in.get("filter.theta", rc.filter_theta);

    if (auto s = in.raw("sweep.axis")) {
        try {
            rc.sweep_axis = parse_sweep_axis(*s);
        } catch (const ConfigError& e) {
            in.fail("sweep.axis", e.what());
        }
    }
    in.get("sweep.values", rc.sweep_values);

    in.check_unknown();
    if (c.estimate.box_fraction <= 0.0) in.fail("optimizer.box_fraction", "must be positive");
    if (c.heston_setup.dt <= 0.0) in.fail("heston.dt", "must be positive");
    if (c.heston_setup.grid.strikes.empty()) in.fail("grid.strikes", "must not be empty");
    if (c.heston_setup.grid.maturities.empty()) in.fail("grid.maturities", "must not be empty");
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return rc;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), path);
}

/// Full INI text of `rc`, including every default; parse_config(to_ini(rc)) == rc.
inline std::string to_ini(const RunConfig& rc) {
    using detail::fmt_double;
    using detail::fmt_list;
    const ExperimentConfig& c = rc.experiment;
    std::ostringstream os;
    os << "[experiment]\n"
       << "family = " << c.family << "\n"
       << "N = " << c.N << "\n"
       << "mc = " << c.mc << "\n"
       << "seed = " << c.seed << "\n"
       << "threads = " << c.threads << "\n"
       << "init_jitter = " << fmt_double(c.init_jitter) << "\n"
       << "start = " << fmt_list(c.start) << "\n";
    os << "active = ";
    for (std::size_t i = 0; i < c.active.size(); ++i) os << (i ? ", " : "") << c.active[i];
    os << "\ntrajectory = " << rc.trajectory << "\n\n";

    os << "[ar1]\n"
       << "gamma = " << fmt_double(c.ar1.gamma) << "\nalpha = " << fmt_double(c.ar1.alpha)
       << "\nbeta2 = " << fmt_double(c.ar1.beta2) << "\nsigma2 = " << fmt_double(c.ar1.sigma2)
       << "\nx0 = " << fmt_double(c.ar1.x0) << "\n\n";
    os << "[sqrt]\n"
       << "gamma = " << fmt_double(c.sqrt.gamma) << "\nalpha = " << fmt_double(c.sqrt.alpha)
       << "\nbeta2 = " << fmt_double(c.sqrt.beta2) << "\nsigma2 = " << fmt_double(c.sqrt.sigma2)
       << "\nx0 = " << fmt_double(c.sqrt.x0) << "\n\n";
    os << "[heston]\n"
       << "kappa = " << fmt_double(c.heston.kappa) << "\ngamma = " << fmt_double(c.heston.gamma)
       << "\nbeta = " << fmt_double(c.heston.beta) << "\nrho = " << fmt_double(c.heston.rho)
       << "\nr = " << fmt_double(c.heston.r) << "\nv0 = " << fmt_double(c.heston.v0)
       << "\ns0 = " << fmt_double(c.heston.s0) << "\ndt = " << fmt_double(c.heston_setup.dt)
       << "\nobs_sd = " << fmt_double(c.heston_setup.obs_sd) << "\n\n";
    os << "[grid]\n"
       << "strikes = " << fmt_list(c.heston_setup.grid.strikes) << "\nmaturities = "
       << fmt_list(c.heston_setup.grid.maturities) << "\n\n";
    const auto& tol = c.heston_setup.tolerances;
    os << "[pricer]\n"
       << "tail = " << fmt_double(tol.tail) << "\nconvergence = " << fmt_double(tol.convergence)
       << "\nbase_panel = " << fmt_double(tol.base_panel) << "\nmax_level = " << tol.max_level
       << "\nmax_upper = " << fmt_double(tol.max_upper) << "\n\n";
    os << "[objective]\n"
       << "h_star = " << c.objective.h_star << "\nvariant = " << to_string(c.objective.variant)
       << "\nseries = " << to_string(c.objective.series_kind) << "\n\n";
    const auto& nm = c.estimate.optimizer;
    os << "[optimizer]\n"
       << "x_tolerance = " << fmt_double(nm.x_tolerance) << "\nf_tolerance = " << fmt_double(nm.f_tolerance)
       << "\nmax_iter = " << nm.max_iter << "\nbox_fraction = " << fmt_double(c.estimate.box_fraction) << "\n\n";
    os << "[filter]\n"
       << "joseph = " << (c.estimate.filter.joseph ? "true" : "false") << "\ntheta = " << fmt_list(rc.filter_theta)
       << "\n\n";
    os << "[sweep]\n"
       << "axis = " << (rc.sweep_axis == SweepAxis::lag ? "lag" : "n") << "\nvalues = " << fmt_list(rc.sweep_values)
       << "\n";
    return os.str();
}

/// θ handed to the filter in filter/detect runs.
inline ParamVector filter_theta(const RunConfig& rc) {
    ParamVector theta = true_theta(rc.experiment);
    if (!rc.filter_theta.empty()) {
        if (static_cast<Index>(rc.filter_theta.size()) != theta.size())
            throw ConfigError("filter.theta has " + std::to_string(rc.filter_theta.size()) + " values, family " +
                              rc.experiment.family + " expects " + std::to_string(theta.size()));
        for (Index i = 0; i < theta.size(); ++i) theta[i] = rc.filter_theta[static_cast<std::size_t>(i)];
    }
    return theta;
}

}  // namespace misspec
