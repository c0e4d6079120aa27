// misspec: command-line front end for simulation, filtering, whiteness
// detection, bias estimation and the Monte Carlo studies.

#include "misspec/config.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace misspec;

namespace {

constexpr const char* kToolVersion = "misspec 1.0.0";

struct Overrides {
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::string> objective;
    std::optional<std::string> series;
    std::optional<Index> hstar;
    std::optional<Index> mc;
    std::optional<Index> n;
};

void add_common(CLI::App* sub, Overrides& o, bool with_out = true) {
    sub->add_option("--config", o.config, "INI configuration file");
    if (with_out) sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "base seed");
    sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--objective", o.objective, "objective variant")->check(CLI::IsMember({"signed", "squared"}));
    sub->add_option("--series", o.series, "residual series")->check(CLI::IsMember({"interp", "innov"}));
    sub->add_option("--hstar", o.hstar, "largest lag h*");
    sub->add_option("--mc", o.mc, "Monte Carlo replicates");
    sub->add_option("--n", o.n, "number of observations");
}

RunConfig resolve(const Overrides& o) {
    RunConfig rc = o.config.empty() ? RunConfig{} : load_config(o.config);
    auto& c = rc.experiment;
    if (o.seed) c.seed = *o.seed;
    if (o.threads) c.threads = *o.threads;
    if (o.objective) c.objective.variant = parse_objective_variant(*o.objective);
    if (o.series) c.objective.series_kind = parse_series_kind(*o.series);
    if (o.hstar) {
        if (*o.hstar < 1) throw ConfigError("--hstar must be at least 1, got " + std::to_string(*o.hstar));
        c.objective.h_star = *o.hstar;
    }
    if (o.mc) c.mc = *o.mc;
    if (o.n) c.N = *o.n;
    c.validate();
    return rc;
}

class OutputDir {
public:
    OutputDir(const std::string& dir, std::string subcommand, const RunConfig& rc)
        : dir_(dir), subcommand_(std::move(subcommand)), rc_(rc) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
    }

    std::ofstream open(const std::string& name) {
        const fs::path p = dir_ / name;
        std::ofstream f(p, std::ios::binary);
        if (!f) throw ConfigError("cannot write '" + p.string() + "'");
        outputs_.push_back(name);
        return f;
    }

    void input(const std::string& path) { inputs_.push_back(path); }

    /// Writes config.ini (the fully resolved configuration) and manifest.json.
    void finish(const nlohmann::json& extra = {}) {
        {
            std::ofstream f(dir_ / "config.ini", std::ios::binary);
            f << to_ini(rc_);
        }
        nlohmann::json m;
        m["subcommand"] = subcommand_;
        m["tool_version"] = kToolVersion;
        m["seed"] = rc_.experiment.seed;
        m["config"] = to_ini(rc_);
        m["inputs"] = inputs_;
        m["outputs"] = outputs_;
        m["replay"] = "misspec " + subcommand_ + " --config " + (dir_ / "config.ini").string() + " --out " +
                      dir_.string();
        if (!extra.is_null()) m["result"] = extra;
        std::ofstream f(dir_ / "manifest.json", std::ios::binary);
        f << m.dump(2) << '\n';
    }

private:
    fs::path dir_;
    std::string subcommand_;
    const RunConfig& rc_;
    std::vector<std::string> inputs_, outputs_;
};

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

/// Observations (and the family bound to them) for filter/detect.
Dataset load_or_simulate(const RunConfig& rc, OutputDir& out) {
    const auto& c = rc.experiment;
    if (rc.trajectory.empty()) {
        family_spec(c).check_admissible(true_theta(c));
        return make_dataset(c, 0);
    }
    out.input(rc.trajectory);
    std::ifstream f(rc.trajectory);
    if (!f) throw ConfigError("cannot open trajectory '" + rc.trajectory + "'");
    Dataset ds;
    if (c.family == "heston") {
        ds.traj = read_trajectory_csv(f, Vector::Constant(1, c.heston.v0), c.heston.s0);
        if (ds.traj.exogenous.empty()) throw ConfigError("heston trajectory '" + rc.trajectory + "' lacks the s column");
        ds.spec = family_spec(c, std::make_shared<const std::vector<double>>(ds.traj.exogenous));
    } else {
        ds.spec = family_spec(c);
        ds.traj = read_trajectory_csv(f, ds.spec.x0_mean);
    }
    return ds;
}

int cmd_simulate(const Overrides& o) {
    const RunConfig rc = resolve(o);
    const auto& c = rc.experiment;
    family_spec(c).check_admissible(true_theta(c));
    const Dataset ds = make_dataset(c, 0);
    OutputDir out(o.out, "simulate", rc);
    {
        auto f = out.open("trajectory.csv");
        write_trajectory_csv(f, ds.traj);
    }
    {
        auto f = out.open("trajectory.bin");
        write_trajectory_binary(f, ds.traj);
    }
    out.finish({{"rows", ds.traj.length()}, {"domain_events", ds.traj.domain_events}});
    std::cout << "wrote " << ds.traj.length() << " observations to " << o.out << "\n";
    return 0;
}

int cmd_filter(const Overrides& o) {
    const RunConfig rc = resolve(o);
    OutputDir out(o.out, "filter", rc);
    const Dataset ds = load_or_simulate(rc, out);
    const ParamVector theta = filter_theta(rc);
    FilterOptions fo = rc.experiment.estimate.filter;
    fo.keep_steps = true;
    const bool have_truth = rc.trajectory.empty();
    const FilterTrace tr = run_filter(ds.spec, theta, ds.traj.observations, natural_mode(ds.spec),
                                      have_truth ? &ds.traj.states : nullptr, fo);
    {
        auto f = out.open("filter.csv");
        write_trace_csv(f, tr);
    }
    out.finish({{"theta", to_std(theta.values)}, {"steps", ds.traj.length()}});
    std::cout << "filtered " << ds.traj.length() << " steps at " << format_params(theta) << "\n";
    return 0;
}

int cmd_detect(const Overrides& o) {
    const RunConfig rc = resolve(o);
    const auto& c = rc.experiment;
    OutputDir out(o.out, "detect", rc);
    const Dataset ds = load_or_simulate(rc, out);
    const ParamVector theta = filter_theta(rc);
    FilterOptions fo = c.estimate.filter;
    fo.keep_steps = false;
    const FilterTrace tr = run_filter(ds.spec, theta, ds.traj.observations, natural_mode(ds.spec), nullptr, fo);
    const WhitenessReport rep = whiteness_report(select_series(tr, c.objective.series_kind), c.objective.h_star);
    {
        auto f = out.open("whiteness.csv");
        write_whiteness_csv(f, rep);
    }
    for (Index j = 0; j < rep.rho.rows(); ++j) {
        auto f = out.open("autocorr_" + std::to_string(j + 1) + ".csv");
        f << "lag,value,lower,upper\n" << std::setprecision(17);
        for (Index h = 1; h <= rep.rho.cols(); ++h)
            f << h << ',' << rep.rho(j, h - 1) << ',' << -rep.band << ',' << rep.band << '\n';
    }
    {
        auto f = out.open("summary.txt");
        f << "theta: " << format_params(theta) << "\nseries: " << to_string(c.objective.series_kind)
          << "\nh_star: " << c.objective.h_star << "\nN: " << rep.N << "\nflagged: " << rep.flagged_cells << "/"
          << rep.tested_cells << "\nflagged_fraction: " << rep.flagged_fraction() << '\n';
    }
    out.finish({{"flagged_cells", rep.flagged_cells},
                {"tested_cells", rep.tested_cells},
                {"flagged_fraction", rep.flagged_fraction()}});
    std::cout << "flagged " << rep.flagged_cells << " of " << rep.tested_cells << " cells (fraction "
              << rep.flagged_fraction() << ")\n";
    return 0;
}

int cmd_estimate(const Overrides& o) {
    const RunConfig rc = resolve(o);
    const auto& c = rc.experiment;
    OutputDir out(o.out, "estimate", rc);
    const ReplicateResult r = run_replicate(c, 0);
    if (!r.ok) throw NumericalError("estimation failed: " + r.error);
    {
        auto f = out.open("estimate.csv");
        f << "coordinate,start,epsilon_hat,theta_hat\n" << std::setprecision(17);
        for (Index i = 0; i < r.start.size(); ++i)
            f << r.start.labels[static_cast<std::size_t>(i)] << ',' << r.start[i] << ','
              << r.estimate.epsilon_hat[i] << ',' << r.estimate.theta_hat[i] << '\n';
    }
    out.finish({{"theta_hat", to_std(r.estimate.theta_hat.values)},
                {"objective", r.estimate.objective_value},
                {"iterations", r.estimate.iterations},
                {"converged", r.estimate.converged}});
    std::cout << std::setprecision(10) << "theta_hat " << format_params(r.estimate.theta_hat) << "\nJ(eps_hat) "
              << r.estimate.objective_value << "\niterations " << r.estimate.iterations
              << (r.estimate.converged ? "" : " (not converged)") << "\n";
    return 0;
}

void write_report(OutputDir& out, const MCReport& rep, const std::string& prefix) {
    {
        auto f = out.open(prefix + "replicates.csv");
        write_mc_csv(f, rep);
    }
    {
        auto f = out.open(prefix + "mse.csv");
        write_mse_csv(f, rep);
    }
    {
        auto f = out.open(prefix + "summary.txt");
        write_mc_summary(f, rep);
    }
}

nlohmann::json report_json(const MCReport& rep) {
    return {{"mean", to_std(rep.mean)},
            {"mse", to_std(rep.mse)},
            {"included", rep.included},
            {"excluded", rep.excluded},
            {"invalid", rep.invalid()}};
}

int cmd_mc(const Overrides& o) {
    const RunConfig rc = resolve(o);
    OutputDir out(o.out, "mc", rc);
    const MCReport rep = run_mc(rc.experiment);
    write_report(out, rep, "");
    out.finish(report_json(rep));
    write_mc_summary(std::cout, rep);
    return rep.invalid() ? 4 : 0;
}

int cmd_sweep(const Overrides& o) {
    const RunConfig rc = resolve(o);
    OutputDir out(o.out, "sweep", rc);
    const auto pts = sensitivity_sweep(rc.experiment, rc.sweep_axis, rc.sweep_values);
    {
        auto f = out.open("sweep.csv");
        write_sweep_csv(f, rc.sweep_axis, pts);
    }
    bool invalid = false;
    nlohmann::json res = nlohmann::json::array();
    for (const auto& p : pts) {
        invalid = invalid || p.report.invalid();
        auto j = report_json(p.report);
        j["value"] = p.value;
        res.push_back(j);
    }
    out.finish(res);
    write_sweep_csv(std::cout, rc.sweep_axis, pts);
    return invalid ? 4 : 0;
}

int cmd_compare(const Overrides& o) {
    const RunConfig rc = resolve(o);
    OutputDir out(o.out, "compare", rc);
    const ComparisonReport cmp = compare_series(rc.experiment);
    {
        auto f = out.open("compare.csv");
        write_comparison_csv(f, cmp);
    }
    write_report(out, cmp.interpolation, "interp_");
    write_report(out, cmp.innovation, "innov_");
    out.finish({{"mse_interp", to_std(cmp.interpolation.mse)},
                {"mse_innov", to_std(cmp.innovation.mse)},
                {"ratio", to_std(cmp.mse_ratio)},
                {"paired", cmp.paired},
                {"interp_wins", cmp.interpolation_wins}});
    write_comparison_csv(std::cout, cmp);
    std::cout << "paired " << cmp.paired << ", interpolation closer in " << cmp.interpolation_wins << "\n";
    return cmp.interpolation.invalid() || cmp.innovation.invalid() ? 4 : 0;
}

int cmd_print_config(const Overrides& o) {
    std::cout << to_ini(resolve(o));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Filter misspecification: residual whiteness detection and bias estimation"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    Overrides o;
    int (*run)(const Overrides&) = nullptr;
    auto add = [&](const char* name, const char* help, int (*fn)(const Overrides&), bool with_out = true) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub, o, with_out);
        sub->callback([&run, fn] { run = fn; });
    };
    add("simulate", "simulate a trajectory at the true parameters", cmd_simulate);
    add("filter", "run the filter and write the step trace", cmd_filter);
    add("detect", "whiteness report of the residual autocorrelations", cmd_detect);
    add("estimate", "estimate the bias on one simulated trajectory", cmd_estimate);
    add("mc", "Monte Carlo study of the bias estimator", cmd_mc);
    add("sweep", "Monte Carlo study over a lag or sample-size grid", cmd_sweep);
    add("compare", "paired interpolation vs innovation comparison", cmd_compare);
    add("print-config", "print the resolved configuration with all defaults", cmd_print_config, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        return run(o);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
