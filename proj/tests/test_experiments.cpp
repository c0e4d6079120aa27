#include "misspec/config.hpp"
#include "misspec/experiments.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace misspec;

namespace {

ExperimentConfig small_ar1() {
    ExperimentConfig c;
    c.family = "ar1";
    c.N = 100;
    c.mc = 6;
    c.start = {0.8, 2.8};
    c.seed = 11;
    return c;
}

std::string mc_csv(const MCReport& r) {
    std::ostringstream os;
    write_mc_csv(os, r);
    return os.str();
}

ReplicateResult fake(std::uint64_t i, bool ok, double g, double a) {
    ReplicateResult r;
    r.replicate = i;
    r.ok = ok;
    r.estimate.theta_hat = {Vector{{g, a}}, {"gamma", "alpha"}};
    if (!ok) r.error = "numerical failure";
    return r;
}

}  // namespace

TEST(MonteCarlo, DeterministicAcrossRunsAndThreads) {
    ExperimentConfig c = small_ar1();
    const MCReport a = run_mc(c);
    const MCReport b = run_mc(c);
    c.threads = 3;
    const MCReport d = run_mc(c);
    EXPECT_EQ(mc_csv(a), mc_csv(b));
    EXPECT_EQ(mc_csv(a), mc_csv(d));
    EXPECT_EQ(a.included, 6);
    EXPECT_FALSE(a.invalid());
}

TEST(MonteCarlo, SingleReplicateMseIsSquaredError) {
    ExperimentConfig c = small_ar1();
    c.mc = 1;
    const MCReport r = run_mc(c);
    ASSERT_TRUE(r.replicates[0].ok);
    for (Index i = 0; i < 2; ++i) {
        const double d = r.replicates[0].estimate.theta_hat[i] - r.theta0[i];
        EXPECT_DOUBLE_EQ(r.mse[i], d * d);
        EXPECT_DOUBLE_EQ(r.mean[i], r.replicates[0].estimate.theta_hat[i]);
    }
}

TEST(MonteCarlo, ReplicateMatchesStandaloneRun) {
    const ExperimentConfig c = small_ar1();
    const MCReport r = run_mc(c);
    const ReplicateResult alone = run_replicate(c, 4);
    EXPECT_EQ(alone.estimate.theta_hat.values, r.replicates[4].estimate.theta_hat.values);
}

TEST(MonteCarlo, MseFromPerReplicateRows) {
    const MCReport r = run_mc(small_ar1());
    Vector mse = Vector::Zero(2);
    for (const auto& rep : r.replicates) mse += (rep.estimate.theta_hat.values - r.theta0.values).cwiseAbs2();
    mse /= 6.0;
    EXPECT_LE((mse - r.mse).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_TRUE((r.mse.array() >= 0.0).all());
}

TEST(MonteCarlo, ExclusionsAndInvalidFlag) {
    MCReport rep;
    rep.theta0 = {Vector{{0.9, 3.0}}, {"gamma", "alpha"}};
    for (std::uint64_t i = 0; i < 19; ++i) rep.replicates.push_back(fake(i, true, 0.9 + 0.01 * (i % 2), 3.0));
    rep.replicates.push_back(fake(19, false, 0.0, 0.0));
    aggregate(rep);
    EXPECT_EQ(rep.included, 19);
    EXPECT_EQ(rep.excluded, 1);
    EXPECT_NEAR(rep.mse[0], 9.0 / 19.0 * 1e-4, 1e-15);
    EXPECT_DOUBLE_EQ(rep.mse[1], 0.0);
    EXPECT_TRUE(rep.invalid());  // 1/20 = 5%

    rep.replicates.push_back(fake(20, true, 0.9, 3.0));
    aggregate(rep);
    EXPECT_FALSE(rep.invalid());

    MCReport none;
    none.theta0 = rep.theta0;
    none.replicates.push_back(fake(0, false, 0.0, 0.0));
    aggregate(none);
    EXPECT_TRUE(none.invalid());
    EXPECT_TRUE(std::isnan(none.mse[0]));
}

TEST(MonteCarlo, FailedReplicateIsRecordedNotThrown) {
    ExperimentConfig c;
    c.family = "sqrt";
    c.N = 50;
    c.mc = 1;
    c.start = {0.008, -5.0};  // α outside its range
    const ReplicateResult r = run_replicate(c, 0);
    EXPECT_FALSE(r.ok);
    EXPECT_FALSE(r.error.empty());
}

TEST(Sweep, SingletonEqualsPlainRun) {
    const ExperimentConfig c = small_ar1();
    const auto pts = sensitivity_sweep(c, SweepAxis::lag, {c.objective.h_star});
    ASSERT_EQ(pts.size(), 1u);
    EXPECT_EQ(mc_csv(pts[0].report), mc_csv(run_mc(c)));

    const auto byn = sensitivity_sweep(c, SweepAxis::sample_size, {60, 80});
    EXPECT_EQ(byn[1].report.config.N, 80);
    std::ostringstream os;
    write_sweep_csv(os, SweepAxis::sample_size, byn);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "N,coordinate,theta0,mean,mse,included,excluded");
    EXPECT_THROW(sensitivity_sweep(c, SweepAxis::lag, {}), ConfigError);
    EXPECT_EQ(parse_sweep_axis("n"), SweepAxis::sample_size);
    EXPECT_THROW(parse_sweep_axis("x"), ConfigError);
}

TEST(Comparison, SelfComparisonIsNeutral) {
    const MCReport r = run_mc(small_ar1());
    const ComparisonReport cmp = paired_comparison(r, r);
    for (Index i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(cmp.mse_ratio[i], 1.0);
    EXPECT_EQ(cmp.paired, 6);
    EXPECT_EQ(cmp.interpolation_wins, 0);
    std::ostringstream os;
    write_comparison_csv(os, cmp);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "coordinate,theta0,mse_interp,mse_innov,ratio");
}

TEST(Comparison, BothArmsSeeTheSameData) {
    ExperimentConfig c = small_ar1();
    c.mc = 3;
    const ComparisonReport cmp = compare_series(c);
    EXPECT_EQ(cmp.interpolation.config.objective.series_kind, SeriesKind::interpolation);
    EXPECT_EQ(cmp.innovation.config.objective.series_kind, SeriesKind::innovation);
    for (std::uint64_t r = 0; r < 3; ++r)
        EXPECT_EQ(make_dataset(cmp.interpolation.config, r).traj, make_dataset(cmp.innovation.config, r).traj);
}

TEST(Experiment, StartSelection) {
    ExperimentConfig c;
    EXPECT_EQ(start_theta(c).values, default_start("ar1").values);
    c.start = {0.7, 2.0};
    EXPECT_DOUBLE_EQ(start_theta(c)[0], 0.7);
    c.start = {0.7};
    EXPECT_THROW(start_theta(c), ConfigError);
    c = ExperimentConfig{};
    c.N = 3;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, RoundTripThroughIni) {
    RunConfig rc;
    rc.experiment.family = "heston";
    rc.experiment.N = 120;
    rc.experiment.mc = 7;
    rc.experiment.seed = 99;
    rc.experiment.start = {4.0, 0.025, 0.4, -0.5};
    rc.experiment.active = {"gamma"};
    rc.experiment.heston_setup.obs_sd = 0.01;
    rc.experiment.heston_setup.grid.strikes = {0.95, 1.05};
    rc.experiment.objective.h_star = 6;
    rc.experiment.objective.series_kind = SeriesKind::innovation;
    rc.experiment.init_jitter = 1e-4;
    rc.filter_theta = {4.1, 0.03, 0.4, -0.5};
    rc.sweep_axis = SweepAxis::sample_size;
    rc.sweep_values = {20, 40};
    const std::string text = to_ini(rc);
    const RunConfig back = parse_config(text);
    EXPECT_EQ(to_ini(back), text);
    EXPECT_EQ(back.experiment.active, rc.experiment.active);
    EXPECT_EQ(back.experiment.heston_setup.grid.strikes, rc.experiment.heston_setup.grid.strikes);
    EXPECT_DOUBLE_EQ(filter_theta(back)[0], 4.1);

    const RunConfig defaults;
    EXPECT_EQ(to_ini(parse_config(to_ini(defaults))), to_ini(defaults));
}

TEST(Config, DiagnosticsNameTheLine) {
    auto message = [](const std::string& text) {
        try {
            parse_config(text, "cfg.ini");
        } catch (const ConfigError& e) {
            EXPECT_EQ(e.exit_code(), 2);
            return std::string(e.what());
        }
        return std::string("no error");
    };
    EXPECT_EQ(message("[experiment]\nN = 100\n[ar1]\ngamma = abc\n"), "cfg.ini:4: ar1.gamma: expected a number, got 'abc'");
    EXPECT_NE(message("[experiment]\nbogus = 1\n").find("cfg.ini:2"), std::string::npos);
    EXPECT_NE(message("[objective]\nh_star = 0\n").find("h*"), std::string::npos);
    EXPECT_NE(message("[experiment]\nfamily = garch\n").find("garch"), std::string::npos);
}
