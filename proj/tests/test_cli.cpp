#include <gtest/gtest.h>

#include "json.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string out;
};

CliRun run(const std::string& args) {
    const std::string cmd = std::string(MISSPEC_CLI_PATH) + " " + args + " 2>&1";
    CliRun r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("misspec_cli_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::string write(const std::string& name, const std::string& text) const {
        std::ofstream(dir_ / name) << text;
        return path(name);
    }

    fs::path dir_;
};

int count_lines(const std::string& s) {
    int n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

}  // namespace

TEST_F(Cli, SimulateWritesTrajectoryAndManifest) {
    const CliRun r = run("simulate --seed 7 --n 500 --out " + path("sim"));
    ASSERT_EQ(r.code, 0) << r.out;
    const std::string csv = slurp(dir_ / "sim" / "trajectory.csv");
    EXPECT_EQ(count_lines(csv), 501);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,x1,y1");
    const auto m = nlohmann::json::parse(slurp(dir_ / "sim" / "manifest.json"));
    EXPECT_EQ(m["subcommand"], "simulate");
    EXPECT_EQ(m["seed"], 7);
    EXPECT_FALSE(m["tool_version"].get<std::string>().empty());
    EXPECT_TRUE(fs::exists(dir_ / "sim" / "config.ini"));
}

TEST_F(Cli, ReplayFromManifestIsByteIdentical) {
    ASSERT_EQ(run("simulate --seed 3 --n 50 --out " + path("a")).code, 0);
    const auto m = nlohmann::json::parse(slurp(dir_ / "a" / "manifest.json"));
    std::string replay = m["replay"];
    ASSERT_EQ(replay.rfind("misspec ", 0), 0u);
    replay = replay.substr(8);
    replay = replay.substr(0, replay.find(" --out ")) + " --out " + path("b");
    ASSERT_EQ(run(replay).code, 0);
    EXPECT_EQ(slurp(dir_ / "a" / "trajectory.csv"), slurp(dir_ / "b" / "trajectory.csv"));
    EXPECT_EQ(slurp(dir_ / "a" / "trajectory.bin"), slurp(dir_ / "b" / "trajectory.bin"));
}

TEST_F(Cli, FellerViolationIsAConfigError) {
    const std::string cfg =
        write("bad.ini", "[experiment]\nfamily = heston\nN = 20\n[heston]\nkappa = 1\ngamma = 0.01\nbeta = 0.5\n");
    const CliRun r = run("simulate --config " + cfg + " --out " + path("o"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("Feller"), std::string::npos) << r.out;
}

TEST_F(Cli, ConfigErrorsExitTwo) {
    const std::string cfg = write("bad.ini", "[ar1]\ngamma = 0.9x\n");
    const CliRun r = run("print-config --config " + cfg);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.out.find("bad.ini:2: ar1.gamma"), std::string::npos) << r.out;
    EXPECT_EQ(run("detect --hstar 0 --out " + path("d")).code, 2);
    EXPECT_EQ(run("mc --objective sideways --out " + path("m")).code, 2);
    EXPECT_EQ(run("nonsense").code, 2);
    EXPECT_EQ(run("print-config --config " + path("missing.ini")).code, 2);
}

TEST_F(Cli, PrintConfigRoundTrips) {
    const CliRun a = run("print-config --seed 42 --hstar 5 --series innov");
    ASSERT_EQ(a.code, 0);
    EXPECT_NE(a.out.find("seed = 42"), std::string::npos);
    EXPECT_NE(a.out.find("h_star = 5"), std::string::npos);
    EXPECT_NE(a.out.find("series = innov"), std::string::npos);
    const CliRun b = run("print-config --config " + write("rt.ini", a.out));
    EXPECT_EQ(b.out, a.out);
}

TEST_F(Cli, DetectAndFilterOnSavedTrajectory) {
    ASSERT_EQ(run("simulate --seed 5 --n 200 --out " + path("sim")).code, 0);
    const std::string cfg = write("detect.ini", "[experiment]\nN = 200\ntrajectory = " + path("sim/trajectory.csv") +
                                                    "\n[filter]\ntheta = 0.8, 2.8\n");
    const CliRun d = run("detect --config " + cfg + " --hstar 3 --out " + path("det"));
    ASSERT_EQ(d.code, 0) << d.out;
    const std::string w = slurp(dir_ / "det" / "whiteness.csv");
    EXPECT_EQ(count_lines(w), 1 + 3);  // one row per lag
    const auto m = nlohmann::json::parse(slurp(dir_ / "det" / "manifest.json"));
    ASSERT_EQ(m["inputs"].size(), 1u);

    const CliRun f = run("filter --config " + cfg + " --out " + path("flt"));
    ASSERT_EQ(f.code, 0) << f.out;
    EXPECT_EQ(count_lines(slurp(dir_ / "flt" / "filter.csv")), 201);
}

TEST_F(Cli, EstimatePrintsThetaAndObjective) {
    const CliRun r = run("estimate --seed 2 --n 150 --out " + path("est"));
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("theta_hat"), std::string::npos);
    EXPECT_NE(r.out.find("J(eps_hat)"), std::string::npos);
    EXPECT_EQ(count_lines(slurp(dir_ / "est" / "estimate.csv")), 3);
}

TEST_F(Cli, McWritesConsistentMse) {
    const CliRun r = run("mc --mc 4 --n 100 --threads 2 --out " + path("mc"));
    ASSERT_EQ(r.code, 0) << r.out;
    std::ifstream rep(dir_ / "mc" / "replicates.csv");
    std::string line;
    std::getline(rep, line);
    double se[2] = {0.0, 0.0};
    int rows = 0;
    while (std::getline(rep, line)) {
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        ASSERT_GE(cells.size(), 6u);
        EXPECT_EQ(cells[1], "ok");
        se[0] += std::pow(std::stod(cells[4]) - 0.9, 2);
        se[1] += std::pow(std::stod(cells[5]) - 3.0, 2);
        ++rows;
    }
    EXPECT_EQ(rows, 4);
    std::ifstream mse(dir_ / "mc" / "mse.csv");
    std::getline(mse, line);
    for (int i = 0; i < 2; ++i) {
        std::getline(mse, line);
        const double v = std::stod(line.substr(line.rfind(',') + 1));
        EXPECT_NEAR(v, se[i] / 4.0, 1e-12 * std::max(1.0, v));
    }
}

TEST_F(Cli, CompareAndSweepOutputs) {
    const CliRun c = run("compare --mc 2 --n 80 --out " + path("cmp"));
    ASSERT_EQ(c.code, 0) << c.out;
    const std::string csv = slurp(dir_ / "cmp" / "compare.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "coordinate,theta0,mse_interp,mse_innov,ratio");
    EXPECT_EQ(count_lines(csv), 3);

    const std::string cfg = write("sw.ini", "[sweep]\naxis = lag\nvalues = 1, 2\n");
    const CliRun s = run("sweep --config " + cfg + " --mc 2 --n 80 --out " + path("sw"));
    ASSERT_EQ(s.code, 0) << s.out;
    EXPECT_EQ(count_lines(slurp(dir_ / "sw" / "sweep.csv")), 1 + 2 * 2);
}
