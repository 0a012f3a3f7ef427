#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

const fs::path kData = RACESTRAT_DATA_DIR;
const std::string kCli = RACESTRAT_CLI;

fs::path work_dir() { return fs::temp_directory_path() / "racestrat_cli_test"; }

// Runs the CLI with stdout and stderr captured in files under the work dir.
int run(const std::string& args, std::string* err = nullptr) {
    const auto out = work_dir() / "stdout.txt", errf = work_dir() / "stderr.txt";
    const std::string cmd = "'" + kCli + "' " + args + " >'" + out.string() + "' 2>'" + errf.string() + "'";
    const int st = std::system(cmd.c_str());
    if (err) {
        std::ifstream in(errf);
        std::ostringstream ss;
        ss << in.rdbuf();
        *err = ss.str();
    }
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string scenario(const char* name) { return "'" + (kData / "scenarios" / name).string() + "'"; }

// Per-state max deviations and race-time deviation from a verification report.
std::map<std::string, double> deviations(const fs::path& report) {
    std::map<std::string, double> d;
    std::istringstream in(slurp(report));
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string name, a, b;
        if (line.rfind("race_time", 0) == 0) {
            const auto pos = line.find("rel. deviation ");
            d["race_time"] = std::stod(line.substr(pos + 15));
        } else if (ls >> name >> a >> b && a == "max" && b == "|dev|") {
            double v;
            ls >> v;
            d[name] = v;
        }
    }
    return d;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        fs::remove_all(work_dir());
        fs::create_directories(work_dir());
        race_exit_ = run("race --quiet --scenario " + scenario("oval_cold.ini") + " --out '" + cold().string() + "'");
    }
    static fs::path cold() { return work_dir() / "cold"; }
    static int race_exit_;
};

int Cli::race_exit_ = -1;

}  // namespace

TEST_F(Cli, FitBundledMachineData) {
    const auto report = work_dir() / "fit.txt";
    ASSERT_EQ(run("fit '" + (kData / "loss/machine.csv").string() + "' --component machine --out '" + report.string() + "'"), 0);
    const auto text = slurp(report);
    EXPECT_NE(text.find("component = machine"), std::string::npos);
    EXPECT_NE(text.find("nrmse_percent = 0.57878661"), std::string::npos);
}

TEST_F(Cli, FitLosslessData) {
    const auto data = work_dir() / "lossless.csv";
    std::ofstream(data) << "p_out_w,p_in_w\n-1000,-1000\n0,0\n2000,2000\n5000,5000\n";
    const auto report = work_dir() / "lossless.txt";
    ASSERT_EQ(run("fit '" + data.string() + "' --out '" + report.string() + "'"), 0);
    const auto text = slurp(report);
    EXPECT_NE(text.find("b_fit = 1\n"), std::string::npos) << text;
}

TEST_F(Cli, FitExitCodes) {
    std::string err;
    EXPECT_EQ(run("fit /nonexistent/machine.csv", &err), 1);
    EXPECT_NE(err.find("/nonexistent/machine.csv"), std::string::npos);
    const auto data = work_dir() / "degenerate.csv";
    std::ofstream(data) << "p_out_w,p_in_w\n1000,1100\n1000,1200\n1000,1150\n";
    EXPECT_EQ(run("fit '" + data.string() + "'"), 2);
    EXPECT_EQ(run("fit"), 2);
    EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, MeshOfBundledOval) {
    const auto out = work_dir() / "mesh.csv";
    ASSERT_EQ(run("mesh --scenario " + scenario("oval_cold.ini") + " --out '" + out.string() + "'"), 0);
    const auto text = slurp(out);
    EXPECT_NE(text.find("# nodes: 239\n"), std::string::npos);
    EXPECT_NE(text.find("# nodes_per_lap: 120\n"), std::string::npos);
    std::size_t rows = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#' && line[0] != 'k') ++rows;
    EXPECT_EQ(rows, 239u);
}

TEST_F(Cli, MissingScenarioIsIoError) { EXPECT_EQ(run("race --scenario /nonexistent/s.ini"), 1); }

TEST_F(Cli, RaceColdWritesOutputs) {
    ASSERT_EQ(race_exit_, 0);
    for (const char* f : {"scenario.ini", "solution.csv", "summary.txt", "trace.csv", "verify.txt"})
        EXPECT_TRUE(fs::exists(cold() / f)) << f;
    const auto summary = slurp(cold() / "summary.txt");
    EXPECT_NE(summary.find("solver_status = optimal"), std::string::npos) << summary;
    EXPECT_NE(summary.find("active_temperature_bounds = none"), std::string::npos);
    EXPECT_NE(summary.find("lap_2_s = "), std::string::npos);
    EXPECT_NE(slurp(cold() / "solution.csv").find("# config_hash: fnv1a64:"), std::string::npos);
}

TEST_F(Cli, RaceIsDeterministic) {
    ASSERT_EQ(race_exit_, 0);
    const auto again = work_dir() / "cold_again";
    ASSERT_EQ(run("race --quiet --no-verify --scenario " + scenario("oval_cold.ini") + " --out '" + again.string() + "'"), 0);
    EXPECT_EQ(slurp(again / "solution.csv"), slurp(cold() / "solution.csv"));
}

TEST_F(Cli, VerifyFreshSolution) {
    ASSERT_EQ(race_exit_, 0);
    EXPECT_EQ(run("verify '" + cold().string() + "'"), 0);
    EXPECT_NE(slurp(cold() / "verify.txt").find("result: pass"), std::string::npos);
}

TEST_F(Cli, VerifyDetectsTamperedSpeed) {
    ASSERT_EQ(race_exit_, 0);
    const auto dir = work_dir() / "tampered";
    fs::create_directories(dir);
    fs::copy_file(cold() / "scenario.ini", dir / "scenario.ini");
    std::istringstream in(slurp(cold() / "solution.csv"));
    std::ofstream out(dir / "solution.csv");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line[0] == 's') {
            out << line << "\n";
            continue;
        }
        const auto a = line.find(','), b = line.find(',', a + 1);
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", 1.01 * std::stod(line.substr(a + 1, b - a - 1)));
        out << line.substr(0, a + 1) << buf << line.substr(b) << "\n";
    }
    out.close();
    EXPECT_EQ(run("verify '" + dir.string() + "'"), 4);
    const auto text = slurp(dir / "verify.txt");
    EXPECT_NE(text.find("result: fail"), std::string::npos);
    EXPECT_GT(deviations(dir / "verify.txt").at("v"), 0.0);
}

TEST_F(Cli, VerifyRejectsForeignConfiguration) {
    ASSERT_EQ(race_exit_, 0);
    const auto dir = work_dir() / "foreign";
    fs::create_directories(dir);
    fs::copy_file(cold() / "solution.csv", dir / "solution.csv");
    std::string sc = slurp(cold() / "scenario.ini");
    sc.replace(sc.find("boundary = cold"), 15, "boundary = hot");
    std::ofstream(dir / "scenario.ini") << sc;
    EXPECT_EQ(run("verify '" + dir.string() + "'"), 2);
}

TEST_F(Cli, HalvingDtDoesNotIncreaseDeviations) {
    ASSERT_EQ(race_exit_, 0);
    const auto dir = work_dir() / "halved";
    fs::create_directories(dir);
    for (const char* f : {"scenario.ini", "solution.csv"}) fs::copy_file(cold() / f, dir / f);
    ASSERT_EQ(run("verify '" + dir.string() + "'"), 0);
    const auto coarse = deviations(dir / "verify.txt");
    ASSERT_EQ(run("verify '" + dir.string() + "' --dt 5e-4"), 0);
    const auto fine = deviations(dir / "verify.txt");
    ASSERT_EQ(coarse.size(), 11u);
    // the collocation error dominates both runs; allow 5 % for the O(dt) term
    // of control switches falling inside an integration step
    for (const auto& [k, v] : coarse) EXPECT_LE(fine.at(k), 1.05 * v + 1e-12) << k;
}

TEST_F(Cli, SolverFailureExitCode) {
    const auto dir = work_dir() / "maxiter";
    EXPECT_EQ(run("race --quiet --max-iter 3 --scenario " + scenario("oval_cold.ini") + " --out '" + dir.string() + "'"), 3);
    EXPECT_TRUE(fs::exists(dir / "solver_report.txt"));
}
