// racestrat command line: fit | race | verify | mesh
//
// Exit codes: 0 success, 1 I/O, 2 data, 3 solver, 4 verification.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "racestrat/racestrat.hpp"

namespace fs = std::filesystem;
using namespace racestrat;

namespace {

enum Exit { kOk = 0, kIo = 1, kData = 2, kSolver = 3, kVerify = 4 };

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot write '" + p.string() + "'");
    return f;
}

struct Overrides {
    std::optional<double> tol_feas, tol_opt, dt;
    std::optional<int> max_iter;

    void apply(ScenarioConfig& sc) const {
        if (tol_feas) sc.solver.tol_feas = *tol_feas;
        if (tol_opt) sc.solver.tol_opt = *tol_opt;
        if (max_iter) sc.solver.max_iter = *max_iter;
        if (dt) sc.verify_dt = *dt;
        sc.solver.validate();
        if (!(sc.verify_dt > 0.0)) throw DataError("--dt must be > 0");
    }
};

int cmd_fit(const std::string& data, const std::string& component, const std::string& out) {
    const auto fit = fit_parabola(read_measurements(data));
    if (out.empty()) {
        write_fit_report(std::cout, component, fit);
    } else {
        auto f = open_out(out);
        write_fit_report(f, component, fit);
        std::cout << "fit report written to " << out << "\n";
    }
    return kOk;
}

int cmd_race(const std::string& scenario, std::string out, const Overrides& ov, bool verify, bool quiet) {
    auto sc = load_scenario(scenario);
    ov.apply(sc);
    if (out.empty()) out = sc.output_dir.empty() ? ("out/" + sc.name) : sc.output_dir;
    const auto setup = prepare(sc);
    std::cout << "scenario " << sc.name << ": " << setup.mesh.num_nodes() << " mesh nodes, "
              << OcpProblem::variable_count(static_cast<int>(setup.mesh.num_intervals())) << " variables\n";

    auto opts = sc.solver;
    if (!quiet) opts.log = &std::cout;
    const auto r = run_race(setup, opts, verify);
    std::cout << "\n";

    fs::create_directories(out);
    const fs::path dir(out);
    if (r.solve.report.status != SolveStatus::Optimal) {
        std::cerr << "solver failed\n";
        write_report(std::cerr, r.solve.report);
        auto f = open_out(dir / "solver_report.txt");
        write_report(f, r.solve.report);
        return kSolver;
    }
    {
        auto f = open_out(dir / "scenario.ini");
        f << "# resolved copy of " << fs::absolute(scenario).lexically_normal().string() << "\n";
        write_scenario(f, sc);
    }
    {
        auto f = open_out(dir / "solution.csv");
        write_solution_csv(f, r.solution, setup.track, setup.hash);
    }
    {
        auto f = open_out(dir / "summary.txt");
        write_summary(f, setup, r);
    }
    write_summary(std::cout, setup, r);
    if (r.verified) {
        auto f = open_out(dir / "trace.csv");
        write_header(f, "trace", setup.hash);
        write_trace(f, r.trace);
        auto g = open_out(dir / "verify.txt");
        write_header(g, "verification", setup.hash);
        write_compare_report(g, r.verification);
    }
    std::cout << "outputs written to " << dir.string() << "\n";
    if (r.verified && !r.verification.pass) {
        std::cerr << "forward verification failed\n";
        write_compare_report(std::cerr, r.verification);
        return kVerify;
    }
    return kOk;
}

int cmd_verify(const std::string& dir_name, const Overrides& ov) {
    const fs::path dir(dir_name);
    auto sc = load_scenario((dir / "scenario.ini").string());
    const auto setup0 = prepare(sc);
    std::ifstream in(dir / "solution.csv");
    if (!in) throw IoError("cannot open '" + (dir / "solution.csv").string() + "'");
    const auto file = read_solution_csv(in, (dir / "solution.csv").string());
    if (file.config_hash != setup0.hash)
        throw DataError("solution.csv was produced by a different configuration (hash " + file.config_hash +
                        ", scenario gives " + setup0.hash + ")");
    ov.apply(sc);
    auto setup = setup0;
    setup.scenario = sc;
    SimTrace trace;
    const auto rep = verify_solution(setup, file.solution, &trace);
    write_compare_report(std::cout, rep);
    auto f = open_out(dir / "verify.txt");
    write_header(f, "verification", setup.hash);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", sc.verify_dt);
    f << "# dt_s: " << buf << "\n";
    write_compare_report(f, rep);
    return rep.pass ? kOk : kVerify;
}

int cmd_mesh(const std::string& scenario, const std::string& out) {
    const auto sc = load_scenario(scenario);
    const auto setup = prepare(sc);
    const auto& m = setup.mesh;
    auto emit = [&](std::ostream& os) {
        write_header(os, "mesh", setup.hash);
        const auto lap = generate_lap_mesh(setup.track, sc.mesh);
        os << "# lap_length_m: " << setup.track.lap_length << "\n";
        os << "# laps: " << setup.track.lap_count << "\n";
        os << "# nodes_per_lap: " << lap.size() << "\n";
        os << "# nodes: " << m.num_nodes() << "\n";
        os << "# nlp_variables: " << OcpProblem::variable_count(static_cast<int>(m.num_intervals())) << "\n";
        os << "# nlp_constraints: " << OcpProblem::constraint_count(static_cast<int>(m.num_intervals())) << "\n";
        os << "k,s_m,ds_m,kappa_1pm\n";
        char buf[96];
        for (std::size_t k = 0; k < m.num_nodes(); ++k) {
            std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.9f\n", k, m.s[k], k + 1 < m.num_nodes() ? m.step(k) : 0.0,
                          setup.track.kappa_at(m.s[k]));
            os << buf;
        }
    };
    if (out.empty()) {
        emit(std::cout);
    } else {
        auto f = open_out(out);
        emit(f);
        std::cout << m.num_nodes() << " nodes written to " << out << "\n";
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Minimum race-time strategies for an electric racecar"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    std::string data, component = "machine", out, scenario, dir;
    Overrides ov;
    bool no_verify = false, quiet = false;

    auto* fit = app.add_subcommand("fit", "Fit a quadratic loss model to measurements");
    fit->add_option("data", data, "Measurement CSV (p_out_w,p_in_w or p_out_kw,p_in_kw)")->required();
    fit->add_option("--component", component, "Component name for the report");
    fit->add_option("--out", out, "Report file (default: stdout)");

    auto add_overrides = [&](CLI::App* c) {
        c->add_option("--tol-feas", ov.tol_feas, "Primal feasibility tolerance");
        c->add_option("--tol-opt", ov.tol_opt, "Optimality tolerance");
        c->add_option("--max-iter", ov.max_iter, "Iteration limit");
        c->add_option("--dt", ov.dt, "Verification time step (s)");
    };
    auto* race = app.add_subcommand("race", "Solve a scenario and verify the result");
    race->add_option("--scenario", scenario, "Scenario INI file")->required();
    race->add_option("--out", out, "Output directory (default: from the scenario)");
    race->add_flag("--no-verify", no_verify, "Skip forward verification");
    race->add_flag("--quiet", quiet, "No iteration log");
    add_overrides(race);

    auto* verify = app.add_subcommand("verify", "Re-run forward verification of a solution directory");
    verify->add_option("dir", dir, "Directory written by 'race'")->required();
    verify->add_option("--dt", ov.dt, "Verification time step (s)");

    auto* mesh = app.add_subcommand("mesh", "Print the mesh of a scenario");
    mesh->add_option("--scenario", scenario, "Scenario INI file")->required();
    mesh->add_option("--out", out, "Mesh CSV (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kData;
    }

    try {
        if (*fit) return cmd_fit(data, component, out);
        if (*race) return cmd_race(scenario, out, ov, !no_verify, quiet);
        if (*verify) return cmd_verify(dir, ov);
        if (*mesh) return cmd_mesh(scenario, out);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return kSolver;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    }
    return kOk;
}
