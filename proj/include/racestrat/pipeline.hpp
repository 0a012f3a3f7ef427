#pragma once

// Scenario -> transcription -> solve -> forward verification.

#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "racestrat/config.hpp"
#include "racestrat/forward_sim.hpp"
#include "racestrat/io.hpp"
#include "racestrat/nlp_solver.hpp"
#include "racestrat/ocp_core.hpp"
#include "racestrat/vehicle_track.hpp"

namespace racestrat {

/// Everything needed to build the NLP of one scenario.
struct RaceSetup {
    ScenarioConfig scenario;
    TrackData track;
    Mesh mesh;
    OcpConfig ocp;
    std::string hash;
};

inline RaceSetup prepare(const ScenarioConfig& sc) {
    RaceSetup r;
    r.scenario = sc;
    r.track = load_track(sc.track_path, sc.lap_count);
    r.mesh = generate_mesh(r.track, sc.mesh);
    std::string params_text;
    if (!sc.params_path.empty()) {
        const auto ps = load_parameters(sc.params_path);
        r.ocp.vehicle = ps.vehicle;
        r.ocp.powertrain = ps.powertrain;
        params_text = ps.text;
    }
    r.ocp.boundary = sc.boundary;
    r.ocp.enforce_temperature_limits = sc.enforce_temperature_limits;
    r.ocp.exclusivity_eps = sc.exclusivity_eps;
    r.ocp.force_regularization = sc.force_regularization;
    r.ocp.validate();
    std::ostringstream scenario_text, track_text;
    write_scenario(scenario_text, sc, false);
    write_track(track_text, r.track);
    r.hash = config_hash({scenario_text.str(), params_text, track_text.str()});
    return r;
}

struct RaceOutcome {
    SolveResult solve;
    Solution solution;
    std::vector<double> lap_times;
    double mean_p_sigma = 0.0;
    bool verified = false;
    SimTrace trace;
    CompareReport verification;
};

inline SimOptions verify_options(const RaceSetup& setup, const Solution& sol) {
    SimOptions so;
    so.dt = setup.scenario.verify_dt;
    if (setup.scenario.verify_tracking) so.tracking = PathTracking::following(sol);
    return so;
}

inline CompareReport verify_solution(const RaceSetup& setup, const Solution& sol, SimTrace* trace_out = nullptr,
                                     const CompareTolerances& tol = {}) {
    auto tr = integrate(ControlTrajectory::from_solution(sol), sol.states.front(), setup.track, setup.ocp,
                        verify_options(setup, sol));
    auto rep = compare(tr, sol, tol);
    if (trace_out) *trace_out = std::move(tr);
    return rep;
}

inline RaceOutcome run_race(const RaceSetup& setup, const SolverOptions& opts, bool verify = true) {
    OcpProblem problem(setup.track, setup.mesh, setup.ocp);
    RaceOutcome out;
    out.solve = InteriorPointSolver(opts).solve(problem, problem.initial_guess());
    out.solution = problem.extract_solution(out.solve.x);
    out.lap_times = lap_times(out.solution, setup.track);
    out.mean_p_sigma = mean_requested_power(out.solution, setup.track);
    if (verify && out.solve.report.status == SolveStatus::Optimal) {
        out.verification = verify_solution(setup, out.solution, &out.trace);
        out.verified = true;
    }
    return out;
}

inline void write_summary(std::ostream& os, const RaceSetup& setup, const RaceOutcome& r) {
    write_header(os, "summary", setup.hash);
    char buf[200];
    const auto& rep = r.solve.report;
    os << "scenario = " << setup.scenario.name << "\n";
    os << "boundary = " << setup.scenario.boundary_preset << "\n";
    os << "temperature_limits = " << (setup.ocp.enforce_temperature_limits ? "enforced" : "removed") << "\n";
    os << "laps = " << setup.track.lap_count << "\n";
    os << "mesh_nodes = " << setup.mesh.num_nodes() << "\n";
    os << "nlp_variables = " << OcpProblem::variable_count(static_cast<int>(setup.mesh.num_intervals())) << "\n";
    os << "nlp_constraints = " << OcpProblem::constraint_count(static_cast<int>(setup.mesh.num_intervals())) << "\n";
    os << "solver_status = " << to_string(rep.status) << "\n";
    os << "solver_iterations = " << rep.iterations << "\n";
    std::snprintf(buf, sizeof buf, "kkt_residuals = stationarity %.3e, primal %.3e, dual %.3e, complementarity %.3e\n",
                  rep.residuals.stationarity, rep.residuals.primal_infeasibility, rep.residuals.dual_infeasibility,
                  rep.residuals.complementarity);
    os << buf;
    std::snprintf(buf, sizeof buf, "race_time_s = %.6f\n", r.solution.race_time);
    os << buf;
    for (std::size_t l = 0; l < r.lap_times.size(); ++l) {
        std::snprintf(buf, sizeof buf, "lap_%zu_s = %.6f\n", l + 1, r.lap_times[l]);
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "mean_p_sigma_w = %.3f\n", r.mean_p_sigma);
    os << buf;
    const auto& a = r.solution.activity;
    const auto names = thermal_names();
    os << "active_temperature_bounds =";
    bool any = false;
    for (int c = 0; c < 5; ++c) {
        const auto& up = a.temperature_upper[static_cast<std::size_t>(c)];
        const auto& lo = a.temperature_lower[static_cast<std::size_t>(c)];
        if (!up.empty()) {
            os << " " << names[static_cast<std::size_t>(c)] << "_max[nodes " << up.front() << "-" << up.back() << "]";
            any = true;
        }
        if (!lo.empty()) {
            os << " " << names[static_cast<std::size_t>(c)] << "_min[nodes " << lo.front() << "-" << lo.back() << "]";
            any = true;
        }
    }
    os << (any ? "\n" : " none\n");
    os << "power_cap_active_intervals = " << a.power_cap_intervals.size() << "\n";
    if (r.verified) {
        const auto& v = r.verification;
        std::snprintf(buf, sizeof buf, "verify_race_time_s = %.6f\nverify_race_time_rel_dev = %.3e\n", v.race_time_sim,
                      v.race_time_rel_dev);
        os << buf;
        for (int i = 0; i < kNumStates; ++i) {
            std::snprintf(buf, sizeof buf, "verify_max_dev_%s = %.4e\n", state_names()[static_cast<std::size_t>(i)],
                          v.max_abs_dev[static_cast<std::size_t>(i)]);
            os << buf;
        }
        std::snprintf(buf, sizeof buf, "verify_max_steer_correction_rad = %.3e\n", r.trace.max_steer_correction);
        os << buf;
        os << "verify_result = " << (v.pass ? "pass" : "fail") << "\n";
    } else {
        os << "verify_result = skipped\n";
    }
}

}  // namespace racestrat
