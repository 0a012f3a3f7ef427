// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "racestrat/racestrat.hpp"

using namespace racestrat;

namespace {

using Clock = std::chrono::steady_clock;

const std::string kData = RACESTRAT_DATA_DIR;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool report(int id, bool ok, const std::string& detail) {
    std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    return ok;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

// 1 ------------------------------------------------------------------------

bool loss_round_trip() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    double worst_fit = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const double a = std::uniform_real_distribution<double>(1e-8, 1e-6)(rng);
        const double b = std::uniform_real_distribution<double>(0.9, 1.1)(rng);
        const double c = std::uniform_real_distribution<double>(50.0, 2000.0)(rng);
        MeasurementSet m;
        std::uniform_real_distribution<double> p(-150e3, 300e3);
        for (int i = 0; i < 50; ++i) {
            const double x = p(rng);
            m.samples.push_back({x, a * x * x + b * x + c});
        }
        const auto f = fit_parabola(m).fit;
        worst_fit = std::max({worst_fit, rel(f.a_fit, a), rel(f.b_fit, b), rel(f.c_fit, c)});
    }
    double worst_bat = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const BatteryCircuit bat{std::uniform_real_distribution<double>(300.0, 900.0)(rng),
                                 std::uniform_real_distribution<double>(0.01, 0.3)(rng)};
        const double pmax = bat.max_output_power();
        const double q = std::uniform_real_distribution<double>(-pmax, pmax)(rng);
        // current from R I^2 - U I + P = 0, internal power P + I^2 R
        const double cur = 2.0 * q / (bat.u_ocv + std::sqrt(bat.u_ocv * bat.u_ocv - 4.0 * q * bat.r_i));
        const double ref = q + cur * cur * bat.r_i;
        worst_bat = std::max(worst_bat, rel(battery_input_power(bat, q), ref));
    }
    const double t = seconds_since(t0);
    return report(1, worst_fit <= 1e-10 && worst_bat <= 1e-12 && t < 1.0,
                  fmt("fit rel err %.2e (<=1e-10), battery rel err %.2e (<=1e-12) over 1000 points, %.3f s (<1 s)",
                      worst_fit, worst_bat, t));
}

// 2 ------------------------------------------------------------------------

bool thermal_analytics() {
    const double eps = std::numeric_limits<double>::epsilon();
    const PowertrainParams pp;
    const auto& tp = pp.thermal;
    double worst = 0.0;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> temp(0.0, 120.0);
    for (int i = 0; i < 100; ++i) {
        const double t = temp(rng);
        ThermalState a{temp(rng), t, temp(rng), t, temp(rng)};
        worst = std::max(worst, std::abs(coolant_temp_after_inverters(a, tp) - t) / (eps * std::max(1.0, t)));
        ThermalState b{temp(rng), temp(rng), temp(rng), tp.t_env, temp(rng)};
        worst = std::max(worst, std::abs(coolant_temp_into_radiator(b, tp) - tp.t_env) / (eps * tp.t_env));
    }
    // stator path equal to the rotor path by choice of h_f
    MotorGeometry g = pp.motor;
    const double r2 = rotor_resistance(g);
    g.h_f = 1.0 / (2 * std::numbers::pi * g.r4 * g.length * (r2 - std::log(g.r4 / g.r3) / (2 * std::numbers::pi * g.length * g.k_iro)));
    const double r1 = stator_resistance(g);
    const double sym = std::max(std::abs(r1 - r2) / r2, std::abs(motor_resistance(g) - r1 / 2) / (r1 / 2)) / eps;
    worst = std::max(worst, sym);
    const double te = tp.t_env;
    const auto d = thermal_derivatives(ThermalState{te, te, te, te, te}, ComponentLosses{0, 0, 0}, tp, pp.motor);
    const double grad = std::abs(d.t_m) + std::abs(d.t_i) + std::abs(d.t_b) + std::abs(d.t_f1) + std::abs(d.t_f2);
    return report(2, worst <= 4.0 && grad == 0.0,
                  fmt("fixed points and R1=R2 symmetry within %.1f ulp (<=4), equilibrium gradient %.1e (==0)", worst,
                      grad));
}

// 3 ------------------------------------------------------------------------

// Groups of columns whose pattern rows are disjoint; perturbing a whole
// group at once still gives every Jacobian entry separately.
std::vector<std::vector<int>> column_groups(const SparsityPattern& jp, int n, int m) {
    std::vector<std::vector<int>> rows_of(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < jp.nnz(); ++i) rows_of[static_cast<std::size_t>(jp.cols[i])].push_back(jp.rows[i]);
    std::vector<std::vector<int>> groups;
    std::vector<std::vector<char>> used;
    for (int j = 0; j < n; ++j) {
        std::size_t g = 0;
        for (; g < groups.size(); ++g) {
            bool free = true;
            for (int r : rows_of[static_cast<std::size_t>(j)])
                if (used[g][static_cast<std::size_t>(r)]) {
                    free = false;
                    break;
                }
            if (free) break;
        }
        if (g == groups.size()) {
            groups.emplace_back();
            used.emplace_back(static_cast<std::size_t>(m), 0);
        }
        groups[g].push_back(j);
        for (int r : rows_of[static_cast<std::size_t>(j)]) used[g][static_cast<std::size_t>(r)] = 1;
    }
    return groups;
}

bool gradient_correctness(const RaceSetup& setup) {
    const auto t0 = Clock::now();
    const OcpProblem p(setup.track, setup.mesh, setup.ocp);
    const int n = p.num_variables(), m = p.num_constraints();
    const auto& jp = p.jacobian_pattern();
    const auto groups = column_groups(jp, n, m);
    std::vector<int> group_of(static_cast<std::size_t>(n));
    for (std::size_t g = 0; g < groups.size(); ++g)
        for (int j : groups[g]) group_of[static_cast<std::size_t>(j)] = static_cast<int>(g);

    std::vector<double> lo(static_cast<std::size_t>(n)), hi(lo.size());
    p.variable_bounds(lo, hi);
    const auto z0 = p.initial_guess();
    std::mt19937_64 rng(3);
    const double h = 1e-6, floor = 1e-3;
    double worst_j = 0.0, worst_g = 0.0;
    for (int point = 0; point < 20; ++point) {
        auto z = z0;
        std::uniform_real_distribution<double> d(-0.05, 0.05);
        for (std::size_t i = 0; i < z.size(); ++i) {
            z[i] += d(rng);
            if (std::isfinite(lo[i])) z[i] = std::max(z[i], lo[i] + 2 * h);
            if (std::isfinite(hi[i])) z[i] = std::min(z[i], hi[i] - 2 * h);
        }
        std::vector<double> jv(jp.nnz()), grad(static_cast<std::size_t>(n));
        p.jacobian_values(z, jv);
        p.objective_gradient(z, grad);
        // expected directional change per (group, row)
        std::vector<std::vector<double>> expect(groups.size(), std::vector<double>(static_cast<std::size_t>(m), 0.0));
        for (std::size_t i = 0; i < jp.nnz(); ++i)
            expect[static_cast<std::size_t>(group_of[static_cast<std::size_t>(jp.cols[i])])][static_cast<std::size_t>(jp.rows[i])] += jv[i];
        std::vector<double> cp(static_cast<std::size_t>(m)), cm(cp.size());
        for (std::size_t g = 0; g < groups.size(); ++g) {
            auto zp = z, zm = z;
            for (int j : groups[g]) {
                zp[static_cast<std::size_t>(j)] += h;
                zm[static_cast<std::size_t>(j)] -= h;
            }
            p.constraints(zp, cp);
            p.constraints(zm, cm);
            for (int r = 0; r < m; ++r) {
                const double fd = (cp[static_cast<std::size_t>(r)] - cm[static_cast<std::size_t>(r)]) / (2 * h);
                const double ad = expect[g][static_cast<std::size_t>(r)];
                worst_j = std::max(worst_j, std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor}));
            }
        }
        // the objective is a sum over intervals, so one column at a time
        auto zz = z;
        for (int j = 0; j < n; ++j) {
            const double zj = zz[static_cast<std::size_t>(j)];
            zz[static_cast<std::size_t>(j)] = zj + h;
            const double fp = p.objective(zz);
            zz[static_cast<std::size_t>(j)] = zj - h;
            const double fm = p.objective(zz);
            zz[static_cast<std::size_t>(j)] = zj;
            const double fd = (fp - fm) / (2 * h), ad = grad[static_cast<std::size_t>(j)];
            const double e = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), floor});
            worst_g = std::max(worst_g, e);
        }
    }
    const double t = seconds_since(t0);
    return report(3, worst_j <= 1e-5 && worst_g <= 1e-5 && t < 30.0,
                  fmt("oval NLP (%d vars, %d rows, %zu column groups), 20 points: Jacobian rel err %.2e, gradient rel "
                      "err %.2e (<=1e-5), %.1f s (<30 s)",
                      n, m, groups.size(), worst_j, worst_g, t));
}

// 4 - 6 --------------------------------------------------------------------

struct Solved {
    RaceSetup setup;
    RaceOutcome out;
    double seconds = 0.0;
    bool optimal() const { return out.solve.report.status == SolveStatus::Optimal; }
};

Solved solve(const std::string& scenario) {
    Solved s;
    const auto t0 = Clock::now();
    s.setup = prepare(load_scenario(kData + "/scenarios/" + scenario));
    s.out = run_race(s.setup, s.setup.scenario.solver, true);
    s.seconds = seconds_since(t0);
    return s;
}

bool oracle_equivalence(const Solved& cold) {
    const auto& v = cold.out.verification;
    const auto nodes = cold.setup.mesh.num_nodes();
    const CompareTolerances tol;
    std::string worst;
    double worst_frac = 0.0;
    for (int i = 0; i < kNumStates; ++i) {
        const double f = v.max_abs_dev[i] / tol.state[i];
        if (f > worst_frac) {
            worst_frac = f;
            worst = state_names()[i];
        }
    }
    const bool ok = cold.optimal() && cold.out.verified && v.pass && v.race_time_rel_dev <= 5e-3 && nodes <= 250 &&
                    cold.setup.track.lap_count == 2 && cold.seconds < 300.0;
    return report(4, ok,
                  fmt("cold oval, %zu nodes, 2 laps: race time %.6f s vs simulated %.6f s (rel %.2e <= 5e-3), "
                      "largest state deviation %.0f%% of tolerance (%s), solve+verify %.1f s (<300 s)",
                      nodes, cold.out.solution.race_time, v.race_time_sim, v.race_time_rel_dev, 100 * worst_frac,
                      worst.c_str(), cold.seconds));
}

bool hot_versus_cold(const Solved& cold, const Solved& hot) {
    const auto& ac = cold.out.solution.activity;
    const auto& ah = hot.out.solution.activity;
    const int last = static_cast<int>(hot.out.solution.num_nodes()) - 1;
    const auto& tb_hot = ah.temperature_upper[2];
    const bool a = hot.out.solution.race_time > cold.out.solution.race_time;
    const bool b = std::find(tb_hot.begin(), tb_hot.end(), last) != tb_hot.end() && ac.temperature_upper[2].empty();
    const bool c = hot.out.mean_p_sigma < cold.out.mean_p_sigma;
    const auto runs = straight_runs(cold.setup.track, cold.setup.mesh, true);
    int capped = 0;
    for (const auto& run : runs)
        if (std::any_of(ac.power_cap_intervals.begin(), ac.power_cap_intervals.end(),
                        [&](int k) { return run_contains(run, k); }))
            ++capped;
    const bool d = !runs.empty() && capped == static_cast<int>(runs.size());
    return report(5, cold.optimal() && hot.optimal() && a && b && c && d,
                  fmt("(a) hot %.6f s > cold %.6f s: %s; (b) T_B max active at final node (hot): %s, inactive (cold): "
                      "%s; (c) mean P_sigma hot %.0f W < cold %.0f W: %s; (d) power cap active on %d of %zu straights",
                      hot.out.solution.race_time, cold.out.solution.race_time, a ? "yes" : "no",
                      std::find(tb_hot.begin(), tb_hot.end(), last) != tb_hot.end() ? "yes" : "no",
                      ac.temperature_upper[2].empty() ? "yes" : "no", hot.out.mean_p_sigma, cold.out.mean_p_sigma,
                      c ? "yes" : "no", capped, runs.size()));
}

bool relaxation(const Solved& cold, const Solved& hot, const Solved& free) {
    const double tc = cold.out.solution.race_time, th = hot.out.solution.race_time, tf = free.out.solution.race_time;
    const bool cold_inactive = !cold.out.solution.activity.any_temperature_active();
    const double d = std::abs(tf - tc) / tc;
    const double tol = 1e-4;
    const bool ok = free.optimal() && tf <= th && cold_inactive && d <= tol;
    return report(6, ok,
                  fmt("unconstrained %.6f s <= hot %.6f s; cold bounds inactive: %s; |unconstrained - cold| rel %.2e "
                      "(<=%.0e)",
                      tf, th, cold_inactive ? "yes" : "no", d, tol));
}

// 7 ------------------------------------------------------------------------

bool mesh_rule() {
    const auto track = load_track(kData + "/oval_track.csv", 2);
    const auto a = generate_mesh(track);
    const auto b = generate_mesh(track);
    const std::size_t lap = generate_lap_mesh(track, MeshOptions{}).size();
    const bool ok = a.num_nodes() == 239 && lap == 120 && a.s == b.s && a.s[119] == 600.0 && a.s.back() == 1200.0;
    return report(7, ok,
                  fmt("3 m / 9 m defaults: %zu nodes (pinned 239), %zu per lap (pinned 120), repeated generation "
                      "identical: %s",
                      a.num_nodes(), lap, a.s == b.s ? "yes" : "no"));
}

// 8 ------------------------------------------------------------------------

bool integrator_order() {
    TrackData t;
    t.s_grid = {0.0, 300.0};
    t.kappa = {0.02, 0.02};
    t.n_left = {30.0, 30.0};
    t.n_right = {-30.0, -30.0};
    t.lap_length = 300.0;
    OcpConfig cfg;
    cfg.boundary = BoundarySpec::hot();
    OcpState x0;
    x0.vehicle = {25.0, 0.0, 0.5, 0.0, 0.0};
    x0.thermal = cfg.boundary.initial_temperature;
    ControlTrajectory c{{0.0, 300.0}, {ControlInput{3000.0, 0.0, 0.06, 0.0}}};
    auto run = [&](double dt) {
        SimOptions o;
        o.dt = dt;
        return integrate(c, x0, t, cfg, o);
    };
    const auto ref = run(0.05 / 64);
    auto err = [&](const SimTrace& tr) {
        double e = std::abs(tr.final_time - ref.final_time);
        const auto a = tr.node_x.back().to_array(), b = ref.node_x.back().to_array();
        for (int i = 0; i < kNumStates; ++i) e = std::max(e, std::abs(a[i] - b[i]));
        return e;
    };
    std::vector<double> ratios;
    double prev = err(run(0.1));
    bool ok = ref.completed;
    for (double dt : {0.05, 0.025, 0.0125}) {
        const double e = err(run(dt));
        ratios.push_back(prev / e);
        ok = ok && prev / e >= 8.0 && prev / e <= 32.0;
        prev = e;
    }
    return report(8, ok,
                  fmt("terminal error ratios under dt halving (0.1 s -> 0.0125 s): %.1f, %.1f, %.1f (16 within factor 2)",
                      ratios[0], ratios[1], ratios[2]));
}

}  // namespace

int main() {
    int failed = 0;
    auto run = [&](const std::function<bool()>& f) {
        try {
            if (!f()) ++failed;
        } catch (const std::exception& e) {
            std::printf("  error: %s\n", e.what());
            ++failed;
        }
    };
    run(loss_round_trip);
    run(thermal_analytics);
    run([] { return gradient_correctness(prepare(load_scenario(kData + "/scenarios/oval_cold.ini"))); });
    const auto cold = solve("oval_cold.ini");
    const auto hot = solve("oval_hot.ini");
    const auto free = solve("oval_hot_free.ini");
    run([&] { return oracle_equivalence(cold); });
    run([&] { return hot_versus_cold(cold, hot); });
    run([&] { return relaxation(cold, hot, free); });
    run(mesh_rule);
    run(integrator_order);
    std::printf("%d of 8 criteria passed\n", 8 - failed);
    return failed == 0 ? 0 : 1;
}
