#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "racestrat/ocp_core.hpp"

using namespace racestrat;

namespace {

TrackData toy_track() {
    TrackData t;
    t.s_grid = {0.0, 20.0};
    t.kappa = {0.01, 0.01};
    t.n_left = {5.0, 5.0};
    t.n_right = {-5.0, -5.0};
    t.lap_length = 20.0;
    return t;
}

OcpProblem toy_problem() {
    Mesh m;
    m.s = {0.0, 10.0, 20.0};
    return OcpProblem(toy_track(), m, OcpConfig{});
}

OcpProblem oval_problem(int laps) {
    auto t = load_track(std::string(RACESTRAT_DATA_DIR) + "/oval_track.csv", laps);
    auto m = generate_mesh(t);
    return OcpProblem(t, m, OcpConfig{});
}

// Random point near the initial guess, strictly inside the variable bounds.
std::vector<double> random_point(const OcpProblem& p, std::mt19937_64& rng) {
    auto z = p.initial_guess();
    std::vector<double> lo(z.size()), hi(z.size());
    p.variable_bounds(lo, hi);
    std::uniform_real_distribution<double> d(-0.05, 0.05);
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] += d(rng);
        const double l = std::isfinite(lo[i]) ? lo[i] + 1e-3 : -1e300;
        const double h = std::isfinite(hi[i]) ? hi[i] - 1e-3 : 1e300;
        z[i] = std::clamp(z[i], l, h);
    }
    return z;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0}); }

}  // namespace

TEST(OcpLayout, ToyCounts) {
    const auto p = toy_problem();
    EXPECT_EQ(p.num_variables(), 3 * 10 + 2 * 4);
    EXPECT_EQ(p.num_constraints(), 2 * 20 + 10);
    std::vector<double> lo(static_cast<std::size_t>(p.num_constraints())), hi(lo.size());
    p.constraint_bounds(lo, hi);
    int defects = 0;
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < kNumStates; ++i) defects += lo[static_cast<std::size_t>(20 * k + i)] == 0.0 && hi[static_cast<std::size_t>(20 * k + i)] == 0.0;
    EXPECT_EQ(defects, 20);
}

TEST(OcpLayout, BundledOvalCounts) {
    const auto p = oval_problem(2);
    EXPECT_EQ(p.num_intervals(), 238);
    EXPECT_EQ(p.num_variables(), 14 * 238 + 10);
    EXPECT_EQ(p.num_constraints(), 20 * 238 + 10);
}

TEST(OcpLayout, PackUnpackRoundTrip) {
    const auto p = toy_problem();
    std::mt19937_64 rng(3);
    const auto z = random_point(p, rng);
    std::vector<OcpState> x;
    std::vector<ControlInput> u;
    p.unpack(z, x, u);
    const auto z2 = p.pack(x, u);
    ASSERT_EQ(z.size(), z2.size());
    for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], z2[i], 1e-15 * std::max(1.0, std::abs(z[i])));
    EXPECT_THROW(p.unpack(std::vector<double>(5), x, u), DataError);
}

TEST(OcpLayout, JacobianPatternOfToyProblem) {
    const auto p = toy_problem();
    const auto& jp = p.jacobian_pattern();
    std::set<std::pair<int, int>> nz;
    for (std::size_t i = 0; i < jp.nnz(); ++i) nz.insert({jp.rows[i], jp.cols[i]});
    EXPECT_EQ(nz.size(), jp.nnz());
    // interval k touches x_k, u_k and x_{k+1}: columns [14k, 14k+24)
    for (std::size_t i = 0; i < jp.nnz(); ++i) {
        const int r = jp.rows[i], c = jp.cols[i];
        if (r < 40) {
            const int k = r / 20;
            EXPECT_GE(c, 14 * k);
            EXPECT_LT(c, 14 * k + 24);
        }
    }
    // defect rows depend on their own state at both ends
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < kNumStates; ++i) {
            EXPECT_TRUE(nz.count({20 * k + i, OcpProblem::state_index(k, i)}));
            EXPECT_TRUE(nz.count({20 * k + i, OcpProblem::state_index(k + 1, i)}));
        }
    // the pattern is dense per interval block; entries without a dependency
    // evaluate to exact zeros, e.g. the heading defect on the thermal states
    std::mt19937_64 rng(9);
    const auto z = random_point(p, rng);
    std::vector<double> jv(jp.nnz());
    p.jacobian_values(z, jv);
    for (std::size_t i = 0; i < jp.nnz(); ++i)
        if (jp.rows[i] % 20 == 4 && jp.rows[i] < 40 && jp.cols[i] % 14 >= 5 && jp.cols[i] % 14 < 10)
            EXPECT_EQ(jv[i], 0.0) << jp.rows[i] << "," << jp.cols[i];
}

TEST(OcpDerivatives, ToyJacobianAndGradientMatchFiniteDifferences) {
    const auto p = toy_problem();
    std::mt19937_64 rng(11);
    const int n = p.num_variables(), m = p.num_constraints();
    const auto& jp = p.jacobian_pattern();
    for (int trial = 0; trial < 5; ++trial) {
        auto z = random_point(p, rng);
        std::vector<double> jv(jp.nnz()), g(static_cast<std::size_t>(n));
        p.jacobian_values(z, jv);
        p.objective_gradient(z, g);
        std::vector<double> dense(static_cast<std::size_t>(n * m), 0.0);
        for (std::size_t i = 0; i < jp.nnz(); ++i) dense[static_cast<std::size_t>(jp.rows[i] * n + jp.cols[i])] += jv[i];
        std::vector<double> cp(static_cast<std::size_t>(m)), cm(cp.size());
        const double h = 1e-6;
        for (int j = 0; j < n; ++j) {
            const double zj = z[static_cast<std::size_t>(j)];
            z[static_cast<std::size_t>(j)] = zj + h;
            p.constraints(z, cp);
            const double fp = p.objective(z);
            z[static_cast<std::size_t>(j)] = zj - h;
            p.constraints(z, cm);
            const double fm = p.objective(z);
            z[static_cast<std::size_t>(j)] = zj;
            EXPECT_LT(rel_err(g[static_cast<std::size_t>(j)], (fp - fm) / (2 * h)), 1e-6) << "gradient " << j;
            for (int r = 0; r < m; ++r) {
                const double fd = (cp[static_cast<std::size_t>(r)] - cm[static_cast<std::size_t>(r)]) / (2 * h);
                EXPECT_LT(rel_err(dense[static_cast<std::size_t>(r * n + j)], fd), 1e-5) << "row " << r << " col " << j;
            }
        }
    }
}

TEST(OcpDerivatives, HessianMatchesFiniteDifferenceOfLagrangianGradient) {
    const auto p = toy_problem();
    std::mt19937_64 rng(5);
    const int n = p.num_variables(), m = p.num_constraints();
    auto z = random_point(p, rng);
    std::vector<double> lambda(static_cast<std::size_t>(m));
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (auto& l : lambda) l = d(rng);
    const auto& jp = p.jacobian_pattern();
    const auto& hp = p.hessian_pattern();
    std::vector<double> hv(hp.nnz());
    p.hessian_values(z, 0.7, lambda, hv);
    std::vector<double> dense(static_cast<std::size_t>(n * n), 0.0);
    for (std::size_t i = 0; i < hp.nnz(); ++i) {
        dense[static_cast<std::size_t>(hp.rows[i] * n + hp.cols[i])] += hv[i];
        if (hp.rows[i] != hp.cols[i]) dense[static_cast<std::size_t>(hp.cols[i] * n + hp.rows[i])] += hv[i];
    }
    auto lag_grad = [&](const std::vector<double>& zz) {
        std::vector<double> g(static_cast<std::size_t>(n)), jv(jp.nnz());
        p.objective_gradient(zz, g);
        for (auto& x : g) x *= 0.7;
        p.jacobian_values(zz, jv);
        for (std::size_t i = 0; i < jp.nnz(); ++i)
            g[static_cast<std::size_t>(jp.cols[i])] += lambda[static_cast<std::size_t>(jp.rows[i])] * jv[i];
        return g;
    };
    const double h = 1e-6;
    for (int j = 0; j < n; ++j) {
        auto zp = z, zm = z;
        zp[static_cast<std::size_t>(j)] += h;
        zm[static_cast<std::size_t>(j)] -= h;
        const auto gp = lag_grad(zp), gm = lag_grad(zm);
        for (int i = 0; i < n; ++i) {
            const double fd = (gp[static_cast<std::size_t>(i)] - gm[static_cast<std::size_t>(i)]) / (2 * h);
            EXPECT_LT(rel_err(dense[static_cast<std::size_t>(i * n + j)], fd), 1e-5) << i << "," << j;
        }
    }
}

TEST(OcpDerivatives, OvalObjectiveGradient) {
    const auto p = oval_problem(1);
    std::mt19937_64 rng(2);
    auto z = random_point(p, rng);
    std::vector<double> g(z.size());
    p.objective_gradient(z, g);
    const double h = 1e-6;
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double zj = z[j];
        z[j] = zj + h;
        const double fp = p.objective(z);
        z[j] = zj - h;
        const double fm = p.objective(z);
        z[j] = zj;
        EXPECT_LT(rel_err(g[j], (fp - fm) / (2 * h)), 1e-6) << j;
    }
}

TEST(OcpConfig, InitialTemperatureOutsideBoxIsRejected) {
    OcpConfig cfg;
    cfg.boundary.initial_temperature.t_b = 55.0;
    EXPECT_THROW(cfg.validate(), DataError);
    cfg.enforce_temperature_limits = false;
    EXPECT_NO_THROW(cfg.validate());
}

TEST(OcpConfig, MeshMustSpanHorizon) {
    Mesh m;
    m.s = {0.0, 10.0};
    EXPECT_THROW(OcpProblem(toy_track(), m, OcpConfig{}), DataError);
}

TEST(OcpSolution, ExtractReportsQuadratureTime) {
    const auto p = toy_problem();
    const auto z = p.initial_guess();
    const auto sol = p.extract_solution(z);
    ASSERT_EQ(sol.num_nodes(), 3u);
    ASSERT_EQ(sol.num_intervals(), 2u);
    double t = 0.0;
    for (std::size_t k = 0; k < 2; ++k)
        t += 0.5 * 10.0 * (lethargy(sol.states[k].vehicle, 0.01) + lethargy(sol.states[k + 1].vehicle, 0.01));
    EXPECT_NEAR(sol.race_time, t, 1e-14);
    EXPECT_NEAR(sol.states[0].thermal.t_b, 30.0, 1e-12);
}

TEST(StraightRuns, BundledOvalHasTwoStraightsPerLap) {
    const auto t = load_track(std::string(RACESTRAT_DATA_DIR) + "/oval_track.csv", 2);
    const auto m = generate_mesh(t);
    // cyclic: the start/finish straight of lap 2 joins the first straight of lap 1
    const auto cyc = straight_runs(t, m, true);
    EXPECT_EQ(cyc.size(), 4u);
    EXPECT_GT(cyc.front().first, cyc.front().second);
    EXPECT_EQ(straight_runs(t, m, false).size(), 5u);
    EXPECT_TRUE(run_contains(cyc.front(), 0));
    EXPECT_TRUE(run_contains(cyc.front(), static_cast<int>(m.num_intervals()) - 1));
}

TEST(PowerChain, SmoothAndExactAgreeInsideTheFeasibleRegion) {
    const PowertrainParams pp;
    const VehicleState x{50.0, 0.0, 0.0, 0.0, 0.0};
    const ControlInput u{5000.0, 0.0, 0.0, 0.0};
    const auto a = power_chain(u, x, pp);
    const auto b = power_chain_smooth(u, x, pp);
    EXPECT_NEAR(a.p_battery_in, b.p_battery_in, 1e-6);
    EXPECT_THROW(power_chain(ControlInput{10000.0, 0.0, 0.0, 0.0}, VehicleState{100.0, 0, 0, 0, 0}, pp),
                 InfeasiblePowerError);
}
