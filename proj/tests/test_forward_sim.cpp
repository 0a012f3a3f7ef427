#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "racestrat/forward_sim.hpp"

using namespace racestrat;

namespace {

TrackData arc_track(double length, double kappa, double half_width) {
    TrackData t;
    t.s_grid = {0.0, length};
    t.kappa = {kappa, kappa};
    t.n_left = {half_width, half_width};
    t.n_right = {-half_width, -half_width};
    t.lap_length = length;
    return t;
}

struct ArcRun {
    TrackData track = arc_track(300.0, 0.02, 30.0);
    OcpConfig cfg;
    ControlTrajectory ctl;
    OcpState x0;

    ArcRun() {
        cfg.boundary = BoundarySpec::hot();
        ctl.s = {0.0, 300.0};
        ctl.u = {ControlInput{3000.0, 0.0, 0.06, 0.0}};
        x0.vehicle = {25.0, 0.0, 0.5, 0.0, 0.0};
        x0.thermal = cfg.boundary.initial_temperature;
    }

    static ArcRun straight() {
        ArcRun r;
        r.track = arc_track(300.0, 0.0, 30.0);
        r.ctl.s = {0.0, 100.0, 200.0, 300.0};
        r.ctl.u = std::vector<ControlInput>(3, ControlInput{3000.0, 0.0, 0.0, 0.0});
        r.x0.vehicle = {25.0, 0.0, 0.0, 0.0, 0.0};
        return r;
    }

    SimTrace at(double dt) const {
        SimOptions o;
        o.dt = dt;
        return integrate(ctl, x0, track, cfg, o);
    }
};

double terminal_error(const SimTrace& a, const SimTrace& ref) {
    double e = std::abs(a.final_time - ref.final_time);
    const auto xa = a.node_x.back().to_array(), xr = ref.node_x.back().to_array();
    for (int i = 0; i < kNumStates; ++i) e = std::max(e, std::abs(xa[i] - xr[i]));
    return e;
}

Solution as_solution(const SimTrace& tr, const ControlTrajectory& ctl) {
    Solution s;
    s.s = tr.node_s;
    s.states = tr.node_x;
    s.controls = ctl.u;
    s.race_time = tr.final_time;
    return s;
}

}  // namespace

TEST(ForwardSim, FourthOrderConvergence) {
    const ArcRun r;
    const auto ref = r.at(0.05 / 64);
    ASSERT_TRUE(ref.completed) << ref.diagnostic;
    double prev = terminal_error(r.at(0.1), ref);
    for (double dt : {0.05, 0.025}) {
        const double e = terminal_error(r.at(dt), ref);
        const double ratio = prev / e;
        EXPECT_GE(ratio, 8.0) << dt;
        EXPECT_LE(ratio, 32.0) << dt;
        prev = e;
    }
}

TEST(ForwardSim, EnergyBalance) {
    auto r = ArcRun::straight();
    r.ctl.u = {ControlInput{6000.0, 0.0, 0.0, 0.0}, ControlInput{0.0, -3000.0, 0.0, 0.0},
               ControlInput{4000.0, 0.0, 0.0, 0.0}};
    r.cfg.powertrain.regen_share = 0.5;
    const auto tr = r.at(1e-3);
    ASSERT_TRUE(tr.completed) << tr.diagnostic;
    EXPECT_GT(tr.energy.battery_internal, 0.0);
    EXPECT_GT(tr.energy.loss_machines, 0.0);
    EXPECT_LT(tr.energy.balance_error(), 1e-6);
}

TEST(ForwardSim, NodesAreRecordedAtMeshPositions) {
    ArcRun r;
    r.ctl.s = {0.0, 75.0, 150.0, 300.0};
    r.ctl.u = std::vector<ControlInput>(3, r.ctl.u[0]);
    const auto tr = r.at(1e-3);
    ASSERT_TRUE(tr.completed);
    ASSERT_EQ(tr.node_s.size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(tr.node_s[k], r.ctl.s[k]);
    for (std::size_t k = 1; k < 4; ++k) EXPECT_GT(tr.node_t[k], tr.node_t[k - 1]);
    EXPECT_DOUBLE_EQ(tr.final_time, tr.node_t.back());
}

TEST(ForwardSim, SpinningOutTruncatesWithDiagnostic) {
    ArcRun r;
    r.track = arc_track(500.0, 0.0, 1000.0);
    r.ctl.s = {0.0, 500.0};
    r.ctl.u = {ControlInput{0.0, 0.0, 0.3, 0.0}};
    r.x0.vehicle = {20.0, 0.0, 0.0, 0.0, 0.0};
    const auto tr = r.at(1e-3);
    EXPECT_FALSE(tr.completed);
    EXPECT_FALSE(tr.diagnostic.empty());
    EXPECT_EQ(tr.node_s.size(), 1u);
}

TEST(ForwardSim, RejectsBadOptions) {
    const ArcRun r;
    SimOptions o;
    o.dt = 0.0;
    EXPECT_THROW(integrate(r.ctl, r.x0, r.track, r.cfg, o), DataError);
    ControlTrajectory bad{{0.0}, {}};
    EXPECT_THROW(integrate(bad, r.x0, r.track, r.cfg), DataError);
}

TEST(Compare, SelfComparisonIsExact) {
    ArcRun r;
    r.ctl.s = {0.0, 100.0, 200.0, 300.0};
    r.ctl.u = std::vector<ControlInput>(3, r.ctl.u[0]);
    const auto tr = r.at(1e-3);
    ASSERT_TRUE(tr.completed);
    const auto rep = compare(tr, as_solution(tr, r.ctl));
    EXPECT_TRUE(rep.pass);
    for (double d : rep.max_abs_dev) EXPECT_EQ(d, 0.0);
    EXPECT_EQ(rep.race_time_rel_dev, 0.0);
}

TEST(Compare, PerturbedDriveForceIsDetected) {
    auto r = ArcRun::straight();
    const auto base = r.at(1e-3);
    for (auto& u : r.ctl.u) u.f_d *= 1.01;
    const auto more = r.at(1e-3);
    ASSERT_TRUE(more.completed);
    const auto rep = compare(more, as_solution(base, r.ctl));
    EXPECT_GT(rep.max_abs_dev[0], 0.0);
    EXPECT_GT(rep.race_time_rel_dev, 0.0);
    EXPECT_LT(more.final_time, base.final_time);
}

TEST(Compare, HorizonMismatchThrows) {
    ArcRun r;
    const auto tr = r.at(1e-2);
    Solution s = as_solution(tr, r.ctl);
    s.s.back() = 250.0;
    EXPECT_THROW(compare(tr, s), DataError);
}

TEST(ControlTrajectory, ZeroOrderAndLinearHold) {
    ControlTrajectory c{{0.0, 10.0, 20.0}, {ControlInput{1000.0, 0.0, 0.0, 0.0}, ControlInput{3000.0, 0.0, 0.1, 0.0}}};
    EXPECT_DOUBLE_EQ(c.at(9.9).f_d, 1000.0);
    EXPECT_DOUBLE_EQ(c.at(10.0).f_d, 3000.0);
    EXPECT_DOUBLE_EQ(c.at(25.0).f_d, 3000.0);
    c.hold = ControlHold::Linear;
    EXPECT_DOUBLE_EQ(c.at(10.0).f_d, 2000.0);
    EXPECT_DOUBLE_EQ(c.at(2.0).f_d, 1000.0);
    EXPECT_DOUBLE_EQ(c.at(12.5).delta, 0.075);
}

TEST(PathTracking, NoCorrectionOnReference) {
    Solution s;
    s.s = {0.0, 10.0};
    OcpState a, b;
    a.vehicle = {30.0, 0.01, 0.1, 1.0, 0.02};
    b.vehicle = {31.0, 0.02, 0.2, 2.0, 0.04};
    s.states = {a, b};
    const auto p = PathTracking::following(s);
    EXPECT_NEAR(p.correction(5.0, VehicleState{30.5, 0.015, 0.15, 1.5, 0.03}), 0.0, 1e-15);
    EXPECT_GT(p.correction(5.0, VehicleState{30.5, 0.015, 0.15, 1.0, 0.03}), 0.0);
}

TEST(Trace, CsvHeader) {
    const ArcRun r;
    std::ostringstream os;
    write_trace(os, r.at(0.05));
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "t,s,v,beta,psidot,n,xi,T_M,T_I,T_B,T_F1,T_F2");
}
