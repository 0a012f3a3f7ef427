#pragma once

// Time-domain forward integration of the coupled vehicle/powertrain model
// under a given control trajectory, used to check collocation solutions
// with an independent discretization.

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "racestrat/errors.hpp"
#include "racestrat/ocp_core.hpp"
#include "racestrat/vehicle_track.hpp"

namespace racestrat {

enum class ControlHold {
    ZeroOrder,  ///< u_k on [s_k, s_{k+1}), as in the transcription
    Linear,     ///< linear between interval midpoints
};

/// Controls over arc length: `s` are mesh nodes, `u[k]` acts on [s[k], s[k+1]).
struct ControlTrajectory {
    std::vector<double> s;
    std::vector<ControlInput> u;
    ControlHold hold = ControlHold::ZeroOrder;

    static ControlTrajectory from_solution(const Solution& sol, ControlHold hold = ControlHold::ZeroOrder) {
        return {sol.s, sol.controls, hold};
    }

    void validate() const {
        if (s.size() < 2 || u.size() + 1 != s.size())
            throw DataError("controls: need one control per interval of at least two nodes");
        for (std::size_t k = 0; k + 1 < s.size(); ++k)
            if (!(s[k + 1] > s[k])) throw DataError("controls: nodes must be strictly increasing");
    }

    double horizon() const { return s.back(); }

    ControlInput at(double pos) const {
        const auto it = std::upper_bound(s.begin(), s.end(), pos);
        std::size_t k = it == s.begin() ? 0 : static_cast<std::size_t>(it - s.begin()) - 1;
        k = std::min(k, u.size() - 1);
        if (hold == ControlHold::ZeroOrder) return u[k];

        const double mid = 0.5 * (s[k] + s[k + 1]);
        std::size_t a = k, b = k;
        if (pos < mid && k > 0) a = k - 1;
        if (pos >= mid && k + 1 < u.size()) b = k + 1;
        if (a == b) return u[k];
        const double ma = 0.5 * (s[a] + s[a + 1]), mb = 0.5 * (s[b] + s[b + 1]);
        const double w = (pos - ma) / (mb - ma);
        auto lerp = [w](double p, double q) { return p + w * (q - p); };
        return {lerp(u[a].f_d, u[b].f_d), lerp(u[a].f_b, u[b].f_b), lerp(u[a].delta, u[b].delta),
                lerp(u[a].gamma, u[b].gamma)};
    }
};

/// Energies integrated along the run (J). Machine and inverter entries cover
/// both units.
struct EnergyAccount {
    double battery_internal = 0.0;  ///< integral of P_in,B
    double wheel = 0.0;             ///< mechanical energy delivered by the machines
    double loss_machines = 0.0;
    double loss_inverters = 0.0;
    double loss_battery = 0.0;
    double auxiliary = 0.0;

    /// battery_internal - (wheel + losses + auxiliary), relative to the largest term.
    double balance_error() const {
        const double rhs = wheel + loss_machines + loss_inverters + loss_battery + auxiliary;
        const double scale = std::max({std::abs(battery_internal), std::abs(rhs), 1.0});
        return std::abs(battery_internal - rhs) / scale;
    }
};

struct SimSample {
    double t = 0.0;
    double s = 0.0;
    OcpState x;
};

/// Steering correction that keeps the simulated car on the reference path
/// of a solution: delta = delta_ref + k_n e_n + k_course e_course + k_yaw e_yaw,
/// with errors taken as reference minus simulated state at the current s.
struct PathTracking {
    bool enabled = false;
    double k_n = 0.002;      ///< rad/m
    double k_course = 0.2;   ///< rad/rad, course angle xi + beta
    double k_yaw = 0.01;     ///< rad/(rad/s)
    std::vector<double> s;
    std::vector<VehicleState> reference;

    static PathTracking following(const Solution& sol) {
        PathTracking p;
        p.enabled = true;
        p.s = sol.s;
        for (const auto& x : sol.states) p.reference.push_back(x.vehicle);
        return p;
    }

    double correction(double pos, const VehicleState& x) const {
        if (!enabled) return 0.0;
        const auto it = std::upper_bound(s.begin(), s.end(), pos);
        std::size_t k = it == s.begin() ? 0 : static_cast<std::size_t>(it - s.begin()) - 1;
        k = std::min(k, s.size() - 2);
        const double w = std::clamp((pos - s[k]) / (s[k + 1] - s[k]), 0.0, 1.0);
        const auto& a = reference[k];
        const auto& b = reference[k + 1];
        auto lerp = [w](double p, double q) { return p + w * (q - p); };
        const double e_n = lerp(a.n, b.n) - x.n;
        const double e_c = lerp(a.xi + a.beta, b.xi + b.beta) - (x.xi + x.beta);
        const double e_r = lerp(a.psi_dot, b.psi_dot) - x.psi_dot;
        return k_n * e_n + k_course * e_c + k_yaw * e_r;
    }
};

struct SimOptions {
    double dt = 1e-3;         ///< s
    int record_every = 100;   ///< keep every n-th step in SimTrace::samples
    double max_time = 3600.0; ///< s
    PathTracking tracking;

    void validate() const {
        if (!(dt > 0.0) || !std::isfinite(dt)) throw DataError("simulation: dt must be > 0");
        if (record_every < 1) throw DataError("simulation: record_every must be >= 1");
        if (!(max_time > 0.0)) throw DataError("simulation: max_time must be > 0");
        if (tracking.enabled && (tracking.s.size() < 2 || tracking.s.size() != tracking.reference.size()))
            throw DataError("simulation: path tracking needs a reference with at least two nodes");
    }
};

struct SimTrace {
    std::vector<SimSample> samples;      ///< decimated trajectory, always including start and end
    std::vector<double> node_s;          ///< mesh positions reached so far
    std::vector<double> node_t;          ///< crossing times of node_s
    std::vector<OcpState> node_x;        ///< states at node_s
    EnergyAccount energy;
    double final_time = 0.0;             ///< time at which s reached the horizon (if completed)
    bool completed = false;
    std::string diagnostic;              ///< reason for truncation
    double max_steer_correction = 0.0;   ///< largest |delta - delta_ref| applied by PathTracking (rad)
};

namespace detail {

// y = (10 states, s, 6 energy integrals)
inline constexpr int kSimDim = kNumStates + 1 + 6;
using SimVec = std::array<double, kSimDim>;

inline SimVec sim_rhs(const SimVec& y, const ControlTrajectory& ctl, const PathTracking& trk, const TrackData& track,
                      const OcpConfig& cfg, double r_m, double* steer_corr = nullptr) {
    std::array<double, kNumStates> xa;
    std::copy_n(y.begin(), kNumStates, xa.begin());
    const OcpState x = OcpState::from_array(xa);
    const double pos = y[kNumStates];
    ControlInput u = ctl.at(pos);
    const double corr = trk.correction(pos, x.vehicle);
    u.delta += corr;
    if (steer_corr) *steer_corr = corr;
    const double kappa = track.kappa_at(pos);

    const auto veh = vehicle_time_derivatives(x.vehicle, u, kappa, cfg.vehicle);
    const auto flow = power_chain(u, x.vehicle, cfg.powertrain);
    const auto th = thermal_derivatives(x.thermal, flow.losses, cfg.powertrain.thermal, r_m);
    if (!is_plausible(x.thermal)) throw KinematicDomainError("temperatures left the plausible range");

    SimVec d{};
    d[0] = veh.v_dot;
    d[1] = veh.beta_dot;
    d[2] = veh.psi_ddot;
    d[3] = veh.n_dot;
    d[4] = veh.xi_dot;
    d[5] = th.t_m;
    d[6] = th.t_i;
    d[7] = th.t_b;
    d[8] = th.t_f1;
    d[9] = th.t_f2;
    d[10] = veh.s_dot;
    d[11] = flow.p_battery_in;
    d[12] = 2.0 * flow.p_machine_out;
    d[13] = 2.0 * flow.losses.machine;
    d[14] = 2.0 * flow.losses.inverter;
    d[15] = flow.losses.battery;
    d[16] = cfg.powertrain.aux_power_w;
    return d;
}

inline SimVec axpy(const SimVec& y, double a, const SimVec& k) {
    SimVec r;
    for (int i = 0; i < kSimDim; ++i) r[i] = y[i] + a * k[i];
    return r;
}

/// Cubic Hermite interpolation of the step [y0, y1] with end slopes f0, f1, at theta in [0, 1].
inline SimVec hermite(const SimVec& y0, const SimVec& f0, const SimVec& y1, const SimVec& f1, double h,
                      double theta) {
    const double t2 = theta * theta, t3 = t2 * theta;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + theta, h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    SimVec r;
    for (int i = 0; i < kSimDim; ++i) r[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
    return r;
}

/// Fraction of the step at which the interpolated s equals `target`.
inline double crossing(const SimVec& y0, const SimVec& f0, const SimVec& y1, const SimVec& f1, double h,
                       double target) {
    const int is = kNumStates;
    double lo = 0.0, hi = 1.0;
    double th = std::clamp((target - y0[is]) / (y1[is] - y0[is]), 0.0, 1.0);
    for (int it = 0; it < 50; ++it) {
        const double sv = hermite(y0, f0, y1, f1, h, th)[is] - target;
        if (std::abs(sv) < 1e-12) break;
        (sv > 0.0 ? hi : lo) = th;
        const double t2 = th * th;
        const double ds = (6 * t2 - 6 * th) * y0[is] + (3 * t2 - 4 * th + 1) * h * f0[is] +
                          (-6 * t2 + 6 * th) * y1[is] + (3 * t2 - 2 * th) * h * f1[is];
        double next = ds > 0.0 ? th - sv / ds : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        th = next;
    }
    return th;
}

inline OcpState state_of(const SimVec& y) {
    std::array<double, kNumStates> xa;
    std::copy_n(y.begin(), kNumStates, xa.begin());
    return OcpState::from_array(xa);
}

}  // namespace detail

/// Classical RK4 with fixed step in time. Stops when s reaches the end of
/// the control horizon or when the model leaves its domain; the latter
/// returns a truncated trace with a diagnostic instead of throwing.
inline SimTrace integrate(const ControlTrajectory& controls, const OcpState& x0, const TrackData& track,
                          const OcpConfig& cfg, const SimOptions& opt = {}) {
    using detail::SimVec;
    controls.validate();
    opt.validate();
    const double r_m = cfg.powertrain.machine_resistance();
    const double horizon = controls.horizon();
    const double s0 = controls.s.front();

    SimTrace tr;
    SimVec y{};
    {
        const auto xa = x0.to_array();
        std::copy(xa.begin(), xa.end(), y.begin());
        y[kNumStates] = s0;
    }
    tr.samples.push_back({0.0, s0, x0});
    tr.node_s.push_back(s0);
    tr.node_t.push_back(0.0);
    tr.node_x.push_back(x0);
    std::size_t next_node = 1;

    auto energy_of = [](const SimVec& v) {
        return EnergyAccount{v[11], v[12], v[13], v[14], v[15], v[16]};
    };
    auto rhs = [&](const SimVec& v) {
        double corr = 0.0;
        auto d = detail::sim_rhs(v, controls, opt.tracking, track, cfg, r_m, &corr);
        tr.max_steer_correction = std::max(tr.max_steer_correction, std::abs(corr));
        return d;
    };

    const double h = opt.dt;
    double t = 0.0;
    long step = 0;
    try {
        SimVec f0 = rhs(y);
        while (true) {
            if (t >= opt.max_time) {
                tr.diagnostic = "time limit reached before the end of the horizon";
                break;
            }
            const SimVec k1 = f0;
            const SimVec k2 = rhs(detail::axpy(y, 0.5 * h, k1));
            const SimVec k3 = rhs(detail::axpy(y, 0.5 * h, k2));
            const SimVec k4 = rhs(detail::axpy(y, h, k3));
            SimVec y1;
            for (int i = 0; i < detail::kSimDim; ++i) y1[i] = y[i] + h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
            if (!(y1[0] > 0.0)) throw KinematicDomainError("speed dropped to zero");
            const bool finishing = y1[kNumStates] >= horizon;
            // Slope at the end of the step; past the horizon the controls are
            // held at their last value.
            const SimVec f1 = rhs(y1);

            while (next_node < controls.s.size() && controls.s[next_node] <= y1[kNumStates]) {
                const double target = controls.s[next_node];
                const double th = detail::crossing(y, f0, y1, f1, h, target);
                const SimVec yc = detail::hermite(y, f0, y1, f1, h, th);
                tr.node_s.push_back(target);
                tr.node_t.push_back(t + th * h);
                tr.node_x.push_back(detail::state_of(yc));
                if (next_node + 1 == controls.s.size()) {
                    tr.final_time = t + th * h;
                    tr.energy = energy_of(yc);
                    tr.samples.push_back({tr.final_time, target, detail::state_of(yc)});
                }
                ++next_node;
            }
            if (finishing) {
                tr.completed = true;
                break;
            }
            y = y1;
            f0 = f1;
            t += h;
            if (++step % opt.record_every == 0) tr.samples.push_back({t, y[kNumStates], detail::state_of(y)});
        }
    } catch (const Error& e) {
        tr.diagnostic = std::string("truncated at t = ") + std::to_string(t) + " s, s = " +
                        std::to_string(y[kNumStates]) + " m: " + e.what();
    }
    if (!tr.completed) {
        tr.final_time = t;
        tr.energy = energy_of(y);
        if (tr.samples.back().t < t) tr.samples.push_back({t, y[kNumStates], detail::state_of(y)});
    }
    return tr;
}

/// Per-state acceptance limits of compare() (absolute, state units). Side
/// slip and yaw rate get 20 % of their nominal scale: their transients are
/// shorter than one mesh interval.
struct CompareTolerances {
    std::array<double, kNumStates> state{1.0, 0.04, 0.2, 0.5, 0.05, 1.0, 1.0, 1.0, 1.0, 1.0};
    double race_time_rel = 5e-3;
};

struct CompareReport {
    std::array<double, kNumStates> max_abs_dev{};
    std::array<int, kNumStates> worst_node{};
    double race_time_solution = 0.0;
    double race_time_sim = 0.0;
    double race_time_rel_dev = 0.0;
    bool completed = false;
    bool pass = false;
    std::string diagnostic;
};

inline const std::array<const char*, kNumStates>& state_names() {
    static const std::array<const char*, kNumStates> n{"v", "beta", "psidot", "n", "xi",
                                                        "T_M", "T_I", "T_B", "T_F1", "T_F2"};
    return n;
}

/// Deviation of a simulated trace from a solution at the mesh nodes.
inline CompareReport compare(const SimTrace& trace, const Solution& sol, const CompareTolerances& tol = {}) {
    if (trace.node_s.empty() || sol.s.empty() || std::abs(trace.node_s.front() - sol.s.front()) > 1e-9)
        throw DataError("compare: trace and solution do not share a mesh");
    const std::size_t n = std::min(trace.node_s.size(), sol.s.size());
    for (std::size_t k = 0; k < n; ++k)
        if (std::abs(trace.node_s[k] - sol.s[k]) > 1e-9 * std::max(1.0, sol.s.back()))
            throw DataError("compare: trace and solution do not share a mesh");

    CompareReport rep;
    rep.completed = trace.completed && trace.node_s.size() == sol.s.size();
    rep.diagnostic = trace.diagnostic;
    for (std::size_t k = 0; k < n; ++k) {
        const auto a = trace.node_x[k].to_array();
        const auto b = sol.states[k].to_array();
        for (int i = 0; i < kNumStates; ++i) {
            const double d = std::abs(a[i] - b[i]);
            if (d > rep.max_abs_dev[i]) {
                rep.max_abs_dev[i] = d;
                rep.worst_node[i] = static_cast<int>(k);
            }
        }
    }
    rep.race_time_solution = sol.race_time;
    rep.race_time_sim = trace.final_time;
    rep.race_time_rel_dev = std::abs(trace.final_time - sol.race_time) / sol.race_time;
    rep.pass = rep.completed && rep.race_time_rel_dev <= tol.race_time_rel;
    for (int i = 0; i < kNumStates; ++i) rep.pass = rep.pass && rep.max_abs_dev[i] <= tol.state[i];
    return rep;
}

inline void write_compare_report(std::ostream& os, const CompareReport& r, const CompareTolerances& tol = {}) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "race_time solution %.6f s  simulation %.6f s  rel. deviation %.3e (limit %.1e)\n",
                  r.race_time_solution, r.race_time_sim, r.race_time_rel_dev, tol.race_time_rel);
    os << buf;
    for (int i = 0; i < kNumStates; ++i) {
        std::snprintf(buf, sizeof buf, "%-7s max |dev| %.4e at node %d (limit %.2e)\n", state_names()[i],
                      r.max_abs_dev[i], r.worst_node[i], tol.state[i]);
        os << buf;
    }
    if (!r.completed) os << "trace incomplete: " << r.diagnostic << "\n";
    os << "result: " << (r.pass ? "pass" : "fail") << "\n";
}

inline void write_trace(std::ostream& os, const SimTrace& tr) {
    os << "t,s,v,beta,psidot,n,xi,T_M,T_I,T_B,T_F1,T_F2\n";
    os.precision(10);
    for (const auto& smp : tr.samples) {
        os << smp.t << ',' << smp.s;
        for (double v : smp.x.to_array()) os << ',' << v;
        os << '\n';
    }
}

}  // namespace racestrat
