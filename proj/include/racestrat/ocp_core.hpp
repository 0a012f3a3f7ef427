#pragma once

// Multi-lap minimum-time optimal control problem transcribed to a sparse NLP.
//
// Decision vector (scaled), interleaved per interval:
//
//   [ x_0, u_0, x_1, u_1, ..., x_{N-1}, u_{N-1}, x_N ]
//
// with 10 states per node and 4 controls per interval, i.e. 14 N + 10
// entries. Controls are constant over an interval. Dynamics are enforced by
// implicit trapezoidal defects
//
//   x_{k+1} - x_k - h_k/2 (f(x_k, u_k, s_k) + f(x_{k+1}, u_k, s_{k+1})) = 0
//
// and path constraints are imposed at both ends of every interval. The
// objective is the trapezoidal quadrature of the lethargy dt/ds.
//
// Rows per interval (20): 10 defects, 4 path rows at the left node (wheel
// power, front and rear friction circle, battery power), the same 4 at the
// right node, drive/brake exclusivity and load-transfer consistency. Ten
// boundary rows follow: thermal states pinned at s = 0, then driving states
// either cyclic over the horizon or pinned at s = 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "racestrat/autodiff.hpp"
#include "racestrat/errors.hpp"
#include "racestrat/nlp.hpp"
#include "racestrat/powertrain_loss.hpp"
#include "racestrat/thermal_network.hpp"
#include "racestrat/vehicle_track.hpp"

namespace racestrat {

// ---------------------------------------------------------------------------
// Powertrain
// ---------------------------------------------------------------------------

/// Loss models, thermal network and limits of the electric powertrain.
/// Defaults are a scaled, plausible configuration, not measured data.
struct PowertrainParams {
    LossPolyFit machine{4.0e-7, 1.0, 300.0, {}, {}};
    LossPolyFit inverter{1.5e-7, 1.0, 150.0, {}, {}};
    BatteryCircuit battery{720.0, 0.1};
    double aux_power_w = 1500.0;  ///< constant auxiliary consumers on the battery bus
    /// Fraction of the brake force recuperated through the machines. 0 means
    /// braking is done by the friction brakes alone.
    double regen_share = 0.0;
    ThermalParams thermal{15e3, 5e3, 50e3, 40e3, 20e3, 0.01, 0.01, 0.02, 0.033, 0.3, 3500.0, 25.0};
    MotorGeometry motor{0.02, 0.06, 0.09, 0.12, 0.2, 45.0, 3000.0, 100.0};
    TemperatureLimits limits;

    void validate() const {
        machine.validate("machine");
        inverter.validate("inverter");
        battery.validate();
        if (!(aux_power_w >= 0.0) || !std::isfinite(aux_power_w)) throw DataError("powertrain: aux_power_w must be >= 0");
        if (!(regen_share >= 0.0 && regen_share <= 1.0)) throw DataError("powertrain: regen_share must be in [0, 1]");
        thermal.validate();
        motor.validate();
        for (int i = 0; i < 5; ++i) {
            const double lo = thermal_component(limits.min, i), hi = thermal_component(limits.max, i);
            if (!(lo < hi)) throw DataError("powertrain: temperature limits need min < max");
        }
    }

    double machine_resistance() const { return motor_resistance(motor); }

    static double thermal_component(const ThermalState& t, int i) {
        switch (i) {
            case 0: return t.t_m;
            case 1: return t.t_i;
            case 2: return t.t_b;
            case 3: return t.t_f1;
            default: return t.t_f2;
        }
    }
};

/// Power flow from the wheels back to the battery cells (W). Machine and
/// inverter quantities refer to a single unit; there are two of each.
template <typename T>
struct PowerFlowT {
    T p_sigma{};        ///< requested wheel power (F_d + F_b) v
    T p_machine_out{};
    T p_machine_in{};
    T p_inverter_in{};
    T p_battery_out{};  ///< terminal power, including auxiliaries
    T p_battery_in{};   ///< internal (chemical) power
    ComponentLossesT<T> losses;
};
using PowerFlow = PowerFlowT<double>;

namespace detail {
template <typename T>
PowerFlowT<T> power_chain_front(const ControlInputT<T>& u, const VehicleStateT<T>& x, const PowertrainParams& pp) {
    PowerFlowT<T> p;
    p.p_sigma = (u.f_d + u.f_b) * x.v;
    p.p_machine_out = 0.5 * (u.f_d + pp.regen_share * u.f_b) * x.v;
    p.p_machine_in = eval_poly_input(pp.machine, p.p_machine_out);
    p.p_inverter_in = eval_poly_input(pp.inverter, p.p_machine_in);
    p.p_battery_out = 2.0 * p.p_inverter_in + pp.aux_power_w;
    p.losses.machine = component_loss(p.p_machine_in, p.p_machine_out);
    p.losses.inverter = component_loss(p.p_inverter_in, p.p_machine_in);
    return p;
}
}  // namespace detail

/// Power chain with the battery relation smoothly continued past its
/// maximum-power point; safe to evaluate anywhere, used by the transcription.
template <typename T>
PowerFlowT<T> power_chain_smooth(const ControlInputT<T>& u, const VehicleStateT<T>& x, const PowertrainParams& pp) {
    auto p = detail::power_chain_front(u, x, pp);
    p.p_battery_in = battery_input_power_smooth(pp.battery, p.p_battery_out);
    p.losses.battery = component_loss(p.p_battery_in, p.p_battery_out);
    return p;
}

/// Throws InfeasiblePowerError if the battery cannot deliver the request.
inline PowerFlow power_chain(const ControlInput& u, const VehicleState& x, const PowertrainParams& pp) {
    auto p = detail::power_chain_front(u, x, pp);
    p.p_battery_in = battery_input_power(pp.battery, p.p_battery_out);
    p.losses.battery = component_loss(p.p_battery_in, p.p_battery_out);
    return p;
}

// ---------------------------------------------------------------------------
// Problem configuration
// ---------------------------------------------------------------------------

enum class DrivingBoundary { Cyclic, Pinned };

struct BoundarySpec {
    ThermalState initial_temperature{30.0, 30.0, 30.0, 30.0, 30.0};
    DrivingBoundary driving = DrivingBoundary::Cyclic;
    VehicleState initial_driving{30.0, 0.0, 0.0, 0.0, 0.0};  ///< used when driving == Pinned

    static BoundarySpec cold() { return {}; }
    static BoundarySpec hot() {
        BoundarySpec b;
        b.initial_temperature = {100.0, 70.0, 48.0, 55.0, 40.0};
        return b;
    }
};

/// Nominal magnitudes mapping every state and control to O(1).
struct VariableScaling {
    std::array<double, kNumStates> state{50.0, 0.2, 1.0, 5.0, 0.5, 100.0, 100.0, 100.0, 100.0, 100.0};
    std::array<double, kNumControls> control{1e4, 1e4, 0.2, 2e3};

    void validate() const {
        for (double v : state)
            if (!(v > 0.0) || !std::isfinite(v)) throw DataError("scaling: nominal values must be > 0");
        for (double v : control)
            if (!(v > 0.0) || !std::isfinite(v)) throw DataError("scaling: nominal values must be > 0");
    }
};

struct OcpConfig {
    VehicleParams vehicle;
    PowertrainParams powertrain;
    BoundarySpec boundary;
    VariableScaling scaling;
    bool enforce_temperature_limits = true;
    double exclusivity_eps = 1e-3;  ///< bound on (F_d/1e4)(-F_b/1e4)
    double objective_scale = 1.0;
    /// Weight (s/m) of the quadratic drive/brake force term added to the
    /// integrand; makes the split between F_d and F_b unique.
    double force_regularization = 1e-5;
    double v_min = 1.0;
    double v_max = 100.0;

    void validate() const {
        vehicle.validate();
        powertrain.validate();
        scaling.validate();
        if (!(exclusivity_eps > 0.0)) throw DataError("ocp: exclusivity_eps must be > 0");
        if (!(objective_scale > 0.0)) throw DataError("ocp: objective_scale must be > 0");
        if (!(force_regularization >= 0.0)) throw DataError("ocp: force_regularization must be >= 0");
        if (!(0.0 < v_min && v_min < v_max)) throw DataError("ocp: need 0 < v_min < v_max");
        if (enforce_temperature_limits && !powertrain.limits.contains(boundary.initial_temperature))
            throw DataError("ocp: initial temperatures lie outside the temperature limits");
        if (!is_plausible(boundary.initial_temperature))
            throw DataError("ocp: initial temperatures are not physically plausible");
    }
};

// ---------------------------------------------------------------------------
// Node model
// ---------------------------------------------------------------------------

inline constexpr int kNodeVars = kNumStates + kNumControls;  // 14
inline constexpr int kNodeOutputs = 18;
inline constexpr int kRowsPerInterval = 20;
inline constexpr int kBoundaryRows = 10;

namespace node_out {
inline constexpr int lethargy = 10;
inline constexpr int power = 11;
inline constexpr int friction_front = 12;
inline constexpr int friction_rear = 13;
inline constexpr int battery = 14;
inline constexpr int gamma = 15;
inline constexpr int exclusivity = 16;
inline constexpr int regularization = 17;
}  // namespace node_out

/// Everything evaluated at one node for one control: spatial derivatives
/// (0..9), lethargy, normalized path quantities and the two coupling rows.
template <typename T>
std::array<T, kNodeOutputs> node_function(const std::array<T, kNodeVars>& w, double kappa, const OcpConfig& cfg,
                                          double r_m) {
    const VehicleStateT<T> x{w[0], w[1], w[2], w[3], w[4]};
    const ThermalStateT<T> th{w[5], w[6], w[7], w[8], w[9]};
    const ControlInputT<T> u{w[10], w[11], w[12], w[13]};
    const auto& vp = cfg.vehicle;
    const auto& pp = cfg.powertrain;

    const auto flow = power_chain_smooth(u, x, pp);
    const auto d = spatial_derivatives(x, th, u, kappa, vp, pp.thermal, r_m, flow.losses);
    const auto da = d.to_array();
    const auto fr = friction_usage_squared(x, u, vp);

    std::array<T, kNodeOutputs> out;
    for (int i = 0; i < kNumStates; ++i) out[i] = da[i];
    out[node_out::lethargy] = lethargy(x, kappa);
    out[node_out::power] = flow.p_sigma / vp.p_max;
    out[node_out::friction_front] = fr[0];
    out[node_out::friction_rear] = fr[1];
    const double u2 = pp.battery.u_ocv * pp.battery.u_ocv;
    out[node_out::battery] = 4.0 * pp.battery.r_i * flow.p_battery_out / u2;
    out[node_out::gamma] = (u.gamma - load_transfer_target(x, u, vp)) / cfg.scaling.control[3];
    out[node_out::exclusivity] = (u.f_d / 1e4) * (-u.f_b / 1e4);
    out[node_out::regularization] = cfg.force_regularization * ((u.f_d / 1e4) * (u.f_d / 1e4) + (u.f_b / 1e4) * (u.f_b / 1e4));
    return out;
}

// ---------------------------------------------------------------------------
// Solution
// ---------------------------------------------------------------------------

/// Nodes at which a bound is active, per thermal state (T_M, T_I, T_B, T_F1, T_F2).
struct ActivityReport {
    std::array<std::vector<int>, 5> temperature_upper;
    std::array<std::vector<int>, 5> temperature_lower;
    std::vector<int> power_cap_intervals;
    double temperature_tol_k = 1e-3;
    double power_tol_rel = 1e-3;

    bool temperature_active(int component) const {
        return !temperature_upper[static_cast<std::size_t>(component)].empty() ||
               !temperature_lower[static_cast<std::size_t>(component)].empty();
    }
    bool any_temperature_active() const {
        for (int c = 0; c < 5; ++c)
            if (temperature_active(c)) return true;
        return false;
    }
};

inline const std::array<const char*, 5>& thermal_names() {
    static const std::array<const char*, 5> n{"T_M", "T_I", "T_B", "T_F1", "T_F2"};
    return n;
}

struct Solution {
    std::vector<double> s;                  ///< node positions (m)
    std::vector<OcpState> states;           ///< per node
    std::vector<ControlInput> controls;     ///< per interval
    double race_time = 0.0;                 ///< trapezoidal quadrature of dt/ds (s)
    double max_defect = 0.0;                ///< largest unscaled-by-h defect residual, in scaled units
    ActivityReport activity;

    std::size_t num_nodes() const { return s.size(); }
    std::size_t num_intervals() const { return controls.size(); }
    /// Control acting at node k (the last node reuses the final interval).
    const ControlInput& control_at_node(std::size_t k) const { return controls[std::min(k, controls.size() - 1)]; }
};

// ---------------------------------------------------------------------------
// NLP
// ---------------------------------------------------------------------------

class OcpProblem final : public SparseNlp {
public:
    OcpProblem(TrackData track, Mesh mesh, OcpConfig cfg)
        : track_(std::move(track)), mesh_(std::move(mesh)), cfg_(std::move(cfg)) {
        track_.validate();
        cfg_.validate();
        if (mesh_.num_nodes() < 2) throw DataError("ocp: mesh needs at least two nodes");
        for (std::size_t k = 0; k + 1 < mesh_.s.size(); ++k)
            if (!(mesh_.s[k + 1] > mesh_.s[k])) throw DataError("ocp: mesh nodes must be strictly increasing");
        if (std::abs(mesh_.s.front()) > 1e-9 || std::abs(mesh_.s.back() - track_.total_length()) > 1e-6)
            throw DataError("ocp: mesh must span [0, lap_count * lap_length]");
        r_m_ = cfg_.powertrain.machine_resistance();
        n_int_ = static_cast<int>(mesh_.num_intervals());
        kappa_.resize(mesh_.num_nodes());
        for (std::size_t k = 0; k < mesh_.num_nodes(); ++k) kappa_[k] = track_.kappa_at(mesh_.s[k]);
        for (int i = 0; i < kNumStates; ++i) scale_[i] = cfg_.scaling.state[i];
        for (int j = 0; j < kNumControls; ++j) scale_[kNumStates + j] = cfg_.scaling.control[j];
        build_patterns();
    }

    static int variable_count(int intervals) { return kNodeVars * intervals + kNumStates; }
    static int constraint_count(int intervals) { return kRowsPerInterval * intervals + kBoundaryRows; }

    const TrackData& track() const { return track_; }
    const Mesh& mesh() const { return mesh_; }
    const OcpConfig& config() const { return cfg_; }
    int num_intervals() const { return n_int_; }
    double machine_resistance() const { return r_m_; }

    int num_variables() const override { return variable_count(n_int_); }
    int num_constraints() const override { return constraint_count(n_int_); }

    static int state_index(int k, int i) { return kNodeVars * k + i; }
    static int control_index(int k, int j) { return kNodeVars * k + kNumStates + j; }

    void variable_bounds(std::span<double> lo, std::span<double> hi) const override {
        const auto& vp = cfg_.vehicle;
        const auto& lim = cfg_.powertrain.limits;
        const double l = vp.wheelbase(), mg = vp.mass * vp.g;
        for (int k = 0; k <= n_int_; ++k) {
            const double s = mesh_.s[static_cast<std::size_t>(k)];
            const std::array<double, kNumStates> xl{cfg_.v_min, -0.5, -3.0, track_.n_right_at(s), -1.0,
                                                    lim.min.t_m, lim.min.t_i, lim.min.t_b, lim.min.t_f1, lim.min.t_f2};
            const std::array<double, kNumStates> xu{cfg_.v_max, 0.5, 3.0, track_.n_left_at(s), 1.0,
                                                    lim.max.t_m, lim.max.t_i, lim.max.t_b, lim.max.t_f1, lim.max.t_f2};
            for (int i = 0; i < kNumStates; ++i) {
                const bool thermal = i >= 5;
                const bool free = thermal && !cfg_.enforce_temperature_limits;
                lo[state_index(k, i)] = free ? -kInf : xl[i] / scale_[i];
                hi[state_index(k, i)] = free ? kInf : xu[i] / scale_[i];
            }
            if (k == n_int_) break;
            const std::array<double, kNumControls> ul{0.0, -vp.f_b_max, -vp.delta_max, -0.8 * mg * vp.lf / l};
            const std::array<double, kNumControls> uh{vp.f_d_max, 0.0, vp.delta_max, 0.8 * mg * vp.lr / l};
            for (int j = 0; j < kNumControls; ++j) {
                lo[control_index(k, j)] = ul[j] / scale_[kNumStates + j];
                hi[control_index(k, j)] = uh[j] / scale_[kNumStates + j];
            }
        }
    }

    void constraint_bounds(std::span<double> lo, std::span<double> hi) const override {
        const double bat_hi = 1.0 - 1e-3;
        for (int k = 0; k < n_int_; ++k) {
            const int r = kRowsPerInterval * k;
            for (int i = 0; i < kNumStates; ++i) lo[r + i] = hi[r + i] = 0.0;
            for (int side = 0; side < 2; ++side) {
                const int p = r + 10 + 4 * side;
                for (int q = 0; q < 4; ++q) {
                    lo[p + q] = -kInf;
                    hi[p + q] = q == 3 ? bat_hi : 1.0;
                }
            }
            lo[r + 18] = -kInf;
            hi[r + 18] = cfg_.exclusivity_eps;
            lo[r + 19] = hi[r + 19] = 0.0;
        }
        const int b = kRowsPerInterval * n_int_;
        for (int i = 0; i < kBoundaryRows; ++i) lo[b + i] = hi[b + i] = 0.0;
    }

    double objective(std::span<const double> z) const override {
        double t = 0.0;
        for (int k = 0; k < n_int_; ++k) {
            const auto l = node_eval<double>(z, k, false);
            const auto r = node_eval<double>(z, k, true);
            t += 0.5 * h(k) *
                 (l[node_out::lethargy] + l[node_out::regularization] + r[node_out::lethargy] + r[node_out::regularization]);
        }
        return cfg_.objective_scale * t;
    }

    void objective_gradient(std::span<const double> z, std::span<double> g) const override {
        std::fill(g.begin(), g.end(), 0.0);
        for (int k = 0; k < n_int_; ++k) {
            const double w = 0.5 * h(k) * cfg_.objective_scale;
            for (int side = 0; side < 2; ++side) {
                const auto o = node_eval<D1>(z, k, side == 1);
                const auto& lg = o[node_out::lethargy].grad;
                const auto& rg = o[node_out::regularization].grad;
                for (int i = 0; i < kNodeVars; ++i) g[global_index(k, side == 1, i)] += w * (lg[i] + rg[i]);
            }
        }
    }

    void constraints(std::span<const double> z, std::span<double> c) const override {
        for (int k = 0; k < n_int_; ++k) {
            const auto l = node_eval<double>(z, k, false);
            const auto r = node_eval<double>(z, k, true);
            const int row = kRowsPerInterval * k;
            for (int i = 0; i < kNumStates; ++i)
                c[row + i] = z[state_index(k + 1, i)] - z[state_index(k, i)] -
                             0.5 * h(k) * (l[i] + r[i]) / scale_[i];
            for (int q = 0; q < 4; ++q) {
                c[row + 10 + q] = l[node_out::power + q];
                c[row + 14 + q] = r[node_out::power + q];
            }
            c[row + 18] = l[node_out::exclusivity];
            c[row + 19] = l[node_out::gamma];
        }
        const int b = kRowsPerInterval * n_int_;
        const auto& t0 = cfg_.boundary.initial_temperature;
        const std::array<double, 5> t0a{t0.t_m, t0.t_i, t0.t_b, t0.t_f1, t0.t_f2};
        for (int i = 0; i < 5; ++i) c[b + i] = z[state_index(0, 5 + i)] - t0a[i] / scale_[5 + i];
        const auto& d0 = cfg_.boundary.initial_driving;
        const std::array<double, 5> d0a{d0.v, d0.beta, d0.psi_dot, d0.n, d0.xi};
        for (int i = 0; i < 5; ++i) {
            c[b + 5 + i] = cfg_.boundary.driving == DrivingBoundary::Cyclic
                               ? z[state_index(n_int_, i)] - z[state_index(0, i)]
                               : z[state_index(0, i)] - d0a[i] / scale_[i];
        }
    }

    const SparsityPattern& jacobian_pattern() const override { return jac_; }

    void jacobian_values(std::span<const double> z, std::span<double> v) const override {
        std::fill(v.begin(), v.end(), 0.0);
        for (int k = 0; k < n_int_; ++k) {
            const auto l = node_eval<D1>(z, k, false);
            const auto r = node_eval<D1>(z, k, true);
            const std::size_t base = interval_jac_offset(k);
            // Defect rows: 24 entries each over (x_k, u_k, x_{k+1}).
            for (int i = 0; i < kNumStates; ++i) {
                const std::size_t e = base + static_cast<std::size_t>(24 * i);
                const double f = -0.5 * h(k) / scale_[i];
                for (int q = 0; q < kNodeVars; ++q) v[e + q] += f * l[i].grad[q];
                for (int q = 0; q < kNodeVars; ++q) v[e + right_local(q)] += f * r[i].grad[q];
                v[e + i] -= 1.0;
                v[e + 14 + i] += 1.0;
            }
            std::size_t e = base + 240;
            for (int q = 0; q < 4; ++q, e += 14)
                for (int j = 0; j < kNodeVars; ++j) v[e + j] = l[node_out::power + q].grad[j];
            // Right-node rows are stored in local order (u_k, x_{k+1}).
            for (int q = 0; q < 4; ++q, e += 14)
                for (int j = 0; j < kNodeVars; ++j) v[e + right_local(j) - 10] = r[node_out::power + q].grad[j];
            for (int j = 0; j < kNodeVars; ++j) v[e + j] = l[node_out::exclusivity].grad[j];
            e += 14;
            for (int j = 0; j < kNodeVars; ++j) v[e + j] = l[node_out::gamma].grad[j];
        }
        std::size_t e = interval_jac_offset(n_int_);
        for (int i = 0; i < 5; ++i) v[e++] = 1.0;
        for (int i = 0; i < 5; ++i) {
            if (cfg_.boundary.driving == DrivingBoundary::Cyclic) {
                v[e++] = -1.0;
                v[e++] = 1.0;
            } else {
                v[e++] = 1.0;
            }
        }
    }

    const SparsityPattern& hessian_pattern() const override { return hess_; }

    void hessian_values(std::span<const double> z, double obj_factor, std::span<const double> lambda,
                        std::span<double> v) const override {
        std::fill(v.begin(), v.end(), 0.0);
        for (int k = 0; k < n_int_; ++k) {
            const int row = kRowsPerInterval * k;
            for (int side = 0; side < 2; ++side) {
                std::array<double, kNodeOutputs> wgt{};
                for (int i = 0; i < kNumStates; ++i) wgt[i] = -0.5 * h(k) / scale_[i] * lambda[row + i];
                wgt[node_out::lethargy] = obj_factor * cfg_.objective_scale * 0.5 * h(k);
                wgt[node_out::regularization] = wgt[node_out::lethargy];
                for (int q = 0; q < 4; ++q) wgt[node_out::power + q] = lambda[row + 10 + 4 * side + q];
                if (side == 0) {
                    wgt[node_out::exclusivity] = lambda[row + 18];
                    wgt[node_out::gamma] = lambda[row + 19];
                }
                const auto o = node_eval<D2>(z, k, side == 1);
                D2 lag;
                for (int i = 0; i < kNodeOutputs; ++i)
                    if (wgt[i] != 0.0) lag = lag + o[i] * wgt[i];
                const auto& map = hess_map_[static_cast<std::size_t>(2 * k + side)];
                std::size_t m = 0;
                for (int a = 0; a < kNodeVars; ++a)
                    for (int b = 0; b <= a; ++b) v[map[m++]] += lag.grad[a].grad[b];
            }
        }
    }

    // -- packing -------------------------------------------------------------

    std::vector<double> pack(const std::vector<OcpState>& x, const std::vector<ControlInput>& u) const {
        if (static_cast<int>(x.size()) != n_int_ + 1 || static_cast<int>(u.size()) != n_int_)
            throw DataError("pack: trajectory size does not match the mesh");
        std::vector<double> z(static_cast<std::size_t>(num_variables()));
        for (int k = 0; k <= n_int_; ++k) {
            const auto xa = x[static_cast<std::size_t>(k)].to_array();
            for (int i = 0; i < kNumStates; ++i) z[state_index(k, i)] = xa[i] / scale_[i];
            if (k == n_int_) break;
            const auto ua = to_array(u[static_cast<std::size_t>(k)]);
            for (int j = 0; j < kNumControls; ++j) z[control_index(k, j)] = ua[j] / scale_[kNumStates + j];
        }
        return z;
    }

    void unpack(std::span<const double> z, std::vector<OcpState>& x, std::vector<ControlInput>& u) const {
        if (static_cast<int>(z.size()) != num_variables())
            throw DataError("unpack: decision vector has " + std::to_string(z.size()) + " entries, expected " +
                            std::to_string(num_variables()));
        x.resize(static_cast<std::size_t>(n_int_ + 1));
        u.resize(static_cast<std::size_t>(n_int_));
        for (int k = 0; k <= n_int_; ++k) {
            std::array<double, kNumStates> xa;
            for (int i = 0; i < kNumStates; ++i) xa[i] = z[state_index(k, i)] * scale_[i];
            x[static_cast<std::size_t>(k)] = OcpState::from_array(xa);
            if (k == n_int_) break;
            auto& uk = u[static_cast<std::size_t>(k)];
            uk.f_d = z[control_index(k, 0)] * scale_[10];
            uk.f_b = z[control_index(k, 1)] * scale_[11];
            uk.delta = z[control_index(k, 2)] * scale_[12];
            uk.gamma = z[control_index(k, 3)] * scale_[13];
        }
    }

    Solution extract_solution(std::span<const double> z) const;

    /// Quasi-steady-state initial guess: speed from a forward-backward
    /// friction-circle pass on the centre line, temperatures at their
    /// initial values.
    std::vector<double> initial_guess() const;

private:
    using D1 = ad::Dual<double, kNodeVars>;
    using D2 = ad::Dual<D1, kNodeVars>;

    double h(int k) const { return mesh_.step(static_cast<std::size_t>(k)); }

    // Position of node-local variable q inside the 24-wide interval block.
    static int right_local(int q) { return q < kNumStates ? 14 + q : q; }
    static int global_index(int k, bool right, int q) {
        return right ? kNodeVars * k + right_local(q) : kNodeVars * k + q;
    }

    template <typename T>
    std::array<T, kNodeOutputs> node_eval(std::span<const double> z, int k, bool right) const {
        std::array<T, kNodeVars> w;
        for (int q = 0; q < kNodeVars; ++q) {
            const double zq = z[global_index(k, right, q)];
            if constexpr (std::is_same_v<T, double>) {
                w[q] = zq * scale_[q];
            } else if constexpr (std::is_same_v<T, D1>) {
                w[q] = D1::variable(zq, q) * scale_[q];
            } else {
                T t;
                t.val = D1::variable(zq, q);
                t.grad[q] = D1(1.0);
                w[q] = t * scale_[q];
            }
        }
        return node_function(w, kappa_[static_cast<std::size_t>(k + (right ? 1 : 0))], cfg_, r_m_);
    }

    static constexpr std::size_t kJacPerInterval = 24 * 10 + 14 * 10;

    std::size_t interval_jac_offset(int k) const { return kJacPerInterval * static_cast<std::size_t>(k); }

    void build_patterns() {
        jac_ = {};
        for (int k = 0; k < n_int_; ++k) {
            const int row = kRowsPerInterval * k;
            const int col = kNodeVars * k;
            for (int i = 0; i < kNumStates; ++i)
                for (int q = 0; q < 24; ++q) jac_.add(row + i, col + q);
            for (int q = 0; q < 4; ++q)
                for (int j = 0; j < kNodeVars; ++j) jac_.add(row + 10 + q, col + j);
            for (int q = 0; q < 4; ++q)
                for (int j = 0; j < kNodeVars; ++j) jac_.add(row + 14 + q, col + 10 + j);
            for (int j = 0; j < kNodeVars; ++j) jac_.add(row + 18, col + j);
            for (int j = 0; j < kNodeVars; ++j) jac_.add(row + 19, col + j);
        }
        const int b = kRowsPerInterval * n_int_;
        for (int i = 0; i < 5; ++i) jac_.add(b + i, state_index(0, 5 + i));
        for (int i = 0; i < 5; ++i) {
            if (cfg_.boundary.driving == DrivingBoundary::Cyclic) {
                jac_.add(b + 5 + i, state_index(0, i));
                jac_.add(b + 5 + i, state_index(n_int_, i));
            } else {
                jac_.add(b + 5 + i, state_index(0, i));
            }
        }

        // Hessian: union of the lower triangles of both node blocks of every interval.
        std::map<std::pair<int, int>, int> index;
        hess_ = {};
        hess_map_.assign(static_cast<std::size_t>(2 * n_int_), {});
        for (int k = 0; k < n_int_; ++k) {
            for (int side = 0; side < 2; ++side) {
                auto& map = hess_map_[static_cast<std::size_t>(2 * k + side)];
                map.reserve(kNodeVars * (kNodeVars + 1) / 2);
                for (int a = 0; a < kNodeVars; ++a) {
                    for (int bq = 0; bq <= a; ++bq) {
                        int r = global_index(k, side == 1, a), c = global_index(k, side == 1, bq);
                        if (r < c) std::swap(r, c);
                        auto [it, inserted] = index.try_emplace({r, c}, static_cast<int>(hess_.nnz()));
                        if (inserted) hess_.add(r, c);
                        map.push_back(static_cast<std::size_t>(it->second));
                    }
                }
            }
        }
    }

    TrackData track_;
    Mesh mesh_;
    OcpConfig cfg_;
    double r_m_ = 0.0;
    int n_int_ = 0;
    std::vector<double> kappa_;
    std::array<double, kNodeVars> scale_{};
    SparsityPattern jac_, hess_;
    std::vector<std::vector<std::size_t>> hess_map_;
};

/// Contiguous runs of intervals on straights (|kappa| below the threshold at
/// both ends), as [first, last] interval index pairs. With a cyclic boundary
/// the runs touching both horizon ends form one straight.
inline std::vector<std::pair<int, int>> straight_runs(const TrackData& track, const Mesh& mesh, bool cyclic,
                                                      double kappa_threshold = 0.01) {
    std::vector<std::pair<int, int>> runs;
    const int n = static_cast<int>(mesh.num_intervals());
    for (int k = 0; k < n; ++k) {
        const bool st = std::abs(track.kappa_at(mesh.s[static_cast<std::size_t>(k)])) < kappa_threshold &&
                        std::abs(track.kappa_at(mesh.s[static_cast<std::size_t>(k + 1)])) < kappa_threshold;
        if (!st) continue;
        if (!runs.empty() && runs.back().second == k - 1)
            runs.back().second = k;
        else
            runs.emplace_back(k, k);
    }
    if (cyclic && runs.size() > 1 && runs.front().first == 0 && runs.back().second == n - 1) {
        runs.front().first = runs.back().first;  // wraps: first > second marks the joined run
        runs.pop_back();
    }
    return runs;
}

inline bool run_contains(const std::pair<int, int>& run, int k) {
    return run.first <= run.second ? (k >= run.first && k <= run.second) : (k >= run.first || k <= run.second);
}

inline ActivityReport activity_report(const Solution& sol, const OcpConfig& cfg, double temperature_tol_k = 1e-3,
                                      double power_tol_rel = 1e-3) {
    ActivityReport a;
    a.temperature_tol_k = temperature_tol_k;
    a.power_tol_rel = power_tol_rel;
    const auto& lim = cfg.powertrain.limits;
    if (cfg.enforce_temperature_limits) {
        for (std::size_t k = 0; k < sol.states.size(); ++k) {
            const auto& th = sol.states[k].thermal;
            for (int c = 0; c < 5; ++c) {
                const double t = PowertrainParams::thermal_component(th, c);
                if (t >= PowertrainParams::thermal_component(lim.max, c) - temperature_tol_k)
                    a.temperature_upper[static_cast<std::size_t>(c)].push_back(static_cast<int>(k));
                if (t <= PowertrainParams::thermal_component(lim.min, c) + temperature_tol_k)
                    a.temperature_lower[static_cast<std::size_t>(c)].push_back(static_cast<int>(k));
            }
        }
    }
    for (std::size_t k = 0; k < sol.controls.size(); ++k) {
        const auto& u = sol.controls[k];
        for (std::size_t node : {k, k + 1}) {
            const double p = (u.f_d + u.f_b) * sol.states[node].vehicle.v;
            if (p >= cfg.vehicle.p_max * (1.0 - power_tol_rel)) {
                a.power_cap_intervals.push_back(static_cast<int>(k));
                break;
            }
        }
    }
    return a;
}

inline Solution OcpProblem::extract_solution(std::span<const double> z) const {
    Solution sol;
    unpack(z, sol.states, sol.controls);
    sol.s = mesh_.s;
    double t = 0.0;
    for (int k = 0; k < n_int_; ++k) {
        const double l = lethargy(sol.states[static_cast<std::size_t>(k)].vehicle, kappa_[static_cast<std::size_t>(k)]);
        const double r =
            lethargy(sol.states[static_cast<std::size_t>(k + 1)].vehicle, kappa_[static_cast<std::size_t>(k + 1)]);
        t += 0.5 * h(k) * (l + r);
    }
    sol.race_time = t;
    std::vector<double> c(static_cast<std::size_t>(num_constraints()));
    constraints(z, c);
    for (int k = 0; k < n_int_; ++k)
        for (int i = 0; i < kNumStates; ++i)
            sol.max_defect = std::max(sol.max_defect, std::abs(c[static_cast<std::size_t>(kRowsPerInterval * k + i)]));
    sol.activity = activity_report(sol, cfg_);
    return sol;
}

inline std::vector<double> OcpProblem::initial_guess() const {
    const auto& vp = cfg_.vehicle;
    const int nn = n_int_ + 1;
    const double mg = vp.mass * vp.g;
    std::vector<double> vlim(static_cast<std::size_t>(nn));
    for (int k = 0; k < nn; ++k) {
        const double kap = std::abs(kappa_[static_cast<std::size_t>(k)]);
        const double v = kap > 1e-9 ? std::sqrt(0.9 * vp.mu * vp.g / kap) : cfg_.v_max;
        vlim[static_cast<std::size_t>(k)] = std::clamp(v, cfg_.v_min + 1.0, 0.9 * cfg_.v_max);
    }
    auto accel = [&](double v) {
        const double f = std::min(0.95 * vp.f_d_max, 0.95 * vp.p_max / v);
        return (f - driving_resistance(v, vp)) / vp.mass;
    };
    const double decel = 0.8 * vp.mu * vp.g;
    const bool cyclic = cfg_.boundary.driving == DrivingBoundary::Cyclic;
    const double v_start = cyclic ? *std::min_element(vlim.begin(), vlim.end())
                                  : std::clamp(cfg_.boundary.initial_driving.v, cfg_.v_min, cfg_.v_max);

    std::vector<double> fwd(static_cast<std::size_t>(nn));
    double v0 = v_start;
    for (int pass = 0; pass < (cyclic ? 3 : 1); ++pass) {
        fwd[0] = std::min(v0, vlim[0]);
        for (int k = 0; k < n_int_; ++k) {
            const double v = fwd[static_cast<std::size_t>(k)];
            const double v2 = v * v + 2.0 * h(k) * accel(v);
            fwd[static_cast<std::size_t>(k + 1)] = std::min(std::sqrt(std::max(v2, 1.0)), vlim[static_cast<std::size_t>(k + 1)]);
        }
        v0 = fwd.back();
    }
    std::vector<double> vel(fwd);
    double vend = cyclic ? vel.front() : vel.back();
    for (int pass = 0; pass < (cyclic ? 3 : 1); ++pass) {
        vel.back() = std::min(vend, fwd.back());
        for (int k = n_int_ - 1; k >= 0; --k) {
            const double v1 = vel[static_cast<std::size_t>(k + 1)];
            vel[static_cast<std::size_t>(k)] =
                std::min(fwd[static_cast<std::size_t>(k)], std::sqrt(v1 * v1 + 2.0 * h(k) * decel));
        }
        vend = vel.front();
    }
    if (!cyclic) vel[0] = cfg_.boundary.initial_driving.v;

    std::vector<OcpState> x(static_cast<std::size_t>(nn));
    std::vector<ControlInput> u(static_cast<std::size_t>(n_int_));
    const auto& t0 = cfg_.boundary.initial_temperature;
    const double l = vp.wheelbase();
    const double mp = vp.mu_tire_peak;
    // Steady-state cornering: lateral force and yaw moment balance at yaw rate v*kappa.
    auto slip = [&](double fy, double fz, double c_alpha) {
        const double r = std::clamp(fy / (mp * fz), -0.95, 0.95);
        return mp / c_alpha * std::atanh(r);
    };
    std::vector<double> beta(static_cast<std::size_t>(nn)), delta(static_cast<std::size_t>(nn));
    for (int k = 0; k < nn; ++k) {
        const double v = vel[static_cast<std::size_t>(k)], kap = kappa_[static_cast<std::size_t>(k)];
        const double fy = vp.mass * v * v * kap;
        const double a_r = slip(fy * vp.lf / l, mg * vp.lf / l, vp.c_alpha_rear);
        const double a_f = slip(fy * vp.lr / l, mg * vp.lr / l, vp.c_alpha_front);
        beta[static_cast<std::size_t>(k)] = std::clamp(vp.lr * kap - a_r, -0.4, 0.4);
        delta[static_cast<std::size_t>(k)] = a_f + beta[static_cast<std::size_t>(k)] + vp.lf * kap;
    }
    for (int k = 0; k < nn; ++k) {
        auto& xk = x[static_cast<std::size_t>(k)];
        const double v = vel[static_cast<std::size_t>(k)];
        xk.vehicle = {v, beta[static_cast<std::size_t>(k)], v * kappa_[static_cast<std::size_t>(k)], 0.0, 0.0};
        if (!cyclic && k == 0) xk.vehicle = cfg_.boundary.initial_driving;
        xk.thermal = t0;
    }
    for (int k = 0; k < n_int_; ++k) {
        const double va = vel[static_cast<std::size_t>(k)], vb = vel[static_cast<std::size_t>(k + 1)];
        const double a = (vb * vb - va * va) / (2.0 * h(k));
        const double f = vp.mass * a + driving_resistance(0.5 * (va + vb), vp);
        auto& uk = u[static_cast<std::size_t>(k)];
        uk.f_d = std::clamp(f, 0.0, 0.95 * vp.f_d_max);
        uk.f_b = std::clamp(f, -0.95 * vp.f_b_max, 0.0);
        uk.delta = std::clamp(0.5 * (delta[static_cast<std::size_t>(k)] + delta[static_cast<std::size_t>(k + 1)]),
                              -0.9 * vp.delta_max, 0.9 * vp.delta_max);
        uk.gamma = std::clamp(load_transfer_target(x[static_cast<std::size_t>(k)].vehicle, uk, vp), -0.5 * mg * vp.lf / l,
                              0.5 * mg * vp.lr / l);
    }
    return pack(x, u);
}

}  // namespace racestrat
