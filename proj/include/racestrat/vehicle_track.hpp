#pragma once

// Track representation, curvature-adaptive meshing and the curvilinear
// single-track vehicle model.
//
// Sign conventions: curvature kappa > 0 is a left turn, lateral offset n > 0
// is left of the reference line, headings are counter-clockwise.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "racestrat/autodiff.hpp"
#include "racestrat/errors.hpp"
#include "racestrat/powertrain_loss.hpp"
#include "racestrat/thermal_network.hpp"

namespace racestrat {

// ---------------------------------------------------------------------------
// Track
// ---------------------------------------------------------------------------

/// Arc-length indexed reference line of one lap. Values between samples are
/// linearly interpolated; queries beyond one lap wrap around.
struct TrackData {
    std::vector<double> s_grid;   ///< arc length (m), starts at 0
    std::vector<double> kappa;    ///< curvature (1/m)
    std::vector<double> n_left;   ///< left corridor bound (m)
    std::vector<double> n_right;  ///< right corridor bound (m)
    double lap_length = 0.0;
    int lap_count = 1;

    double total_length() const { return lap_length * lap_count; }

    void validate() const {
        const auto n = s_grid.size();
        if (n < 2) throw DataError("track: need at least two samples");
        if (kappa.size() != n || n_left.size() != n || n_right.size() != n)
            throw DataError("track: column lengths differ");
        if (s_grid.front() != 0.0) throw DataError("track: s must start at 0");
        for (std::size_t i = 1; i < n; ++i) {
            if (!(s_grid[i] > s_grid[i - 1])) throw DataError("track: s must be strictly increasing");
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::isfinite(kappa[i]) || !std::isfinite(n_left[i]) || !std::isfinite(n_right[i]))
                throw DataError("track: non-finite value");
            if (!(n_right[i] < n_left[i])) throw DataError("track: need n_right < n_left");
        }
        if (std::abs(kappa.front() - kappa.back()) > 1e-6)
            throw DataError("track: open loop, kappa(0) != kappa(S_lap)");
        if (lap_count < 1) throw DataError("track: lap_count must be >= 1");
        if (std::abs(lap_length - s_grid.back()) > 1e-9 * std::max(1.0, lap_length))
            throw DataError("track: lap_length inconsistent with samples");
    }

    /// Position within the lap for a horizon coordinate.
    double wrap(double s) const {
        double r = std::fmod(s, lap_length);
        if (r < 0.0) r += lap_length;
        return r;
    }

    double kappa_at(double s) const { return interp(kappa, s); }
    double n_left_at(double s) const { return interp(n_left, s); }
    double n_right_at(double s) const { return interp(n_right, s); }

private:
    double interp(const std::vector<double>& col, double s) const {
        // Exact lap boundaries (s = k * lap_length, k > 0) map to the end sample.
        double r = wrap(s);
        if (r == 0.0 && s > 0.0) r = lap_length;
        const auto it = std::upper_bound(s_grid.begin(), s_grid.end(), r);
        if (it == s_grid.begin()) return col.front();
        if (it == s_grid.end()) return col.back();
        const auto j = static_cast<std::size_t>(it - s_grid.begin());
        const double t = (r - s_grid[j - 1]) / (s_grid[j] - s_grid[j - 1]);
        return col[j - 1] + t * (col[j] - col[j - 1]);
    }
};

/// Parses a track file with header `s_m,kappa_1pm,n_left_m,n_right_m`.
inline TrackData read_track(std::istream& in, int lap_count = 1, const std::string& name = "<stream>") {
    TrackData t;
    t.lap_count = lap_count;
    std::string line;
    bool header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto s = detail::trim(line);
        if (s.empty() || s.front() == '#') continue;
        const auto cols = detail::split(s, ',');
        if (!header) {
            if (cols != std::vector<std::string>{"s_m", "kappa_1pm", "n_left_m", "n_right_m"})
                throw DataError(name + ": expected header 's_m,kappa_1pm,n_left_m,n_right_m'");
            header = true;
            continue;
        }
        const std::string where = name + ":" + std::to_string(lineno);
        if (cols.size() != 4) throw DataError(where + ": expected 4 columns");
        t.s_grid.push_back(detail::parse_double(cols[0], where));
        t.kappa.push_back(detail::parse_double(cols[1], where));
        t.n_left.push_back(detail::parse_double(cols[2], where));
        t.n_right.push_back(detail::parse_double(cols[3], where));
    }
    if (!header) throw DataError(name + ": missing header row");
    if (!t.s_grid.empty()) t.lap_length = t.s_grid.back();
    t.validate();
    return t;
}

inline TrackData load_track(const std::string& path, int lap_count = 1) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open track file '" + path + "'");
    return read_track(in, lap_count, path);
}

inline void write_track(std::ostream& os, const TrackData& t) {
    os.precision(17);
    os << "s_m,kappa_1pm,n_left_m,n_right_m\n";
    for (std::size_t i = 0; i < t.s_grid.size(); ++i)
        os << t.s_grid[i] << ',' << t.kappa[i] << ',' << t.n_left[i] << ',' << t.n_right[i] << '\n';
}

/// Oval with two straights and two half-circle arcs. The lap starts in the
/// middle of a straight. Curvature ramps linearly over `ramp` metres at each
/// end of an arc; the plateau curvature is chosen so each arc turns by pi.
inline TrackData make_oval_track(double straight = 200.0, double arc = 100.0, double ramp = 2.0,
                                 double half_width = 5.0, int lap_count = 1) {
    const double k = std::numbers::pi / (arc - ramp);
    const double h = 0.5 * straight;
    const std::vector<std::pair<double, double>> pts{
        {0.0, 0.0},
        {h, 0.0},
        {h + ramp, k},
        {h + arc - ramp, k},
        {h + arc, 0.0},
        {h + arc + straight, 0.0},
        {h + arc + straight + ramp, k},
        {h + 2 * arc + straight - ramp, k},
        {h + 2 * arc + straight, 0.0},
        {2 * straight + 2 * arc, 0.0},
    };
    TrackData t;
    for (const auto& [s, kap] : pts) {
        t.s_grid.push_back(s);
        t.kappa.push_back(kap);
        t.n_left.push_back(half_width);
        t.n_right.push_back(-half_width);
    }
    t.lap_length = t.s_grid.back();
    t.lap_count = lap_count;
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// Mesh
// ---------------------------------------------------------------------------

struct Mesh {
    std::vector<double> s;  ///< node positions over the full horizon (m)

    std::size_t num_nodes() const { return s.size(); }
    std::size_t num_intervals() const { return s.empty() ? 0 : s.size() - 1; }
    double step(std::size_t k) const { return s[k + 1] - s[k]; }
};

struct MeshOptions {
    double kappa_threshold = 0.01;  ///< |kappa| at or above which the fine step applies (1/m)
    double ds_fine = 3.0;           ///< step in curves (m)
    double ds_coarse = 9.0;         ///< step on straights (m)
    double max_step_ratio = 3.0;    ///< largest allowed ratio between neighbouring steps
};

namespace detail {
/// Splits intervals until neighbouring steps differ by at most `ratio`.
inline void grade_mesh(std::vector<double>& s, double ratio) {
    bool changed = true;
    while (changed) {
        changed = false;
        for (std::size_t k = 0; k + 2 < s.size(); ++k) {
            const double h0 = s[k + 1] - s[k];
            const double h1 = s[k + 2] - s[k + 1];
            if (h0 > ratio * h1 * (1.0 + 1e-12)) {
                s.insert(s.begin() + static_cast<std::ptrdiff_t>(k) + 1, s[k] + 0.5 * h0);
                changed = true;
                break;
            }
            if (h1 > ratio * h0 * (1.0 + 1e-12)) {
                s.insert(s.begin() + static_cast<std::ptrdiff_t>(k) + 2, s[k + 1] + 0.5 * h1);
                changed = true;
                break;
            }
        }
    }
}
}  // namespace detail

/// Mesh of a single lap [0, S_lap].
inline std::vector<double> generate_lap_mesh(const TrackData& track, const MeshOptions& opt) {
    if (track.s_grid.size() < 2 || !(track.lap_length > 0.0)) throw DataError("mesh: empty track");
    if (!(opt.ds_fine > 0.0) || !(opt.ds_fine < opt.ds_coarse))
        throw DataError("mesh: need 0 < ds_fine < ds_coarse");
    if (!(opt.kappa_threshold > 0.0)) throw DataError("mesh: kappa_threshold must be > 0");

    // Track samples are the pieces; a segment is fine when its larger |kappa|
    // reaches the threshold. Neighbours of the same class are merged unless
    // the curvature slope changes at the shared sample, since trapezoidal
    // quadrature of a kinked curvature profile is not exact.
    const double thr = opt.kappa_threshold;
    struct Piece {
        double a, b;
        bool fine;
    };
    std::vector<Piece> pieces;
    double prev_slope = 0.0;
    for (std::size_t j = 0; j + 1 < track.s_grid.size(); ++j) {
        const double s0 = track.s_grid[j], s1 = track.s_grid[j + 1];
        const double k0 = track.kappa[j], k1 = track.kappa[j + 1];
        const bool fine = std::max(std::abs(k0), std::abs(k1)) >= thr;
        const double slope = (k1 - k0) / (s1 - s0);
        const bool kink = std::abs(slope - prev_slope) > 1e-9 * std::max(1.0, std::abs(slope));
        if (!pieces.empty() && pieces.back().fine == fine && !kink)
            pieces.back().b = s1;
        else
            pieces.push_back({s0, s1, fine});
        prev_slope = slope;
    }

    std::vector<double> s{0.0};
    for (const auto& p : pieces) {
        const double len = p.b - p.a;
        const double ds = p.fine ? opt.ds_fine : opt.ds_coarse;
        const auto n = std::max<long>(1, static_cast<long>(std::ceil(len / ds - 1e-9)));
        for (long i = 1; i <= n; ++i) s.push_back(i == n ? p.b : p.a + len * static_cast<double>(i) / static_cast<double>(n));
    }
    detail::grade_mesh(s, opt.max_step_ratio);
    return s;
}

/// Mesh over the whole horizon: per-lap meshes concatenated.
inline Mesh generate_mesh(const TrackData& track, const MeshOptions& opt = {}) {
    const auto lap = generate_lap_mesh(track, opt);
    Mesh m;
    m.s.reserve(lap.size() * static_cast<std::size_t>(track.lap_count));
    for (int l = 0; l < track.lap_count; ++l) {
        const double off = l * track.lap_length;
        for (std::size_t i = (l == 0 ? 0 : 1); i < lap.size(); ++i) m.s.push_back(off + lap[i]);
    }
    return m;
}

inline Mesh generate_mesh(const TrackData& track, double kappa_threshold, double ds_fine, double ds_coarse) {
    MeshOptions o;
    o.kappa_threshold = kappa_threshold;
    o.ds_fine = ds_fine;
    o.ds_coarse = ds_coarse;
    return generate_mesh(track, o);
}

// ---------------------------------------------------------------------------
// Vehicle
// ---------------------------------------------------------------------------

template <typename T>
struct VehicleStateT {
    T v{};        ///< speed over ground (m/s)
    T beta{};     ///< side-slip angle (rad)
    T psi_dot{};  ///< yaw rate (rad/s)
    T n{};        ///< lateral offset from the reference line (m)
    T xi{};       ///< heading relative to the reference line tangent (rad)
};
using VehicleState = VehicleStateT<double>;

template <typename T>
struct ControlInputT {
    T f_d{};     ///< drive force at the wheels (N), >= 0
    T f_b{};     ///< brake force (N), <= 0
    T delta{};   ///< front steering angle (rad)
    T gamma{};   ///< longitudinal load transfer onto the rear axle (N)
};
using ControlInput = ControlInputT<double>;

/// Single-track vehicle with rear-wheel drive. Defaults are a plausible
/// lightweight electric race car, not measured data.
struct VehicleParams {
    double mass = 1200.0;            ///< kg
    double izz = 1260.0;             ///< yaw inertia (kg m^2)
    double lf = 1.6;                 ///< CoG to front axle (m)
    double lr = 1.4;                 ///< CoG to rear axle (m)
    double h_cg = 0.35;              ///< CoG height (m)
    double mu = 1.4;                 ///< friction-circle limit (-)
    double mu_tire_peak = 1.75;      ///< lateral tire saturation level (-), above mu
    double c_alpha_front = 18.0;     ///< cornering stiffness per unit load, front (1/rad)
    double c_alpha_rear = 22.0;      ///< cornering stiffness per unit load, rear (1/rad)
    double brake_front_share = 0.6;  ///< fraction of brake force on the front axle
    double cda = 0.9;                ///< drag coefficient times frontal area (m^2)
    double rho_air = 1.2;            ///< kg/m^3
    double c_roll = 0.013;           ///< rolling resistance coefficient (-)
    double p_max = 270e3;            ///< cap on requested wheel power (W)
    double f_d_max = 10e3;           ///< N
    double f_b_max = 1.4 * 1200.0 * 9.81;  ///< N (magnitude)
    double delta_max = 0.35;         ///< rad
    double g = 9.81;

    double wheelbase() const { return lf + lr; }

    void validate() const {
        for (double v : {mass, izz, lf, lr, mu, mu_tire_peak, c_alpha_front, c_alpha_rear, rho_air,
                         p_max, f_d_max, f_b_max, delta_max, g}) {
            if (!(v > 0.0) || !std::isfinite(v)) throw DataError("vehicle: parameters must be positive");
        }
        if (h_cg < 0.0 || cda < 0.0 || c_roll < 0.0) throw DataError("vehicle: negative h_cg/cda/c_roll");
        if (brake_front_share < 0.0 || brake_front_share > 1.0)
            throw DataError("vehicle: brake_front_share must be in [0, 1]");
    }
};

/// Aerodynamic drag plus rolling resistance (N).
template <typename T>
T driving_resistance(const T& v, const VehicleParams& vp) {
    return 0.5 * vp.rho_air * vp.cda * v * v + vp.c_roll * vp.mass * vp.g;
}

template <typename T>
struct AxleForces {
    T fx_front{}, fy_front{}, fz_front{};
    T fx_rear{}, fy_rear{}, fz_rear{};
};

/// Tire forces in the wheel frames. Lateral forces follow a smooth
/// saturating characteristic mu_peak*Fz*tanh(c*alpha/mu_peak).
template <typename T>
AxleForces<T> axle_forces(const VehicleStateT<T>& x, const ControlInputT<T>& u, const VehicleParams& vp) {
    using std::tanh;
    const double l = vp.wheelbase();
    AxleForces<T> f;
    f.fz_front = vp.mass * vp.g * vp.lr / l - u.gamma;
    f.fz_rear = vp.mass * vp.g * vp.lf / l + u.gamma;
    const T alpha_f = u.delta - x.beta - vp.lf * x.psi_dot / x.v;
    const T alpha_r = -x.beta + vp.lr * x.psi_dot / x.v;
    const double mp = vp.mu_tire_peak;
    f.fy_front = mp * f.fz_front * tanh(vp.c_alpha_front * alpha_f / mp);
    f.fy_rear = mp * f.fz_rear * tanh(vp.c_alpha_rear * alpha_r / mp);
    f.fx_front = vp.brake_front_share * u.f_b;
    f.fx_rear = u.f_d + (1.0 - vp.brake_front_share) * u.f_b;
    return f;
}

/// Squared friction-circle usage per axle: (Fx^2 + Fy^2) / (mu Fz)^2.
template <typename T>
std::array<T, 2> friction_usage_squared(const VehicleStateT<T>& x, const ControlInputT<T>& u,
                                        const VehicleParams& vp) {
    const auto f = axle_forces(x, u, vp);
    const T cap_f = vp.mu * f.fz_front;
    const T cap_r = vp.mu * f.fz_rear;
    return {(f.fx_front * f.fx_front + f.fy_front * f.fy_front) / (cap_f * cap_f),
            (f.fx_rear * f.fx_rear + f.fy_rear * f.fy_rear) / (cap_r * cap_r)};
}

struct FrictionUsage {
    double front = 0.0;
    double rear = 0.0;
    double max() const { return std::max(front, rear); }
};

/// Combined tire usage sqrt(Fx^2 + Fy^2)/(mu Fz) of each axle; <= 1 is feasible.
inline FrictionUsage friction_circle_usage(const VehicleState& x, const ControlInput& u, const VehicleParams& vp) {
    const auto sq = friction_usage_squared(x, u, vp);
    return {std::sqrt(sq[0]), std::sqrt(sq[1])};
}

/// Time needed per metre of reference line, (1 - n kappa) / (v cos(xi + beta)).
template <typename T>
T lethargy(const VehicleStateT<T>& x, double kappa) {
    using std::cos;
    const T along = 1.0 - x.n * kappa;
    const T c = cos(x.xi + x.beta);
    if (!(ad::value_of(along) > 0.0) || !(ad::value_of(c) > 0.0) || !(ad::value_of(x.v) > 0.0))
        throw KinematicDomainError("lethargy undefined: vehicle off the corridor geometry or not progressing");
    return along / (x.v * c);
}

/// Time-domain rates of the driving-dynamics states plus progress speed.
template <typename T>
struct VehicleRatesT {
    T v_dot{}, beta_dot{}, psi_ddot{}, n_dot{}, xi_dot{}, s_dot{};
};

template <typename T>
VehicleRatesT<T> vehicle_time_derivatives(const VehicleStateT<T>& x, const ControlInputT<T>& u, double kappa,
                                          const VehicleParams& vp) {
    using std::cos;
    using std::sin;
    const auto f = axle_forces(x, u, vp);
    const T cd = cos(u.delta);
    const T sd = sin(u.delta);
    const T fx = f.fx_rear + f.fx_front * cd - f.fy_front * sd - driving_resistance(x.v, vp);
    const T fy = f.fy_rear + f.fx_front * sd + f.fy_front * cd;
    const T mz = vp.lf * (f.fy_front * cd + f.fx_front * sd) - vp.lr * f.fy_rear;
    const T cb = cos(x.beta);
    const T sb = sin(x.beta);

    VehicleRatesT<T> r;
    r.v_dot = (fx * cb + fy * sb) / vp.mass;
    r.beta_dot = (fy * cb - fx * sb) / (vp.mass * x.v) - x.psi_dot;
    r.psi_ddot = mz / vp.izz;
    r.s_dot = 1.0 / lethargy(x, kappa);
    r.n_dot = x.v * sin(x.xi + x.beta);
    r.xi_dot = x.psi_dot - kappa * r.s_dot;
    return r;
}

/// Quasi-static longitudinal load transfer implied by the longitudinal forces.
template <typename T>
T load_transfer_target(const VehicleStateT<T>& x, const ControlInputT<T>& u, const VehicleParams& vp) {
    return vp.h_cg / vp.wheelbase() * (u.f_d + u.f_b - driving_resistance(x.v, vp));
}

// ---------------------------------------------------------------------------
// Coupled state
// ---------------------------------------------------------------------------

inline constexpr int kNumStates = 10;
inline constexpr int kNumControls = 4;

/// Driving-dynamics and thermal states, in the order
/// (v, beta, psi_dot, n, xi, T_M, T_I, T_B, T_F1, T_F2).
template <typename T>
struct OcpStateT {
    VehicleStateT<T> vehicle;
    ThermalStateT<T> thermal;

    std::array<T, kNumStates> to_array() const {
        return {vehicle.v, vehicle.beta, vehicle.psi_dot, vehicle.n, vehicle.xi,
                thermal.t_m, thermal.t_i, thermal.t_b, thermal.t_f1, thermal.t_f2};
    }
    static OcpStateT from_array(const std::array<T, kNumStates>& a) {
        return {{a[0], a[1], a[2], a[3], a[4]}, {a[5], a[6], a[7], a[8], a[9]}};
    }
};
using OcpState = OcpStateT<double>;

template <typename T>
std::array<T, kNumControls> to_array(const ControlInputT<T>& u) {
    return {u.f_d, u.f_b, u.delta, u.gamma};
}

/// Arc-length derivatives of the full state: time-domain rates multiplied by
/// the lethargy dt/ds. `losses` are per single component; `r_m` is the
/// machine thermal resistance.
template <typename T>
OcpStateT<T> spatial_derivatives(const VehicleStateT<T>& x, const ThermalStateT<T>& th,
                                 const ControlInputT<T>& u, double kappa, const VehicleParams& vp,
                                 const ThermalParams& tp, double r_m, const ComponentLossesT<T>& losses) {
    using std::sin;
    const T dt_ds = lethargy(x, kappa);
    const auto r = vehicle_time_derivatives(x, u, kappa, vp);
    const auto dth = thermal_derivatives(th, losses, tp, r_m);
    OcpStateT<T> d;
    d.vehicle.v = dt_ds * r.v_dot;
    d.vehicle.beta = dt_ds * r.beta_dot;
    d.vehicle.psi_dot = dt_ds * r.psi_ddot;
    d.vehicle.n = dt_ds * x.v * sin(x.xi + x.beta);
    d.vehicle.xi = dt_ds * x.psi_dot - kappa;
    d.thermal.t_m = dt_ds * dth.t_m;
    d.thermal.t_i = dt_ds * dth.t_i;
    d.thermal.t_b = dt_ds * dth.t_b;
    d.thermal.t_f1 = dt_ds * dth.t_f1;
    d.thermal.t_f2 = dt_ds * dth.t_f2;
    return d;
}

}  // namespace racestrat
