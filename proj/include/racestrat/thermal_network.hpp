#pragma once

// Two-circuit lumped-parameter thermal model of the powertrain.
//
// Circuit 1: coolant F1 flows through both inverters, then both machines,
// then radiator R_MI, and back. Circuit 2: coolant F2 cools the battery and
// rejects heat through radiator R_B. Temperatures in degC; only differences
// enter the equations.
//
// Component losses passed in are for a single machine / single inverter;
// circuit 1 absorbs twice each.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "racestrat/errors.hpp"

namespace racestrat {

struct ThermalParams {
    double c_m = 0.0;     ///< heat capacity of one machine (J/K)
    double c_i = 0.0;     ///< heat capacity of one inverter (J/K)
    double c_b = 0.0;     ///< battery heat capacity (J/K)
    double c_f1 = 0.0;    ///< coolant capacity, whole circuit 1 (J/K)
    double c_f2 = 0.0;    ///< coolant capacity, circuit 2 (J/K)
    double r_i_th = 0.0;  ///< inverter-to-coolant resistance (K/W)
    double r_b_th = 0.0;  ///< battery-to-coolant resistance (K/W)
    double r_rmi = 0.0;   ///< radiator R_MI resistance (K/W)
    double r_rb = 0.0;    ///< radiator R_B resistance (K/W)
    double mdot_f1 = 0.0; ///< coolant mass flow in circuit 1 (kg/s)
    double c_f = 0.0;     ///< coolant specific heat (J/(kg K))
    double t_env = 0.0;   ///< environment temperature (degC)

    void validate() const {
        const std::array<std::pair<const char*, double>, 11> positive{{{"c_m", c_m},
                                                                       {"c_i", c_i},
                                                                       {"c_b", c_b},
                                                                       {"c_f1", c_f1},
                                                                       {"c_f2", c_f2},
                                                                       {"r_i_th", r_i_th},
                                                                       {"r_b_th", r_b_th},
                                                                       {"r_rmi", r_rmi},
                                                                       {"r_rb", r_rb},
                                                                       {"mdot_f1", mdot_f1},
                                                                       {"c_f", c_f}}};
        for (const auto& [name, v] : positive) {
            if (!(v > 0.0) || !std::isfinite(v))
                throw DataError(std::string("thermal.") + name + " must be finite and > 0");
        }
        if (!std::isfinite(t_env)) throw DataError("thermal.t_env must be finite");
        if (!(2.0 * mdot_f1 * c_f * r_rmi > 1.0))
            throw DataError("thermal: 2*mdot_f1*c_f*r_rmi must exceed 1 (radiator relation singular)");
    }
};

/// Radial machine geometry and heat-transfer coefficients.
struct MotorGeometry {
    double r1 = 0.0;     ///< shaft radius (m)
    double r2 = 0.0;     ///< rotor outer radius (m)
    double r3 = 0.0;     ///< air-gap / stator inner radius (m)
    double r4 = 0.0;     ///< stator outer radius (m)
    double length = 0.0; ///< active length L (m)
    double k_iro = 0.0;  ///< iron conductivity (W/(m K))
    double h_f = 0.0;    ///< coolant-side convection (W/(m^2 K))
    double h_g = 0.0;    ///< air-gap convection (W/(m^2 K))

    void validate() const {
        if (!(0.0 < r1 && r1 < r2 && r2 <= r3 && r3 < r4))
            throw DataError("motor geometry: need 0 < r1 < r2 <= r3 < r4");
        if (!(length > 0.0 && k_iro > 0.0 && h_f > 0.0 && h_g > 0.0))
            throw DataError("motor geometry: length, k_iro, h_f, h_g must be > 0");
    }
};

template <typename T>
struct ThermalStateT {
    T t_m{};   ///< machine (winding) temperature
    T t_i{};   ///< inverter temperature
    T t_b{};   ///< battery temperature
    T t_f1{};  ///< coolant entering the inverters
    T t_f2{};  ///< coolant of the battery circuit
};
using ThermalState = ThermalStateT<double>;

inline bool is_plausible(const ThermalState& s, double lo = -40.0, double hi = 250.0) {
    for (double t : {s.t_m, s.t_i, s.t_b, s.t_f1, s.t_f2}) {
        if (!std::isfinite(t) || t < lo || t > hi) return false;
    }
    return true;
}

/// Loss power of a single component of each kind (W).
template <typename T>
struct ComponentLossesT {
    T machine{};
    T inverter{};
    T battery{};
};
using ComponentLosses = ComponentLossesT<double>;

/// Allowed operating window per thermal state (degC).
struct TemperatureLimits {
    ThermalState min{0.0, 0.0, 0.0, 0.0, 0.0};
    ThermalState max{180.0, 100.0, 50.0, 90.0, 60.0};

    bool contains(const ThermalState& s) const {
        return s.t_m >= min.t_m && s.t_m <= max.t_m && s.t_i >= min.t_i && s.t_i <= max.t_i &&
               s.t_b >= min.t_b && s.t_b <= max.t_b && s.t_f1 >= min.t_f1 &&
               s.t_f1 <= max.t_f1 && s.t_f2 >= min.t_f2 && s.t_f2 <= max.t_f2;
    }
};

/// Thermal resistance of a convective surface, 1/(A h).
inline double surface_resistance(double area, double h) {
    if (!(area > 0.0) || !(h > 0.0)) throw DataError("surface_resistance: area and h must be > 0");
    return 1.0 / (area * h);
}

/// Stator path: conduction through the stator yoke plus convection to the coolant jacket.
inline double stator_resistance(const MotorGeometry& g) {
    const double two_pi_l = 2.0 * std::numbers::pi * g.length;
    return std::log(g.r4 / g.r3) / (two_pi_l * g.k_iro) + 1.0 / (two_pi_l * g.r4 * g.h_f);
}

/// Rotor path: rotor and shaft conduction plus air-gap convection.
inline double rotor_resistance(const MotorGeometry& g) {
    const double pi = std::numbers::pi;
    return std::log(g.r2 / g.r1) / (2.0 * pi * g.length * g.k_iro) +
           1.0 / (4.0 * pi * g.length * g.k_iro) + 1.0 / (2.0 * pi * g.r3 * g.length * g.h_g);
}

/// Machine-to-coolant resistance: stator and rotor paths in parallel.
inline double motor_resistance(const MotorGeometry& g) {
    g.validate();
    const double r1 = stator_resistance(g);
    const double r2 = rotor_resistance(g);
    return r1 * r2 / (r1 + r2);
}

/// Coolant temperature leaving the inverters and entering the machines.
template <typename T>
T coolant_temp_after_inverters(const ThermalStateT<T>& ts, const ThermalParams& p) {
    const double mcr = p.mdot_f1 * p.c_f * p.r_i_th;
    return (ts.t_f1 * (mcr - 1.0) + 2.0 * ts.t_i) / (1.0 + mcr);
}

/// Coolant temperature leaving the machines and entering radiator R_MI.
template <typename T>
T coolant_temp_into_radiator(const ThermalStateT<T>& ts, const ThermalParams& p) {
    const double k = 2.0 * p.mdot_f1 * p.c_f * p.r_rmi;
    if (std::abs(k - 1.0) <= 1e-9 * std::max(1.0, k))
        throw SingularConfigurationError("coolant relation singular: 2*mdot_f1*c_f*r_rmi == 1");
    return (ts.t_f1 * (k + 1.0) - 2.0 * p.t_env) / (k - 1.0);
}

/// Intermediate temperatures and heat flows of the network (W, degC).
template <typename T>
struct ThermalFlows {
    T t_f1_m{};     ///< coolant into machines
    T t_f1_rmi{};   ///< coolant into radiator R_MI
    T t_m_inf{};    ///< mean coolant temperature along the machine
    T t_i_inf{};    ///< mean coolant temperature along the inverter
    T p_col_m{};    ///< heat from one machine into coolant
    T p_col_i{};    ///< heat from one inverter into coolant
    T p_col_b{};    ///< heat from battery into coolant
    T p_rad_mi{};   ///< radiator R_MI rejection
    T p_rad_b{};    ///< radiator R_B rejection
};

template <typename T>
ThermalFlows<T> thermal_flows(const ThermalStateT<T>& ts, const ThermalParams& p, double r_m) {
    ThermalFlows<T> f;
    f.t_f1_m = coolant_temp_after_inverters(ts, p);
    f.t_f1_rmi = coolant_temp_into_radiator(ts, p);
    f.t_m_inf = 0.5 * (f.t_f1_m + f.t_f1_rmi);
    f.t_i_inf = 0.5 * (ts.t_f1 + f.t_f1_m);
    f.p_col_m = (2.0 * ts.t_m - (f.t_f1_m + f.t_f1_rmi)) / (2.0 * r_m);
    f.p_col_i = (2.0 * ts.t_i - (ts.t_f1 + f.t_f1_m)) / (2.0 * p.r_i_th);
    f.p_col_b = (ts.t_b - ts.t_f2) / p.r_b_th;
    f.p_rad_mi = (0.5 * (f.t_f1_rmi + ts.t_f1) - p.t_env) / p.r_rmi;
    f.p_rad_b = (ts.t_f2 - p.t_env) / p.r_rb;
    return f;
}

/// Time derivatives (K/s) of the five thermal states; `r_m` is the machine
/// resistance from motor_resistance().
template <typename T>
ThermalStateT<T> thermal_derivatives(const ThermalStateT<T>& ts, const ComponentLossesT<T>& loss,
                                     const ThermalParams& p, double r_m) {
    const auto f = thermal_flows(ts, p, r_m);
    ThermalStateT<T> d;
    d.t_m = (loss.machine - f.p_col_m) / p.c_m;
    d.t_i = (loss.inverter - f.p_col_i) / p.c_i;
    d.t_b = (loss.battery - f.p_col_b) / p.c_b;
    d.t_f1 = (2.0 * f.p_col_m + 2.0 * f.p_col_i - f.p_rad_mi) / p.c_f1;
    d.t_f2 = (f.p_col_b - f.p_rad_b) / p.c_f2;
    return d;
}

template <typename T>
ThermalStateT<T> thermal_derivatives(const ThermalStateT<T>& ts, const ComponentLossesT<T>& loss,
                                     const ThermalParams& p, const MotorGeometry& geom) {
    return thermal_derivatives(ts, loss, p, motor_resistance(geom));
}

}  // namespace racestrat
