#pragma once

// Parameter and scenario files (INI). Relative paths inside a file are
// resolved against the directory of that file.
//
// Parameter file sections: [vehicle], [machine], [inverter], [battery],
// [powertrain], [thermal], [motor], [limits]. A loss section either lists
// a_fit/b_fit/c_fit or names a measurement file via `data = path`, which is
// fitted on load. Missing keys keep their defaults.
//
// Scenario file sections: [scenario], [boundary] (custom preset only),
// [mesh], [ocp], [solver], [verify].

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "racestrat/errors.hpp"
#include "racestrat/forward_sim.hpp"
#include "racestrat/nlp_solver.hpp"
#include "racestrat/ocp_core.hpp"
#include "racestrat/powertrain_loss.hpp"
#include "racestrat/vehicle_track.hpp"

namespace racestrat {

namespace config_detail {

namespace pt = boost::property_tree;
namespace fs = std::filesystem;

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline pt::ptree parse_ini(const std::string& text, const std::string& name) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw DataError(name + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    return tree;
}

inline void get(const pt::ptree& t, const std::string& key, double& v, const std::string& file) {
    if (const auto s = t.get_optional<std::string>(key)) v = detail::parse_double(detail::trim(*s), file + " [" + key + "]");
}

inline void get(const pt::ptree& t, const std::string& key, int& v, const std::string& file) {
    if (const auto s = t.get_optional<std::string>(key)) {
        const double d = detail::parse_double(detail::trim(*s), file + " [" + key + "]");
        if (d != static_cast<int>(d)) throw DataError(file + " [" + key + "]: expected an integer");
        v = static_cast<int>(d);
    }
}

inline void get(const pt::ptree& t, const std::string& key, bool& v, const std::string& file) {
    if (const auto s = t.get_optional<std::string>(key)) {
        const auto x = detail::trim(*s);
        if (x == "true" || x == "yes" || x == "1")
            v = true;
        else if (x == "false" || x == "no" || x == "0")
            v = false;
        else
            throw DataError(file + " [" + key + "]: expected true or false");
    }
}

inline void get(const pt::ptree& t, const std::string& key, std::string& v) {
    if (const auto s = t.get_optional<std::string>(key)) v = detail::trim(*s);
}

inline fs::path resolve(const fs::path& base_dir, const std::string& p) {
    const fs::path q(p);
    return (q.is_absolute() ? q : fs::absolute(base_dir / q)).lexically_normal();
}

}  // namespace config_detail

/// Everything a parameter file configures.
struct ParameterSet {
    VehicleParams vehicle;
    PowertrainParams powertrain;
    std::string text;  ///< raw file content, part of the configuration hash
};

inline ParameterSet parse_parameters(const std::string& text, const std::string& name,
                                     const std::filesystem::path& base_dir) {
    using namespace config_detail;
    const auto tree = parse_ini(text, name);
    ParameterSet ps;
    ps.text = text;
    auto& vp = ps.vehicle;
    auto& pp = ps.powertrain;
    const pt::ptree empty;
    auto sec = [&](const char* s) -> const pt::ptree& {
        const auto c = tree.get_child_optional(s);
        return c ? *c : empty;
    };

    const auto& v = sec("vehicle");
    const std::string f = name;
    get(v, "mass", vp.mass, f);
    get(v, "izz", vp.izz, f);
    get(v, "lf", vp.lf, f);
    get(v, "lr", vp.lr, f);
    get(v, "h_cg", vp.h_cg, f);
    get(v, "mu", vp.mu, f);
    get(v, "mu_tire_peak", vp.mu_tire_peak, f);
    get(v, "c_alpha_front", vp.c_alpha_front, f);
    get(v, "c_alpha_rear", vp.c_alpha_rear, f);
    get(v, "brake_front_share", vp.brake_front_share, f);
    get(v, "cda", vp.cda, f);
    get(v, "rho_air", vp.rho_air, f);
    get(v, "c_roll", vp.c_roll, f);
    get(v, "p_max", vp.p_max, f);
    get(v, "f_d_max", vp.f_d_max, f);
    get(v, "f_b_max", vp.f_b_max, f);
    get(v, "delta_max", vp.delta_max, f);
    get(v, "g", vp.g, f);

    auto loss = [&](const char* s, LossPolyFit& fit) {
        const auto& t = sec(s);
        std::string data;
        get(t, "data", data);
        if (!data.empty()) {
            fit = fit_parabola(read_measurements(resolve(base_dir, data).string())).fit;
            return;
        }
        get(t, "a_fit", fit.a_fit, f);
        get(t, "b_fit", fit.b_fit, f);
        get(t, "c_fit", fit.c_fit, f);
    };
    loss("machine", pp.machine);
    loss("inverter", pp.inverter);

    const auto& b = sec("battery");
    get(b, "u_ocv", pp.battery.u_ocv, f);
    get(b, "r_i", pp.battery.r_i, f);
    const auto& p = sec("powertrain");
    get(p, "aux_power_w", pp.aux_power_w, f);
    get(p, "regen_share", pp.regen_share, f);

    auto& th = pp.thermal;
    const auto& t = sec("thermal");
    get(t, "c_m", th.c_m, f);
    get(t, "c_i", th.c_i, f);
    get(t, "c_b", th.c_b, f);
    get(t, "c_f1", th.c_f1, f);
    get(t, "c_f2", th.c_f2, f);
    get(t, "r_i_th", th.r_i_th, f);
    get(t, "r_b_th", th.r_b_th, f);
    get(t, "r_rmi", th.r_rmi, f);
    get(t, "r_rb", th.r_rb, f);
    get(t, "mdot_f1", th.mdot_f1, f);
    get(t, "c_f", th.c_f, f);
    get(t, "t_env", th.t_env, f);

    auto& g = pp.motor;
    const auto& m = sec("motor");
    get(m, "r1", g.r1, f);
    get(m, "r2", g.r2, f);
    get(m, "r3", g.r3, f);
    get(m, "r4", g.r4, f);
    get(m, "length", g.length, f);
    get(m, "k_iro", g.k_iro, f);
    get(m, "h_f", g.h_f, f);
    get(m, "h_g", g.h_g, f);

    const auto& l = sec("limits");
    get(l, "t_m_min", pp.limits.min.t_m, f);
    get(l, "t_i_min", pp.limits.min.t_i, f);
    get(l, "t_b_min", pp.limits.min.t_b, f);
    get(l, "t_f1_min", pp.limits.min.t_f1, f);
    get(l, "t_f2_min", pp.limits.min.t_f2, f);
    get(l, "t_m_max", pp.limits.max.t_m, f);
    get(l, "t_i_max", pp.limits.max.t_i, f);
    get(l, "t_b_max", pp.limits.max.t_b, f);
    get(l, "t_f1_max", pp.limits.max.t_f1, f);
    get(l, "t_f2_max", pp.limits.max.t_f2, f);

    vp.validate();
    pp.validate();
    return ps;
}

inline ParameterSet load_parameters(const std::string& path) {
    const auto p = std::filesystem::path(path);
    return parse_parameters(config_detail::read_text(p), path, p.parent_path());
}

struct ScenarioConfig {
    std::string name = "scenario";
    std::string track_path;
    int lap_count = 1;
    std::string params_path;      ///< empty: built-in defaults
    std::string boundary_preset = "cold";  ///< cold | hot | custom
    BoundarySpec boundary;
    bool enforce_temperature_limits = true;
    MeshOptions mesh;
    double exclusivity_eps = OcpConfig{}.exclusivity_eps;
    double force_regularization = OcpConfig{}.force_regularization;
    SolverOptions solver;
    double verify_dt = SimOptions{}.dt;
    bool verify_tracking = true;
    std::string output_dir;
    std::string text;  ///< raw scenario text, part of the configuration hash
};

inline ScenarioConfig parse_scenario(const std::string& text, const std::string& name,
                                     const std::filesystem::path& base_dir) {
    using namespace config_detail;
    const auto tree = parse_ini(text, name);
    const pt::ptree empty;
    auto sec = [&](const char* s) -> const pt::ptree& {
        const auto c = tree.get_child_optional(s);
        return c ? *c : empty;
    };
    const std::string& f = name;
    ScenarioConfig sc;
    sc.text = text;

    const auto& s = sec("scenario");
    get(s, "name", sc.name);
    get(s, "track", sc.track_path);
    if (sc.track_path.empty()) throw DataError(name + ": [scenario] track is required");
    sc.track_path = resolve(base_dir, sc.track_path).string();
    get(s, "laps", sc.lap_count, f);
    if (sc.lap_count < 1) throw DataError(name + ": laps must be >= 1");
    get(s, "params", sc.params_path);
    if (!sc.params_path.empty()) sc.params_path = resolve(base_dir, sc.params_path).string();
    get(s, "output", sc.output_dir);
    if (!sc.output_dir.empty()) sc.output_dir = resolve(base_dir, sc.output_dir).string();
    get(s, "enforce_temperature_limits", sc.enforce_temperature_limits, f);

    get(s, "boundary", sc.boundary_preset);
    if (sc.boundary_preset == "cold") {
        sc.boundary = BoundarySpec::cold();
    } else if (sc.boundary_preset == "hot") {
        sc.boundary = BoundarySpec::hot();
    } else if (sc.boundary_preset == "custom") {
        sc.boundary = BoundarySpec::cold();
        const auto& b = sec("boundary");
        for (const char* k : {"t_m", "t_i", "t_b", "t_f1", "t_f2"})
            if (!b.get_optional<std::string>(k))
                throw DataError(name + ": custom boundary needs [boundary] " + std::string(k));
        auto& t0 = sc.boundary.initial_temperature;
        get(b, "t_m", t0.t_m, f);
        get(b, "t_i", t0.t_i, f);
        get(b, "t_b", t0.t_b, f);
        get(b, "t_f1", t0.t_f1, f);
        get(b, "t_f2", t0.t_f2, f);
    } else {
        throw DataError(name + ": boundary must be cold, hot or custom");
    }
    std::string driving = "cyclic";
    get(s, "driving", driving);
    if (driving == "cyclic") {
        sc.boundary.driving = DrivingBoundary::Cyclic;
    } else if (driving == "pinned") {
        sc.boundary.driving = DrivingBoundary::Pinned;
        const auto& b = sec("boundary");
        auto& x0 = sc.boundary.initial_driving;
        get(b, "v", x0.v, f);
        get(b, "beta", x0.beta, f);
        get(b, "psi_dot", x0.psi_dot, f);
        get(b, "n", x0.n, f);
        get(b, "xi", x0.xi, f);
    } else {
        throw DataError(name + ": driving must be cyclic or pinned");
    }

    const auto& m = sec("mesh");
    get(m, "kappa_threshold", sc.mesh.kappa_threshold, f);
    get(m, "ds_fine", sc.mesh.ds_fine, f);
    get(m, "ds_coarse", sc.mesh.ds_coarse, f);
    get(m, "max_step_ratio", sc.mesh.max_step_ratio, f);

    const auto& o = sec("ocp");
    get(o, "exclusivity_eps", sc.exclusivity_eps, f);
    get(o, "force_regularization", sc.force_regularization, f);

    auto& so = sc.solver;
    const auto& sv = sec("solver");
    get(sv, "tol_feas", so.tol_feas, f);
    get(sv, "tol_opt", so.tol_opt, f);
    get(sv, "max_iter", so.max_iter, f);
    get(sv, "mu_init", so.mu_init, f);
    get(sv, "mu_reduction", so.mu_reduction, f);
    get(sv, "armijo", so.armijo, f);
    get(sv, "backtrack_factor", so.backtrack_factor, f);
    get(sv, "max_backtracks", so.max_backtracks, f);
    get(sv, "fraction_to_boundary", so.fraction_to_boundary, f);
    so.validate();

    const auto& vf = sec("verify");
    get(vf, "dt", sc.verify_dt, f);
    get(vf, "tracking", sc.verify_tracking, f);
    if (!(sc.verify_dt > 0.0)) throw DataError(name + ": [verify] dt must be > 0");
    return sc;
}

/// Canonical INI form of a scenario. With `with_paths` false the file
/// locations are left out, which makes the text depend on content only.
inline void write_scenario(std::ostream& os, const ScenarioConfig& sc, bool with_paths = true) {
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    const auto& t0 = sc.boundary.initial_temperature;
    const auto& x0 = sc.boundary.initial_driving;
    const bool pinned = sc.boundary.driving == DrivingBoundary::Pinned;
    os << "[scenario]\n";
    os << "name = " << sc.name << "\n";
    if (with_paths) {
        os << "track = " << sc.track_path << "\n";
        if (!sc.params_path.empty()) os << "params = " << sc.params_path << "\n";
    }
    os << "laps = " << sc.lap_count << "\n";
    os << "boundary = " << (sc.boundary_preset == "cold" || sc.boundary_preset == "hot" ? sc.boundary_preset : "custom")
       << "\n";
    os << "driving = " << (pinned ? "pinned" : "cyclic") << "\n";
    os << "enforce_temperature_limits = " << (sc.enforce_temperature_limits ? "true" : "false") << "\n";
    os << "\n[boundary]\n";
    os << "t_m = " << num(t0.t_m) << "\nt_i = " << num(t0.t_i) << "\nt_b = " << num(t0.t_b) << "\nt_f1 = " << num(t0.t_f1)
       << "\nt_f2 = " << num(t0.t_f2) << "\n";
    if (pinned)
        os << "v = " << num(x0.v) << "\nbeta = " << num(x0.beta) << "\npsi_dot = " << num(x0.psi_dot)
           << "\nn = " << num(x0.n) << "\nxi = " << num(x0.xi) << "\n";
    os << "\n[mesh]\n";
    os << "kappa_threshold = " << num(sc.mesh.kappa_threshold) << "\nds_fine = " << num(sc.mesh.ds_fine)
       << "\nds_coarse = " << num(sc.mesh.ds_coarse) << "\nmax_step_ratio = " << num(sc.mesh.max_step_ratio) << "\n";
    os << "\n[ocp]\n";
    os << "exclusivity_eps = " << num(sc.exclusivity_eps) << "\nforce_regularization = " << num(sc.force_regularization)
       << "\n";
    const auto& so = sc.solver;
    os << "\n[solver]\n";
    os << "tol_feas = " << num(so.tol_feas) << "\ntol_opt = " << num(so.tol_opt) << "\nmax_iter = " << so.max_iter
       << "\nmu_init = " << num(so.mu_init) << "\nmu_reduction = " << num(so.mu_reduction)
       << "\narmijo = " << num(so.armijo) << "\nbacktrack_factor = " << num(so.backtrack_factor)
       << "\nmax_backtracks = " << so.max_backtracks << "\nfraction_to_boundary = " << num(so.fraction_to_boundary)
       << "\n";
    os << "\n[verify]\n";
    os << "dt = " << num(sc.verify_dt) << "\ntracking = " << (sc.verify_tracking ? "true" : "false") << "\n";
}

inline ScenarioConfig load_scenario(const std::string& path) {
    const auto p = std::filesystem::path(path);
    return parse_scenario(config_detail::read_text(p), path, p.parent_path());
}

}  // namespace racestrat
