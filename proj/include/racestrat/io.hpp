#pragma once

// Solution and summary files. Every file starts with a '#' header block
// carrying the tool version and a hash of the configuration that produced it.

#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "racestrat/errors.hpp"
#include "racestrat/ocp_core.hpp"
#include "racestrat/powertrain_loss.hpp"
#include "racestrat/vehicle_track.hpp"

namespace racestrat {

inline constexpr const char* kToolVersion = "0.1.0";

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(const std::string& data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Hash over several configuration texts; each part is length-prefixed so
/// that moving bytes between parts changes the result.
inline std::string config_hash(const std::vector<std::string>& parts) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : parts) h = fnv1a64(std::to_string(p.size()) + ":" + p, h);
    return hex64(h);
}

inline void write_header(std::ostream& os, const std::string& kind, const std::string& hash) {
    os << "# racestrat " << kToolVersion << "\n";
    os << "# kind: " << kind << "\n";
    os << "# config_hash: fnv1a64:" << hash << "\n";
}

inline const char* kSolutionColumns =
    "s,v,beta,psidot,n,xi,T_M,T_I,T_B,T_F1,T_F2,F_d,F_b,delta,gamma,P_sigma,dt_ds";

/// One row per mesh node. Controls are per interval; the last node repeats
/// the final interval's control.
inline void write_solution_csv(std::ostream& os, const Solution& sol, const TrackData& track,
                               const std::string& hash) {
    write_header(os, "solution", hash);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", sol.race_time);
    os << "# race_time_s: " << buf << "\n";
    os << kSolutionColumns << "\n";
    for (std::size_t k = 0; k < sol.num_nodes(); ++k) {
        const auto& x = sol.states[k];
        const auto& u = sol.control_at_node(k);
        std::vector<double> row{sol.s[k]};
        for (double v : x.to_array()) row.push_back(v);
        row.insert(row.end(), {u.f_d, u.f_b, u.delta, u.gamma, (u.f_d + u.f_b) * x.vehicle.v,
                               lethargy(x.vehicle, track.kappa_at(sol.s[k]))});
        for (std::size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", row[i]);
            os << (i ? "," : "") << buf;
        }
        os << "\n";
    }
}

struct SolutionFile {
    Solution solution;
    std::string config_hash;
    std::string version;
};

inline SolutionFile read_solution_csv(std::istream& in, const std::string& name = "<stream>") {
    SolutionFile f;
    bool have_header = false, have_time = false;
    std::string line;
    std::size_t lineno = 0;
    std::vector<ControlInput> node_controls;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty()) continue;
        if (t.front() == '#') {
            const auto body = detail::trim(t.substr(1));
            auto value = [&](const std::string& key) -> std::string {
                return detail::trim(body.substr(key.size()));
            };
            if (body.rfind("racestrat ", 0) == 0) f.version = value("racestrat ");
            if (body.rfind("config_hash:", 0) == 0) {
                f.config_hash = value("config_hash:");
                if (f.config_hash.rfind("fnv1a64:", 0) == 0) f.config_hash = f.config_hash.substr(8);
            }
            if (body.rfind("race_time_s:", 0) == 0) {
                f.solution.race_time = detail::parse_double(value("race_time_s:"), name);
                have_time = true;
            }
            continue;
        }
        if (!have_header) {
            if (t != kSolutionColumns) throw DataError(name + ": unexpected column header");
            have_header = true;
            continue;
        }
        const auto cols = detail::split(t, ',');
        const std::string where = name + ":" + std::to_string(lineno);
        if (cols.size() != 17) throw DataError(where + ": expected 17 columns");
        std::array<double, 17> v;
        for (std::size_t i = 0; i < 17; ++i) v[i] = detail::parse_double(cols[i], where);
        f.solution.s.push_back(v[0]);
        std::array<double, kNumStates> xa;
        std::copy(v.begin() + 1, v.begin() + 11, xa.begin());
        f.solution.states.push_back(OcpState::from_array(xa));
        node_controls.push_back({v[11], v[12], v[13], v[14]});
    }
    if (!have_header) throw DataError(name + ": missing column header");
    if (!have_time) throw DataError(name + ": missing race_time_s header line");
    if (f.solution.s.size() < 2) throw DataError(name + ": need at least two nodes");
    node_controls.pop_back();
    f.solution.controls = std::move(node_controls);
    return f;
}

/// Cumulative time at each node from the trapezoidal lethargy quadrature.
inline std::vector<double> node_times(const Solution& sol, const TrackData& track) {
    std::vector<double> t(sol.num_nodes(), 0.0);
    for (std::size_t k = 0; k + 1 < sol.num_nodes(); ++k) {
        const double l0 = lethargy(sol.states[k].vehicle, track.kappa_at(sol.s[k]));
        const double l1 = lethargy(sol.states[k + 1].vehicle, track.kappa_at(sol.s[k + 1]));
        t[k + 1] = t[k] + 0.5 * (sol.s[k + 1] - sol.s[k]) * (l0 + l1);
    }
    return t;
}

/// Time of each lap, read off node_times at the lap boundaries.
inline std::vector<double> lap_times(const Solution& sol, const TrackData& track) {
    const auto t = node_times(sol, track);
    std::vector<double> laps;
    double prev = 0.0;
    for (int l = 1; l <= track.lap_count; ++l) {
        const double target = l * track.lap_length;
        std::size_t k = 0;
        while (k + 1 < sol.num_nodes() && sol.s[k] < target - 1e-6) ++k;
        laps.push_back(t[k] - prev);
        prev = t[k];
    }
    return laps;
}

/// Time average of the requested wheel power P_sigma over the horizon (W).
inline double mean_requested_power(const Solution& sol, const TrackData& track) {
    double energy = 0.0, time = 0.0;
    for (std::size_t k = 0; k + 1 < sol.num_nodes(); ++k) {
        const auto& u = sol.controls[k];
        const double h = sol.s[k + 1] - sol.s[k];
        double e = 0.0, dt = 0.0;
        for (std::size_t j : {k, k + 1}) {
            const double l = lethargy(sol.states[j].vehicle, track.kappa_at(sol.s[j]));
            e += (u.f_d + u.f_b) * sol.states[j].vehicle.v * l;
            dt += l;
        }
        energy += 0.5 * h * e;
        time += 0.5 * h * dt;
    }
    return energy / time;
}

}  // namespace racestrat
