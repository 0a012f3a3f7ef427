#pragma once

// Component loss meta-models.
//
// Machines and inverters map requested output power to input power with a
// quadratic characteristic P_in = a*P_out^2 + b*P_out + c fitted by least
// squares. The battery uses the open-circuit-voltage / internal-resistance
// circuit, whose terminal power P_out = U*I - R*I^2 is inverted for the
// chemical (internal) power P_in = U*I.
//
// All powers are in watts.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "racestrat/errors.hpp"

namespace racestrat {

struct LossPolyFit {
    double a_fit = 0.0;  ///< quadratic coefficient (1/W)
    double b_fit = 1.0;  ///< linear coefficient (-)
    double c_fit = 0.0;  ///< constant offset (W)

    /// Output-power range of the data the fit came from, when known.
    std::optional<double> p_out_min;
    std::optional<double> p_out_max;

    bool covers(double p_out) const {
        if (p_out_min && p_out < *p_out_min) return false;
        if (p_out_max && p_out > *p_out_max) return false;
        return true;
    }

    /// Convexity is required for use inside the optimization problem.
    void validate(const std::string& name) const {
        if (!std::isfinite(a_fit) || !std::isfinite(b_fit) || !std::isfinite(c_fit))
            throw DataError(name + ": loss coefficients must be finite");
        if (a_fit < 0.0) throw DataError(name + ": a_fit must be >= 0 (convex loss)");
    }
};

struct BatteryCircuit {
    double u_ocv = 0.0;  ///< open-circuit voltage (V)
    double r_i = 0.0;    ///< internal resistance (Ohm)

    void validate() const {
        if (!(u_ocv > 0.0) || !std::isfinite(u_ocv)) throw DataError("battery: u_ocv must be > 0");
        if (!(r_i > 0.0) || !std::isfinite(r_i)) throw DataError("battery: r_i must be > 0");
    }

    /// Largest terminal power the circuit can deliver (matched load).
    double max_output_power() const { return u_ocv * u_ocv / (4.0 * r_i); }
};

struct PowerSample {
    double p_out_w = 0.0;
    double p_in_w = 0.0;
};

struct MeasurementSet {
    std::vector<PowerSample> samples;

    std::size_t size() const { return samples.size(); }

    void validate() const {
        if (samples.size() < 3)
            throw DataError("measurement set needs at least 3 samples, got " +
                            std::to_string(samples.size()));
        for (const auto& s : samples) {
            if (!std::isfinite(s.p_out_w) || !std::isfinite(s.p_in_w))
                throw DataError("measurement set contains non-finite power");
        }
    }
};

struct ParabolaFit {
    LossPolyFit fit;
    double mse_w2 = 0.0;         ///< mean squared error of the fitted input power (W^2)
    double nrmse_percent = 0.0;  ///< sqrt(mse) relative to mean |P_in,mes|, in percent
    std::size_t sample_count = 0;
    bool used_fallback = false;  ///< true if the rank-revealing QR path was taken
};

/// Quadratic input-power characteristic.
template <typename T>
T eval_poly_input(const LossPolyFit& fit, const T& p_out) {
    return fit.a_fit * p_out * p_out + fit.b_fit * p_out + fit.c_fit;
}

template <typename T>
T component_loss(const T& p_in, const T& p_out) {
    return p_in - p_out;
}

/// Internal battery power for a terminal output `p_out_b` (negative = charging).
///
/// Throws InfeasiblePowerError when the request exceeds u_ocv^2/(4 r_i).
inline double battery_input_power(const BatteryCircuit& bat, double p_out_b) {
    const double u = bat.u_ocv;
    const double r = bat.r_i;
    const double disc = u * u - 4.0 * p_out_b * r;
    if (disc < 0.0) {
        std::ostringstream msg;
        msg << "battery output " << p_out_b << " W exceeds the deliverable maximum "
            << bat.max_output_power() << " W";
        throw InfeasiblePowerError(msg.str(), bat.max_output_power());
    }
    // U*I with I = (U - sqrt(disc))/(2R), rationalized against cancellation at small power.
    return 2.0 * u * p_out_b / (u + std::sqrt(disc));
}

/// sqrt(d) for d >= d0, continued below d0 by its second-order Taylor
/// polynomial. C2 at the junction and monotone increasing everywhere.
template <typename T>
T smooth_sqrt(const T& d, double d0) {
    using std::sqrt;
    if (d >= d0) return sqrt(d);
    const double r0 = std::sqrt(d0);
    const T e = d - d0;
    return r0 + e / (2.0 * r0) - e * e / (8.0 * d0 * r0);
}

/// Battery internal power with the discriminant smoothly extended past the
/// max-power point. Identical to battery_input_power whenever the
/// discriminant is at least `disc_floor_frac * u_ocv^2`.
template <typename T>
T battery_input_power_smooth(const BatteryCircuit& bat, const T& p_out_b,
                             double disc_floor_frac = 1e-3) {
    const double u = bat.u_ocv;
    const double r = bat.r_i;
    const T disc = u * u - 4.0 * r * p_out_b;
    return u * u / (2.0 * r) - u * smooth_sqrt(disc, disc_floor_frac * u * u) / (2.0 * r);
}

/// Least-squares quadratic fit of P_in over P_out.
///
/// Solves the normal equations on power normalized by max |P_out|; if the
/// normal matrix is numerically singular the design matrix is solved with a
/// column-pivoting QR instead, which also detects genuine rank deficiency.
inline ParabolaFit fit_parabola(const MeasurementSet& data) {
    data.validate();
    const auto n = static_cast<Eigen::Index>(data.size());

    double scale = 0.0;
    double p_lo = std::numeric_limits<double>::infinity();
    double p_hi = -p_lo;
    for (const auto& s : data.samples) {
        scale = std::max(scale, std::abs(s.p_out_w));
        p_lo = std::min(p_lo, s.p_out_w);
        p_hi = std::max(p_hi, s.p_out_w);
    }
    if (scale == 0.0 || p_hi == p_lo)
        throw DegenerateDataError("all output powers are identical; quadratic is undetermined");
    {
        std::vector<double> xs;
        for (const auto& s : data.samples) xs.push_back(s.p_out_w);
        std::sort(xs.begin(), xs.end());
        if (std::unique(xs.begin(), xs.end()) - xs.begin() < 3)
            throw DegenerateDataError("fewer than 3 distinct output powers; quadratic is undetermined");
    }

    Eigen::MatrixXd design(n, 3);
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = data.samples[static_cast<std::size_t>(i)].p_out_w / scale;
        design(i, 0) = x * x;
        design(i, 1) = x;
        design(i, 2) = 1.0;
        rhs(i) = data.samples[static_cast<std::size_t>(i)].p_in_w;
    }

    ParabolaFit out;
    Eigen::Vector3d coef;
    const Eigen::Matrix3d normal = design.transpose() * design;
    Eigen::LDLT<Eigen::Matrix3d> ldlt(normal);
    const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
    if (rcond > 1e-12 && ldlt.isPositive()) {
        coef = ldlt.solve(design.transpose() * rhs);
    } else {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
        qr.setThreshold(1e-10);
        if (qr.rank() < 3)
            throw DegenerateDataError("measurement set is rank-deficient for a quadratic fit");
        coef = qr.solve(rhs);
        out.used_fallback = true;
    }

    out.fit.a_fit = coef(0) / (scale * scale);
    out.fit.b_fit = coef(1) / scale;
    out.fit.c_fit = coef(2);
    out.fit.p_out_min = p_lo;
    out.fit.p_out_max = p_hi;
    out.sample_count = data.size();

    double sse = 0.0;
    double abs_sum = 0.0;
    for (const auto& s : data.samples) {
        const double e = eval_poly_input(out.fit, s.p_out_w) - s.p_in_w;
        sse += e * e;
        abs_sum += std::abs(s.p_in_w);
    }
    out.mse_w2 = sse / static_cast<double>(n);
    const double mean_abs = abs_sum / static_cast<double>(n);
    out.nrmse_percent = mean_abs > 0.0 ? 100.0 * std::sqrt(out.mse_w2) / mean_abs : 0.0;
    return out;
}

namespace detail {
inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, sep)) out.push_back(trim(field));
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(where + ": cannot parse number '" + s + "'");
    }
}
}  // namespace detail

/// Parses a measurement file. Header `p_out_w,p_in_w` (watts) or
/// `p_out_kw,p_in_kw` (kilowatts, converted on read). Lines starting with
/// '#' and blank lines are skipped.
inline MeasurementSet read_measurements(std::istream& in, const std::string& name = "<stream>") {
    std::string line;
    double unit = 0.0;
    MeasurementSet set;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto cols = detail::split(t, ',');
        if (unit == 0.0) {
            if (cols.size() == 2 && cols[0] == "p_out_w" && cols[1] == "p_in_w")
                unit = 1.0;
            else if (cols.size() == 2 && cols[0] == "p_out_kw" && cols[1] == "p_in_kw")
                unit = 1e3;
            else
                throw DataError(name + ": expected header 'p_out_w,p_in_w' or 'p_out_kw,p_in_kw'");
            continue;
        }
        const std::string where = name + ":" + std::to_string(lineno);
        if (cols.size() != 2) throw DataError(where + ": expected 2 columns");
        set.samples.push_back({unit * detail::parse_double(cols[0], where),
                               unit * detail::parse_double(cols[1], where)});
    }
    if (unit == 0.0) throw DataError(name + ": missing header row");
    return set;
}

inline MeasurementSet read_measurements(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open measurement file '" + path + "'");
    return read_measurements(in, path);
}

/// Key-value fit report (one `key = value` per line).
inline void write_fit_report(std::ostream& os, const std::string& component,
                             const ParabolaFit& r) {
    os.precision(17);
    os << "# loss model fit report\n";
    os << "component = " << component << "\n";
    os << "samples = " << r.sample_count << "\n";
    os << "a_fit_per_w = " << r.fit.a_fit << "\n";
    os << "b_fit = " << r.fit.b_fit << "\n";
    os << "c_fit_w = " << r.fit.c_fit << "\n";
    if (r.fit.p_out_min) os << "p_out_min_w = " << *r.fit.p_out_min << "\n";
    if (r.fit.p_out_max) os << "p_out_max_w = " << *r.fit.p_out_max << "\n";
    os << "mse_w2 = " << r.mse_w2 << "\n";
    os << "# root of mse relative to mean |p_in| of the data\n";
    os << "nrmse_percent = " << r.nrmse_percent << "\n";
    os << "solver = " << (r.used_fallback ? "column_pivoting_qr" : "normal_equations") << "\n";
}

}  // namespace racestrat
