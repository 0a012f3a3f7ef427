// Synthetic loss measurements around the default loss coefficients.
//
//   gen_loss_data --component machine --seed 1 --samples 200 --out machine.csv
//
// Output power is drawn uniformly, input power gets Gaussian noise with a
// fixed floor plus a part proportional to the loss.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "racestrat/ocp_core.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Synthetic loss measurement generator"};
    std::string component = "machine", out;
    std::uint64_t seed = 1;
    int samples = 200;
    double p_lo_kw = -150.0, p_hi_kw = 300.0;
    double noise_floor_w = 50.0, noise_rel = 0.05;
    app.add_option("--component", component)->check(CLI::IsMember({"machine", "inverter"}));
    app.add_option("--seed", seed);
    app.add_option("--samples", samples)->check(CLI::PositiveNumber);
    app.add_option("--p-min-kw", p_lo_kw);
    app.add_option("--p-max-kw", p_hi_kw);
    app.add_option("--noise-floor-w", noise_floor_w);
    app.add_option("--noise-rel", noise_rel, "Noise sigma as a fraction of the loss");
    app.add_option("--out", out)->required();
    CLI11_PARSE(app, argc, argv);

    const racestrat::PowertrainParams defaults;
    const auto& fit = component == "machine" ? defaults.machine : defaults.inverter;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> power(p_lo_kw * 1e3, p_hi_kw * 1e3);
    std::normal_distribution<double> unit(0.0, 1.0);

    std::ofstream f(out);
    if (!f) {
        std::cerr << "cannot write " << out << "\n";
        return 1;
    }
    f << "# synthetic " << component << " loss measurements, seed " << seed << "\n";
    f << "p_out_kw,p_in_kw\n";
    char buf[64];
    for (int i = 0; i < samples; ++i) {
        const double p_out = power(rng);
        const double p_in = racestrat::eval_poly_input(fit, p_out);
        const double sigma = noise_floor_w + noise_rel * std::abs(p_in - p_out);
        std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", p_out * 1e-3, (p_in + sigma * unit(rng)) * 1e-3);
        f << buf;
    }
    return 0;
}
