#pragma once

// Sparse nonlinear program interface
//
//   min f(x)  s.t.  g_lo <= g(x) <= g_hi,  x_lo <= x <= x_hi
//
// Equality rows have g_lo == g_hi. Infinite bounds are +-infinity.
// The Hessian is that of the Lagrangian sigma*f + sum_i lambda_i g_i, lower
// triangle only (row >= col).

#include <array>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "racestrat/autodiff.hpp"

namespace racestrat {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct SparsityPattern {
    std::vector<int> rows;
    std::vector<int> cols;

    std::size_t nnz() const { return rows.size(); }
    void add(int r, int c) {
        rows.push_back(r);
        cols.push_back(c);
    }
};

class SparseNlp {
public:
    virtual ~SparseNlp() = default;

    virtual int num_variables() const = 0;
    virtual int num_constraints() const = 0;

    virtual void variable_bounds(std::span<double> lo, std::span<double> hi) const = 0;
    virtual void constraint_bounds(std::span<double> lo, std::span<double> hi) const = 0;

    virtual double objective(std::span<const double> x) const = 0;
    virtual void objective_gradient(std::span<const double> x, std::span<double> grad) const = 0;
    virtual void constraints(std::span<const double> x, std::span<double> g) const = 0;

    virtual const SparsityPattern& jacobian_pattern() const = 0;
    virtual void jacobian_values(std::span<const double> x, std::span<double> values) const = 0;

    virtual const SparsityPattern& hessian_pattern() const = 0;
    virtual void hessian_values(std::span<const double> x, double obj_factor,
                                std::span<const double> lambda, std::span<double> values) const = 0;
};

/// Small dense NLP whose derivatives come from forward-mode AD of two
/// generic callables: `f(const std::array<T, NX>&) -> T` and
/// `g(const std::array<T, NX>&) -> std::array<T, NC>`.
template <int NX, int NC, typename Objective, typename Constraints>
class AutoDiffNlp final : public SparseNlp {
public:
    AutoDiffNlp(Objective f, Constraints g, std::array<double, NX> x_lo, std::array<double, NX> x_hi,
                std::array<double, NC> g_lo, std::array<double, NC> g_hi)
        : f_(f), g_(g), x_lo_(x_lo), x_hi_(x_hi), g_lo_(g_lo), g_hi_(g_hi) {
        for (int r = 0; r < NC; ++r)
            for (int c = 0; c < NX; ++c) jac_.add(r, c);
        for (int r = 0; r < NX; ++r)
            for (int c = 0; c <= r; ++c) hess_.add(r, c);
    }

    int num_variables() const override { return NX; }
    int num_constraints() const override { return NC; }

    void variable_bounds(std::span<double> lo, std::span<double> hi) const override {
        for (int i = 0; i < NX; ++i) {
            lo[i] = x_lo_[i];
            hi[i] = x_hi_[i];
        }
    }
    void constraint_bounds(std::span<double> lo, std::span<double> hi) const override {
        for (int i = 0; i < NC; ++i) {
            lo[i] = g_lo_[i];
            hi[i] = g_hi_[i];
        }
    }

    double objective(std::span<const double> x) const override { return f_(load<double>(x)); }

    void objective_gradient(std::span<const double> x, std::span<double> grad) const override {
        const auto r = f_(seed1(x));
        for (int i = 0; i < NX; ++i) grad[i] = r.grad[i];
    }

    void constraints(std::span<const double> x, std::span<double> g) const override {
        const auto r = g_(load<double>(x));
        for (int i = 0; i < NC; ++i) g[i] = r[i];
    }

    const SparsityPattern& jacobian_pattern() const override { return jac_; }
    void jacobian_values(std::span<const double> x, std::span<double> values) const override {
        const auto r = g_(seed1(x));
        std::size_t k = 0;
        for (int row = 0; row < NC; ++row)
            for (int c = 0; c < NX; ++c) values[k++] = r[row].grad[c];
    }

    const SparsityPattern& hessian_pattern() const override { return hess_; }
    void hessian_values(std::span<const double> x, double obj_factor, std::span<const double> lambda,
                        std::span<double> values) const override {
        using D2 = ad::Dual<ad::Dual<double, NX>, NX>;
        std::array<D2, NX> xs;
        for (int i = 0; i < NX; ++i) {
            xs[i].val = ad::Dual<double, NX>::variable(x[i], i);
            xs[i].grad[i] = ad::Dual<double, NX>(1.0);
        }
        D2 lag = f_(xs) * obj_factor;
        const auto gs = g_(xs);
        for (int i = 0; i < NC; ++i) lag = lag + gs[i] * lambda[i];
        std::size_t k = 0;
        for (int r = 0; r < NX; ++r)
            for (int c = 0; c <= r; ++c) values[k++] = lag.grad[r].grad[c];
    }

private:
    template <typename T>
    static std::array<T, NX> load(std::span<const double> x) {
        std::array<T, NX> a;
        for (int i = 0; i < NX; ++i) a[i] = T(x[i]);
        return a;
    }
    static std::array<ad::Dual<double, NX>, NX> seed1(std::span<const double> x) {
        std::array<ad::Dual<double, NX>, NX> a;
        for (int i = 0; i < NX; ++i) a[i] = ad::Dual<double, NX>::variable(x[i], i);
        return a;
    }

    Objective f_;
    Constraints g_;
    std::array<double, NX> x_lo_, x_hi_;
    std::array<double, NC> g_lo_, g_hi_;
    SparsityPattern jac_, hess_;
};

template <int NX, int NC, typename Objective, typename Constraints>
AutoDiffNlp<NX, NC, Objective, Constraints> make_autodiff_nlp(Objective f, Constraints g,
                                                              std::array<double, NX> x_lo,
                                                              std::array<double, NX> x_hi,
                                                              std::array<double, NC> g_lo,
                                                              std::array<double, NC> g_hi) {
    return {f, g, x_lo, x_hi, g_lo, g_hi};
}

}  // namespace racestrat
