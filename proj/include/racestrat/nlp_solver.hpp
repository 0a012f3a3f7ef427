#pragma once

// Primal-dual interior-point method for SparseNlp problems.
//
// Inequality rows get slack variables, so the barrier subproblems only carry
// simple bounds on (x, s). Each iteration solves the regularized augmented
// system
//
//   [ W + Sigma + dw I    J^T  ] [dp]     [ grad phi + J^T y ]
//   [ J                 -dc I  ] [dy] = - [ c                ]
//
// with a sparse LDL^T factorization; dw is raised until the factorization
// shows the inertia (n + n_s, m, 0) of a descent-producing system. Steps use
// the fraction-to-boundary rule and a backtracking Armijo search on the l1
// exact-penalty merit function. The barrier parameter follows the monotone
// Fiacco-McCormick rule.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "racestrat/errors.hpp"
#include "racestrat/nlp.hpp"

namespace racestrat {

struct SolverOptions {
    double tol_feas = 1e-8;          ///< primal infeasibility, max-norm of the scaled constraints
    double tol_opt = 1e-6;           ///< scaled stationarity and complementarity
    int max_iter = 1000;
    double mu_init = 1e-2;
    double mu_reduction = 0.2;       ///< linear barrier decrease factor
    double mu_superlinear = 1.5;     ///< exponent of the superlinear barrier decrease
    double barrier_tol_factor = 10.0;
    double fraction_to_boundary = 0.995;
    double armijo = 1e-4;
    double backtrack_factor = 0.5;
    int max_backtracks = 30;
    int max_soc = 4;                 ///< second-order corrections tried on a rejected full step
    int damping_backtracks = 5;      ///< backtracks after which the next step gets primal damping
    double damping_init = 1e-4;
    double damping_growth = 10.0;
    double bound_push = 1e-2;
    double bound_frac = 1e-2;
    double penalty_rho = 0.1;        ///< required fraction of infeasibility decrease in the penalty update
    double dual_reg = 1e-9;          ///< constraint-block regularization of the KKT matrix
    double z_safeguard = 1e10;
    std::ostream* log = nullptr;     ///< iteration table, fixed-width columns

    void validate() const {
        if (!(tol_feas > 0.0) || !(tol_opt > 0.0)) throw DataError("solver: tolerances must be > 0");
        if (!(mu_reduction > 0.0 && mu_reduction < 1.0))
            throw DataError("solver: mu_reduction must lie in (0, 1)");
        if (!(fraction_to_boundary > 0.0 && fraction_to_boundary < 1.0))
            throw DataError("solver: fraction_to_boundary must lie in (0, 1)");
        if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0))
            throw DataError("solver: backtrack_factor must lie in (0, 1)");
        if (!(mu_init > 0.0) || max_iter < 0 || max_backtracks < 1)
            throw DataError("solver: mu_init > 0, max_iter >= 0, max_backtracks >= 1 required");
        if (!(dual_reg > 0.0)) throw DataError("solver: dual_reg must be > 0");
    }
};

enum class SolveStatus { Optimal, MaxIterations, Infeasible, NumericalFailure };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "optimal";
        case SolveStatus::MaxIterations: return "max-iter";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::NumericalFailure: return "numerical-failure";
    }
    return "unknown";
}

struct KktResiduals {
    double stationarity = 0.0;          ///< scaled max-norm of the Lagrangian gradient
    double primal_infeasibility = 0.0;  ///< max-norm of constraint violation
    double dual_infeasibility = 0.0;    ///< largest negative bound multiplier (0 when dual feasible)
    double complementarity = 0.0;       ///< scaled max-norm of slack*multiplier
};

struct IterationRecord {
    int iter = 0;
    double objective = 0.0;
    double inf_pr = 0.0;
    double inf_du = 0.0;
    double mu = 0.0;
    double alpha_primal = 0.0;
    double alpha_dual = 0.0;
    double merit_before = 0.0;
    double merit_after = 0.0;
    double reg_primal = 0.0;
    int backtracks = 0;
};

struct SolveReport {
    SolveStatus status = SolveStatus::NumericalFailure;
    int iterations = 0;
    double objective = 0.0;
    KktResiduals residuals;
    double wall_time_s = 0.0;
    std::string message;
    std::vector<IterationRecord> history;
};

struct SolveResult {
    std::vector<double> x;
    std::vector<double> lambda;   ///< constraint multipliers (sign: L = f + lambda^T g)
    std::vector<double> z_lower;  ///< variable lower-bound multipliers
    std::vector<double> z_upper;  ///< variable upper-bound multipliers
    SolveReport report;
};

inline void write_report(std::ostream& os, const SolveReport& r) {
    os << "status = " << to_string(r.status) << "\n"
       << "iterations = " << r.iterations << "\n"
       << "objective = " << r.objective << "\n"
       << "stationarity = " << r.residuals.stationarity << "\n"
       << "primal_infeasibility = " << r.residuals.primal_infeasibility << "\n"
       << "dual_infeasibility = " << r.residuals.dual_infeasibility << "\n"
       << "complementarity = " << r.residuals.complementarity << "\n";
    if (!r.message.empty()) os << "message = " << r.message << "\n";
}

class InteriorPointSolver {
public:
    explicit InteriorPointSolver(SolverOptions opts = {}) : opts_(std::move(opts)) { opts_.validate(); }

    const SolverOptions& options() const { return opts_; }

    SolveResult solve(const SparseNlp& nlp, std::span<const double> x0) const;

private:
    SolverOptions opts_;
};

/// Adapter seam for alternative NLP solvers.
class NlpBackend {
public:
    virtual ~NlpBackend() = default;
    virtual std::string name() const = 0;
    virtual SolveResult solve(const SparseNlp& nlp, std::span<const double> x0,
                              const SolverOptions& opts) const = 0;
};

class BuiltinInteriorPointBackend final : public NlpBackend {
public:
    std::string name() const override { return "builtin-ipm"; }
    SolveResult solve(const SparseNlp& nlp, std::span<const double> x0,
                      const SolverOptions& opts) const override {
        return InteriorPointSolver(opts).solve(nlp, x0);
    }
};

// ---------------------------------------------------------------------------
// Implementation
// ---------------------------------------------------------------------------

namespace detail {

using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Vec = Eigen::VectorXd;

inline double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// Problem data in (x, s) space.
struct IpmWork {
    const SparseNlp& nlp;
    int n = 0;   // variables
    int m = 0;   // constraints
    int ns = 0;  // slacks
    int np = 0;  // n + ns
    std::vector<int> slack_of_row;  // -1 for equality rows
    std::vector<int> row_of_slack;
    Vec p_lo, p_hi, g_lo, g_hi;
    std::vector<char> has_lo, has_hi;

    explicit IpmWork(const SparseNlp& p) : nlp(p) {}

    // Evaluated quantities at the current point.
    struct Eval {
        double f = 0.0;
        Vec grad_f;
        Vec g;
        Vec c;  // residual of equality form
        std::vector<double> jac;
    };

    void eval_values(const Vec& pt, Eval& e) const {
        std::span<const double> x(pt.data(), static_cast<std::size_t>(n));
        e.f = nlp.objective(x);
        e.g.resize(m);
        nlp.constraints(x, std::span<double>(e.g.data(), static_cast<std::size_t>(m)));
        e.c.resize(m);
        for (int r = 0; r < m; ++r) {
            const int k = slack_of_row[static_cast<std::size_t>(r)];
            e.c[r] = k < 0 ? e.g[r] - g_lo[r] : e.g[r] - pt[n + k];
        }
    }

    void eval_derivatives(const Vec& pt, Eval& e) const {
        std::span<const double> x(pt.data(), static_cast<std::size_t>(n));
        e.grad_f.resize(n);
        nlp.objective_gradient(x, std::span<double>(e.grad_f.data(), static_cast<std::size_t>(n)));
        e.jac.resize(nlp.jacobian_pattern().nnz());
        nlp.jacobian_values(x, e.jac);
    }

    /// J^T y in (x, s) space.
    Vec jt_times(const Eval& e, const Vec& y) const {
        Vec out = Vec::Zero(np);
        const auto& jp = nlp.jacobian_pattern();
        for (std::size_t k = 0; k < jp.nnz(); ++k) out[jp.cols[k]] += e.jac[k] * y[jp.rows[k]];
        for (int s = 0; s < ns; ++s) out[n + s] -= y[row_of_slack[static_cast<std::size_t>(s)]];
        return out;
    }

    /// J d in constraint space.
    Vec j_times(const Eval& e, const Vec& d) const {
        Vec out = Vec::Zero(m);
        const auto& jp = nlp.jacobian_pattern();
        for (std::size_t k = 0; k < jp.nnz(); ++k) out[jp.rows[k]] += e.jac[k] * d[jp.cols[k]];
        for (int s = 0; s < ns; ++s) out[row_of_slack[static_cast<std::size_t>(s)]] -= d[n + s];
        return out;
    }

    double barrier(const Vec& pt, double mu) const {
        double b = 0.0;
        for (int i = 0; i < np; ++i) {
            if (has_lo[i]) b -= std::log(pt[i] - p_lo[i]);
            if (has_hi[i]) b -= std::log(p_hi[i] - pt[i]);
        }
        return mu * b;
    }
};

inline double fraction_to_boundary(const Vec& v, const Vec& dv, const Vec& lo, const Vec& hi,
                                   const std::vector<char>& has_lo, const std::vector<char>& has_hi,
                                   double tau) {
    double alpha = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (has_lo[i] && dv[i] < 0.0) alpha = std::min(alpha, -tau * (v[i] - lo[i]) / dv[i]);
        if (has_hi[i] && dv[i] > 0.0) alpha = std::min(alpha, tau * (hi[i] - v[i]) / dv[i]);
    }
    return alpha;
}

}  // namespace detail

inline SolveResult InteriorPointSolver::solve(const SparseNlp& nlp, std::span<const double> x0) const {
    using detail::inf_norm;
    using detail::SpMat;
    using detail::Vec;
    const auto t_start = std::chrono::steady_clock::now();
    const SolverOptions& o = opts_;

    detail::IpmWork w(nlp);
    w.n = nlp.num_variables();
    w.m = nlp.num_constraints();
    if (static_cast<int>(x0.size()) != w.n)
        throw DataError("solve: initial guess has " + std::to_string(x0.size()) + " entries, expected " +
                        std::to_string(w.n));

    std::vector<double> xl(static_cast<std::size_t>(w.n)), xu(static_cast<std::size_t>(w.n));
    std::vector<double> gl(static_cast<std::size_t>(w.m)), gu(static_cast<std::size_t>(w.m));
    nlp.variable_bounds(xl, xu);
    nlp.constraint_bounds(gl, gu);
    for (int i = 0; i < w.n; ++i) {
        if (!(xl[i] <= xu[i])) throw DataError("solve: inconsistent variable bounds at index " + std::to_string(i));
        if (xl[i] == xu[i]) throw DataError("solve: fixed variables are not supported (index " + std::to_string(i) + ")");
    }
    w.slack_of_row.assign(static_cast<std::size_t>(w.m), -1);
    for (int r = 0; r < w.m; ++r) {
        if (!(gl[r] <= gu[r])) throw DataError("solve: inconsistent constraint bounds at row " + std::to_string(r));
        if (gl[r] < gu[r]) {
            w.slack_of_row[r] = static_cast<int>(w.row_of_slack.size());
            w.row_of_slack.push_back(r);
        }
    }
    w.ns = static_cast<int>(w.row_of_slack.size());
    w.np = w.n + w.ns;
    const int n = w.n, m = w.m, np = w.np;

    w.p_lo.resize(np);
    w.p_hi.resize(np);
    w.g_lo = Eigen::Map<const Vec>(gl.data(), m);
    w.g_hi = Eigen::Map<const Vec>(gu.data(), m);
    for (int i = 0; i < n; ++i) {
        w.p_lo[i] = xl[i];
        w.p_hi[i] = xu[i];
    }
    for (int s = 0; s < w.ns; ++s) {
        w.p_lo[n + s] = gl[w.row_of_slack[s]];
        w.p_hi[n + s] = gu[w.row_of_slack[s]];
    }
    w.has_lo.resize(np);
    w.has_hi.resize(np);
    for (int i = 0; i < np; ++i) {
        w.has_lo[i] = std::isfinite(w.p_lo[i]);
        w.has_hi[i] = std::isfinite(w.p_hi[i]);
    }

    auto push_inside = [&](double v, int i) {
        const double lo = w.p_lo[i], hi = w.p_hi[i];
        if (w.has_lo[i] && w.has_hi[i]) {
            const double pl = std::min(o.bound_push * std::max(1.0, std::abs(lo)), o.bound_frac * (hi - lo));
            const double pu = std::min(o.bound_push * std::max(1.0, std::abs(hi)), o.bound_frac * (hi - lo));
            return std::clamp(v, lo + pl, hi - pu);
        }
        if (w.has_lo[i]) return std::max(v, lo + o.bound_push * std::max(1.0, std::abs(lo)));
        if (w.has_hi[i]) return std::min(v, hi - o.bound_push * std::max(1.0, std::abs(hi)));
        return v;
    };

    Vec p(np);
    for (int i = 0; i < n; ++i) p[i] = push_inside(x0[i], i);
    detail::IpmWork::Eval ev;
    w.eval_values(p, ev);
    for (int s = 0; s < w.ns; ++s) p[n + s] = push_inside(ev.g[w.row_of_slack[s]], n + s);
    w.eval_values(p, ev);
    w.eval_derivatives(p, ev);

    Vec y = Vec::Zero(m);
    Vec zl(np), zu(np);
    for (int i = 0; i < np; ++i) {
        zl[i] = w.has_lo[i] ? 1.0 : 0.0;
        zu[i] = w.has_hi[i] ? 1.0 : 0.0;
    }
    int nz = 0;
    for (int i = 0; i < np; ++i) nz += (w.has_lo[i] ? 1 : 0) + (w.has_hi[i] ? 1 : 0);

    double mu = o.mu_init;
    const double mu_min = std::min(o.tol_opt, o.tol_feas) / 10.0;
    double nu = 1.0;  // penalty parameter of the merit function
    double reg_last = 0.0;

    // KKT pattern: lower triangle of [[H + D, J^T], [J, -dc]].
    const auto& hp = nlp.hessian_pattern();
    const auto& jp = nlp.jacobian_pattern();
    const int dim = np + m;
    std::vector<Eigen::Triplet<double, int>> trip;
    trip.reserve(hp.nnz() + jp.nnz() + static_cast<std::size_t>(dim + w.ns));
    std::vector<double> hess(hp.nnz());

    Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    bool analyzed = false;
    SpMat kkt(dim, dim);

    auto assemble = [&](const Vec& sigma, double dw, double dc) {
        trip.clear();
        for (std::size_t k = 0; k < hp.nnz(); ++k) {
            int r = hp.rows[k], c = hp.cols[k];
            if (r < c) std::swap(r, c);
            trip.emplace_back(r, c, hess[k]);
        }
        for (int i = 0; i < np; ++i) trip.emplace_back(i, i, sigma[i] + dw);
        for (std::size_t k = 0; k < jp.nnz(); ++k) trip.emplace_back(np + jp.rows[k], jp.cols[k], ev.jac[k]);
        for (int s = 0; s < w.ns; ++s) trip.emplace_back(np + w.row_of_slack[s], n + s, -1.0);
        for (int r = 0; r < m; ++r) trip.emplace_back(np + r, np + r, -dc);
        kkt.setFromTriplets(trip.begin(), trip.end());
    };

    // LDL^T without pivoting reports inertia cheaply but breaks down on some
    // indefinite matrices. When its solves stop being accurate the step is
    // computed by pivoted LU instead, and positive curvature of the step
    // replaces the inertia test.
    Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
    bool lu_analyzed = false;
    bool use_lu = false;
    SpMat kkt_full;

    auto solve_with = [&](auto& fac, const SpMat& a, const Vec& rhs) {
        Vec sol = fac.solve(rhs);
        for (int it = 0; it < 5 && sol.allFinite(); ++it) {
            const Vec res = rhs - a * sol;
            if (inf_norm(res) <= 1e-12 * std::max(1.0, inf_norm(rhs))) break;
            sol += fac.solve(res);
        }
        return sol;
    };
    auto solve_kkt = [&](const Vec& rhs) -> Vec {
        if (use_lu) return solve_with(lu, kkt_full, rhs);
        Vec sol = ldlt.solve(rhs);
        for (int it = 0; it < 5 && sol.allFinite(); ++it) {
            const Vec res = rhs - kkt.selfadjointView<Eigen::Lower>() * sol;
            if (inf_norm(res) <= 1e-12 * std::max(1.0, inf_norm(rhs))) break;
            sol += ldlt.solve(res);
        }
        return sol;
    };
    auto accurate = [&](const Vec& sol, const Vec& rhs) {
        if (!sol.allFinite()) return false;
        const Vec res = rhs - (use_lu ? Vec(kkt_full * sol) : Vec(kkt.selfadjointView<Eigen::Lower>() * sol));
        return inf_norm(res) <= 1e-8 * std::max(1.0, inf_norm(rhs));
    };

    // Factorizes the assembled matrix and computes the step for `rhs`.
    // Returns 0 when accepted, 1 when more primal regularization is needed,
    // 2 when singular.
    auto factor_and_solve = [&](const Vec& rhs, Vec& sol) -> int {
        use_lu = false;
        if (!analyzed) {
            ldlt.analyzePattern(kkt);
            analyzed = true;
        }
        ldlt.factorize(kkt);
        bool stable = ldlt.info() == Eigen::Success;
        int pos = 0, neg = 0;
        if (stable) {
            const Vec& d = ldlt.vectorD();
            for (Eigen::Index i = 0; i < d.size() && stable; ++i) {
                if (!std::isfinite(d[i]) || d[i] == 0.0) stable = false;
                (d[i] > 0.0 ? pos : neg)++;
            }
        }
        if (stable) {
            sol = solve_kkt(rhs);
            if (accurate(sol, rhs)) return (pos == np && neg == m) ? 0 : 1;
        }

        use_lu = true;
        kkt_full = kkt.selfadjointView<Eigen::Lower>();
        if (!lu_analyzed) {
            lu.analyzePattern(kkt_full);
            lu_analyzed = true;
        }
        lu.factorize(kkt_full);
        if (lu.info() != Eigen::Success) return 2;
        sol = solve_kkt(rhs);
        if (!accurate(sol, rhs)) return 2;
        const Vec dp = sol.head(np);
        const double curv = dp.dot(kkt.topLeftCorner(np, np).selfadjointView<Eigen::Lower>() * dp);
        return curv >= 1e-10 * dp.squaredNorm() ? 0 : 1;
    };

    SolveResult out;
    SolveReport& rep = out.report;

    auto slack_lo = [&](const Vec& pt, int i) { return pt[i] - w.p_lo[i]; };
    auto slack_hi = [&](const Vec& pt, int i) { return w.p_hi[i] - pt[i]; };

    struct Errors {
        double inf_du, inf_pr, compl_mu, compl0, s_d;
    };
    auto errors = [&](double mu_now) {
        const Vec grad_lag = [&] {
            Vec g = w.jt_times(ev, y);
            g.head(n) += ev.grad_f;
            return g;
        }();
        const double s_max = 100.0;
        const double zsum = zl.lpNorm<1>() + zu.lpNorm<1>();
        const double s_d = std::max(s_max, (y.lpNorm<1>() + zsum) / std::max(1, m + nz)) / s_max;
        const double s_c = std::max(s_max, zsum / std::max(1, nz)) / s_max;
        double compl_mu = 0.0, compl0 = 0.0;
        for (int i = 0; i < np; ++i) {
            if (w.has_lo[i]) {
                const double v = slack_lo(p, i) * zl[i];
                compl_mu = std::max(compl_mu, std::abs(v - mu_now));
                compl0 = std::max(compl0, std::abs(v));
            }
            if (w.has_hi[i]) {
                const double v = slack_hi(p, i) * zu[i];
                compl_mu = std::max(compl_mu, std::abs(v - mu_now));
                compl0 = std::max(compl0, std::abs(v));
            }
        }
        return Errors{inf_norm(grad_lag - zl + zu) / s_d, inf_norm(ev.c), compl_mu / s_c, compl0 / s_c, s_d};
    };

    auto log_header = [&] {
        if (!o.log) return;
        *o.log << " iter    objective      inf_pr     inf_du     lg(mu)    alpha_pr  alpha_du   lg(rg)  ls\n";
    };
    auto log_line = [&](const IterationRecord& r) {
        if (!o.log) return;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%5d  %14.7e  %9.2e  %9.2e  %7.2f  %9.2e  %9.2e  %6s  %3d\n", r.iter,
                      r.objective, r.inf_pr, r.inf_du, std::log10(r.mu), r.alpha_primal, r.alpha_dual,
                      r.reg_primal > 0.0 ? std::to_string(static_cast<int>(std::floor(std::log10(r.reg_primal)))).c_str()
                                         : "-",
                      r.backtracks);
        *o.log << buf;
    };

    auto finish = [&](SolveStatus st, int iter, std::string msg) {
        const auto e = errors(0.0);
        rep.status = st;
        rep.iterations = iter;
        rep.objective = ev.f;
        rep.residuals.stationarity = e.inf_du;
        rep.residuals.primal_infeasibility = e.inf_pr;
        rep.residuals.complementarity = e.compl0;
        double dual_inf = 0.0;
        for (int i = 0; i < np; ++i) dual_inf = std::max({dual_inf, -zl[i], -zu[i]});
        rep.residuals.dual_infeasibility = dual_inf;
        rep.message = std::move(msg);
        rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        out.x.assign(p.data(), p.data() + n);
        out.lambda.assign(y.data(), y.data() + m);
        out.z_lower.assign(zl.data(), zl.data() + n);
        out.z_upper.assign(zu.data(), zu.data() + n);
        if (o.log) {
            *o.log << "\nstatus: " << to_string(st) << " after " << iter << " iterations";
            if (!rep.message.empty()) *o.log << " (" << rep.message << ")";
            *o.log << "\n";
        }
        return out;
    };

    // Stationary point of the infeasibility measure: J^T c ~ 0 while c != 0.
    auto locally_infeasible = [&] {
        const double cn = inf_norm(ev.c);
        if (cn <= o.tol_feas) return false;
        return inf_norm(w.jt_times(ev, ev.c)) <= 1e-4 * cn;
    };

    log_header();
    int forced_reg_level = 0;
    // Primal damping after heavily backtracked steps; shortens Newton steps
    // along directions of low curvature where the quadratic model is poor.
    double damping = 0.0;
    double last_alpha = 0.0, last_alpha_z = 0.0;
    int last_bt = 0;
    for (int iter = 0;; ++iter) {
        auto e = errors(mu);
        {
            IterationRecord rec;
            rec.iter = iter;
            rec.objective = ev.f;
            rec.inf_pr = e.inf_pr;
            rec.inf_du = e.inf_du;
            rec.mu = mu;
            rec.alpha_primal = last_alpha;
            rec.alpha_dual = last_alpha_z;
            rec.backtracks = last_bt;
            if (!rep.history.empty()) {
                rec.reg_primal = rep.history.back().reg_primal;
                rec.merit_before = rep.history.back().merit_before;
                rec.merit_after = rep.history.back().merit_after;
            }
            log_line(rec);
        }
        const auto e0 = errors(0.0);
        if (e0.inf_du <= o.tol_opt && e0.inf_pr <= o.tol_feas && e0.compl0 <= o.tol_opt)
            return finish(SolveStatus::Optimal, iter, {});
        if (iter >= o.max_iter) {
            if (locally_infeasible()) return finish(SolveStatus::Infeasible, iter, "converging to an infeasible point");
            return finish(SolveStatus::MaxIterations, iter, "iteration limit reached");
        }

        // Monotone barrier update.
        while (mu > mu_min && std::max({e.inf_du, e.inf_pr, e.compl_mu}) <= o.barrier_tol_factor * mu) {
            mu = std::max(mu_min, std::min(o.mu_reduction * mu, std::pow(mu, o.mu_superlinear)));
            e = errors(mu);
        }

        // Hessian of the Lagrangian and barrier diagonal.
        nlp.hessian_values(std::span<const double>(p.data(), static_cast<std::size_t>(n)), 1.0,
                           std::span<const double>(y.data(), static_cast<std::size_t>(m)), hess);
        Vec sigma = Vec::Zero(np);
        Vec grad_phi = Vec::Zero(np);
        grad_phi.head(n) = ev.grad_f;
        for (int i = 0; i < np; ++i) {
            if (w.has_lo[i]) {
                sigma[i] += zl[i] / slack_lo(p, i);
                grad_phi[i] -= mu / slack_lo(p, i);
            }
            if (w.has_hi[i]) {
                sigma[i] += zu[i] / slack_hi(p, i);
                grad_phi[i] += mu / slack_hi(p, i);
            }
        }
        const Vec jty = w.jt_times(ev, y);
        Vec rhs(np + m);
        rhs.head(np) = -(grad_phi + jty);
        rhs.tail(m) = -ev.c;

        bool accepted = false;
        for (int attempt = 0; attempt < 4 && !accepted; ++attempt) {
            // Inertia correction.
            double dc = o.dual_reg;
            double dw = damping;
            if (forced_reg_level > 0) dw = std::max(1e-4, reg_last) * std::pow(100.0, forced_reg_level);
            int status;
            int tries = 0;
            Vec sol;
            for (;;) {
                assemble(sigma, dw, dc);
                status = factor_and_solve(rhs, sol);
                if (status == 0) break;
                if (status == 2 && dc == o.dual_reg) {
                    dc = std::max(o.dual_reg, 1e-8 * std::pow(mu, 0.25));
                } else if (dw == 0.0) {
                    dw = reg_last == 0.0 ? 1e-4 : std::max(1e-20, reg_last / 3.0);
                } else {
                    dw *= (reg_last == 0.0 && tries <= 1) ? 100.0 : 8.0;
                }
                if (dw > 1e40 || ++tries > 200) {
                    return finish(SolveStatus::NumericalFailure, iter, "KKT system could not be regularized");
                }
            }
            if (dw > damping) reg_last = dw;

            if (!sol.allFinite()) return finish(SolveStatus::NumericalFailure, iter, "non-finite search direction");
            const Vec dp = sol.head(np);
            const Vec dy = sol.tail(m);
            Vec dzl = Vec::Zero(np), dzu = Vec::Zero(np);
            for (int i = 0; i < np; ++i) {
                if (w.has_lo[i]) dzl[i] = mu / slack_lo(p, i) - zl[i] - zl[i] / slack_lo(p, i) * dp[i];
                if (w.has_hi[i]) dzu[i] = mu / slack_hi(p, i) - zu[i] + zu[i] / slack_hi(p, i) * dp[i];
            }

            const double alpha_max = detail::fraction_to_boundary(p, dp, w.p_lo, w.p_hi, w.has_lo, w.has_hi,
                                                                  o.fraction_to_boundary);
            const Vec zero = Vec::Zero(np);
            const Vec inf = Vec::Constant(np, kInf);
            const double alpha_zl = detail::fraction_to_boundary(zl, dzl, zero, inf, w.has_lo, std::vector<char>(np, 0),
                                                                 o.fraction_to_boundary);
            const double alpha_zu = detail::fraction_to_boundary(zu, dzu, zero, inf, w.has_hi, std::vector<char>(np, 0),
                                                                 o.fraction_to_boundary);
            const double alpha_z = std::min(alpha_zl, alpha_zu);

            // Penalty parameter so that dp is a descent direction of the merit function.
            const double cnorm = ev.c.lpNorm<1>();
            const double gphi_dp = grad_phi.dot(dp);
            if (cnorm > 0.0) {
                // Curvature term of the model, dp^T (W + Sigma) dp.
                double curv = 0.0;
                {
                    Vec wd = Vec::Zero(np);
                    for (std::size_t k = 0; k < hp.nnz(); ++k) {
                        const int r = hp.rows[k], c = hp.cols[k];
                        wd[r] += hess[k] * dp[c];
                        if (r != c) wd[c] += hess[k] * dp[r];
                    }
                    for (int i = 0; i < np; ++i) wd[i] += (sigma[i] + dw) * dp[i];
                    curv = dp.dot(wd);
                }
                const double nu_req = (gphi_dp + 0.5 * std::max(0.0, curv)) / ((1.0 - o.penalty_rho) * cnorm);
                if (nu < nu_req) nu = nu_req + 1e-4;
            }
            const double phi0 = ev.f + w.barrier(p, mu);
            const double merit0 = phi0 + nu * cnorm;
            const double dmerit = gphi_dp - nu * cnorm;

            double tiny = 0.0;
            for (int i = 0; i < np; ++i) tiny = std::max(tiny, std::abs(dp[i]) / (1.0 + std::abs(p[i])));
            const bool tiny_step = tiny < 10.0 * std::numeric_limits<double>::epsilon();

            double alpha = alpha_max;
            detail::IpmWork::Eval trial;
            Vec p_trial;
            int bt = 0;
            double merit1 = merit0;
            auto merit_at = [&](const Vec& pt, detail::IpmWork::Eval& e) {
                w.eval_values(pt, e);
                return e.f + w.barrier(pt, mu) + nu * e.c.lpNorm<1>();
            };
            auto acceptable = [&](double m1, double a) {
                if (!std::isfinite(m1)) return false;
                if (tiny_step) return true;
                return m1 <= merit0 + o.armijo * a * std::min(dmerit, 0.0) && (dmerit < 0.0 || m1 <= merit0);
            };
            for (; bt <= o.max_backtracks; ++bt) {
                p_trial = p + alpha * dp;
                merit1 = merit_at(p_trial, trial);
                if (acceptable(merit1, alpha)) break;
                // Second-order correction against the Maratos effect: on the
                // first rejected full step, re-solve with the constraint
                // residual of the trial point.
                if (bt == 0 && o.max_soc > 0 && std::isfinite(merit1) && trial.c.lpNorm<1>() >= cnorm) {
                    Vec c_soc = alpha * ev.c + trial.c;
                    double theta_prev = trial.c.lpNorm<1>();
                    bool soc_ok = false;
                    Vec rhs_soc(np + m);
                    rhs_soc.head(np) = rhs.head(np);
                    for (int q = 0; q < o.max_soc; ++q) {
                        rhs_soc.tail(m) = -c_soc;
                        const Vec dp_soc = solve_kkt(rhs_soc).head(np);
                        const double a_soc = detail::fraction_to_boundary(p, dp_soc, w.p_lo, w.p_hi, w.has_lo,
                                                                          w.has_hi, o.fraction_to_boundary);
                        Vec p_soc = p + a_soc * dp_soc;
                        detail::IpmWork::Eval e_soc;
                        const double m_soc = merit_at(p_soc, e_soc);
                        if (acceptable(m_soc, alpha)) {
                            p_trial = std::move(p_soc);
                            trial = std::move(e_soc);
                            merit1 = m_soc;
                            soc_ok = true;
                            break;
                        }
                        const double theta = e_soc.c.lpNorm<1>();
                        if (!std::isfinite(m_soc) || theta > 0.99 * theta_prev) break;
                        theta_prev = theta;
                        c_soc = a_soc * c_soc + e_soc.c;
                    }
                    if (soc_ok) break;
                }
                alpha *= o.backtrack_factor;
            }
            if (bt > o.max_backtracks) {
                ++forced_reg_level;
                continue;
            }

            forced_reg_level = 0;
            accepted = true;
            if (bt >= o.damping_backtracks)
                damping = std::max(o.damping_init, damping * o.damping_growth);
            else
                damping = damping / o.damping_growth < 1e-3 * o.damping_init ? 0.0 : damping / o.damping_growth;
            p = p_trial;
            y += alpha * dy;
            zl += alpha_z * dzl;
            zu += alpha_z * dzu;
            for (int i = 0; i < np; ++i) {
                if (w.has_lo[i]) {
                    const double sl = slack_lo(p, i);
                    zl[i] = std::clamp(zl[i], mu / (o.z_safeguard * sl), o.z_safeguard * mu / sl);
                }
                if (w.has_hi[i]) {
                    const double su = slack_hi(p, i);
                    zu[i] = std::clamp(zu[i], mu / (o.z_safeguard * su), o.z_safeguard * mu / su);
                }
            }
            ev.f = trial.f;
            ev.g = std::move(trial.g);
            ev.c = std::move(trial.c);
            w.eval_derivatives(p, ev);

            IterationRecord rec;
            rec.iter = iter + 1;
            rec.objective = ev.f;
            rec.mu = mu;
            rec.alpha_primal = alpha;
            rec.alpha_dual = alpha_z;
            rec.merit_before = merit0;
            rec.merit_after = merit1;
            rec.reg_primal = dw;
            rec.backtracks = bt;
            rep.history.push_back(rec);
            last_alpha = alpha;
            last_alpha_z = alpha_z;
            last_bt = bt;
        }
        if (!accepted) {
            if (locally_infeasible()) return finish(SolveStatus::Infeasible, iter, "converging to an infeasible point");
            return finish(SolveStatus::NumericalFailure, iter, "line search failed");
        }
        // Fill the residual fields of the record just written.
        auto& last = rep.history.back();
        const auto en = errors(mu);
        last.inf_pr = en.inf_pr;
        last.inf_du = en.inf_du;
    }
}

}  // namespace racestrat
