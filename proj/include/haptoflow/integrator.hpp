#pragma once
// IMEX time stepping, step-size selection and the run loop.

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "haptoflow/errors.hpp"
#include "haptoflow/operators.hpp"

namespace haptoflow {

inline constexpr double kImexTau = 1.0 - 0.70710678118654752440;  // (2 - sqrt 2)/2
inline constexpr double kImexSigma = 1.0 - 1.0 / (2.0 * kImexTau);

struct StepBounds {
    double micro = std::numeric_limits<double>::infinity();
    double macro = std::numeric_limits<double>::infinity();
};

/// Micro (transport) and macro (diffusion/drift) bounds from per-cell norms.
inline StepBounds step_bounds(double h, double eps, double delta, double diff_norm, double drift_norm) {
    StepBounds b;
    if (delta > 0.0) b.micro = eps * h / (2.0 * delta);
    const double dd = diff_norm > 0.0 ? h * h / (2.0 * diff_norm) : std::numeric_limits<double>::infinity();
    const double da = drift_norm > 0.0 ? h / (2.0 * drift_norm) : std::numeric_limits<double>::infinity();
    b.macro = std::min(dd, da);
    return b;
}

inline double combine_bounds(const StepBounds& b, double safety) {
    const bool fm = std::isfinite(b.micro), fM = std::isfinite(b.macro);
    if (fm && fM) return safety * 0.5 * (b.micro + b.macro);
    if (fM) return safety * b.macro;
    if (fm) return safety * b.micro;
    throw ValidationError("stable_dt: no finite step bound (all speeds vanish)");
}

inline double cell_diffusion_norm(const ModelField& m, int j) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m.diffusion[j], Eigen::EigenvaluesOnly);
    return m.scaling.delta * es.eigenvalues().cwiseAbs().maxCoeff() / m.collision_scale[j];
}
inline double cell_drift_norm(const ModelField& m, int j) {
    return m.scaling.delta * m.scaling.nu * m.drift[j].norm() / m.collision_scale[j];
}

/// theta*dt <= safety for every variant: explicit growth stays monotone, and the
/// implicit logistic step has no spurious positive root at empty vertices.
inline double growth_step_limit(const ModelField& model, const SchemeConfig& config) {
    if (!(model.scaling.theta > 0.0)) return std::numeric_limits<double>::infinity();
    return config.effective_cfl() / model.scaling.theta;
}

/// Global step: safety * (micro + macro)/2 with the macro bound the more
/// restrictive of the diffusion and advection limits.
inline double stable_dt(const Grid& grid, const ModelField& model, const SchemeConfig& config) {
    double dn = 0.0, an = 0.0;
    for (int j = 0; j < model.n_cells; ++j) {
        dn = std::max(dn, cell_diffusion_norm(model, j));
        an = std::max(an, cell_drift_norm(model, j));
    }
    const StepBounds b = step_bounds(grid.min_spacing(), model.scaling.eps, model.scaling.delta, dn, an);
    return std::min(combine_bounds(b, config.effective_cfl()), growth_step_limit(model, config));
}

/// Per-vertex and per-cell pseudo-time steps for steady-state iteration.
struct LocalSteps {
    std::vector<double> vertex;
    std::vector<double> cell;
};

inline LocalSteps local_steps(const Grid& grid, const ModelField& model, const SchemeConfig& config) {
    LocalSteps ls;
    const int nc = grid.cell_count();
    std::vector<double> dn(nc), an(nc);
    for (int j = 0; j < nc; ++j) {
        dn[j] = cell_diffusion_norm(model, j);
        an[j] = cell_drift_norm(model, j);
    }
    ls.vertex.assign(grid.vertex_count(), 0.0);
    std::vector<double> vd(grid.vertex_count(), 0.0), va(grid.vertex_count(), 0.0);
    for (int j = 0; j < nc; ++j)
        for (int o = 0; o < grid.corners_per_cell(); ++o) {
            const int r = grid.corner(j, o);
            vd[r] = std::max(vd[r], dn[j]);
            va[r] = std::max(va[r], an[j]);
        }
    const double h = grid.min_spacing();
    for (int r = 0; r < grid.vertex_count(); ++r)
        ls.vertex[r] = std::min(combine_bounds(step_bounds(h, model.scaling.eps, model.scaling.delta, vd[r], va[r]),
                                               config.effective_cfl()),
                                growth_step_limit(model, config));
    ls.cell.assign(nc, std::numeric_limits<double>::infinity());
    for (int j = 0; j < nc; ++j)
        for (int o = 0; o < grid.corners_per_cell(); ++o)
            ls.cell[j] = std::min(ls.cell[j], ls.vertex[grid.corner(j, o)]);
    return ls;
}

inline void axpy(std::vector<double>& y, double a, const std::vector<double>& x) {
    if (x.empty()) return;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline void pin(State& s, const Scheme& sc) {
    if (sc.config.bc != BoundaryKind::dirichlet) return;
    for (std::size_t r = 0; r < s.rho.size(); ++r)
        if (sc.pinned[r]) s.rho[r] = sc.pinned_value[r];
}

/// First-order forward-backward Euler: explicit micro step, per-cell implicit
/// relaxation, then the macro step with the relaxed perturbation.
inline void step_imex1(State& s, double dt, const Scheme& sc, const LocalSteps* local = nullptr) {
    if (!(dt > 0.0)) throw ValidationError("step_imex1: time step must be positive");
    const double t = s.time;
    const int n = sc.n;
    const Rhs micro = explicit_rhs(s, t, sc, false, true);
    if (local) {
        for (int j = 0; j < sc.grid.cell_count(); ++j) {
            const double dj = local->cell[j];
            for (int i = 0; i < n; ++i) s.u[static_cast<std::size_t>(j) * n + i] += dj * micro.d_u[static_cast<std::size_t>(j) * n + i];
            for (int v = 0; v < sc.n_var; ++v)
                for (int i = 0; i < n; ++i) s.du_variants[sc.du_index(v, j) + i] += dj * micro.d_du[sc.du_index(v, j) + i];
        }
    } else {
        axpy(s.u, dt, micro.d_u);
        axpy(s.du_variants, dt, micro.d_du);
    }
    // Relax u only: rho stays at rho^n and its implicit part is applied after the macro step.
    {
        State tmp = s;
        implicit_update(tmp, dt, sc, local ? &local->cell : nullptr, local ? &local->vertex : nullptr);
        s.u = std::move(tmp.u);
        s.du_variants = std::move(tmp.du_variants);
    }
    const Rhs macro = explicit_rhs(s, t, sc, true, false);
    if (local) {
        for (std::size_t r = 0; r < s.rho.size(); ++r) s.rho[r] += local->vertex[r] * macro.d_rho[r];
    } else {
        axpy(s.rho, dt, macro.d_rho);
    }
    if (is_iv(sc.config.variant) && sc.theta() != 0.0) {
        for (std::size_t r = 0; r < s.rho.size(); ++r) {
            if (sc.pinned[r]) continue;
            const double d = local ? local->vertex[r] : dt;
            s.rho[r] = implicit_logistic(s.rho[r], d * sc.theta(), sc.model.rho_cc);
        }
    }
    pin(s, sc);
    s.time = t + dt;
}

/// Stiffly accurate second-order IMEX scheme with tau = (2 - sqrt 2)/2, sigma = 1 - 1/(2 tau).
inline void step_imex2(State& s, double dt, const Scheme& sc) {
    if (!(dt > 0.0)) throw ValidationError("step_imex2: time step must be positive");
    const double t = s.time;
    const double tau = kImexTau, sigma = kImexSigma;
    const Rhs phi1 = explicit_rhs(s, t, sc);

    State x1 = s;
    axpy(x1.rho, tau * dt, phi1.d_rho);
    axpy(x1.u, tau * dt, phi1.d_u);
    axpy(x1.du_variants, tau * dt, phi1.d_du);
    pin(x1, sc);
    implicit_update(x1, tau * dt, sc);

    const Rhs phi2 = explicit_rhs(x1, t + tau * dt, sc);
    const Rhs gam2 = implicit_rhs(x1, sc);

    State x2 = s;
    axpy(x2.rho, (1.0 - tau) * dt, gam2.d_rho);
    axpy(x2.u, (1.0 - tau) * dt, gam2.d_u);
    axpy(x2.du_variants, (1.0 - tau) * dt, gam2.d_du);
    axpy(x2.rho, sigma * dt, phi1.d_rho);
    axpy(x2.u, sigma * dt, phi1.d_u);
    axpy(x2.du_variants, sigma * dt, phi1.d_du);
    axpy(x2.rho, (1.0 - sigma) * dt, phi2.d_rho);
    axpy(x2.u, (1.0 - sigma) * dt, phi2.d_u);
    axpy(x2.du_variants, (1.0 - sigma) * dt, phi2.d_du);
    pin(x2, sc);
    implicit_update(x2, tau * dt, sc);
    x2.time = t + dt;
    s = std::move(x2);
}

inline void step(State& s, double dt, const Scheme& sc, const LocalSteps* local = nullptr) {
    if (scheme_order(sc.config.variant) == 2) {
        if (local) throw ValidationError("local time stepping is only available for first-order variants");
        step_imex2(s, dt, sc);
    } else {
        step_imex1(s, dt, sc, local);
    }
}

struct StepControl {
    double dt = 0.0;
    double t_end = std::numeric_limits<double>::infinity();
    std::optional<double> steady_tol;
    long max_steps = std::numeric_limits<long>::max();
    /// Per-cell pseudo-time steps (steady problems, first-order variants).
    bool local_time_stepping = false;
};

struct Diagnostics {
    long step = 0;
    double time = 0.0;
    double dt = 0.0;
    double mass = 0.0;
    double rho_min = 0.0;
    double rho_max = 0.0;
    double step_norm = 0.0;  ///< ||rho_prev - rho|| / (||rho|| dt)
};

struct RunSummary {
    long steps = 0;
    double time = 0.0;
    bool steady = false;
    bool reached_end = false;
    bool aborted = false;
    Diagnostics last;
};

inline double total_mass(const State& s, const Grid& g) {
    double m = 0.0;
    for (int r = 0; r < g.vertex_count(); ++r) m += g.dual_volume(r) * s.rho[r];
    return m;
}

/// Advances until t_end, the steady tolerance, or max_steps. The callback may
/// return false to abort.
inline RunSummary run(State& s, const Scheme& sc, const StepControl& control,
                      const std::function<bool(const Diagnostics&)>& callback = {}) {
    if (!(control.dt > 0.0)) throw ValidationError("run: dt must be positive");
    prepare_state(s, sc);
    std::optional<LocalSteps> local;
    if (control.local_time_stepping) local = local_steps(sc.grid, sc.model, sc.config);
    RunSummary out;
    const double t_end = control.t_end;
    std::vector<double> prev;
    while (out.steps < control.max_steps) {
        if (s.time >= t_end * (1.0 - 1e-14) && std::isfinite(t_end)) {
            out.reached_end = true;
            break;
        }
        double dt = control.dt;
        if (std::isfinite(t_end) && s.time + dt > t_end) dt = t_end - s.time;
        prev = s.rho;
        step(s, dt, sc, local ? &*local : nullptr);
        ++out.steps;
        if (std::isfinite(t_end) && std::abs(s.time - t_end) <= 1e-12 * std::max(1.0, std::abs(t_end))) s.time = t_end;

        Diagnostics d;
        d.step = out.steps;
        d.time = s.time;
        d.dt = dt;
        double diff2 = 0.0, norm2 = 0.0;
        d.rho_min = std::numeric_limits<double>::infinity();
        d.rho_max = -std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < s.rho.size(); ++r) {
            const double v = s.rho[r];
            if (!std::isfinite(v))
                throw RuntimeFailure("non-finite density at step " + std::to_string(out.steps) + " (vertex " +
                                     std::to_string(r) + ")");
            diff2 += (v - prev[r]) * (v - prev[r]);
            norm2 += v * v;
            d.rho_min = std::min(d.rho_min, v);
            d.rho_max = std::max(d.rho_max, v);
        }
        for (double v : s.u)
            if (!std::isfinite(v)) throw RuntimeFailure("non-finite perturbation at step " + std::to_string(out.steps));
        d.mass = total_mass(s, sc.grid);
        d.step_norm = diff2 == 0.0 ? 0.0 : std::sqrt(diff2) / (std::sqrt(norm2) * dt);
        out.last = d;
        out.time = s.time;
        if (callback && !callback(d)) {
            out.aborted = true;
            break;
        }
        if (control.steady_tol && d.step_norm < *control.steady_tol) {
            out.steady = true;
            break;
        }
    }
    if (std::isfinite(t_end) && s.time >= t_end * (1.0 - 1e-14)) out.reached_end = true;
    return out;
}

}  // namespace haptoflow
