#pragma once
// Benchmark drivers shared by the command-line tool and the acceptance checks,
// plus the configuration-driven simulation.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "haptoflow/config.hpp"
#include "haptoflow/errors.hpp"
#include "haptoflow/grid.hpp"
#include "haptoflow/integrator.hpp"
#include "haptoflow/model.hpp"
#include "haptoflow/operators.hpp"
#include "haptoflow/output.hpp"
#include "haptoflow/sphere_basis.hpp"
#include "haptoflow/tensor_field.hpp"
#include "haptoflow/verification.hpp"

namespace haptoflow {

/// Knobs common to every benchmark. Unset optionals take the benchmark's own default.
struct BenchOptions {
    SchemeConfig scheme;
    int order = 1;
    std::optional<double> eps;
    std::optional<int> points;
    std::optional<int> levels;
    std::optional<double> refine;
    std::optional<double> steady_tol;
};

/// Density and exact solution on one grid.
struct FieldRun {
    Grid grid;
    std::vector<double> rho;
    std::vector<double> exact;
    RunSummary summary;
    double error = 0.0;  ///< dual-volume L2
};

namespace detail {

inline std::vector<double> sample_vertices(const Grid& g, const std::function<double(const Eigen::Vector3d&)>& f) {
    std::vector<double> v(g.vertex_count());
    for (int r = 0; r < g.vertex_count(); ++r) v[r] = f(g.vertex_position(r));
    return v;
}

template <class Level>
ConvergenceStudy convergence(const std::string& name, int base, double refine, int levels, Level&& run_level) {
    if (levels < 2) throw ValidationError("a convergence study needs at least two levels");
    if (!(refine > 1.0)) throw ValidationError("refinement factor must exceed 1");
    ConvergenceStudy s;
    s.name = name;
    s.base_points = base;
    s.refine = refine;
    for (int l = 0; l < levels; ++l) {
        const int m = level_points(base, refine, l);
        const FieldRun fr = run_level(m);
        s.levels.push_back({m, fr.grid.min_spacing(), fr.error});
    }
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Fundamental solution

struct FundamentalDefaults {
    static constexpr double eps = 1e-5;
    static constexpr int points = 40;
    static constexpr int levels = 5;
    static constexpr double refine = 1.5;
    static constexpr double t_end = 0.5;
    static constexpr double drift_speed = 0.1;
};

inline FieldRun run_fundamental(int points, double a0, double eps, const SchemeConfig& cfg, int order = 1,
                                double t_end = FundamentalDefaults::t_end) {
    auto fs = fundamental_test_setup(a0);
    fs.scaling.eps = eps;
    FieldRun out{build_uniform_grid(2, points, 0.0, 1.0), {}, {}, {}, 0.0};
    const Grid& g = out.grid;
    const MomentBasis b = build_basis(order);
    ModelInputs in;
    in.water.assign(g.cell_count(), fs.water);
    in.lambda_hat = fs.lambda_hat;
    in.grad_q.assign(g.cell_count(), fs.grad_q);
    in.scaling = fs.scaling;
    const ModelField m = build_model_field(g, b, in);
    const Scheme sc(g, b, m, cfg);
    State s = make_state(g, b.n_restricted);
    s.rho = detail::sample_vertices(g, [&](const Eigen::Vector3d& x) { return fs.rho_exact(0.0, x); });
    StepControl ctl;
    ctl.dt = stable_dt(g, m, sc.config);
    ctl.t_end = t_end;
    out.summary = run(s, sc, ctl);
    out.rho = std::move(s.rho);
    out.exact = detail::sample_vertices(g, [&](const Eigen::Vector3d& x) { return fs.rho_exact(t_end, x); });
    out.error = l2_error(out.rho, out.exact, g);
    return out;
}

inline ConvergenceStudy fundamental_convergence(double a0, double eps, const SchemeConfig& cfg, int order = 1,
                                                int base = FundamentalDefaults::points,
                                                double refine = FundamentalDefaults::refine,
                                                int levels = FundamentalDefaults::levels,
                                                FieldRun* finest = nullptr) {
    return detail::convergence(a0 == 0.0 ? "fundamental" : "fundamental-drift", base, refine, levels, [&](int m) {
        FieldRun fr = run_fundamental(m, a0, eps, cfg, order);
        if (finest) *finest = fr;
        return fr;
    });
}

struct EpsSweepPoint {
    double eps = 0.0;
    double error = 0.0;
};

inline std::vector<EpsSweepPoint> fundamental_eps_sweep(const std::vector<double>& eps_values, int points,
                                                        const SchemeConfig& cfg, int order = 1) {
    std::vector<EpsSweepPoint> out;
    for (double e : eps_values) out.push_back({e, run_fundamental(points, 0.0, e, cfg, order).error});
    return out;
}

inline std::vector<double> default_eps_sweep() {
    std::vector<double> v;
    for (int k = 1; k <= 9; ++k) v.push_back(std::pow(10.0, -k));
    return v;
}

// ---------------------------------------------------------------------------
// Manufactured solution

struct ManufacturedDefaults {
    static constexpr double eps = 1e-5;
    static constexpr int points = 20;
    static constexpr int levels = 6;
    static constexpr double refine = 1.5;
};

inline FieldRun run_manufactured(int points, double eps, double nu, const SchemeConfig& cfg, int order = 1) {
    const auto mc = manufactured_case();
    FieldRun out{build_uniform_grid(2, points, 0.0, 1.0), {}, {}, {}, 0.0};
    const Grid& g = out.grid;
    const MomentBasis b = build_basis(order);
    ModelInputs in;
    for (int j = 0; j < g.cell_count(); ++j) in.water.push_back(mc.water(g.cell_center(j)));
    in.water_at = [mc](const Eigen::Vector3d& x) { return mc.water(x); };
    in.lambda_hat = 1.0;
    in.scaling.eps = eps;
    in.scaling.delta = mc.delta;
    in.scaling.nu = nu;
    in.scaling.theta = 0.0;
    const ModelField m = build_model_field(g, b, in);
    const Scheme sc(g, b, m, cfg, manufactured_sources(mc, g, b, m));
    State s = make_state(g, b.n_restricted);
    s.rho = detail::sample_vertices(g, [&](const Eigen::Vector3d& x) { return mc.rho(0.0, x); });
    StepControl ctl;
    ctl.dt = stable_dt(g, m, sc.config);
    ctl.t_end = mc.t_end;
    out.summary = run(s, sc, ctl);
    out.rho = std::move(s.rho);
    out.exact = detail::sample_vertices(g, [&](const Eigen::Vector3d& x) { return mc.rho(mc.t_end, x); });
    out.error = l2_error(out.rho, out.exact, g);
    return out;
}

inline ConvergenceStudy manufactured_convergence(double eps, double nu, const SchemeConfig& cfg, int order = 1,
                                                 int base = ManufacturedDefaults::points,
                                                 double refine = ManufacturedDefaults::refine,
                                                 int levels = ManufacturedDefaults::levels) {
    return detail::convergence("manufactured", base, refine, levels,
                               [&](int m) { return run_manufactured(m, eps, nu, cfg, order); });
}

// ---------------------------------------------------------------------------
// Quadrants (discontinuous collision scale, steady)

struct QuadrantsDefaults {
    static constexpr std::array<double, 4> kappa{100.0, 1.0, 100.0, 1.0};
    static constexpr double eps = 1e-5;
    static constexpr int points = 20;
    static constexpr int levels = 4;
    static constexpr double refine = 1.5;
    static constexpr double steady_tol = 1e-8;
    static constexpr double cfl = 0.9;
};

inline FieldRun run_quadrants(const QuadrantsSolution& qs, int points, double eps, double steady_tol,
                              SchemeConfig cfg) {
    FieldRun out{build_uniform_grid(2, points, -1.0, 1.0), {}, {}, {}, 0.0};
    const Grid& g = out.grid;
    const MomentBasis b = build_basis(1);
    ModelInputs in;
    in.water.assign(g.cell_count(), Eigen::Matrix3d::Identity());
    for (int j = 0; j < g.cell_count(); ++j) {
        const auto c = g.cell_center(j);
        in.collision_scale.push_back(3.0 / qs.kappa[QuadrantsSolution::quadrant_of(QuadrantsSolution::angle(c(0), c(1)))]);
    }
    in.lambda_hat = 1.0;
    in.grad_q.assign(g.cell_count(), Eigen::Vector3d::Zero());
    in.scaling.eps = eps;
    in.scaling.delta = 1.0;
    in.scaling.nu = 0.0;
    const ModelField m = build_model_field(g, b, in);
    cfg.bc = BoundaryKind::dirichlet;
    cfg.dirichlet_value = [qs](const Eigen::Vector3d& x) { return qs(x(0), x(1)); };
    const Scheme sc(g, b, m, cfg);
    State s = make_state(g, b.n_restricted);
    StepControl ctl;
    ctl.dt = stable_dt(g, m, sc.config);
    ctl.steady_tol = steady_tol;
    ctl.local_time_stepping = true;
    ctl.max_steps = 20000000;
    out.summary = run(s, sc, ctl);
    if (!out.summary.steady) throw RuntimeFailure("quadrants: no steady state within the step limit");
    out.rho = std::move(s.rho);
    out.exact = detail::sample_vertices(g, [&](const Eigen::Vector3d& x) { return qs(x(0), x(1)); });
    out.error = l2_error(out.rho, out.exact, g);
    return out;
}

inline ConvergenceStudy quadrants_convergence(const QuadrantsSolution& qs, double eps, double steady_tol,
                                              const SchemeConfig& cfg, int base = QuadrantsDefaults::points,
                                              double refine = QuadrantsDefaults::refine,
                                              int levels = QuadrantsDefaults::levels) {
    return detail::convergence("quadrants", base, refine, levels,
                               [&](int m) { return run_quadrants(qs, m, eps, steady_tol, cfg); });
}

// ---------------------------------------------------------------------------
// Anisotropic half-plane (steady)

struct HalfplaneDefaults {
    static constexpr double theta_left = 80.0;
    static constexpr double theta_right = 20.0;
    static constexpr double aniso = 2.5;
    static constexpr double eps = 1e-8;
    static constexpr int points = 50;
    static constexpr double steady_tol = 1e-8;
};

struct HalfplaneResult {
    HalfplaneCase hc;
    FieldRun field;
    double density_error = 0.0;  ///< max |rho - exact| / max |exact|
    Eigen::Vector3d density_error_at = Eigen::Vector3d::Zero();
    double flux_error = 0.0;     ///< max |flux - exact| / max |exact flux| over cells
    Eigen::Vector3d flux_error_at = Eigen::Vector3d::Zero();
    std::vector<double> flux_x, flux_y;  ///< per primal cell
};

/// Test 1 uses s_L = (1, 0), Test 2 s_L = (1, 1).
inline HalfplaneResult run_halfplane(const Eigen::Vector2d& s_left, int points, double eps, double steady_tol,
                                     SchemeConfig cfg) {
    HalfplaneResult res;
    res.hc = halfplane_case(HalfplaneDefaults::theta_left, HalfplaneDefaults::theta_right, HalfplaneDefaults::aniso,
                            HalfplaneDefaults::aniso, s_left);
    const HalfplaneCase& hc = res.hc;
    FieldRun& out = res.field;
    out.grid = build_uniform_grid(2, points, -1.0, 1.0);
    const Grid& g = out.grid;
    const MomentBasis b = build_basis(1);
    ModelInputs in;
    const Eigen::Matrix3d wl = water_from_tumor_tensor(hc.d_left), wr = water_from_tumor_tensor(hc.d_right);
    for (int j = 0; j < g.cell_count(); ++j) in.water.push_back(g.cell_center(j)(0) < 0.0 ? wl : wr);
    in.lambda_hat = 1.0;
    in.grad_q.assign(g.cell_count(), Eigen::Vector3d::Zero());
    in.scaling.eps = eps;
    in.scaling.delta = 1.0;
    in.scaling.nu = 0.0;
    const ModelField m = build_model_field(g, b, in);
    cfg.bc = BoundaryKind::dirichlet;
    cfg.dirichlet_value = [hc](const Eigen::Vector3d& x) { return hc.rho(x); };
    const Scheme sc(g, b, m, cfg);
    State s = make_state(g, b.n_restricted);
    StepControl ctl;
    ctl.dt = stable_dt(g, m, sc.config);
    ctl.steady_tol = steady_tol;
    ctl.local_time_stepping = true;
    ctl.max_steps = 20000000;
    out.summary = run(s, sc, ctl);
    if (!out.summary.steady) throw RuntimeFailure("halfplane: no steady state within the step limit");
    out.rho = s.rho;
    out.exact = detail::sample_vertices(g, [&](const Eigen::Vector3d& x) { return hc.rho(x); });
    out.error = l2_error(out.rho, out.exact, g);

    double rmax = 0.0;
    for (double v : out.exact) rmax = std::max(rmax, std::abs(v));
    for (int r = 0; r < g.vertex_count(); ++r) {
        const double e = std::abs(out.rho[r] - out.exact[r]) / rmax;
        if (e > res.density_error) {
            res.density_error = e;
            res.density_error_at = g.vertex_position(r);
        }
    }
    const double c1 = std::sqrt(4.0 * kPi / 3.0) * sc.delta();
    double fmax = 0.0;
    res.flux_x.resize(g.cell_count());
    res.flux_y.resize(g.cell_count());
    std::vector<double> ferr(g.cell_count());
    for (int j = 0; j < g.cell_count(); ++j) {
        const Eigen::Vector3d c = g.cell_center(j);
        const Eigen::Vector2d fe = hc.flux(c);
        const Eigen::Vector2d fn(c1 * s.u_at(j)[b.axis_slot(0)], c1 * s.u_at(j)[b.axis_slot(1)]);
        res.flux_x[j] = fn(0);
        res.flux_y[j] = fn(1);
        fmax = std::max(fmax, fe.norm());
        ferr[j] = (fn - fe).norm();
    }
    for (int j = 0; j < g.cell_count(); ++j) {
        if (ferr[j] / fmax > res.flux_error) {
            res.flux_error = ferr[j] / fmax;
            res.flux_error_at = g.cell_center(j);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Synthetic brain

struct BrainToyDefaults {
    static constexpr int points = 40;
    static constexpr double domain_mm = 80.0;
    static constexpr double eps = 3.28e-6;
    static constexpr double delta = 2.72e-4;
    static constexpr double nu = 125.0;
    static constexpr double theta = 8.44e-7 * 6.31e7;
    static constexpr double t_end = 2.0;
    static constexpr double cfl = 0.2;
    static constexpr double strength = 4.0;
    static constexpr double width_mm = 8.0;
    static constexpr double contour = 0.1;
};

struct BrainToyResult {
    Grid grid;
    std::vector<double> rho_mi, rho_iv;
    RunSummary mi, iv;
    double dt = 0.0;
    int region_mi = 0;   ///< vertices with rho >= contour * rho_cc
    int region_iv = 0;
    int outside = 0;     ///< MI1 region vertices outside the IV1 region
    double rho_min = 0.0, rho_max = 0.0;
};

/// MI1 and IV1 from a point source on a fiber-cross field with a shared time step.
inline BrainToyResult run_brain_toy(int points = BrainToyDefaults::points, double eps = BrainToyDefaults::eps,
                                    double cfl = BrainToyDefaults::cfl, Stencil stencil = Stencil::improved) {
    BrainToyResult res;
    res.grid = build_uniform_grid(2, points, 0.0, 1.0);
    const Grid& g = res.grid;
    const double sp = BrainToyDefaults::domain_mm / 40.0;
    const auto field = fiber_cross_field({40, 40, 1}, Eigen::Vector3d(sp, sp, sp), BrainToyDefaults::strength,
                                         BrainToyDefaults::width_mm);
    const MomentBasis b = build_basis(1);
    ModelInputs in;
    in.water = sample_cells(field, g, BrainToyDefaults::domain_mm);
    in.scaling.eps = eps;
    in.scaling.delta = BrainToyDefaults::delta;
    in.scaling.nu = BrainToyDefaults::nu;
    in.scaling.theta = BrainToyDefaults::theta;
    const ModelField m = build_model_field(g, b, in);
    SchemeConfig mi, iv;
    mi.variant = Variant::MI1;
    iv.variant = Variant::IV1;
    mi.stencil = iv.stencil = stencil;
    mi.cfl_safety = iv.cfl_safety = cfl;
    res.dt = std::min(stable_dt(g, m, mi), stable_dt(g, m, iv));
    const int centre = g.vertex_index({points / 2, points / 2, 0});
    for (int pass = 0; pass < 2; ++pass) {
        const Scheme sc(g, b, m, pass == 0 ? mi : iv);
        State s = make_state(g, b.n_restricted);
        s.rho[centre] = m.rho_cc;
        StepControl ctl;
        ctl.dt = res.dt;
        ctl.t_end = BrainToyDefaults::t_end;
        (pass == 0 ? res.mi : res.iv) = run(s, sc, ctl);
        (pass == 0 ? res.rho_mi : res.rho_iv) = std::move(s.rho);
    }
    const double level = BrainToyDefaults::contour * m.rho_cc;
    res.rho_min = std::numeric_limits<double>::infinity();
    res.rho_max = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < g.vertex_count(); ++r) {
        const bool in_mi = res.rho_mi[r] >= level, in_iv = res.rho_iv[r] >= level;
        res.region_mi += in_mi;
        res.region_iv += in_iv;
        res.outside += in_mi && !in_iv;
        for (double v : {res.rho_mi[r], res.rho_iv[r]}) {
            res.rho_min = std::min(res.rho_min, v);
            res.rho_max = std::max(res.rho_max, v);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Diffusion-limit stencil probe

struct StencilProbe {
    Stencil stencil = Stencil::improved;
    double eps = 0.0;
    std::array<std::array<double, 3>, 3> weights{};  ///< d rho / dt around a unit impulse, [dy][dx]
    double axis_leakage = 0.0;    ///< max |axis weight| / max |weight|, neighbours only
    double corner_leakage = 0.0;  ///< max |corner weight| / max |weight|, neighbours only
    std::string classification;
};

/// One first-order step from a unit impulse on an isotropic field: the density
/// increment divided by dt is the scheme's diffusion stencil.
inline StencilProbe probe_limit_stencil(Stencil stencil, double eps, int points = 8) {
    const Grid g = build_uniform_grid(2, points, 0.0, 1.0);
    const MomentBasis b = build_basis(1);
    ModelInputs in;
    in.water.assign(g.cell_count(), Eigen::Matrix3d::Identity());
    in.lambda_hat = 1.0;
    in.grad_q.assign(g.cell_count(), Eigen::Vector3d::Zero());
    in.scaling.eps = eps;
    in.scaling.delta = 1.0;
    const ModelField m = build_model_field(g, b, in);
    SchemeConfig cfg;
    cfg.stencil = stencil;
    const Scheme sc(g, b, m, cfg);
    State s = make_state(g, b.n_restricted);
    const int c = points / 2;
    s.rho[g.vertex_index({c, c, 0})] = 1.0;
    prepare_state(s, sc);
    const std::vector<double> before = s.rho;
    const double dt = stable_dt(g, m, sc.config);
    step(s, dt, sc);
    StencilProbe p;
    p.stencil = stencil;
    p.eps = eps;
    double wmax = 0.0, axis = 0.0, corner = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            const int r = g.vertex_index({c + dx, c + dy, 0});
            const double w = (s.rho[r] - before[r]) / dt * g.spacing(0) * g.spacing(0);
            p.weights[dy + 1][dx + 1] = w;
            if (dx == 0 && dy == 0) continue;
            wmax = std::max(wmax, std::abs(w));
            ((dx == 0 || dy == 0) ? axis : corner) = std::max((dx == 0 || dy == 0) ? axis : corner, std::abs(w));
        }
    p.axis_leakage = wmax > 0.0 ? axis / wmax : 0.0;
    p.corner_leakage = wmax > 0.0 ? corner / wmax : 0.0;
    if (p.corner_leakage < 1e-12)
        p.classification = "standard five-point";
    else if (p.axis_leakage < 1e-12)
        p.classification = "diagonal five-point";
    else
        p.classification = "nine-point";
    return p;
}

// ---------------------------------------------------------------------------
// Mass conservation under reflective boundaries

struct MassCheck {
    double eps = 0.0;
    long steps = 0;
    double initial_mass = 0.0;
    double relative_drift = 0.0;  ///< max over steps of |m_n - m_0| / m_0
};

inline MassCheck check_mass_conservation(double eps, int points = 50, long steps = 200,
                                         Variant variant = Variant::MI1) {
    const Grid g = build_uniform_grid(2, points, 0.0, 1.0);
    const MomentBasis b = build_basis(1);
    const auto field = fiber_cross_field({20, 20, 1}, Eigen::Vector3d(0.05, 0.05, 0.05), 4.0, 0.1);
    ModelInputs in;
    in.water = sample_cells(field, g);
    in.scaling.eps = eps;
    in.scaling.delta = 0.01;
    in.scaling.nu = 1.0;
    in.scaling.theta = 0.0;
    const ModelField m = build_model_field(g, b, in);
    SchemeConfig cfg;
    cfg.variant = variant;
    const Scheme sc(g, b, m, cfg);
    State s = make_state(g, b.n_restricted);
    s.rho = detail::sample_vertices(g, [](const Eigen::Vector3d& x) {
        return 1.0 + std::exp(-((x(0) - 0.4) * (x(0) - 0.4) + (x(1) - 0.6) * (x(1) - 0.6)) / 0.01);
    });
    MassCheck mc;
    mc.eps = eps;
    mc.initial_mass = total_mass(s, g);
    StepControl ctl;
    ctl.dt = stable_dt(g, m, sc.config);
    ctl.max_steps = steps;
    const auto sum = run(s, sc, ctl, [&](const Diagnostics& d) {
        mc.relative_drift = std::max(mc.relative_drift, std::abs(d.mass - mc.initial_mass) / mc.initial_mass);
        return true;
    });
    mc.steps = sum.steps;
    return mc;
}

// ---------------------------------------------------------------------------
// Configuration-driven simulation

struct Simulation {
    Grid grid;
    MomentBasis basis;
    ModelField model;
    State state;
    RunSummary summary;
};

inline std::vector<Eigen::Matrix3d> config_water(const RunConfig& cfg, const Grid& g) {
    switch (cfg.field) {
        case FieldKind::constant:
            return std::vector<Eigen::Matrix3d>(g.cell_count(), Eigen::Matrix3d(cfg.water_diag.asDiagonal()));
        case FieldKind::fiber_cross:
            return sample_cells(fiber_cross_field(cfg.fiber_dims, cfg.fiber_spacing, cfg.fiber_strength, cfg.fiber_width),
                                g, cfg.length_scale);
        case FieldKind::file:
            return sample_cells(read_dwtf(cfg.field_path, cfg.clamp_spd ? SpdPolicy::clamp : SpdPolicy::reject), g,
                                cfg.length_scale);
    }
    throw ValidationError("unknown field kind");
}

inline std::vector<double> config_initial(const RunConfig& cfg, const Grid& g) {
    std::vector<double> rho(g.vertex_count(), 0.0);
    if (cfg.initial == InitialKind::constant) {
        rho.assign(g.vertex_count(), cfg.amplitude);
    } else if (cfg.initial == InitialKind::point) {
        Index3 p{0, 0, 0};
        for (int d = 0; d < g.dim; ++d)
            p[d] = std::clamp(static_cast<int>(std::lround((cfg.center(d) - g.origin(d)) / g.spacing(d))), 0,
                              g.n_vertices[d] - 1);
        rho[g.vertex_index(p)] = cfg.amplitude;
    } else {
        for (int r = 0; r < g.vertex_count(); ++r) {
            const double d2 = (g.vertex_position(r) - cfg.center).head(g.dim).squaredNorm();
            rho[r] = cfg.amplitude * std::exp(-d2 / (cfg.width * cfg.width));
        }
    }
    return rho;
}

/// Runs a configuration. on_step sees every step's diagnostics and the state; returning false aborts.
inline Simulation simulate(const RunConfig& cfg,
                           const std::function<bool(const Diagnostics&, const Simulation&)>& on_step = {}) {
    cfg.validate();
    Simulation sim;
    std::vector<int> counts;
    std::vector<double> ext;
    for (int c : cfg.cells) {
        counts.push_back(c + 1);
        ext.push_back(cfg.hi - cfg.lo);
    }
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    for (int d = 0; d < cfg.dim; ++d) origin(d) = cfg.lo;
    sim.grid = build_grid(counts, ext, origin);
    sim.basis = build_basis(cfg.order);
    ModelInputs in;
    in.water = config_water(cfg, sim.grid);
    in.lambda_hat = cfg.lambda_hat;
    in.activation = cfg.activation;
    in.scaling = cfg.resolved_scaling();
    in.rho_cc = cfg.rho_cc;
    sim.model = build_model_field(sim.grid, sim.basis, in);
    const std::vector<double> rho0 = config_initial(cfg, sim.grid);
    SchemeConfig sc_cfg = cfg.scheme;
    if (sc_cfg.bc == BoundaryKind::dirichlet && !sc_cfg.dirichlet_value) {
        const Grid g = sim.grid;
        sc_cfg.dirichlet_value = [g, rho0](const Eigen::Vector3d& x) {
            Index3 p{0, 0, 0};
            for (int d = 0; d < g.dim; ++d)
                p[d] = std::clamp(static_cast<int>(std::lround((x(d) - g.origin(d)) / g.spacing(d))), 0,
                                  g.n_vertices[d] - 1);
            return rho0[g.vertex_index(p)];
        };
    }
    const Scheme sc(sim.grid, sim.basis, sim.model, sc_cfg);
    sim.state = make_state(sim.grid, sim.basis.n_restricted);
    sim.state.rho = rho0;
    StepControl ctl;
    ctl.dt = stable_dt(sim.grid, sim.model, sc.config);
    ctl.t_end = cfg.t_end;
    ctl.steady_tol = cfg.steady_tol;
    ctl.max_steps = cfg.max_steps;
    ctl.local_time_stepping = cfg.local_time_stepping;
    std::function<bool(const Diagnostics&)> cb;
    if (on_step) cb = [&](const Diagnostics& d) { return on_step(d, sim); };
    sim.summary = run(sim.state, sc, ctl, cb);
    return sim;
}

}  // namespace haptoflow
