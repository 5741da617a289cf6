#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "haptoflow/integrator.hpp"

using namespace haptoflow;

namespace {

struct Problem {
    Grid grid;
    MomentBasis basis = build_basis(1);
    ModelField model;

    Problem(int cells, ScalingNumbers s, const Eigen::Matrix3d& water = Eigen::Matrix3d::Identity(),
            Eigen::Vector3d grad_q = Eigen::Vector3d::Zero())
        : grid(build_uniform_grid(2, cells, 0.0, 1.0)) {
        ModelInputs in;
        in.water.assign(grid.cell_count(), water);
        in.grad_q.assign(grid.cell_count(), grad_q);
        in.scaling = s;
        model = build_model_field(grid, basis, in);
    }
};

ScalingNumbers numbers(double eps, double delta = 1.0, double nu = 0.0, double theta = 0.0) {
    ScalingNumbers s;
    s.eps = eps;
    s.delta = delta;
    s.nu = nu;
    s.theta = theta;
    return s;
}

}  // namespace

TEST(StepBounds, Formulas) {
    const StepBounds b = step_bounds(0.1, 0.01, 0.5, 2.0, 3.0);
    EXPECT_DOUBLE_EQ(b.micro, 1e-3);
    EXPECT_DOUBLE_EQ(b.macro, 0.01 / 4.0);
    EXPECT_DOUBLE_EQ(step_bounds(0.1, 0.01, 0.5, 0.01, 3.0).macro, 0.1 / 6.0);
    EXPECT_DOUBLE_EQ(combine_bounds(b, 0.5), 0.5 * 0.5 * (1e-3 + 2.5e-3));
    EXPECT_DOUBLE_EQ(combine_bounds({.micro = 2.0}, 0.5), 1.0);
    EXPECT_THROW(combine_bounds({}, 0.5), ValidationError);
}

TEST(StableDt, AsymptoticPreservingBound) {
    const double stiff = stable_dt(Problem(20, numbers(1e-10)).grid, Problem(20, numbers(1e-10)).model, {});
    const Problem p(20, numbers(1e-2));
    const double mild = stable_dt(p.grid, p.model, {});
    EXPECT_GT(stiff, 0.0);
    EXPECT_LT(std::max(stiff, mild) / std::min(stiff, mild), 2.0);
}

TEST(StableDt, DiffusiveScalingInSpacing) {
    const Problem coarse(20, numbers(1e-10)), fine(40, numbers(1e-10));
    const double r = stable_dt(coarse.grid, coarse.model, {}) / stable_dt(fine.grid, fine.model, {});
    EXPECT_NEAR(r, 4.0, 4e-3);
}

TEST(StableDt, GrowthLimit) {
    const Problem p(4, numbers(1.0, 1.0, 0.0, 2.0));
    SchemeConfig mi;
    mi.cfl_safety = 0.5;
    EXPECT_DOUBLE_EQ(growth_step_limit(p.model, mi), 0.25);
    SchemeConfig iv = mi;
    iv.variant = Variant::IV1;
    EXPECT_DOUBLE_EQ(growth_step_limit(p.model, iv), 0.25);
    EXPECT_LE(stable_dt(p.grid, p.model, mi), 0.25);
    const Problem none(4, numbers(1.0));
    EXPECT_EQ(growth_step_limit(none.model, iv), std::numeric_limits<double>::infinity());
}

TEST(StableDt, ImplicitGrowthKeepsEmptyVerticesEmpty) {
    Problem p(6, numbers(1e-3, 1e-3, 0.0, 50.0));
    SchemeConfig cfg;
    cfg.variant = Variant::IV1;
    const Scheme sc(p.grid, p.basis, p.model, cfg);
    State s = make_state(p.grid, p.basis.n_restricted);
    s.rho[p.grid.vertex_index({3, 3, 0})] = 0.5;
    step(s, stable_dt(p.grid, p.model, cfg), sc);
    EXPECT_EQ(s.rho[p.grid.vertex_index({0, 0, 0})], 0.0);
}

TEST(Imex, Constants) {
    EXPECT_NEAR(kImexTau, (2.0 - std::sqrt(2.0)) / 2.0, 1e-16);
    EXPECT_NEAR(kImexSigma, 1.0 - 1.0 / (2.0 * kImexTau), 1e-15);
}

TEST(Imex, LogisticOrderOfAccuracy) {
    // Constant density with zero perturbation reduces to rho' = theta (1 - rho) rho.
    const double theta = 1.5, rho0 = 0.1, t_end = 1.0;
    const double exact = 1.0 / (1.0 + (1.0 / rho0 - 1.0) * std::exp(-theta * t_end));
    for (auto v : {Variant::MI1, Variant::IV1, Variant::MI2, Variant::IV2}) {
        const Problem p(4, numbers(0.1, 1.0, 0.0, theta));
        SchemeConfig cfg;
        cfg.variant = v;
        const Scheme sc(p.grid, p.basis, p.model, cfg);
        double err[2];
        for (int k = 0; k < 2; ++k) {
            State s = make_state(p.grid, p.basis.n_restricted);
            s.rho.assign(p.grid.vertex_count(), rho0);
            StepControl ctl;
            ctl.dt = 0.05 / (1 << k);
            ctl.t_end = t_end;
            run(s, sc, ctl);
            err[k] = std::abs(s.rho[0] - exact);
            for (double r : s.rho) EXPECT_NEAR(r, s.rho[0], 1e-14);
        }
        EXPECT_NEAR(std::log2(err[0] / err[1]), scheme_order(v), 0.15) << to_string(v);
    }
}

TEST(Run, ClipsFinalStepToEndTime) {
    const Problem p(4, numbers(1.0));
    const Scheme sc(p.grid, p.basis, p.model, {});
    State s = make_state(p.grid, p.basis.n_restricted);
    StepControl ctl;
    ctl.dt = 0.3;
    ctl.t_end = 1.0;
    const RunSummary r = run(s, sc, ctl);
    EXPECT_EQ(r.steps, 4);
    EXPECT_EQ(s.time, 1.0);
    EXPECT_TRUE(r.reached_end);
    EXPECT_NEAR(r.last.dt, 0.1, 1e-14);
}

TEST(Run, ZeroDataIsSteadyAfterOneStep) {
    const Problem p(4, numbers(1e-3));
    const Scheme sc(p.grid, p.basis, p.model, {});
    State s = make_state(p.grid, p.basis.n_restricted);
    StepControl ctl;
    ctl.dt = 1e-3;
    ctl.steady_tol = 1e-12;
    const RunSummary r = run(s, sc, ctl);
    EXPECT_TRUE(r.steady);
    EXPECT_EQ(r.steps, 1);
}

TEST(Run, CallbackCanAbort) {
    const Problem p(4, numbers(1.0));
    const Scheme sc(p.grid, p.basis, p.model, {});
    State s = make_state(p.grid, p.basis.n_restricted);
    StepControl ctl;
    ctl.dt = 0.01;
    ctl.max_steps = 100;
    const RunSummary r = run(s, sc, ctl, [](const Diagnostics& d) { return d.step < 3; });
    EXPECT_TRUE(r.aborted);
    EXPECT_EQ(r.steps, 3);
}

TEST(Run, RejectsBadInput) {
    const Problem p(4, numbers(1.0));
    const Scheme sc(p.grid, p.basis, p.model, {});
    State s = make_state(p.grid, p.basis.n_restricted);
    StepControl ctl;
    EXPECT_THROW(run(s, sc, ctl), ValidationError);
    ctl.dt = 0.01;
    ctl.max_steps = 5;
    s.rho[7] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(run(s, sc, ctl), RuntimeFailure);
    State bad = make_state(p.grid, 6);
    EXPECT_THROW(run(bad, sc, ctl), ValidationError);
}

TEST(Run, LocalSteppingNeedsFirstOrder) {
    const Problem p(4, numbers(1.0));
    SchemeConfig cfg;
    cfg.variant = Variant::MI2;
    const Scheme sc(p.grid, p.basis, p.model, cfg);
    State s = make_state(p.grid, p.basis.n_restricted);
    StepControl ctl;
    ctl.dt = 0.01;
    ctl.max_steps = 1;
    ctl.local_time_stepping = true;
    EXPECT_THROW(run(s, sc, ctl), ValidationError);
}

TEST(Run, StableInTheDiffusionLimit) {
    Eigen::Matrix3d W;
    W << 3.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0;
    for (auto v : {Variant::MI1, Variant::IV1, Variant::MI2, Variant::IV2}) {
        const Problem p(24, numbers(1e-9, 0.05, 1.0), W, Eigen::Vector3d(0.3, 0.1, 0.0));
        SchemeConfig cfg;
        cfg.variant = v;
        const Scheme sc(p.grid, p.basis, p.model, cfg);
        State s = make_state(p.grid, p.basis.n_restricted);
        for (int r = 0; r < p.grid.vertex_count(); ++r) {
            const Eigen::Vector3d x = p.grid.vertex_position(r) - Eigen::Vector3d(0.5, 0.5, 0.0);
            s.rho[r] = std::exp(-30.0 * x.squaredNorm());
        }
        StepControl ctl;
        ctl.dt = stable_dt(p.grid, p.model, cfg);
        ctl.max_steps = 300;
        const RunSummary r = run(s, sc, ctl);
        EXPECT_LT(r.last.rho_max, 1.0) << to_string(v);
        EXPECT_GT(r.last.rho_min, -0.05) << to_string(v);
    }
}
