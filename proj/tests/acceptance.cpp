// Acceptance checks: one PASS/FAIL line per criterion. Optional argv[1] selects
// criteria whose name contains it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "haptoflow/benchmarks.hpp"

using namespace haptoflow;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    std::function<Outcome()> check;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c, d);
    return buf;
}

std::string rates_text(const ConvergenceStudy& s) {
    std::ostringstream os;
    os << "errors";
    for (const auto& l : s.levels) os << ' ' << l.points << ':' << fmt("%.3e", l.error);
    os << " fitted " << fmt("%.3f", s.fitted_order());
    return os.str();
}

Outcome basis_check() {
    double orth = 0.0, sym = 0.0;
    for (int N = 0; N <= 5; ++N) {
        const MomentBasis b = build_basis(N);
        for (int i = 0; i < b.n_full; ++i)
            for (int j = 0; j < b.n_full; ++j) {
                double s = 0.0;
                for (int q = 0; q < b.n_nodes(); ++q) s += b.quad_weights[q] * b.values(q, i) * b.values(q, j);
                orth = std::max(orth, std::abs(s - (i == j ? 1.0 : 0.0)));
            }
        for (const auto& M : b.flux_matrices) sym = std::max(sym, (M - M.transpose()).cwiseAbs().maxCoeff());
    }
    return {orth < 1e-12 && sym < 1e-12, fmt("orthonormality %.2e, flux-matrix asymmetry %.2e", orth, sym)};
}

Outcome closure_check() {
    const MomentBasis b = build_basis(2);
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> U(-1.0, 1.0), L(0.1, 10.0);
    double mass = 0.0, mean = 0.0, second = 0.0;
    for (int k = 0; k < 100; ++k) {
        Eigen::Matrix3d R;
        for (int i = 0; i < 9; ++i) R(i / 3, i % 3) = U(rng);
        const Eigen::Matrix3d Q = Eigen::HouseholderQR<Eigen::Matrix3d>(R).householderQ();
        const Eigen::Matrix3d W = Q * Eigen::Vector3d(L(rng), L(rng), L(rng)).asDiagonal() * Q.transpose();
        const Eigen::Matrix3d A = peanut_matrix(W);
        double m = 0.0;
        Eigen::Vector3d v1 = Eigen::Vector3d::Zero();
        Eigen::Matrix3d v2 = Eigen::Matrix3d::Zero();
        for (int q = 0; q < b.n_nodes(); ++q) {
            const Eigen::Vector3d& v = b.quad_nodes[q];
            const double e = b.quad_weights[q] * v.dot(A * v);
            m += e;
            v1 += e * v;
            v2 += e * v * v.transpose();
        }
        mass = std::max(mass, std::abs(m - 1.0));
        mean = std::max(mean, v1.norm());
        second = std::max(second, (v2 - tumor_diffusion(W)).cwiseAbs().maxCoeff());
    }
    return {mass < 1e-12 && mean < 1e-12 && second < 1e-10,
            fmt("|<E>-1| %.2e, |<vE>| %.2e, second moment %.2e", mass, mean, second)};
}

Outcome mass_check() {
    bool ok = true;
    std::string d;
    for (double eps : {1.0, 1e-3, 1e-8}) {
        const MassCheck m = check_mass_conservation(eps);
        ok = ok && m.steps == 200 && m.relative_drift < 1e-11;
        d += fmt("eps %.0e: %.2e  ", eps, m.relative_drift);
    }
    return {ok, d};
}

Outcome stencil_check() {
    const StencilProbe plain = probe_limit_stencil(Stencil::plain, 1e-10);
    const StencilProbe improved = probe_limit_stencil(Stencil::improved, 1e-10);
    return {plain.axis_leakage < 1e-12 && improved.corner_leakage < 1e-12,
            "plain: " + plain.classification + fmt(" (axis %.1e), ", plain.axis_leakage) +
                "improved: " + improved.classification + fmt(" (corner %.1e)", improved.corner_leakage)};
}

FieldRun g_drift_finest;

Outcome fundamental_check() {
    const auto s = fundamental_convergence(0.0, 1e-5, {}, 1, 40, 1.5, 4);
    return {s.fitted_order() >= 1.8, rates_text(s)};
}

Outcome fundamental_drift_check() {
    const auto s = fundamental_convergence(0.1, 1e-5, {}, 1, 40, 1.5, 4, &g_drift_finest);
    return {std::abs(s.fitted_order() - 0.9) <= 0.25, rates_text(s)};
}

Outcome eps_sweep_check() {
    const auto sweep = fundamental_eps_sweep(default_eps_sweep(), 100, {});
    const double ref = sweep.back().error;
    double worst = 0.0;
    std::string d;
    for (const auto& p : sweep) {
        d += fmt("%.0e:%.3e ", p.eps, p.error);
        if (p.eps <= 1e-5 * (1.0 + 1e-12)) worst = std::max(worst, std::abs(p.error - ref) / ref);
    }
    return {worst < 0.05, d + fmt("max deviation %.2f%%", 100.0 * worst)};
}

Outcome manufactured_check() {
    // Drift cases start on finer grids: below ~100 cells the second-order
    // diffusion error still dominates the first-order upwind drift error.
    struct Case {
        Variant v;
        double eps, nu, lo, hi;
        int base, levels;
    };
    const int base = ManufacturedDefaults::points;
    const std::vector<Case> cases = {
        {Variant::MI1, 1.0, 0.0, 0.7, 1.3, base, ManufacturedDefaults::levels},
        {Variant::MI1, 1e-5, 0.0, 1.7, 2.3, base, ManufacturedDefaults::levels},
        {Variant::MI1, 1.0, 10.0, 0.7, 1.3, 101, 3},
        {Variant::MI1, 1e-5, 10.0, 0.7, 1.3, 101, 3},
        {Variant::MI2, 1.0, 0.0, 1.7, 2.3, base, 5},
        {Variant::MI2, 1e-5, 0.0, 1.7, 2.3, base, 5},
    };
    bool ok = true;
    std::string d;
    for (const auto& c : cases) {
        SchemeConfig cfg;
        cfg.variant = c.v;
        const auto s = manufactured_convergence(c.eps, c.nu, cfg, 1, c.base, ManufacturedDefaults::refine, c.levels);
        const double p = s.fitted_order();
        const bool pass = p >= c.lo && p <= c.hi;
        ok = ok && pass;
        d += "\n    " + to_string(c.v) + fmt(" eps %.0e nu %g: order %.3f in [%.1f, ", c.eps, c.nu, p, c.lo) +
             fmt("%.1f] ", c.hi) + (pass ? "ok" : "OUT OF RANGE");
        const auto r = s.rates();
        d += " (pairwise";
        for (double x : r) d += fmt(" %.2f", x);
        d += ")";
    }
    return {ok, d};
}

Outcome quadrants_check() {
    const QuadrantsSolution q = quadrants_coeffs(QuadrantsDefaults::kappa);
    const double table[4] = {q.a[1] - 2.96039604, q.b[1] + 9.6039604, q.a[2] + 0.88275659, q.b[3] - 7.70156488};
    double coef = 0.0;
    for (double t : table) coef = std::max(coef, std::abs(t));
    SchemeConfig cfg;
    cfg.cfl_safety = QuadrantsDefaults::cfl;
    const auto s = quadrants_convergence(q, QuadrantsDefaults::eps, QuadrantsDefaults::steady_tol, cfg);
    const double alpha_err = std::abs(q.alpha - 0.126902069721);
    return {alpha_err < 1e-9 && coef < 1e-6 && std::abs(s.fitted_order() - 0.4) <= 0.15,
            fmt("alpha error %.1e, coefficient error %.1e, ", alpha_err, coef) + rates_text(s)};
}

Outcome halfplane_check() {
    SchemeConfig cfg;
    const auto t1 = run_halfplane({1.0, 0.0}, HalfplaneDefaults::points, HalfplaneDefaults::eps,
                                  HalfplaneDefaults::steady_tol, cfg);
    const auto t2 = run_halfplane({1.0, 1.0}, HalfplaneDefaults::points, HalfplaneDefaults::eps,
                                  HalfplaneDefaults::steady_tol, cfg);
    const double h = t2.field.grid.spacing(0);
    const bool at_interface = std::abs(t2.density_error_at(0)) <= 2.0 * h + 1e-12;
    const bool ok = t1.density_error < 1e-6 && t2.density_error >= 0.03 && t2.density_error <= 0.2 && at_interface &&
                    t2.flux_error > t2.density_error;
    return {ok, fmt("test 1 density %.2e; test 2 density %.3f at xi = %.3f, flux %.2f", t1.density_error,
                    t2.density_error, t2.density_error_at(0), t2.flux_error)};
}

Outcome diffusion_fit_check() {
    const FundamentalSetup s0 = fundamental_test_setup(0.0);
    const Grid g = build_uniform_grid(2, 135, 0.0, 1.0);
    std::vector<double> rho(g.vertex_count());
    for (int r = 0; r < g.vertex_count(); ++r) rho[r] = s0.rho_exact(FundamentalDefaults::t_end, g.vertex_position(r));
    const auto self = numerical_diffusion_fit(rho, g, FundamentalDefaults::t_end, s0.t_offset, s0.diffusion());
    const double rel = self.numerical.norm() / s0.diffusion().norm();

    const FundamentalSetup s = fundamental_test_setup(FundamentalDefaults::drift_speed);
    if (g_drift_finest.rho.empty()) g_drift_finest = run_fundamental(135, s.a0, 1e-5, {});
    const auto fit = numerical_diffusion_fit(g_drift_finest.rho, g_drift_finest.grid, FundamentalDefaults::t_end,
                                             s.t_offset, s.diffusion());
    const double angle = axis_angle_deg(fit.main_axis(), s.drift_dir.head<2>());
    return {rel < 0.01 && angle < 5.0,
            fmt("self-fit %.2e of |D|; drift run (%g cells) axis angle %.2f deg, eigenvalues ",
                rel, g_drift_finest.grid.n_cells[0], angle) +
                fmt("%.2e, %.2e", fit.eigenvalues(0), fit.eigenvalues(1))};
}

Outcome brain_toy_check() {
    const BrainToyResult r = run_brain_toy();
    const bool ok = r.mi.reached_end && r.iv.reached_end && r.rho_min >= -0.05 && r.rho_max <= 1.3 &&
                    r.region_mi > 0 && r.outside == 0;
    return {ok, fmt("rho in [%.4f, %.4f], MI1 region %g vertices, IV1 region %g, ", r.rho_min, r.rho_max, r.region_mi,
                    r.region_iv) +
                    fmt("MI1 outside IV1: %g", r.outside)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::string filter = argc > 1 ? argv[1] : "";
    const std::vector<Criterion> criteria = {
        {"basis", basis_check},
        {"closure", closure_check},
        {"mass-conservation", mass_check},
        {"limit-stencil", stencil_check},
        {"fundamental-order", fundamental_check},
        {"fundamental-drift-order", fundamental_drift_check},
        {"eps-sweep-plateau", eps_sweep_check},
        {"manufactured-orders", manufactured_check},
        {"quadrants", quadrants_check},
        {"halfplane", halfplane_check},
        {"diffusion-fit", diffusion_fit_check},
        {"brain-toy", brain_toy_check},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        if (!filter.empty() && c.name.find(filter) == std::string::npos) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::printf("%s %s [%.1fs]: %s\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), secs, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
