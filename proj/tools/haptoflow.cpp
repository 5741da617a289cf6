// haptoflow command-line driver: configuration runs, benchmarks, convergence studies.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>

#include "haptoflow/haptoflow.hpp"

namespace hf = haptoflow;

namespace {

bool g_quiet = false;

void say(const std::string& s) {
    if (!g_quiet) std::cout << s << '\n';
}

std::string num(double v) { return hf::format_double(v); }

struct Common {
    std::string out = "out";
    std::string variant = "mi1";
    std::string stencil = "improved";
    std::string drift = "upwind";
    std::optional<double> eps;
    int order = 1;
    std::optional<int> grid;
    std::optional<int> levels;
    std::optional<double> refine;
    std::optional<double> steady_tol;
    std::optional<double> cfl;
    int threads = 0;
};

void add_scheme_flags(CLI::App* app, Common& c) {
    app->add_option("--variant", c.variant, "Scheme variant")
        ->check(CLI::IsMember({"mi1", "mi2", "iv1", "iv2"}, CLI::ignore_case))
        ->capture_default_str();
    app->add_option("--stencil", c.stencil, "Stiff-flux stencil")
        ->check(CLI::IsMember({"plain", "improved"}))
        ->capture_default_str();
    app->add_option("--drift", c.drift, "Drift density evaluation")
        ->check(CLI::IsMember({"centered", "upwind"}))
        ->capture_default_str();
    app->add_option("--eps", c.eps, "Parabolic scaling number")->check(CLI::PositiveNumber);
    app->add_option("--order", c.order, "Moment order N")->check(CLI::Range(1, hf::kMaxBasisOrder))->capture_default_str();
    app->add_option("--cfl", c.cfl, "Time-step safety factor in (0, 1]")->check(CLI::Range(1e-6, 1.0));
}

void add_common_flags(CLI::App* app, Common& c) {
    app->add_option("--out", c.out, "Output directory")->capture_default_str();
    app->add_option("--grid", c.grid, "Cells per axis (base level for convergence)")->check(CLI::Range(2, 100000));
    app->add_option("--steady-tol", c.steady_tol, "Steady-state tolerance")->check(CLI::PositiveNumber);
    add_scheme_flags(app, c);
}

hf::SchemeConfig scheme_of(const Common& c, double default_cfl = 1.0) {
    hf::SchemeConfig s;
    std::string v = c.variant;
    for (auto& ch : v) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    s.variant = hf::parse_variant(v);
    s.stencil = hf::parse_stencil(c.stencil);
    s.drift = hf::parse_drift(c.drift);
    s.cfl_safety = c.cfl.value_or(default_cfl);
    return s;
}

std::string scheme_line(const hf::SchemeConfig& s, int order) {
    return "variant=" + hf::to_string(s.variant) + " stencil=" + hf::to_string(s.stencil) +
           " drift=" + hf::to_string(s.drift) + " cfl=" + num(s.cfl_safety) + " order=" + std::to_string(order);
}

std::string path_in(const Common& c, const std::string& name) { return (std::filesystem::path(c.out) / name).string(); }

void print_study(const hf::ConvergenceStudy& s) {
    say("level points dx l2_error rate");
    const auto r = s.rates();
    for (std::size_t l = 0; l < s.levels.size(); ++l) {
        const auto& lv = s.levels[l];
        char buf[160];
        std::snprintf(buf, sizeof buf, "%5zu %6d %.6e %.6e %s", l, lv.points, lv.dx, lv.error,
                      l == 0 ? "" : std::to_string(r[l - 1]).c_str());
        say(buf);
    }
    if (s.levels.size() >= 2) say("fitted order " + num(s.fitted_order()));
}

void write_run_vtk(const std::string& path, const hf::FieldRun& fr) {
    std::vector<double> err(fr.rho.size());
    for (std::size_t i = 0; i < err.size(); ++i) err[i] = fr.rho[i] - fr.exact[i];
    hf::write_field_vtk(path, fr.grid, {{"rho", &fr.rho}, {"exact", &fr.exact}, {"error", &err}});
}

void write_single_level_csv(const std::string& path, const std::string& name, const hf::FieldRun& fr) {
    hf::ConvergenceStudy s;
    s.name = name;
    s.levels.push_back({fr.grid.n_cells[0], fr.grid.min_spacing(), fr.error});
    hf::write_convergence_csv(path, s);
}

// ---------------------------------------------------------------------------

int cmd_run(const Common& c, const std::string& config_path, CLI::App* sub) {
    hf::RunConfig cfg = hf::load_run_config(config_path);
    if (sub->count("--variant")) cfg.scheme.variant = scheme_of(c).variant;
    if (sub->count("--stencil")) cfg.scheme.stencil = hf::parse_stencil(c.stencil);
    if (sub->count("--drift")) cfg.scheme.drift = hf::parse_drift(c.drift);
    if (sub->count("--cfl")) cfg.scheme.cfl_safety = *c.cfl;
    if (sub->count("--order")) cfg.order = c.order;
    if (c.grid) cfg.cells.assign(cfg.dim, *c.grid);
    if (c.steady_tol) cfg.steady_tol = c.steady_tol;
    if (c.eps) {
        hf::ScalingNumbers s = cfg.resolved_scaling();
        s.eps = *c.eps;
        cfg.scaling = s;
        cfg.physical.reset();
    }
    cfg.validate();
    const auto sc = cfg.resolved_scaling();
    say("run " + config_path + ": eps=" + num(sc.eps) + " delta=" + num(sc.delta) + " nu=" + num(sc.nu) +
        " theta=" + num(sc.theta) + " " + scheme_line(cfg.scheme, cfg.order));
    std::filesystem::create_directories(c.out);
    hf::DiagnosticsLog log(path_in(c, "diagnostics.csv"));
    int snapshot = 0;
    const auto sim = hf::simulate(cfg, [&](const hf::Diagnostics& d, const hf::Simulation& s) {
        log.add(d);
        if (cfg.output_every > 0 && d.step % cfg.output_every == 0) {
            char name[64];
            std::snprintf(name, sizeof name, "snapshot_%05d.vtk", snapshot++);
            hf::write_field_vtk(path_in(c, name), s.grid, {{"rho", &s.state.rho}});
        }
        return true;
    });
    hf::write_field_vtk(path_in(c, "final.vtk"), sim.grid, {{"rho", &sim.state.rho}});
    const auto& l = sim.summary.last;
    say("steps=" + std::to_string(sim.summary.steps) + " time=" + num(sim.summary.time) + " mass=" + num(l.mass) +
        " rho in [" + num(l.rho_min) + ", " + num(l.rho_max) + "]" + (sim.summary.steady ? " steady" : ""));
    return 0;
}

int bench_fundamental(const Common& c, double a0) {
    using D = hf::FundamentalDefaults;
    const auto s = scheme_of(c);
    const int m = c.grid.value_or(D::points);
    const double eps = c.eps.value_or(D::eps);
    const auto fs = hf::fundamental_test_setup(a0);
    say("fundamental: grid=" + std::to_string(m) + " eps=" + num(eps) + " D0=" + num(fs.D0) + " a0=" + num(a0) +
        " t_O=" + num(fs.t_offset) + " t_end=" + num(D::t_end) + " " + scheme_line(s, c.order));
    const auto fr = hf::run_fundamental(m, a0, eps, s, c.order);
    const auto fit = hf::numerical_diffusion_fit(fr.rho, fr.grid, D::t_end, fs.t_offset, fs.diffusion());
    say("steps=" + std::to_string(fr.summary.steps) + " l2_error=" + num(fr.error));
    say("numerical diffusion eigenvalues " + num(fit.eigenvalues(0)) + " " + num(fit.eigenvalues(1)) +
        ", main axis (" + num(fit.main_axis()(0)) + ", " + num(fit.main_axis()(1)) + ")");
    write_run_vtk(path_in(c, "fundamental.vtk"), fr);
    write_single_level_csv(path_in(c, "fundamental.csv"), "fundamental", fr);
    return 0;
}

int bench_manufactured(const Common& c, double nu) {
    using D = hf::ManufacturedDefaults;
    const auto s = scheme_of(c);
    const int m = c.grid.value_or(D::points);
    const double eps = c.eps.value_or(D::eps);
    const auto mc = hf::manufactured_case();
    say("manufactured: grid=" + std::to_string(m) + " eps=" + num(eps) + " delta=" + num(mc.delta) + " nu=" + num(nu) +
        " t_end=" + num(mc.t_end) + " " + scheme_line(s, c.order));
    const auto fr = hf::run_manufactured(m, eps, nu, s, c.order);
    say("steps=" + std::to_string(fr.summary.steps) + " l2_error=" + num(fr.error));
    write_run_vtk(path_in(c, "manufactured.vtk"), fr);
    write_single_level_csv(path_in(c, "manufactured.csv"), "manufactured", fr);
    return 0;
}

int bench_quadrants(const Common& c) {
    using D = hf::QuadrantsDefaults;
    const auto s = scheme_of(c, D::cfl);
    const int m = c.grid.value_or(D::points);
    const double eps = c.eps.value_or(D::eps);
    const double tol = c.steady_tol.value_or(D::steady_tol);
    say("quadrants: kappa=(100, 1, 100, 1) grid=" + std::to_string(m) + " eps=" + num(eps) + " steady_tol=" + num(tol) +
        " " + scheme_line(s, 1));
    const auto qs = hf::quadrants_coeffs(D::kappa);
    char buf[256];
    std::snprintf(buf, sizeof buf, "alpha = %.12f", qs.alpha);
    say(buf);
    for (int i = 0; i < 4; ++i) {
        std::snprintf(buf, sizeof buf, "a_%d = % .8f   b_%d = % .8f", i, qs.a[i], i, qs.b[i]);
        say(buf);
    }
    say("interface residual " + num(qs.max_residual()));
    const auto fr = hf::run_quadrants(qs, m, eps, tol, s);
    say("steps=" + std::to_string(fr.summary.steps) + " l2_error=" + num(fr.error));
    write_run_vtk(path_in(c, "quadrants.vtk"), fr);
    write_single_level_csv(path_in(c, "quadrants.csv"), "quadrants", fr);
    return 0;
}

int bench_halfplane(const Common& c, int test) {
    using D = hf::HalfplaneDefaults;
    const auto s = scheme_of(c);
    const int m = c.grid.value_or(D::points);
    const double eps = c.eps.value_or(D::eps);
    const double tol = c.steady_tol.value_or(D::steady_tol);
    const Eigen::Vector2d sl = test == 1 ? Eigen::Vector2d(1.0, 0.0) : Eigen::Vector2d(1.0, 1.0);
    say("halfplane test " + std::to_string(test) + ": theta_L=" + num(D::theta_left) + " theta_R=" +
        num(D::theta_right) + " anisotropy=" + num(D::aniso) + " s_L=(" + num(sl(0)) + ", " + num(sl(1)) +
        ") grid=" + std::to_string(m) + " eps=" + num(eps) + " steady_tol=" + num(tol) + " " + scheme_line(s, 1));
    const auto r = hf::run_halfplane(sl, m, eps, tol, s);
    char buf[256];
    std::snprintf(buf, sizeof buf, "s_R = (%.8f, %.8f)", r.hc.s_right(0), r.hc.s_right(1));
    say(buf);
    say("steps=" + std::to_string(r.field.summary.steps) + " density_error=" + num(r.density_error) + " at (" +
        num(r.density_error_at(0)) + ", " + num(r.density_error_at(1)) + ") flux_error=" + num(r.flux_error));
    write_run_vtk(path_in(c, "halfplane.vtk"), r.field);
    write_single_level_csv(path_in(c, "halfplane.csv"), "halfplane", r.field);
    return 0;
}

int bench_brain(const Common& c) {
    using D = hf::BrainToyDefaults;
    const int m = c.grid.value_or(D::points);
    const double eps = c.eps.value_or(D::eps);
    const double cfl = c.cfl.value_or(D::cfl);
    const auto stencil = hf::parse_stencil(c.stencil);
    say("brain-toy: fiber-cross field strength=" + num(D::strength) + " width=" + num(D::width_mm) +
        "mm domain=" + num(D::domain_mm) + "mm grid=" + std::to_string(m) + " eps=" + num(eps) + " delta=" +
        num(D::delta) + " nu=" + num(D::nu) + " theta=" + num(D::theta) + " t_end=" + num(D::t_end) + " cfl=" +
        num(cfl) + " stencil=" + hf::to_string(stencil) + ", variants mi1 and iv1");
    const auto r = hf::run_brain_toy(m, eps, cfl, stencil);
    say("dt=" + num(r.dt) + " steps=" + std::to_string(r.mi.steps) + " rho in [" + num(r.rho_min) + ", " +
        num(r.rho_max) + "]");
    say("10% region: mi1 " + std::to_string(r.region_mi) + " vertices, iv1 " + std::to_string(r.region_iv) +
        " vertices, mi1 outside iv1: " + std::to_string(r.outside));
    hf::write_field_vtk(path_in(c, "brain_toy.vtk"), r.grid, {{"rho_mi1", &r.rho_mi}, {"rho_iv1", &r.rho_iv}});
    return 0;
}

int cmd_convergence(const Common& c, const std::string& bench, double a0, double nu) {
    hf::ConvergenceStudy st;
    if (bench == "fundamental") {
        using D = hf::FundamentalDefaults;
        const auto s = scheme_of(c);
        const int base = c.grid.value_or(D::points);
        const double refine = c.refine.value_or(D::refine);
        const int levels = c.levels.value_or(D::levels);
        const double eps = c.eps.value_or(D::eps);
        say("convergence fundamental: base=" + std::to_string(base) + " refine=" + num(refine) + " levels=" +
            std::to_string(levels) + " eps=" + num(eps) + " a0=" + num(a0) + " " + scheme_line(s, c.order));
        st = hf::fundamental_convergence(a0, eps, s, c.order, base, refine, levels);
    } else if (bench == "manufactured") {
        using D = hf::ManufacturedDefaults;
        const auto s = scheme_of(c);
        const int base = c.grid.value_or(D::points);
        const double refine = c.refine.value_or(D::refine);
        const int levels = c.levels.value_or(D::levels);
        const double eps = c.eps.value_or(D::eps);
        say("convergence manufactured: base=" + std::to_string(base) + " refine=" + num(refine) + " levels=" +
            std::to_string(levels) + " eps=" + num(eps) + " nu=" + num(nu) + " " + scheme_line(s, c.order));
        st = hf::manufactured_convergence(eps, nu, s, c.order, base, refine, levels);
    } else if (bench == "quadrants") {
        using D = hf::QuadrantsDefaults;
        const auto s = scheme_of(c, D::cfl);
        const int base = c.grid.value_or(D::points);
        const double refine = c.refine.value_or(D::refine);
        const int levels = c.levels.value_or(D::levels);
        const double eps = c.eps.value_or(D::eps);
        const double tol = c.steady_tol.value_or(D::steady_tol);
        say("convergence quadrants: base=" + std::to_string(base) + " refine=" + num(refine) + " levels=" +
            std::to_string(levels) + " eps=" + num(eps) + " steady_tol=" + num(tol) + " " + scheme_line(s, 1));
        st = hf::quadrants_convergence(hf::quadrants_coeffs(D::kappa), eps, tol, s, base, refine, levels);
    } else {
        throw hf::ValidationError("convergence: unknown benchmark '" + bench +
                                  "' (expected fundamental, manufactured, quadrants)");
    }
    print_study(st);
    const std::string path = path_in(c, bench + "_convergence.csv");
    hf::write_convergence_csv(path, st);
    say("wrote " + path);
    return 0;
}

int cmd_limit_stencil(const Common& c) {
    const auto stencil = hf::parse_stencil(c.stencil);
    const double eps = c.eps.value_or(1e-10);
    const auto p = hf::probe_limit_stencil(stencil, eps);
    say("limit stencil: stencil=" + hf::to_string(stencil) + " eps=" + num(eps) + " (weights scaled by h^2)");
    char buf[128];
    for (int dy = 2; dy >= 0; --dy) {
        std::snprintf(buf, sizeof buf, "  % .6f  % .6f  % .6f", p.weights[dy][0], p.weights[dy][1], p.weights[dy][2]);
        say(buf);
    }
    say("axis leakage " + num(p.axis_leakage) + ", corner leakage " + num(p.corner_leakage));
    say("classification: " + p.classification);
    return 0;
}

int cmd_info() {
    say(std::string("haptoflow: kinetic haptotaxis solver, moment order <= ") + std::to_string(hf::kMaxBasisOrder));
#ifdef _OPENMP
    say("threads: " + std::to_string(omp_get_max_threads()));
#else
    say("threads: 1 (built without OpenMP)");
#endif
    say("");
    say("benchmark defaults:");
    {
        using D = hf::FundamentalDefaults;
        say("  fundamental   grid=" + std::to_string(D::points) + " eps=" + num(D::eps) + " t_end=" + num(D::t_end) +
            " drift speed=" + num(D::drift_speed) + " (with --drift-speed) convergence levels=" +
            std::to_string(D::levels) + " refine=" + num(D::refine));
    }
    {
        using D = hf::ManufacturedDefaults;
        say("  manufactured  grid=" + std::to_string(D::points) + " eps=" + num(D::eps) + " levels=" +
            std::to_string(D::levels) + " refine=" + num(D::refine));
    }
    {
        using D = hf::QuadrantsDefaults;
        say("  quadrants     grid=" + std::to_string(D::points) + " eps=" + num(D::eps) + " steady_tol=" +
            num(D::steady_tol) + " cfl=" + num(D::cfl) + " levels=" + std::to_string(D::levels));
    }
    {
        using D = hf::HalfplaneDefaults;
        say("  halfplane     grid=" + std::to_string(D::points) + " eps=" + num(D::eps) + " steady_tol=" +
            num(D::steady_tol));
    }
    {
        using D = hf::BrainToyDefaults;
        say("  brain-toy     grid=" + std::to_string(D::points) + " eps=" + num(D::eps) + " delta=" + num(D::delta) +
            " nu=" + num(D::nu) + " theta=" + num(D::theta) + " t_end=" + num(D::t_end));
    }
    say("");
    say("configuration file schema:");
    if (!g_quiet) std::cout << hf::config_defaults_text();
    return 0;
}

void set_threads(int requested) {
    int n = requested;
    if (const char* env = std::getenv("HAPTOFLOW_THREADS")) {
        try {
            n = std::stoi(env);
        } catch (const std::exception&) {
            throw hf::ValidationError("HAPTOFLOW_THREADS must be a positive integer, got '" + std::string(env) + "'");
        }
        if (n < 1) throw hf::ValidationError("HAPTOFLOW_THREADS must be a positive integer");
    }
    if (n <= 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
#ifdef _OPENMP
    omp_set_num_threads(n);
#endif
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"haptoflow: asymptotic-preserving kinetic solver for glioma invasion"};
    app.require_subcommand(1);
    Common c;
    app.add_flag("--quiet", g_quiet, "Suppress all standard output except errors");
    app.add_option("--threads", c.threads, "Worker threads (0: hardware count; HAPTOFLOW_THREADS overrides)")
        ->check(CLI::NonNegativeNumber);

    auto* run = app.add_subcommand("run", "Run a TOML configuration");
    std::string config_path;
    run->add_option("--config", config_path, "TOML configuration file")->required();
    add_common_flags(run, c);

    auto* bench = app.add_subcommand("bench", "Run one benchmark on a single grid");
    std::string bench_name;
    bench->add_option("name", bench_name, "Benchmark")
        ->required()
        ->check(CLI::IsMember({"fundamental", "manufactured", "quadrants", "halfplane", "brain-toy"}));
    double a0 = 0.0, nu = 0.0;
    int test = 2;
    add_common_flags(bench, c);
    bench->add_option("--drift-speed", a0, "fundamental: drift speed a0")->check(CLI::NonNegativeNumber);
    bench->add_option("--nu", nu, "manufactured: drift ratio nu")->check(CLI::NonNegativeNumber);
    bench->add_option("--test", test, "halfplane: 1 (normal slope) or 2 (oblique slope)")->check(CLI::IsMember({1, 2}));

    auto* conv = app.add_subcommand("convergence", "Grid-refinement study, written as CSV");
    std::string conv_name;
    conv->add_option("name", conv_name, "Benchmark")
        ->required()
        ->check(CLI::IsMember({"fundamental", "manufactured", "quadrants"}));
    add_common_flags(conv, c);
    conv->add_option("--levels", c.levels, "Number of grids")->check(CLI::Range(2, 12));
    conv->add_option("--refine", c.refine, "Refinement factor between grids")->check(CLI::Range(1.01, 4.0));
    conv->add_option("--drift-speed", a0, "fundamental: drift speed a0")->check(CLI::NonNegativeNumber);
    conv->add_option("--nu", nu, "manufactured: drift ratio nu")->check(CLI::NonNegativeNumber);

    auto* limit = app.add_subcommand("limit-stencil", "Probe the diffusion-limit stencil with a unit impulse");
    add_scheme_flags(limit, c);

    auto* info = app.add_subcommand("info", "Print build information, benchmark defaults and the configuration schema");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        set_threads(c.threads);
        if (*run) return cmd_run(c, config_path, run);
        if (*bench) {
            if (bench_name == "fundamental") return bench_fundamental(c, a0);
            if (bench_name == "manufactured") return bench_manufactured(c, nu);
            if (bench_name == "quadrants") return bench_quadrants(c);
            if (bench_name == "halfplane") return bench_halfplane(c, test);
            return bench_brain(c);
        }
        if (*conv) return cmd_convergence(c, conv_name, a0, nu);
        if (*limit) return cmd_limit_stencil(c);
        if (*info) return cmd_info();
    } catch (const hf::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
