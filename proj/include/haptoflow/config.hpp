#pragma once
// TOML run configuration.

#include <array>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <toml++/toml.hpp>

#include "haptoflow/errors.hpp"
#include "haptoflow/model.hpp"
#include "haptoflow/operators.hpp"
#include "haptoflow/tensor_field.hpp"

namespace haptoflow {

enum class FieldKind { constant, fiber_cross, file };
enum class InitialKind { point, gaussian, constant };

struct RunConfig {
    // [grid]
    int dim = 2;
    std::vector<int> cells{40, 40};
    double lo = 0.0;
    double hi = 1.0;

    // exactly one of [physical] / [scaling]
    std::optional<PhysicalParameters> physical;
    std::optional<ScalingNumbers> scaling;

    // [model]
    double rho_cc = 1.0;
    std::optional<double> lambda_hat;
    ActivationParameters activation;

    // [field]
    FieldKind field = FieldKind::constant;
    Eigen::Vector3d water_diag = Eigen::Vector3d::Ones();
    std::string field_path;
    bool clamp_spd = false;
    double length_scale = 1.0;  ///< grid units to field units
    double fiber_strength = 4.0;
    double fiber_width = 8.0;
    std::array<std::uint32_t, 3> fiber_dims{40, 40, 1};
    Eigen::Vector3d fiber_spacing = Eigen::Vector3d(2.0, 2.0, 2.0);

    // [scheme]
    SchemeConfig scheme;
    int order = 1;

    // [initial]
    InitialKind initial = InitialKind::gaussian;
    Eigen::Vector3d center = Eigen::Vector3d(0.5, 0.5, 0.5);
    double amplitude = 1.0;
    double width = 0.05;

    // [run]
    double t_end = 1.0;
    std::optional<double> steady_tol;
    long max_steps = 10000000;
    int output_every = 0;
    bool local_time_stepping = false;

    ScalingNumbers resolved_scaling() const {
        if (scaling) return *scaling;
        if (physical) return nondimensionalize(*physical);
        throw ValidationError("configuration needs [physical] or [scaling]");
    }

    void validate() const {
        if (dim != 2 && dim != 3) throw ValidationError("grid.dim must be 2 or 3");
        if (static_cast<int>(cells.size()) != dim) throw ValidationError("grid.cells must have one entry per axis");
        for (int c : cells)
            if (c < 1) throw ValidationError("grid.cells entries must be positive");
        if (!(hi > lo)) throw ValidationError("grid.hi must exceed grid.lo");
        if (physical.has_value() == scaling.has_value())
            throw ValidationError("exactly one of [physical] and [scaling] must be given");
        resolved_scaling().validate();
        if (!(rho_cc > 0.0)) throw ValidationError("model.rho_cc must be positive");
        if (lambda_hat && !(*lambda_hat >= 0.0)) throw ValidationError("model.lambda_hat must be non-negative");
        if (order < 1 || order > kMaxBasisOrder)
            throw ValidationError("scheme.order must be in [1, " + std::to_string(kMaxBasisOrder) + "]");
        if (field == FieldKind::file && field_path.empty()) throw ValidationError("field.path is required for kind = \"file\"");
        if (!(length_scale > 0.0)) throw ValidationError("field.length_scale must be positive");
        if (!(width > 0.0)) throw ValidationError("initial.width must be positive");
        if (!(t_end > 0.0)) throw ValidationError("run.t_end must be positive");
        if (steady_tol && !(*steady_tol > 0.0)) throw ValidationError("run.steady_tol must be positive");
        if (max_steps < 1) throw ValidationError("run.max_steps must be positive");
        if (output_every < 0) throw ValidationError("run.output_every must be non-negative");
        if (local_time_stepping && scheme_order(scheme.variant) != 1)
            throw ValidationError("run.local_time_stepping requires a first-order variant");
        // Dirichlet data comes from the initial state when the run starts.
        SchemeConfig check = scheme;
        if (check.bc == BoundaryKind::dirichlet && !check.dirichlet_value)
            check.dirichlet_value = [](const Eigen::Vector3d&) { return 0.0; };
        check.validate();
    }
};

namespace detail {

inline void check_keys(const toml::table& t, const std::string& where, const std::set<std::string>& allowed) {
    for (const auto& [k, v] : t) {
        const std::string key(k.str());
        if (!allowed.count(key)) throw ValidationError("unknown key '" + key + "' in " + where);
    }
}

inline double get_num(const toml::table& t, const std::string& where, const char* key, double def) {
    const auto* node = t.get(key);
    if (!node) return def;
    if (auto v = node->value<double>()) return *v;
    throw ValidationError(where + "." + key + " must be a number");
}

inline std::optional<double> get_opt_num(const toml::table& t, const std::string& where, const char* key) {
    const auto* node = t.get(key);
    if (!node) return std::nullopt;
    if (auto v = node->value<double>()) return *v;
    throw ValidationError(where + "." + key + " must be a number");
}

inline std::string get_str(const toml::table& t, const std::string& where, const char* key, const std::string& def) {
    const auto* node = t.get(key);
    if (!node) return def;
    if (auto v = node->value<std::string>()) return *v;
    throw ValidationError(where + "." + key + " must be a string");
}

inline bool get_bool(const toml::table& t, const std::string& where, const char* key, bool def) {
    const auto* node = t.get(key);
    if (!node) return def;
    if (auto v = node->value<bool>()) return *v;
    throw ValidationError(where + "." + key + " must be a boolean");
}

inline std::vector<double> get_vec(const toml::table& t, const std::string& where, const char* key) {
    const auto* arr = t.get_as<toml::array>(key);
    if (!arr) throw ValidationError(where + "." + key + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : *arr) {
        auto v = e.value<double>();
        if (!v) throw ValidationError(where + "." + key + " must contain only numbers");
        out.push_back(*v);
    }
    return out;
}

inline const toml::table* sub(const toml::table& t, const char* key) {
    const auto* node = t.get(key);
    if (!node) return nullptr;
    if (const auto* tab = node->as_table()) return tab;
    throw ValidationError("'" + std::string(key) + "' must be a table");
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text, const std::string& source = "config") {
    toml::table root;
    try {
        root = toml::parse(text, source);
    } catch (const toml::parse_error& e) {
        const auto& b = e.source().begin;
        throw ValidationError(source + ":" + std::to_string(b.line) + ":" + std::to_string(b.column) + ": " +
                              std::string(e.description()));
    }
    detail::check_keys(root, "configuration", {"grid", "physical", "scaling", "model", "field", "scheme", "initial", "run"});
    RunConfig c;

    if (const auto* g = detail::sub(root, "grid")) {
        detail::check_keys(*g, "[grid]", {"dim", "cells", "lo", "hi"});
        c.dim = static_cast<int>(detail::get_num(*g, "grid", "dim", 2));
        if (const auto* node = g->get("cells")) {
            if (node->is_array()) {
                c.cells.clear();
                for (double v : detail::get_vec(*g, "grid", "cells")) c.cells.push_back(static_cast<int>(v));
            } else {
                c.cells.assign(c.dim, static_cast<int>(detail::get_num(*g, "grid", "cells", 40)));
            }
        } else {
            c.cells.assign(c.dim, 40);
        }
        c.lo = detail::get_num(*g, "grid", "lo", c.lo);
        c.hi = detail::get_num(*g, "grid", "hi", c.hi);
    }
    if (const auto* p = detail::sub(root, "physical")) {
        detail::check_keys(*p, "[physical]", {"c", "lambda0", "lambda1", "M", "X", "T"});
        PhysicalParameters pp;
        pp.c = detail::get_num(*p, "physical", "c", 0.0);
        pp.lambda0 = detail::get_num(*p, "physical", "lambda0", 0.0);
        pp.lambda1 = detail::get_num(*p, "physical", "lambda1", 0.0);
        pp.M = detail::get_num(*p, "physical", "M", 0.0);
        pp.X = detail::get_num(*p, "physical", "X", 1.0);
        pp.T = detail::get_num(*p, "physical", "T", 1.0);
        c.physical = pp;
    }
    if (const auto* s = detail::sub(root, "scaling")) {
        detail::check_keys(*s, "[scaling]", {"eps", "delta", "nu", "theta"});
        ScalingNumbers sn;
        sn.eps = detail::get_num(*s, "scaling", "eps", sn.eps);
        sn.delta = detail::get_num(*s, "scaling", "delta", sn.delta);
        sn.nu = detail::get_num(*s, "scaling", "nu", sn.nu);
        sn.theta = detail::get_num(*s, "scaling", "theta", sn.theta);
        c.scaling = sn;
    }
    if (const auto* m = detail::sub(root, "model")) {
        detail::check_keys(*m, "[model]", {"rho_cc", "lambda_hat", "activation"});
        c.rho_cc = detail::get_num(*m, "model", "rho_cc", c.rho_cc);
        c.lambda_hat = detail::get_opt_num(*m, "model", "lambda_hat");
        if (const auto* a = detail::sub(*m, "activation")) {
            detail::check_keys(*a, "[model.activation]", {"lambda0", "k_plus", "k_minus"});
            c.activation.lambda0 = detail::get_num(*a, "model.activation", "lambda0", c.activation.lambda0);
            c.activation.k_plus = detail::get_num(*a, "model.activation", "k_plus", c.activation.k_plus);
            c.activation.k_minus = detail::get_num(*a, "model.activation", "k_minus", c.activation.k_minus);
        }
    }
    if (const auto* f = detail::sub(root, "field")) {
        detail::check_keys(*f, "[field]", {"kind", "water", "path", "clamp", "length_scale", "strength", "width",
                                           "voxels", "spacing"});
        const std::string kind = detail::get_str(*f, "field", "kind", "constant");
        if (kind == "constant")
            c.field = FieldKind::constant;
        else if (kind == "fiber-cross")
            c.field = FieldKind::fiber_cross;
        else if (kind == "file")
            c.field = FieldKind::file;
        else
            throw ValidationError("field.kind must be one of constant, fiber-cross, file (got '" + kind + "')");
        if (f->get("water")) {
            const auto w = detail::get_vec(*f, "field", "water");
            if (w.size() != 3) throw ValidationError("field.water must hold the three diagonal entries");
            c.water_diag = Eigen::Vector3d(w[0], w[1], w[2]);
        }
        c.field_path = detail::get_str(*f, "field", "path", c.field_path);
        c.clamp_spd = detail::get_bool(*f, "field", "clamp", c.clamp_spd);
        c.length_scale = detail::get_num(*f, "field", "length_scale", c.length_scale);
        c.fiber_strength = detail::get_num(*f, "field", "strength", c.fiber_strength);
        c.fiber_width = detail::get_num(*f, "field", "width", c.fiber_width);
        if (f->get("voxels")) {
            const auto v = detail::get_vec(*f, "field", "voxels");
            if (v.size() != 3) throw ValidationError("field.voxels must have three entries");
            for (int d = 0; d < 3; ++d) {
                if (!(v[d] >= 1.0)) throw ValidationError("field.voxels entries must be positive");
                c.fiber_dims[d] = static_cast<std::uint32_t>(v[d]);
            }
        }
        if (f->get("spacing")) {
            const auto v = detail::get_vec(*f, "field", "spacing");
            if (v.size() != 3) throw ValidationError("field.spacing must have three entries");
            c.fiber_spacing = Eigen::Vector3d(v[0], v[1], v[2]);
        }
    }
    if (const auto* s = detail::sub(root, "scheme")) {
        detail::check_keys(*s, "[scheme]", {"variant", "stencil", "drift", "bc", "cfl", "order"});
        c.scheme.variant = parse_variant(detail::get_str(*s, "scheme", "variant", to_string(c.scheme.variant)));
        c.scheme.stencil = parse_stencil(detail::get_str(*s, "scheme", "stencil", to_string(c.scheme.stencil)));
        c.scheme.drift = parse_drift(detail::get_str(*s, "scheme", "drift", to_string(c.scheme.drift)));
        c.scheme.bc = parse_boundary(detail::get_str(*s, "scheme", "bc", to_string(c.scheme.bc)));
        c.scheme.cfl_safety = detail::get_num(*s, "scheme", "cfl", c.scheme.cfl_safety);
        c.order = static_cast<int>(detail::get_num(*s, "scheme", "order", c.order));
    }
    if (const auto* i = detail::sub(root, "initial")) {
        detail::check_keys(*i, "[initial]", {"kind", "center", "amplitude", "width"});
        const std::string kind = detail::get_str(*i, "initial", "kind", "gaussian");
        if (kind == "point")
            c.initial = InitialKind::point;
        else if (kind == "gaussian")
            c.initial = InitialKind::gaussian;
        else if (kind == "constant")
            c.initial = InitialKind::constant;
        else
            throw ValidationError("initial.kind must be one of point, gaussian, constant (got '" + kind + "')");
        if (i->get("center")) {
            const auto v = detail::get_vec(*i, "initial", "center");
            if (v.size() < 2 || v.size() > 3) throw ValidationError("initial.center must have 2 or 3 entries");
            for (std::size_t d = 0; d < v.size(); ++d) c.center(d) = v[d];
        }
        c.amplitude = detail::get_num(*i, "initial", "amplitude", c.amplitude);
        c.width = detail::get_num(*i, "initial", "width", c.width);
    }
    if (const auto* r = detail::sub(root, "run")) {
        detail::check_keys(*r, "[run]", {"t_end", "steady_tol", "max_steps", "output_every", "local_time_stepping"});
        c.t_end = detail::get_num(*r, "run", "t_end", c.t_end);
        c.steady_tol = detail::get_opt_num(*r, "run", "steady_tol");
        c.max_steps = static_cast<long>(detail::get_num(*r, "run", "max_steps", static_cast<double>(c.max_steps)));
        c.output_every = static_cast<int>(detail::get_num(*r, "run", "output_every", c.output_every));
        c.local_time_stepping = detail::get_bool(*r, "run", "local_time_stepping", c.local_time_stepping);
    }
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open configuration file " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_run_config(text, path);
}

/// Annotated defaults, printed by `haptoflow info`.
inline std::string config_defaults_text() {
    return R"(# haptoflow run configuration (TOML). Values shown are the defaults.

[grid]
dim = 2               # 2 or 3
cells = 40            # cells per axis, or an array [nx, ny(, nz)]
lo = 0.0              # domain [lo, hi] on every axis
hi = 1.0

# Give exactly one of [scaling] and [physical].
[scaling]
eps = 1.0             # parabolic scaling number
delta = 1.0           # diffusion scale
nu = 0.0              # drift to diffusion turning-rate ratio
theta = 0.0           # growth rate times time scale

# [physical]
# c = 2.1e-4          # cell speed
# lambda0 = 0.8       # turning rate
# lambda1 = 150.0     # cell-state dependent turning rate
# M = 8.44e-7         # growth rate
# X = 80.0            # length scale
# T = 6.31e7          # time scale

[model]
rho_cc = 1.0          # carrying capacity
# lambda_hat = 1.0    # fixed activation; omitted means computed from [model.activation]

[model.activation]
lambda0 = 0.8
k_plus = 0.1
k_minus = 0.1

[field]
kind = "constant"     # constant | fiber-cross | file
water = [1.0, 1.0, 1.0]   # diagonal of the constant water tensor
# path = "brain.dwtf" # kind = "file"
clamp = false         # clamp non-SPD voxels instead of rejecting them
length_scale = 1.0    # grid units to field units
strength = 4.0        # fiber-cross bundle strength
width = 8.0           # fiber-cross bundle width (field units)
voxels = [40, 40, 1]  # fiber-cross lattice
spacing = [2.0, 2.0, 2.0]

[scheme]
variant = "MI1"       # MI1 | MI2 | IV1 | IV2
stencil = "improved"  # plain | improved
drift = "upwind"      # centered | upwind
bc = "u_turn"         # u_turn | thermal | dirichlet (boundary held at the initial density)
cfl = 1.0             # safety factor in (0, 1]; second-order variants use at most 0.2
order = 1             # moment order N

[initial]
kind = "gaussian"     # point | gaussian | constant
center = [0.5, 0.5]
amplitude = 1.0
width = 0.05

[run]
t_end = 1.0
# steady_tol = 1e-8   # stop once ||rho^n - rho^{n-1}|| / (||rho^n|| dt) falls below
max_steps = 10000000
output_every = 0      # VTK snapshot cadence in steps; 0 writes only the final state
local_time_stepping = false
)";
}

}  // namespace haptoflow
