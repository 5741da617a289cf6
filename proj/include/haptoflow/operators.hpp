#pragma once
// Spatial right-hand sides of the micro-macro system on the staggered grid.
//
// Densities live on dual cells (vertices), perturbation moments on primal
// cells. The explicit part Phi and the implicit part Gamma are split
// differently for the MI and IV variants; see explicit_rhs/implicit_rhs.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "haptoflow/errors.hpp"
#include "haptoflow/grid.hpp"
#include "haptoflow/model.hpp"
#include "haptoflow/sphere_basis.hpp"

namespace haptoflow {

enum class Variant { MI1, MI2, IV1, IV2 };
enum class Stencil { plain, improved };
enum class DriftMode { centered, upwind };
enum class BoundaryKind { u_turn, thermal, dirichlet };

inline bool is_iv(Variant v) { return v == Variant::IV1 || v == Variant::IV2; }
inline int scheme_order(Variant v) { return (v == Variant::MI2 || v == Variant::IV2) ? 2 : 1; }

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::MI1: return "mi1";
        case Variant::MI2: return "mi2";
        case Variant::IV1: return "iv1";
        case Variant::IV2: return "iv2";
    }
    return "?";
}
inline std::string to_string(Stencil s) { return s == Stencil::plain ? "plain" : "improved"; }
inline std::string to_string(DriftMode d) { return d == DriftMode::centered ? "centered" : "upwind"; }
inline std::string to_string(BoundaryKind b) {
    switch (b) {
        case BoundaryKind::u_turn: return "u_turn";
        case BoundaryKind::thermal: return "thermal";
        case BoundaryKind::dirichlet: return "dirichlet";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    if (s == "mi1" || s == "MI1") return Variant::MI1;
    if (s == "mi2" || s == "MI2") return Variant::MI2;
    if (s == "iv1" || s == "IV1") return Variant::IV1;
    if (s == "iv2" || s == "IV2") return Variant::IV2;
    throw ValidationError("unknown variant '" + s + "' (expected mi1, mi2, iv1, iv2)");
}
inline Stencil parse_stencil(const std::string& s) {
    if (s == "plain") return Stencil::plain;
    if (s == "improved") return Stencil::improved;
    throw ValidationError("unknown stencil '" + s + "' (expected plain, improved)");
}
inline DriftMode parse_drift(const std::string& s) {
    if (s == "centered") return DriftMode::centered;
    if (s == "upwind") return DriftMode::upwind;
    throw ValidationError("unknown drift mode '" + s + "' (expected centered, upwind)");
}
inline BoundaryKind parse_boundary(const std::string& s) {
    if (s == "u_turn" || s == "u-turn") return BoundaryKind::u_turn;
    if (s == "thermal") return BoundaryKind::thermal;
    if (s == "dirichlet") return BoundaryKind::dirichlet;
    throw ValidationError("unknown boundary kind '" + s + "' (expected u_turn, thermal, dirichlet)");
}

struct SchemeConfig {
    Variant variant = Variant::MI1;
    Stencil stencil = Stencil::improved;
    DriftMode drift = DriftMode::upwind;
    BoundaryKind bc = BoundaryKind::u_turn;
    double cfl_safety = 1.0;
    /// Boundary density for BoundaryKind::dirichlet.
    std::function<double(const Eigen::Vector3d&)> dirichlet_value;

    void validate() const {
        if (!(cfl_safety > 0.0 && cfl_safety <= 1.0)) throw ValidationError("cfl_safety must lie in (0, 1]");
        if (bc == BoundaryKind::dirichlet && !dirichlet_value)
            throw ValidationError("dirichlet boundary requires a boundary density");
    }
    /// Second-order variants are restricted to a safety factor of at most 0.2.
    double effective_cfl() const { return scheme_order(variant) == 2 ? std::min(cfl_safety, 0.2) : cfl_safety; }
};

/// Additive manufactured sources: add(t, d_rho, d_u) accumulates into the explicit right-hand side.
struct SourceTerms {
    std::function<void(double, std::vector<double>&, std::vector<double>&)> add;
};

/// Right-hand side of the extended state (rho, u, improved-stencil corrections).
struct Rhs {
    std::vector<double> d_rho;
    std::vector<double> d_u;
    std::vector<double> d_du;
};

/// Ghost moment vectors across each domain boundary face, indexed [2*d + side_bit][cell].
struct Ghosts {
    int n_moments = 0;
    std::vector<std::vector<double>> u;
    const double* at(int d, int side_bit, int j) const {
        return u[2 * d + side_bit].data() + static_cast<std::size_t>(j) * n_moments;
    }
    double* at(int d, int side_bit, int j) {
        return u[2 * d + side_bit].data() + static_cast<std::size_t>(j) * n_moments;
    }
};

/// Number of perturbation variants of the improved stencil: four in 2D, twelve in 3D.
inline int variant_count(int dim) { return dim << (dim - 1); }

/// Corner bits of o on the axes other than d, packed in ascending axis order.
inline int transverse_bits(int dim, int d, int o) {
    int bits = 0, k = 0;
    for (int e = 0; e < dim; ++e) {
        if (e == d) continue;
        bits |= ((o >> e) & 1) << k;
        ++k;
    }
    return bits;
}

/// Corner index with bit d = side_bit and transverse bits taken from packed `bits`.
inline int corner_from_bits(int dim, int d, int side_bit, int bits) {
    int o = side_bit << d, k = 0;
    for (int e = 0; e < dim; ++e) {
        if (e == d) continue;
        o |= ((bits >> k) & 1) << e;
        ++k;
    }
    return o;
}

/// Discretization context: references to the problem data plus precomputed tables.
class Scheme {
public:
    const Grid& grid;
    const MomentBasis& basis;
    const ModelField& model;
    SchemeConfig config;
    SourceTerms source;

    int n = 0;          ///< restricted moments per cell
    int n_var = 0;      ///< improved-stencil variants (0 for the plain stencil)
    std::array<Eigen::MatrixXd, 3> plus_rr, minus_rr;  ///< restricted blocks of the upwind splits
    std::array<Eigen::RowVectorXd, 3> plus_0r, minus_0r;  ///< zeroth rows, restricted columns
    std::vector<double> drift_weights;  ///< per cell, corners_per_cell weights for rho-tilde in the drift
    std::vector<char> pinned;           ///< dirichlet vertices
    std::vector<double> pinned_value;
    std::vector<Eigen::MatrixXd> drift_matrix;  ///< per cell, IV variants only

    Scheme(const Grid& g, const MomentBasis& b, const ModelField& m, SchemeConfig cfg, SourceTerms src = {})
        : grid(g), basis(b), model(m), config(std::move(cfg)), source(std::move(src)) {
        config.validate();
        if (model.n_cells != grid.cell_count()) throw ValidationError("model field does not match the grid");
        if (model.n_moments != basis.n_restricted) throw ValidationError("model field does not match the basis");
        n = basis.n_restricted;
        n_var = config.stencil == Stencil::improved ? variant_count(grid.dim) : 0;
        for (int d = 0; d < 3; ++d) {
            plus_rr[d] = basis.flux_plus[d].bottomRightCorner(n, n);
            minus_rr[d] = basis.flux_minus[d].bottomRightCorner(n, n);
            plus_0r[d] = basis.flux_plus[d].row(0).tail(n);
            minus_0r[d] = basis.flux_minus[d].row(0).tail(n);
        }
        const int nc = grid.cell_count();
        const int k = grid.corners_per_cell();
        drift_weights.assign(static_cast<std::size_t>(nc) * k, 1.0 / k);
        if (config.drift == DriftMode::upwind) {
            for (int j = 0; j < nc; ++j) {
                const auto w = upwind_trace_point(grid, j, model.drift[j]);
                for (int o = 0; o < k; ++o) drift_weights[static_cast<std::size_t>(j) * k + o] = w[o];
            }
        }
        pinned.assign(grid.vertex_count(), 0);
        pinned_value.assign(grid.vertex_count(), 0.0);
        if (config.bc == BoundaryKind::dirichlet) {
            for (int r = 0; r < grid.vertex_count(); ++r) {
                if (!grid.is_boundary_vertex(r)) continue;
                pinned[r] = 1;
                pinned_value[r] = config.dirichlet_value(grid.vertex_position(r));
            }
        }
        if (is_iv(config.variant)) {
            drift_matrix.resize(nc);
            for (int j = 0; j < nc; ++j) drift_matrix[j] = drift_matrix_of(j);
        }
    }

    double eps() const { return model.scaling.eps; }
    double delta() const { return model.scaling.delta; }
    double nu() const { return model.scaling.nu; }
    double theta() const { return model.scaling.theta; }

    /// lambda_hat grad Q . (M_d - sqrt(4pi/3) e ehat_slot(d)^T), the linear part of <L_a g a>.
    Eigen::MatrixXd drift_matrix_of(int j) const {
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
        const Eigen::Map<const Eigen::VectorXd> e(model.e(j), n);
        const double c = std::sqrt(4.0 * kPi / 3.0);
        for (int d = 0; d < 3; ++d) {
            const double gq = model.grad_q[j](d);
            if (gq == 0.0) continue;
            K += gq * basis.restricted_flux[d];
            K.col(basis.axis_slot(d)) -= gq * c * e;
        }
        return model.lambda_hat[j] * K;
    }

    double rho_tilde(const std::vector<double>& rho, int j) const {
        const int k = grid.corners_per_cell();
        double s = 0.0;
        for (int o = 0; o < k; ++o) s += rho[grid.corner(j, o)];
        return s / k;
    }
    double rho_tilde_drift(const std::vector<double>& rho, int j) const {
        const int k = grid.corners_per_cell();
        double s = 0.0;
        for (int o = 0; o < k; ++o) s += drift_weights[static_cast<std::size_t>(j) * k + o] * rho[grid.corner(j, o)];
        return s;
    }
    double growth(double rho) const { return growth_factor(rho, model.rho_cc); }

    std::size_t du_index(int v, int j) const {
        return (static_cast<std::size_t>(v) * grid.cell_count() + j) * n;
    }
};

inline void check_state(const State& s, const Scheme& sc) {
    if (static_cast<int>(s.rho.size()) != sc.grid.vertex_count() ||
        s.u.size() != static_cast<std::size_t>(sc.grid.cell_count()) * sc.n || s.n_moments != sc.n)
        throw ValidationError("state does not match grid/basis");
    if (!s.du_variants.empty() &&
        s.du_variants.size() != static_cast<std::size_t>(sc.n_var) * sc.grid.cell_count() * sc.n)
        throw ValidationError("variant corrections do not match the stencil");
}

/// Allocates the improved-stencil corrections when the scheme needs them.
inline void prepare_state(State& s, const Scheme& sc) {
    const std::size_t want = static_cast<std::size_t>(sc.n_var) * sc.grid.cell_count() * sc.n;
    if (s.du_variants.size() != want) s.du_variants.assign(want, 0.0);
    if (sc.config.bc == BoundaryKind::dirichlet)
        for (int r = 0; r < sc.grid.vertex_count(); ++r)
            if (sc.pinned[r]) s.rho[r] = sc.pinned_value[r];
    check_state(s, sc);
}

/// Net incoming-flux balance factor alpha for the thermal kernel: the outgoing
/// flux of f divided by the flux an incoming E would carry.
inline double thermal_alpha(const std::vector<double>& f_values, const std::vector<double>& e_values,
                            const Eigen::Vector3d& normal, const MomentBasis& basis) {
    if (static_cast<int>(f_values.size()) != basis.n_nodes() || static_cast<int>(e_values.size()) != basis.n_nodes())
        throw ValidationError("thermal_alpha: node value count mismatch");
    double out = 0.0, in = 0.0;
    for (int q = 0; q < basis.n_nodes(); ++q) {
        const double vn = basis.quad_nodes[q].dot(normal);
        if (vn > 0.0)
            out += basis.quad_weights[q] * vn * f_values[q];
        else if (vn < 0.0)
            in += basis.quad_weights[q] * vn * e_values[q];
    }
    if (in == 0.0) throw RuntimeFailure("thermal_alpha: equilibrium carries no incoming flux");
    return -out / in;
}

/// Thermal ghost: outgoing half-range keeps g, incoming half-range is beta*E with zero net flux.
inline void thermal_ghost(const double* u, int j, int d, int side, const Scheme& sc, double* ghost) {
    const MomentBasis& b = sc.basis;
    const int n = sc.n;
    const Eigen::Matrix3d& A = sc.model.eq_matrix[j];
    const int nq = b.n_nodes();
    std::vector<double> g(nq), E(nq);
    double out = 0.0, in = 0.0;
    for (int q = 0; q < nq; ++q) {
        double gv = 0.0;
        for (int i = 0; i < n; ++i) gv += u[i] * b.values(q, i + 1);
        g[q] = gv;
        const Eigen::Vector3d& v = b.quad_nodes[q];
        E[q] = v.dot(A * v);
        const double vn = side * v(d);
        if (vn > 0.0)
            out += b.quad_weights[q] * vn * gv;
        else if (vn < 0.0)
            in += b.quad_weights[q] * vn * E[q];
    }
    const double beta = in != 0.0 ? -out / in : 0.0;
    for (int i = 0; i < n; ++i) ghost[i] = 0.0;
    for (int q = 0; q < nq; ++q) {
        const double vn = side * b.quad_nodes[q](d);
        const double val = vn >= 0.0 ? g[q] : beta * E[q];
        const double w = b.quad_weights[q] * val;
        for (int i = 0; i < n; ++i) ghost[i] += w * b.values(q, i + 1);
    }
}

inline Ghosts fill_ghosts(const State& s, const Scheme& sc) {
    const Grid& g = sc.grid;
    const int n = sc.n;
    Ghosts gh;
    gh.n_moments = n;
    gh.u.assign(2 * g.dim, std::vector<double>(static_cast<std::size_t>(g.cell_count()) * n, 0.0));
    const Eigen::VectorXd signs = sc.basis.parity_signs.tail(n);
    for (int d = 0; d < g.dim; ++d) {
        for (int sb = 0; sb < 2; ++sb) {
            const int side = sb ? 1 : -1;
            for (int j = 0; j < g.cell_count(); ++j) {
                if (!g.is_boundary_face(j, d, side)) continue;
                const double* u = s.u_at(j);
                double* out = gh.at(d, sb, j);
                if (sc.config.bc == BoundaryKind::u_turn) {
                    for (int i = 0; i < n; ++i) out[i] = signs(i) * u[i];
                } else {
                    thermal_ghost(u, j, d, side, sc, out);
                }
            }
        }
    }
    return gh;
}

/// Upwind face flux F = A+ w_L + A- w_R for w = (0, u): restricted rows into fr, zeroth row returned.
inline double face_flux(const Scheme& sc, int d, const double* uL, const double* uR, double* fr) {
    const int n = sc.n;
    Eigen::Map<const Eigen::VectorXd> L(uL, n), R(uR, n);
    Eigen::Map<Eigen::VectorXd>(fr, n) = sc.plus_rr[d] * L + sc.minus_rr[d] * R;
    return sc.plus_0r[d].dot(L) + sc.minus_0r[d].dot(R);
}

/// Net mass flux <v.n g> leaving the domain through all boundary faces (diagnostic).
inline double boundary_mass_flux(const State& s, const Scheme& sc, const Ghosts& gh) {
    const Grid& g = sc.grid;
    std::vector<double> fr(sc.n);
    double total = 0.0;
    for (int d = 0; d < g.dim; ++d) {
        double area = 1.0;
        for (int e = 0; e < g.dim; ++e)
            if (e != d) area *= g.spacing(e);
        for (int j = 0; j < g.cell_count(); ++j) {
            if (g.is_boundary_face(j, d, 1))
                total += area * std::sqrt(4.0 * kPi) * face_flux(sc, d, s.u_at(j), gh.at(d, 1, j), fr.data());
            if (g.is_boundary_face(j, d, -1))
                total -= area * std::sqrt(4.0 * kPi) * face_flux(sc, d, gh.at(d, 0, j), s.u_at(j), fr.data());
        }
    }
    return total;
}

/// Macroscopic flux part -delta div <v g> on every dual cell, plus the growth
/// term theta*mu*rho when `with_growth`. Domain-boundary faces carry no mass flux.
inline std::vector<double> macro_rhs(const State& s, const Scheme& sc, bool with_growth = true) {
    const Grid& g = sc.grid;
    const int dim = g.dim;
    const double c1 = std::sqrt(4.0 * kPi / 3.0);
    const bool improved = sc.n_var > 0 && !s.du_variants.empty();
    const int nv = g.vertex_count();
    std::vector<double> out(nv, 0.0);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < nv; ++r) {
        if (sc.pinned[r]) continue;
        const Index3 p = g.vertex_coords(r);
        double acc = 0.0;
        for (int d = 0; d < dim; ++d) {
            const int slot = sc.basis.axis_slot(d);
            const double area = g.facet_area(d);
            for (int side = -1; side <= 1; side += 2) {
                if (p[d] + side < 0 || p[d] + side >= g.n_vertices[d]) continue;
                Index3 c = p;
                c[d] = side > 0 ? p[d] : p[d] - 1;
                // Enumerate the 2^(dim-1) cells around the edge through the transverse offsets.
                double sum = 0.0;
                for (int t = 0; t < (1 << (dim - 1)); ++t) {
                    Index3 cc = c;
                    int bits = 0, k = 0;
                    bool ok = true;
                    for (int e = 0; e < dim; ++e) {
                        if (e == d) continue;
                        const int off = (t >> k) & 1;  // 0: cell below the vertex along e
                        cc[e] = p[e] - 1 + off;
                        if (cc[e] < 0 || cc[e] >= g.n_cells[e]) ok = false;
                        bits |= (off ? 0 : 1) << k;  // vertex is the upper corner of a lower cell
                        ++k;
                    }
                    if (!ok) continue;
                    const int j = g.cell_index(cc);
                    double val = s.u_at(j)[slot];
                    if (improved) val += s.du_variants[sc.du_index(d * (1 << (dim - 1)) + bits, j) + slot];
                    sum += c1 * val;
                }
                acc += side * area * sum;
            }
        }
        double rhs = -sc.delta() * acc / g.dual_volume(r);
        if (with_growth && sc.theta() != 0.0) rhs += sc.theta() * sc.growth(s.rho[r]) * s.rho[r];
        out[r] = rhs;
    }
    return out;
}

/// Density on the face of cell j normal to d (side_bit 1 = upper), averaged over its corners,
/// or taken at the single corner with transverse bits `bits` when bits >= 0.
inline double face_density(const std::vector<double>& rho, const Grid& g, int j, int d, int side_bit, int bits = -1) {
    if (bits >= 0) return rho[g.corner(j, corner_from_bits(g.dim, d, side_bit, bits))];
    const int m = 1 << (g.dim - 1);
    double s = 0.0;
    for (int b = 0; b < m; ++b) s += rho[g.corner(j, corner_from_bits(g.dim, d, side_bit, b))];
    return s / m;
}

/// Stiff flux -(delta/eps^2) div(rho <v E a>) per primal cell. variant < 0 selects the
/// plain stencil; otherwise faces normal to the variant's axis use its single corner.
inline void micro_fd_rhs(const State& s, const Scheme& sc, std::vector<double>& out, int variant = -1,
                         bool accumulate = false) {
    const Grid& g = sc.grid;
    const int n = sc.n;
    const int nc = g.cell_count();
    if (!accumulate) out.assign(static_cast<std::size_t>(nc) * n, 0.0);
    const double k = -sc.delta() / (sc.eps() * sc.eps());
    const int per_axis = 1 << (g.dim - 1);
    const int vd = variant >= 0 ? variant / per_axis : -1;
    const int vb = variant >= 0 ? variant % per_axis : -1;
#pragma omp parallel for schedule(static)
    for (int j = 0; j < nc; ++j) {
        double* o = out.data() + static_cast<std::size_t>(j) * n;
        for (int d = 0; d < g.dim; ++d) {
            const int bits = d == vd ? vb : -1;
            const double rp = face_density(s.rho, g, j, d, 1, bits);
            const double rm = face_density(s.rho, g, j, d, 0, bits);
            const double* ep = sc.model.face_ev(j, d, 1);
            const double* em = sc.model.face_ev(j, d, 0);
            const double f = k / g.spacing(d);
            for (int i = 0; i < n; ++i) o[i] += f * (rp * ep[i] - rm * em[i]);
        }
    }
}

/// Differences variant - plain of the stiff flux for every improved-stencil variant.
inline void micro_fd_variant_differences(const State& s, const Scheme& sc, std::vector<double>& out) {
    const Grid& g = sc.grid;
    const int n = sc.n;
    const int nc = g.cell_count();
    out.assign(static_cast<std::size_t>(sc.n_var) * nc * n, 0.0);
    if (sc.n_var == 0) return;
    const double k = -sc.delta() / (sc.eps() * sc.eps());
    const int per_axis = 1 << (g.dim - 1);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < nc; ++j) {
        for (int d = 0; d < g.dim; ++d) {
            const double rp = face_density(s.rho, g, j, d, 1);
            const double rm = face_density(s.rho, g, j, d, 0);
            const double* ep = sc.model.face_ev(j, d, 1);
            const double* em = sc.model.face_ev(j, d, 0);
            const double f = k / g.spacing(d);
            for (int b = 0; b < per_axis; ++b) {
                const double dp = face_density(s.rho, g, j, d, 1, b) - rp;
                const double dm = face_density(s.rho, g, j, d, 0, b) - rm;
                double* o = out.data() + sc.du_index(d * per_axis + b, j);
                for (int i = 0; i < n; ++i) o[i] = f * (dp * ep[i] - dm * em[i]);
            }
        }
    }
}

/// <K_a L_a f a> for f = rho_tilde E + eps g on cell j.
inline Eigen::VectorXd collision_perturbation(const Eigen::VectorXd& u, double rho_tilde, double eps, int j,
                                              const ModelField& model, const MomentBasis& basis) {
    const int n = basis.n_restricted;
    if (u.size() != n) throw ValidationError("collision_perturbation: moment vector length mismatch");
    Eigen::VectorXd r = Eigen::VectorXd::Zero(n);
    const Eigen::Map<const Eigen::VectorXd> e(model.e(j), n);
    const double c = std::sqrt(4.0 * kPi / 3.0);
    for (int d = 0; d < 3; ++d) {
        const double gq = model.grad_q[j](d);
        if (gq == 0.0) continue;
        const Eigen::Map<const Eigen::VectorXd> ev(model.ev(j, d), n);
        r += gq * (rho_tilde * ev + eps * (basis.restricted_flux[d] * u - c * u(basis.axis_slot(d)) * e));
    }
    return model.lambda_hat[j] * r;
}

/// Micro transport -(delta/eps)(I - Pi) div(v g) with the moment upwind flux.
inline void micro_transport_rhs(const State& s, const Scheme& sc, const Ghosts& gh, std::vector<double>& out,
                                bool accumulate = false) {
    const Grid& g = sc.grid;
    const int n = sc.n;
    const int nc = g.cell_count();
    if (!accumulate) out.assign(static_cast<std::size_t>(nc) * n, 0.0);
    const double k = -sc.delta() / sc.eps();
    const double s4 = std::sqrt(4.0 * kPi);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < nc; ++j) {
        std::vector<double> fp(n), fm(n);
        double* o = out.data() + static_cast<std::size_t>(j) * n;
        const double* e = sc.model.e(j);
        for (int d = 0; d < g.dim; ++d) {
            const int up = g.cell_neighbor(j, d, 1);
            const int lo = g.cell_neighbor(j, d, -1);
            const double* uR = up >= 0 ? s.u_at(up) : gh.at(d, 1, j);
            const double* uL = lo >= 0 ? s.u_at(lo) : gh.at(d, 0, j);
            const double f0p = face_flux(sc, d, s.u_at(j), uR, fp.data());
            const double f0m = face_flux(sc, d, uL, s.u_at(j), fm.data());
            const double f = k / g.spacing(d);
            const double mass = s4 * (f0p - f0m);
            for (int i = 0; i < n; ++i) o[i] += f * ((fp[i] - fm[i]) - mass * e[i]);
        }
    }
}

/// Drift moments (delta nu/eps^2) <K_a L_a f a> and growth theta mu u, added to out.
inline void micro_drift_source_rhs(const State& s, const Scheme& sc, std::vector<double>& out) {
    const int n = sc.n;
    const int nc = sc.grid.cell_count();
    const double eps = sc.eps();
    const double kd = sc.delta() * sc.nu() / (eps * eps);
    const double th = sc.theta();
#pragma omp parallel for schedule(static)
    for (int j = 0; j < nc; ++j) {
        double* o = out.data() + static_cast<std::size_t>(j) * n;
        const Eigen::Map<const Eigen::VectorXd> u(s.u_at(j), n);
        if (kd != 0.0) {
            const Eigen::VectorXd c =
                collision_perturbation(u, sc.rho_tilde_drift(s.rho, j), eps, j, sc.model, sc.basis);
            for (int i = 0; i < n; ++i) o[i] += kd * c(i);
        }
        if (th != 0.0) {
            const double mu = sc.growth(sc.rho_tilde(s.rho, j));
            for (int i = 0; i < n; ++i) o[i] += th * mu * u(i);
        }
    }
}

/// Explicit part Phi. compute_rho/compute_u restrict the evaluation to one half.
inline Rhs explicit_rhs(const State& s, double t, const Scheme& sc, bool compute_rho = true, bool compute_u = true) {
    Rhs r;
    const bool iv = is_iv(sc.config.variant);
    if (compute_u) {
        const Ghosts gh = fill_ghosts(s, sc);
        micro_fd_rhs(s, sc, r.d_u);
        micro_transport_rhs(s, sc, gh, r.d_u, true);
        if (!iv) micro_drift_source_rhs(s, sc, r.d_u);
        micro_fd_variant_differences(s, sc, r.d_du);
    }
    if (compute_rho) r.d_rho = macro_rhs(s, sc, !iv);
    if (sc.source.add) {
        if (!compute_rho) r.d_rho.assign(s.rho.size(), 0.0);
        if (!compute_u) r.d_u.assign(s.u.size(), 0.0);
        sc.source.add(t, r.d_rho, r.d_u);
        if (!compute_rho) r.d_rho.clear();
        if (!compute_u) r.d_u.clear();
    }
    if (!r.d_rho.empty())
        for (int v = 0; v < sc.grid.vertex_count(); ++v)
            if (sc.pinned[v]) r.d_rho[v] = 0.0;
    return r;
}

/// Implicit part Gamma evaluated at s (the rho-tilde inside uses s.rho).
inline Rhs implicit_rhs(const State& s, const Scheme& sc) {
    Rhs r;
    const int n = sc.n;
    const int nc = sc.grid.cell_count();
    const double kc = -sc.delta() / (sc.eps() * sc.eps());
    r.d_rho.assign(s.rho.size(), 0.0);
    r.d_u.assign(s.u.size(), 0.0);
    r.d_du.assign(s.du_variants.size(), 0.0);
    const bool iv = is_iv(sc.config.variant);
    const double eps = sc.eps();
    const double kdrift = sc.delta() * sc.nu() / eps;
    const double kb = sc.delta() * sc.nu() / (eps * eps);
    for (int j = 0; j < nc; ++j) {
        const Eigen::Map<const Eigen::VectorXd> u(s.u_at(j), n);
        Eigen::Map<Eigen::VectorXd> du(r.d_u.data() + static_cast<std::size_t>(j) * n, n);
        const double kj = kc * sc.model.collision_scale[j];
        if (!iv) {
            du = kj * u;
            for (int v = 0; v < sc.n_var; ++v) {
                const std::size_t o = sc.du_index(v, j);
                for (int i = 0; i < n; ++i) r.d_du[o + i] = kj * s.du_variants[o + i];
            }
            continue;
        }
        Eigen::MatrixXd J = kj * Eigen::MatrixXd::Identity(n, n) + kdrift * sc.drift_matrix[j];
        if (sc.theta() != 0.0) J.diagonal().array() += sc.theta() * sc.growth(sc.rho_tilde(s.rho, j));
        du = J * u;
        if (kb != 0.0) {
            const double rt = sc.rho_tilde_drift(s.rho, j);
            for (int d = 0; d < 3; ++d) {
                const double gq = sc.model.grad_q[j](d);
                if (gq == 0.0) continue;
                du += kb * sc.model.lambda_hat[j] * gq * rt *
                      Eigen::Map<const Eigen::VectorXd>(sc.model.ev(j, d), n);
            }
        }
        for (int v = 0; v < sc.n_var; ++v) {
            const std::size_t o = sc.du_index(v, j);
            Eigen::Map<Eigen::VectorXd>(r.d_du.data() + o, n) =
                J * Eigen::Map<const Eigen::VectorXd>(s.du_variants.data() + o, n);
        }
    }
    if (iv && sc.theta() != 0.0)
        for (std::size_t v = 0; v < s.rho.size(); ++v)
            if (!sc.pinned[v]) r.d_rho[v] = sc.theta() * sc.growth(s.rho[v]) * s.rho[v];
    return r;
}

/// Solves rho = rho_star + k (1 - rho/rho_cc) rho for the root continuous in k at k = 0.
inline double implicit_logistic(double rho_star, double k, double rho_cc) {
    if (k == 0.0 || rho_star == 0.0) return rho_star;
    const double a = k / rho_cc;
    const double b = 1.0 - k;
    const double disc = b * b + 4.0 * a * rho_star;
    if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        if (b + sq > 0.0) return 2.0 * rho_star / (b + sq);
        return (-b + sq) / (2.0 * a);
    }
    // No real root: fall back to Newton from rho_star on the residual.
    double x = rho_star;
    for (int it = 0; it < 50; ++it) {
        const double f = x - rho_star - k * (1.0 - x / rho_cc) * x;
        const double df = 1.0 - k + 2.0 * a * x;
        if (df == 0.0) break;
        const double dx = f / df;
        x -= dx;
        if (std::abs(dx) < 1e-15 * std::max(1.0, std::abs(x))) break;
    }
    return x;
}

/// In-place implicit stage x = x_star + c_dt Gamma(x). The micro part uses the
/// incoming rho (rho_star) inside rho-tilde. `cell_dt` / `vertex_dt` optionally
/// override c_dt per primal / dual cell (local pseudo-time stepping).
inline void implicit_update(State& s, double c_dt, const Scheme& sc, const std::vector<double>* cell_dt = nullptr,
                            const std::vector<double>* vertex_dt = nullptr) {
    if (!(c_dt > 0.0)) throw ValidationError("implicit_update: time step must be positive");
    const int n = sc.n;
    const int nc = sc.grid.cell_count();
    const std::size_t want = static_cast<std::size_t>(sc.n_var) * nc * n;
    if (s.du_variants.size() != want) s.du_variants.assign(want, 0.0);
    const double kc = sc.delta() / (sc.eps() * sc.eps());
    const bool iv = is_iv(sc.config.variant);
    const double eps = sc.eps();
    const double kdrift = sc.delta() * sc.nu() / eps;
    const double kb = sc.delta() * sc.nu() / (eps * eps);
    std::vector<std::string> failures;
#pragma omp parallel for schedule(static)
    for (int j = 0; j < nc; ++j) {
        const double dt = cell_dt ? (*cell_dt)[j] : c_dt;
        Eigen::Map<Eigen::VectorXd> u(s.u_at(j), n);
        if (!iv) {
            const double f = 1.0 / (1.0 + dt * kc * sc.model.collision_scale[j]);
            u *= f;
            for (int v = 0; v < sc.n_var; ++v)
                Eigen::Map<Eigen::VectorXd>(s.du_variants.data() + sc.du_index(v, j), n) *= f;
            continue;
        }
        Eigen::MatrixXd J = -kc * sc.model.collision_scale[j] * Eigen::MatrixXd::Identity(n, n) +
                            kdrift * sc.drift_matrix[j];
        if (sc.theta() != 0.0) J.diagonal().array() += sc.theta() * sc.growth(sc.rho_tilde(s.rho, j));
        const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - dt * J;
        Eigen::VectorXd rhs = u;
        if (kb != 0.0) {
            const double rt = sc.rho_tilde_drift(s.rho, j);
            for (int d = 0; d < 3; ++d) {
                const double gq = sc.model.grad_q[j](d);
                if (gq == 0.0) continue;
                rhs += dt * kb * sc.model.lambda_hat[j] * gq * rt *
                       Eigen::Map<const Eigen::VectorXd>(sc.model.ev(j, d), n);
            }
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
        const double det = lu.determinant();
        if (!std::isfinite(det) || std::abs(det) < 1e-300) {
#pragma omp critical
            failures.push_back("singular implicit system in cell " + std::to_string(j));
            continue;
        }
        u = lu.solve(rhs);
        for (int v = 0; v < sc.n_var; ++v) {
            Eigen::Map<Eigen::VectorXd> dv(s.du_variants.data() + sc.du_index(v, j), n);
            dv = lu.solve(Eigen::VectorXd(dv));
        }
    }
    if (!failures.empty()) throw RuntimeFailure(failures.front());
    if (iv && sc.theta() != 0.0) {
        for (std::size_t r = 0; r < s.rho.size(); ++r) {
            if (sc.pinned[r]) continue;
            const double dt = vertex_dt ? (*vertex_dt)[r] : c_dt;
            s.rho[r] = implicit_logistic(s.rho[r], dt * sc.theta(), sc.model.rho_cc);
        }
    }
    for (std::size_t r = 0; r < s.rho.size(); ++r)
        if (sc.pinned[r]) s.rho[r] = sc.pinned_value[r];
}

}  // namespace haptoflow
