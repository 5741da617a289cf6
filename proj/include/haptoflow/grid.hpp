#pragma once
// Tensor-product primal/dual grid in two or three dimensions.
//
// Vertices sit at origin + i*h. Primal cells are the boxes between adjacent
// vertices; dual cells are the boxes around vertices, clipped at the domain
// boundary. Densities live on dual cells, perturbation moments on primal cells.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "haptoflow/errors.hpp"

namespace haptoflow {

using Index3 = std::array<int, 3>;

class Grid {
public:
    int dim = 2;
    Index3 n_vertices{1, 1, 1};
    Index3 n_cells{1, 1, 1};
    Eigen::Vector3d spacing{1.0, 1.0, 1.0};
    Eigen::Vector3d origin{0.0, 0.0, 0.0};
    Eigen::Vector3d extents{0.0, 0.0, 0.0};

    int vertex_count() const { return n_vertices[0] * n_vertices[1] * n_vertices[2]; }
    int cell_count() const { return n_cells[0] * n_cells[1] * n_cells[2]; }
    int corners_per_cell() const { return 1 << dim; }

    int vertex_index(const Index3& p) const { return p[0] + n_vertices[0] * (p[1] + n_vertices[1] * p[2]); }
    int cell_index(const Index3& c) const { return c[0] + n_cells[0] * (c[1] + n_cells[1] * c[2]); }

    Index3 vertex_coords(int r) const {
        Index3 p{};
        p[0] = r % n_vertices[0];
        r /= n_vertices[0];
        p[1] = r % n_vertices[1];
        p[2] = r / n_vertices[1];
        return p;
    }
    Index3 cell_coords(int j) const {
        Index3 c{};
        c[0] = j % n_cells[0];
        j /= n_cells[0];
        c[1] = j % n_cells[1];
        c[2] = j / n_cells[1];
        return c;
    }

    Eigen::Vector3d vertex_position(int r) const {
        const Index3 p = vertex_coords(r);
        Eigen::Vector3d x = origin;
        for (int d = 0; d < dim; ++d) x(d) += p[d] * spacing(d);
        return x;
    }
    Eigen::Vector3d cell_center(int j) const {
        const Index3 c = cell_coords(j);
        Eigen::Vector3d x = origin;
        for (int d = 0; d < dim; ++d) x(d) += (c[d] + 0.5) * spacing(d);
        return x;
    }

    /// Corner o of primal cell j; bit d of o selects the upper vertex along axis d.
    int corner(int j, int o) const {
        Index3 p = cell_coords(j);
        for (int d = 0; d < dim; ++d) p[d] += (o >> d) & 1;
        return vertex_index(p);
    }

    /// Neighbouring primal cell across the face normal to axis d (side = +1 or -1), or -1.
    int cell_neighbor(int j, int d, int side) const {
        Index3 c = cell_coords(j);
        c[d] += side;
        if (c[d] < 0 || c[d] >= n_cells[d]) return -1;
        return cell_index(c);
    }

    double primal_volume() const {
        double v = 1.0;
        for (int d = 0; d < dim; ++d) v *= spacing(d);
        return v;
    }
    double dual_volume(int r) const {
        const Index3 p = vertex_coords(r);
        double v = 1.0;
        for (int d = 0; d < dim; ++d) {
            const bool edge = p[d] == 0 || p[d] == n_vertices[d] - 1;
            v *= edge ? 0.5 * spacing(d) : spacing(d);
        }
        return v;
    }
    /// |C_j ∩ C_r| for any vertex r of cell j.
    double subcell_volume() const { return primal_volume() / corners_per_cell(); }

    /// Area of one facet of a dual face normal to axis d (the part inside one primal cell).
    double facet_area(int d) const {
        double a = 1.0;
        for (int e = 0; e < dim; ++e)
            if (e != d) a *= 0.5 * spacing(e);
        return a;
    }

    bool is_boundary_vertex(int r) const {
        const Index3 p = vertex_coords(r);
        for (int d = 0; d < dim; ++d)
            if (p[d] == 0 || p[d] == n_vertices[d] - 1) return true;
        return false;
    }
    /// True when the face of primal cell j normal to d on the given side lies on the domain boundary.
    bool is_boundary_face(int j, int d, int side) const { return cell_neighbor(j, d, side) < 0; }

    double min_spacing() const {
        double h = spacing(0);
        for (int d = 1; d < dim; ++d) h = std::min(h, spacing(d));
        return h;
    }
};

/// Builds a grid from per-axis vertex counts (two or three entries) and extents.
inline Grid build_grid(const std::vector<int>& counts, const std::vector<double>& extents,
                       const Eigen::Vector3d& origin = Eigen::Vector3d::Zero()) {
    if (counts.size() != 2 && counts.size() != 3)
        throw ValidationError("grid dimension must be 2 or 3, got " + std::to_string(counts.size()));
    if (extents.size() != counts.size())
        throw ValidationError("grid extents and counts differ in length");
    Grid g;
    g.dim = static_cast<int>(counts.size());
    g.origin = origin;
    for (int d = 0; d < g.dim; ++d) {
        if (counts[d] < 3)
            throw ValidationError("degenerate grid axis " + std::to_string(d) + ": need at least 3 vertices, got " +
                                  std::to_string(counts[d]));
        if (!(extents[d] > 0.0))
            throw ValidationError("degenerate grid axis " + std::to_string(d) + ": extent must be positive");
        g.n_vertices[d] = counts[d];
        g.n_cells[d] = counts[d] - 1;
        g.extents(d) = extents[d];
        g.spacing(d) = extents[d] / (counts[d] - 1);
    }
    return g;
}

/// Convenience: a square/cubic grid with n cells per axis over [lo, hi]^dim.
inline Grid build_uniform_grid(int dim, int cells, double lo, double hi) {
    std::vector<int> counts(dim, cells + 1);
    std::vector<double> ext(dim, hi - lo);
    Eigen::Vector3d o = Eigen::Vector3d::Zero();
    for (int d = 0; d < dim; ++d) o(d) = lo;
    return build_grid(counts, ext, o);
}

struct State {
    std::vector<double> rho;  ///< per dual cell
    std::vector<double> u;    ///< per primal cell, n_restricted moments each
    /// Improved stencil only: per variant, per cell, the moment difference to u.
    std::vector<double> du_variants;
    double time = 0.0;
    int n_moments = 0;

    double* u_at(int j) { return u.data() + static_cast<std::size_t>(j) * n_moments; }
    const double* u_at(int j) const { return u.data() + static_cast<std::size_t>(j) * n_moments; }
};

inline State make_state(const Grid& g, int n_moments) {
    State s;
    s.n_moments = n_moments;
    s.rho.assign(g.vertex_count(), 0.0);
    s.u.assign(static_cast<std::size_t>(g.cell_count()) * n_moments, 0.0);
    return s;
}

/// Subcell-volume weighted mean of the corner densities of primal cell j.
inline double primal_avg_density(const State& s, const Grid& g, int j) {
    const int nc = g.corners_per_cell();
    double acc = 0.0;
    for (int o = 0; o < nc; ++o) acc += g.subcell_volume() * s.rho[g.corner(j, o)];
    return acc / g.primal_volume();
}

/// Hat-function weights over the corners of cell j (corner order as Grid::corner)
/// at the point where the ray center(j) - tau*a, tau > 0, leaves the cell.
inline std::vector<double> upwind_trace_point(const Grid& g, int /*j*/, const Eigen::Vector3d& a) {
    const int nc = g.corners_per_cell();
    double tau = std::numeric_limits<double>::infinity();
    for (int d = 0; d < g.dim; ++d)
        if (a(d) != 0.0) tau = std::min(tau, 0.5 * g.spacing(d) / std::abs(a(d)));
    std::vector<double> w(nc, 1.0 / nc);
    if (!std::isfinite(tau)) return w;
    std::array<double, 3> s{0.5, 0.5, 0.5};
    for (int d = 0; d < g.dim; ++d) {
        const double off = std::clamp(-tau * a(d) / g.spacing(d), -0.5, 0.5);
        s[d] = 0.5 + off;
    }
    for (int o = 0; o < nc; ++o) {
        double wt = 1.0;
        for (int d = 0; d < g.dim; ++d) wt *= ((o >> d) & 1) ? s[d] : 1.0 - s[d];
        w[o] = wt;
    }
    return w;
}

}  // namespace haptoflow
