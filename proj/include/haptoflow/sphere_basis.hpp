#pragma once
// Real spherical harmonics on S^2, product quadrature and moment matrices.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "haptoflow/errors.hpp"

namespace haptoflow {

inline constexpr double kPi = std::numbers::pi;
inline constexpr int kMaxBasisOrder = 15;

/// Component order of the first-order block. The real harmonics with
/// m = -1, 0, 1 are proportional to v_eta, v_zeta, v_xi respectively, so
/// the restricted index of the first-order component along axis d is
/// kOrderOneSlot[d]. Every axis lookup in the library goes through this table.
inline constexpr std::array<int, 3> kOrderOneSlot{2, 0, 1};

/// Index of the symmetric 3x3 entry k in the packed order (xx, yy, zz, xy, xz, yz).
inline constexpr std::array<std::array<int, 2>, 6> kPackedPairs{
    {{0, 0}, {1, 1}, {2, 2}, {0, 1}, {0, 2}, {1, 2}}};

struct MomentBasis {
    int order = 0;
    int n_full = 1;
    int n_restricted = 0;
    std::vector<Eigen::Vector3d> quad_nodes;
    std::vector<double> quad_weights;
    std::vector<int> degree;          ///< harmonic degree l per full index
    Eigen::VectorXd parity_signs;     ///< (-1)^l per full index
    Eigen::MatrixXd values;           ///< values(q, i) = m_i(v_q)
    std::array<Eigen::MatrixXd, 3> flux_matrices;  ///< M_d = <v_d m m^T>, full basis
    std::array<Eigen::MatrixXd, 3> flux_plus;      ///< R Lambda^+ R^T
    std::array<Eigen::MatrixXd, 3> flux_minus;     ///< R Lambda^- R^T
    std::array<Eigen::MatrixXd, 3> restricted_flux;  ///< M_d without row/col 0
    /// <(v v^T)_k a>: moments of the packed quadratic monomials (n_restricted x 6).
    Eigen::MatrixXd quadratic_moments;
    /// <v_d (v v^T)_k a> for each axis d (n_restricted x 6).
    std::array<Eigen::MatrixXd, 3> cubic_moments;

    int n_nodes() const { return static_cast<int>(quad_weights.size()); }

    /// Restricted index of the first-order harmonic along axis d.
    int axis_slot(int d) const { return kOrderOneSlot[d]; }

    /// Sum of w_q f(v_q).
    template <class F>
    double quad(F&& f) const {
        double s = 0.0;
        for (int q = 0; q < n_nodes(); ++q) s += quad_weights[q] * f(quad_nodes[q]);
        return s;
    }

    /// <v_d g> for g with restricted moments u.
    double flux_of(const double* u, int d) const {
        return std::sqrt(4.0 * kPi / 3.0) * u[axis_slot(d)];
    }
};

namespace detail {

// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int k = 1; k <= n; ++k) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
            }
            dp = n * (z * p0 - p1) / (z * z - 1.0);
            double dz = p0 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        double p0 = 1.0, p1 = 0.0;
        for (int k = 1; k <= n; ++k) {
            double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
        }
        dp = n * (z * p0 - p1) / (z * z - 1.0);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    if (n % 2 == 1) x[n / 2] = 0.0;
}

// Normalized associated Legendre values P~_l^m(x) for 0 <= m <= l <= N,
// without the Condon-Shortley phase, normalized so that the real harmonics
// built from them are orthonormal on S^2.
inline std::vector<std::vector<double>> normalized_legendre(int N, double x) {
    std::vector<std::vector<double>> p(N + 1, std::vector<double>(N + 1, 0.0));
    const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
    // Sectoral terms carry sqrt((2m+1)/(4 pi (2m)!)) (2m-1)!! s^m.
    double pmm = std::sqrt(1.0 / (4.0 * kPi));
    p[0][0] = pmm;
    for (int m = 1; m <= N; ++m) {
        pmm *= std::sqrt((2.0 * m + 1.0) / (2.0 * m)) * s;
        p[m][m] = pmm;
    }
    for (int m = 0; m < N; ++m) p[m + 1][m] = std::sqrt(2.0 * m + 3.0) * x * p[m][m];
    for (int m = 0; m <= N; ++m) {
        for (int l = m + 2; l <= N; ++l) {
            const double a = std::sqrt((4.0 * l * l - 1.0) / (double(l) * l - double(m) * m));
            const double b = std::sqrt(((l - 1.0) * (l - 1.0) - double(m) * m) /
                                       (4.0 * (l - 1.0) * (l - 1.0) - 1.0));
            p[l][m] = a * (x * p[l - 1][m] - b * p[l - 2][m]);
        }
    }
    return p;
}

inline Eigen::MatrixXd drop_first(const Eigen::MatrixXd& m) {
    return m.bottomRightCorner(m.rows() - 1, m.cols() - 1);
}

}  // namespace detail

/// Real harmonics evaluated at a unit vector, full index order (l, m) with m = -l..l.
inline Eigen::VectorXd evaluate_harmonics(int N, const Eigen::Vector3d& v) {
    const int n = (N + 1) * (N + 1);
    Eigen::VectorXd out(n);
    const double phi = std::atan2(v.y(), v.x());
    const auto p = detail::normalized_legendre(N, std::clamp(v.z(), -1.0, 1.0));
    for (int l = 0; l <= N; ++l) {
        const int base = l * l + l;
        out(base) = p[l][0];
        for (int m = 1; m <= l; ++m) {
            out(base + m) = std::sqrt(2.0) * p[l][m] * std::cos(m * phi);
            out(base - m) = std::sqrt(2.0) * p[l][m] * std::sin(m * phi);
        }
    }
    return out;
}

inline MomentBasis build_basis(int N) {
    if (N < 0) throw ValidationError("basis order must be >= 0, got " + std::to_string(N));
    if (N > kMaxBasisOrder)
        throw ValidationError("basis order " + std::to_string(N) + " exceeds the supported maximum " +
                              std::to_string(kMaxBasisOrder));
    MomentBasis b;
    b.order = N;
    b.n_full = (N + 1) * (N + 1);
    b.n_restricted = b.n_full - 1;

    std::vector<double> mu, wmu;
    detail::gauss_legendre(N + 3, mu, wmu);
    const int n_phi = 2 * N + 6;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double s = std::sqrt(std::max(0.0, 1.0 - mu[i] * mu[i]));
        for (int k = 0; k < n_phi; ++k) {
            const double phi = 2.0 * kPi * k / n_phi;
            b.quad_nodes.emplace_back(s * std::cos(phi), s * std::sin(phi), mu[i]);
            b.quad_weights.push_back(wmu[i] * 2.0 * kPi / n_phi);
        }
    }

    const int nq = b.n_nodes();
    b.values.resize(nq, b.n_full);
    for (int q = 0; q < nq; ++q) b.values.row(q) = evaluate_harmonics(N, b.quad_nodes[q]).transpose();

    b.degree.resize(b.n_full);
    b.parity_signs.resize(b.n_full);
    for (int l = 0; l <= N; ++l)
        for (int i = l * l; i < (l + 1) * (l + 1); ++i) {
            b.degree[i] = l;
            b.parity_signs(i) = (l % 2 == 0) ? 1.0 : -1.0;
        }

    const Eigen::Map<const Eigen::VectorXd> w(b.quad_weights.data(), nq);
    for (int d = 0; d < 3; ++d) {
        Eigen::VectorXd wv(nq);
        for (int q = 0; q < nq; ++q) wv(q) = w(q) * b.quad_nodes[q](d);
        Eigen::MatrixXd M = b.values.transpose() * wv.asDiagonal() * b.values;
        M = 0.5 * (M + M.transpose());
        b.flux_matrices[d] = M;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
        const Eigen::VectorXd lam = es.eigenvalues();
        const Eigen::MatrixXd& R = es.eigenvectors();
        b.flux_plus[d] = R * lam.cwiseMax(0.0).asDiagonal() * R.transpose();
        b.flux_minus[d] = R * lam.cwiseMin(0.0).asDiagonal() * R.transpose();
        b.restricted_flux[d] = detail::drop_first(M);
    }

    const Eigen::MatrixXd a = b.values.rightCols(b.n_restricted);
    b.quadratic_moments.resize(b.n_restricted, 6);
    for (int d = 0; d < 3; ++d) b.cubic_moments[d].resize(b.n_restricted, 6);
    for (int k = 0; k < 6; ++k) {
        const auto [p, r] = kPackedPairs[k];
        Eigen::VectorXd wk(nq);
        for (int q = 0; q < nq; ++q) wk(q) = w(q) * b.quad_nodes[q](p) * b.quad_nodes[q](r);
        b.quadratic_moments.col(k) = a.transpose() * wk;
        for (int d = 0; d < 3; ++d) {
            Eigen::VectorXd wd(nq);
            for (int q = 0; q < nq; ++q) wd(q) = wk(q) * b.quad_nodes[q](d);
            b.cubic_moments[d].col(k) = a.transpose() * wd;
        }
    }
    return b;
}

inline double quad_sphere(const auto& f, const MomentBasis& basis) { return basis.quad(f); }

inline double flux_matrix_entry(const MomentBasis& basis, int d, int i, int j) {
    return basis.flux_matrices.at(d)(i, j);
}

/// v -> -v acting on a restricted moment vector: order-l block times (-1)^l.
inline Eigen::VectorXd parity_reflect(const Eigen::VectorXd& u, const MomentBasis& basis) {
    if (u.size() != basis.n_restricted)
        throw ValidationError("parity_reflect: expected " + std::to_string(basis.n_restricted) +
                              " moments, got " + std::to_string(u.size()));
    return u.cwiseProduct(basis.parity_signs.tail(basis.n_restricted));
}

/// Packs a symmetric matrix into (xx, yy, zz, xy, xz, yz) with off-diagonals doubled,
/// so that v^T A v = sum_k packed_k * monomial_k.
inline Eigen::Matrix<double, 6, 1> pack_quadratic_form(const Eigen::Matrix3d& A) {
    Eigen::Matrix<double, 6, 1> p;
    p << A(0, 0), A(1, 1), A(2, 2), 2.0 * A(0, 1), 2.0 * A(0, 2), 2.0 * A(1, 2);
    return p;
}

}  // namespace haptoflow
