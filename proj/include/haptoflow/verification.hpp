#pragma once
// Reference solutions, manufactured sources, benchmark coefficients, error
// norms, convergence rates and the numerical-diffusion estimate.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "haptoflow/errors.hpp"
#include "haptoflow/grid.hpp"
#include "haptoflow/model.hpp"
#include "haptoflow/operators.hpp"
#include "haptoflow/sphere_basis.hpp"

namespace haptoflow {

// ---------------------------------------------------------------------------
// Fundamental solution

/// Gaussian kernel of the constant-coefficient advection-diffusion equation in S = x.size() dimensions.
inline double fundamental_solution(double t, const Eigen::VectorXd& x, const Eigen::MatrixXd& D,
                                   const Eigen::VectorXd& a) {
    if (!(t > 0.0)) throw ValidationError("fundamental_solution: t must be positive");
    const int S = static_cast<int>(x.size());
    if (D.rows() != S || D.cols() != S || a.size() != S)
        throw ValidationError("fundamental_solution: dimension mismatch");
    const Eigen::VectorXd y = x - a * t;
    Eigen::LLT<Eigen::MatrixXd> llt(D);
    if (llt.info() != Eigen::Success) throw ValidationError("fundamental_solution: D is not positive definite");
    const double q = y.dot(llt.solve(y));
    const double det = D.determinant();
    return std::pow(std::pow(4.0 * kPi, S) * det, -0.5) * std::pow(t, -0.5 * S) * std::exp(-q / (4.0 * t));
}

/// Rotation about the third axis taking e1 onto `dir` (in the first two components).
inline Eigen::Matrix3d planar_rotation_to(const Eigen::Vector3d& dir) {
    const double ang = std::atan2(dir.y(), dir.x());
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    R(0, 0) = std::cos(ang);
    R(0, 1) = -std::sin(ang);
    R(1, 0) = std::sin(ang);
    R(1, 1) = std::cos(ang);
    return R;
}

/// Water tensor whose peanut closure yields the trace-one tumor tensor d_t.
inline Eigen::Matrix3d water_from_tumor_tensor(const Eigen::Matrix3d& d_t) {
    const Eigen::Matrix3d dw = 0.5 * (5.0 * d_t - Eigen::Matrix3d::Identity());
    require_spd(dw, 1e-12, "water tensor reconstructed from the tumor tensor");
    return dw;
}

struct FundamentalSetup {
    double D0 = 0.01;
    double a0 = 0.0;
    double t_offset = 0.2;
    Eigen::Matrix3d d_t;          ///< trace-one tumor tensor
    Eigen::Vector3d drift_dir;    ///< unit drift direction
    Eigen::Matrix3d water;
    Eigen::Vector3d grad_q;
    double lambda_hat = 1.0;
    ScalingNumbers scaling;       ///< delta = D0, nu = a0/D0, theta = 0; eps chosen by the caller
    Eigen::Vector2d center{0.5, 0.5};

    Eigen::Matrix2d diffusion() const { return D0 * d_t.topLeftCorner<2, 2>(); }
    Eigen::Vector2d drift() const { return a0 * drift_dir.head<2>(); }
    double rho_exact(double t, const Eigen::Vector3d& x) const {
        return fundamental_solution(t + t_offset, Eigen::Vector2d(x.head<2>() - center), diffusion(), drift());
    }
};

inline FundamentalSetup fundamental_test_setup(double a0 = 0.0, double D0 = 0.01) {
    if (!(D0 > 0.0) || !(a0 >= 0.0)) throw ValidationError("fundamental setup: need D0 > 0 and a0 >= 0");
    FundamentalSetup s;
    s.D0 = D0;
    s.a0 = a0;
    const Eigen::Matrix3d R = planar_rotation_to(Eigen::Vector3d(-1.0, 2.0, 0.0));
    s.d_t = R * Eigen::Vector3d(2.5, 1.0, 1.0).asDiagonal() * R.transpose() / 4.5;
    s.drift_dir = Eigen::Vector3d(3.0, 1.0, 0.0) / std::sqrt(10.0);
    s.water = water_from_tumor_tensor(s.d_t);
    s.scaling.delta = D0;
    s.scaling.nu = a0 / D0;
    s.scaling.theta = 0.0;
    s.grad_q = a0 > 0.0 ? Eigen::Vector3d(s.d_t.inverse() * s.drift_dir / s.lambda_hat) : Eigen::Vector3d::Zero();
    return s;
}

// ---------------------------------------------------------------------------
// Manufactured solution

inline double p6(double x) { return 32.0 * (-std::pow(x, 6) + 3.0 * std::pow(x, 5) - 3.0 * std::pow(x, 4) + x * x * x); }
inline double p6_prime(double x) {
    return 32.0 * (-6.0 * std::pow(x, 5) + 15.0 * std::pow(x, 4) - 12.0 * x * x * x + 3.0 * x * x);
}
inline double p6_second(double x) {
    return 32.0 * (-30.0 * std::pow(x, 4) + 60.0 * x * x * x - 36.0 * x * x + 6.0 * x);
}

struct ManufacturedCase {
    double t_end = 0.25;
    double delta = 0.1;

    double rho(double t, const Eigen::Vector3d& x) const {
        return std::cos(2.0 * kPi * t) * p6(x(0)) * p6(x(1)) + 2.0;
    }
    double drho_dt(double t, const Eigen::Vector3d& x) const {
        return -2.0 * kPi * std::sin(2.0 * kPi * t) * p6(x(0)) * p6(x(1));
    }
    Eigen::Vector3d grad_rho(double t, const Eigen::Vector3d& x) const {
        const double c = std::cos(2.0 * kPi * t);
        return Eigen::Vector3d(c * p6_prime(x(0)) * p6(x(1)), c * p6(x(0)) * p6_prime(x(1)), 0.0);
    }
    Eigen::Matrix3d water(const Eigen::Vector3d& x) const {
        return Eigen::Vector3d(1.0 + x(0), 1.0, 1.0).asDiagonal();
    }
    /// d/dxi of the peanut matrix A(x) = 3 D_W/(4 pi tr D_W).
    Eigen::Matrix3d dpeanut_dxi(const Eigen::Vector3d& x) const {
        const Eigen::Matrix3d D = water(x);
        const double tr = D.trace();
        const Eigen::Matrix3d dD = Eigen::Vector3d(1.0, 0.0, 0.0).asDiagonal();
        return 3.0 / (4.0 * kPi) * (dD * tr - D) / (tr * tr);
    }
};

inline ManufacturedCase manufactured_case() { return {}; }

/// Moment and density sources that make (rho_ex, g = 0) an exact solution of the
/// semi-discrete equations' continuous counterpart.
inline SourceTerms manufactured_sources(const ManufacturedCase& mc, const Grid& grid, const MomentBasis& basis,
                                        const ModelField& model) {
    const int n = basis.n_restricted;
    const int nc = grid.cell_count();
    std::vector<Eigen::Vector3d> centers(nc);
    std::vector<Eigen::VectorXd> div_ev(nc);
    for (int j = 0; j < nc; ++j) {
        centers[j] = grid.cell_center(j);
        div_ev[j] = basis.cubic_moments[0] * pack_quadratic_form(mc.dpeanut_dxi(centers[j]));
    }
    std::vector<Eigen::Vector3d> vertices(grid.vertex_count());
    for (int r = 0; r < grid.vertex_count(); ++r) vertices[r] = grid.vertex_position(r);
    const ScalingNumbers sc = model.scaling;
    SourceTerms src;
    src.add = [=, &model](double t, std::vector<double>& d_rho, std::vector<double>& d_u) {
        for (std::size_t r = 0; r < d_rho.size(); ++r) d_rho[r] += mc.drho_dt(t, vertices[r]);
        if (d_u.empty()) return;
        const double k = sc.delta / (sc.eps * sc.eps);
        const double kn = sc.delta * sc.nu / (sc.eps * sc.eps);
        for (int j = 0; j < nc; ++j) {
            const double rho = mc.rho(t, centers[j]);
            const Eigen::Vector3d gr = mc.grad_rho(t, centers[j]);
            Eigen::Map<Eigen::VectorXd> out(d_u.data() + static_cast<std::size_t>(j) * n, n);
            Eigen::VectorXd s = rho * div_ev[j];
            for (int d = 0; d < grid.dim; ++d) s += gr(d) * Eigen::Map<const Eigen::VectorXd>(model.ev(j, d), n);
            out += k * s;
            if (kn != 0.0) {
                Eigen::VectorXd drift = Eigen::VectorXd::Zero(n);
                for (int d = 0; d < 3; ++d)
                    drift += model.grad_q[j](d) * Eigen::Map<const Eigen::VectorXd>(model.ev(j, d), n);
                out -= kn * rho * model.lambda_hat[j] * drift;
            }
        }
    };
    return src;
}

// ---------------------------------------------------------------------------
// Quadrants

struct QuadrantsSolution {
    std::array<double, 4> kappa{};
    std::array<double, 4> a{};
    std::array<double, 4> b{};
    double alpha = 0.0;

    static int quadrant_of(double theta) {
        const int q = static_cast<int>(std::floor(theta / (0.5 * kPi)));
        return std::clamp(q, 0, 3);
    }
    static double angle(double x, double y) {
        double th = std::atan2(y, x);
        if (th < 0.0) th += 2.0 * kPi;
        return th;
    }
    double operator()(double x, double y) const {
        const double r = std::hypot(x, y);
        if (r == 0.0) return 0.0;
        const double th = angle(x, y);
        const int i = quadrant_of(th);
        return std::pow(r, alpha) * (a[i] * std::cos(alpha * th) + b[i] * std::sin(alpha * th));
    }
    /// Largest violation of the eight interface conditions (per unit r^alpha).
    double max_residual() const;
};

namespace detail {

inline Eigen::Matrix<double, 8, 8> quadrants_system(const std::array<double, 4>& k, double al) {
    Eigen::Matrix<double, 8, 8> M = Eigen::Matrix<double, 8, 8>::Zero();
    // Unknown ordering: a0..a3, b0..b3. Interface i sits at angle i*pi/2 between
    // quadrant i-1 (approached from below) and quadrant i; interface 0 closes at 2 pi.
    for (int i = 0; i < 4; ++i) {
        const int lo = (i + 3) % 4;
        const double th_lo = i == 0 ? 2.0 * kPi : i * 0.5 * kPi;
        const double th_hi = i * 0.5 * kPi;
        const double cl = std::cos(al * th_lo), sl = std::sin(al * th_lo);
        const double ch = std::cos(al * th_hi), sh = std::sin(al * th_hi);
        M(2 * i, lo) += cl;
        M(2 * i, 4 + lo) += sl;
        M(2 * i, i) -= ch;
        M(2 * i, 4 + i) -= sh;
        M(2 * i + 1, lo) += -k[lo] * sl;
        M(2 * i + 1, 4 + lo) += k[lo] * cl;
        M(2 * i + 1, i) -= -k[i] * sh;
        M(2 * i + 1, 4 + i) -= k[i] * ch;
    }
    return M;
}

}  // namespace detail

inline double QuadrantsSolution::max_residual() const {
    Eigen::Matrix<double, 8, 1> x;
    for (int i = 0; i < 4; ++i) {
        x(i) = a[i];
        x(4 + i) = b[i];
    }
    return (detail::quadrants_system(kappa, alpha) * x).cwiseAbs().maxCoeff();
}

/// Smallest alpha in (0, 1] with a nontrivial interface solution, normalized to a0 = 1.
inline QuadrantsSolution quadrants_coeffs(const std::array<double, 4>& kappa) {
    for (double k : kappa)
        if (!(k > 0.0)) throw ValidationError("quadrants: permeabilities must be positive");
    auto det = [&](double al) { return detail::quadrants_system(kappa, al).determinant(); };
    double root = -1.0;
    const double step = 1e-3;
    double prev_a = step, prev_d = det(step);
    for (int i = 2; i <= 1000 && root < 0.0; ++i) {
        const double al = std::min(1.0, i * step);
        const double d = det(al);
        if (d == 0.0) {
            root = al;
        } else if ((d > 0.0) != (prev_d > 0.0)) {
            double lo = prev_a, hi = al, dlo = prev_d;
            for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double dm = det(mid);
                if ((dm > 0.0) == (dlo > 0.0)) {
                    lo = mid;
                    dlo = dm;
                } else {
                    hi = mid;
                }
            }
            root = 0.5 * (lo + hi);
        }
        prev_a = al;
        prev_d = d;
    }
    if (root < 0.0) {
        // A double root (e.g. equal permeabilities at alpha = 1) shows no sign change.
        Eigen::JacobiSVD<Eigen::Matrix<double, 8, 8>> svd(detail::quadrants_system(kappa, 1.0));
        const auto sv = svd.singularValues();
        if (sv(7) <= 1e-10 * sv(0)) root = 1.0;
    }
    if (root < 0.0) throw RuntimeFailure("quadrants: no admissible exponent in (0, 1]");

    QuadrantsSolution s;
    s.kappa = kappa;
    s.alpha = root;
    const Eigen::Matrix<double, 8, 8> M = detail::quadrants_system(kappa, root);
    // Fix a0 = 1 and solve the remaining system in the least-squares sense; when the
    // null space is two-dimensional this also picks b0 = 0.
    Eigen::Matrix<double, 8, 7> A;
    A << M.col(1), M.col(2), M.col(3), M.col(4), M.col(5), M.col(6), M.col(7);
    const Eigen::Matrix<double, 8, 1> rhs = -M.col(0);
    Eigen::Matrix<double, 7, 1> y = A.completeOrthogonalDecomposition().solve(rhs);
    s.a = {1.0, y(0), y(1), y(2)};
    s.b = {y(3), y(4), y(5), y(6)};
    return s;
}

// ---------------------------------------------------------------------------
// Half-plane interface

/// Trace-one tensor with main axis at angle theta (degrees) in the xi-eta plane and anisotropy a.
inline Eigen::Matrix3d halfplane_tensor(double theta_deg, double aniso) {
    if (!(aniso > 0.0)) throw ValidationError("halfplane: anisotropy must be positive");
    const double th = theta_deg * kPi / 180.0;
    const Eigen::Matrix3d R = planar_rotation_to(Eigen::Vector3d(std::cos(th), std::sin(th), 0.0));
    return R * Eigen::Vector3d(aniso, 1.0, 1.0).asDiagonal() * R.transpose() / (aniso + 2.0);
}

struct HalfplaneCase {
    Eigen::Matrix3d d_left, d_right;
    Eigen::Vector2d s_left, s_right;

    double rho(const Eigen::Vector3d& x) const {
        return x(0) < 0.0 ? s_left.dot(x.head<2>()) : s_right.dot(x.head<2>());
    }
    /// Limit flux -D grad rho on the side of x.
    Eigen::Vector2d flux(const Eigen::Vector3d& x) const {
        return x(0) < 0.0 ? Eigen::Vector2d(-d_left.topLeftCorner<2, 2>() * s_left)
                          : Eigen::Vector2d(-d_right.topLeftCorner<2, 2>() * s_right);
    }
};

inline HalfplaneCase halfplane_case(double theta_l, double theta_r, double aniso_l, double aniso_r,
                                    const Eigen::Vector2d& s_left) {
    HalfplaneCase c;
    c.d_left = halfplane_tensor(theta_l, aniso_l);
    c.d_right = halfplane_tensor(theta_r, aniso_r);
    c.s_left = s_left;
    const double dr = c.d_right(0, 0);
    if (dr == 0.0) throw ValidationError("halfplane: right tensor has zero normal diffusion");
    c.s_right(1) = s_left(1);
    c.s_right(0) = (-c.d_right(1, 0) * c.s_right(1) + c.d_left(0, 0) * s_left(0) + c.d_left(1, 0) * s_left(1)) / dr;
    return c;
}

// ---------------------------------------------------------------------------
// Errors and convergence

/// Midpoint-rule L2 norm of the difference over dual cells.
inline double l2_error(const std::vector<double>& num, const std::vector<double>& exact, const Grid& grid) {
    if (num.size() != exact.size() || static_cast<int>(num.size()) != grid.vertex_count())
        throw ValidationError("l2_error: field sizes do not match the grid");
    double s = 0.0;
    for (int r = 0; r < grid.vertex_count(); ++r) {
        const double d = num[r] - exact[r];
        s += grid.dual_volume(r) * d * d;
    }
    return std::sqrt(s);
}

struct ConvergenceLevel {
    int points = 0;  ///< cells per axis
    double dx = 0.0;
    double error = 0.0;
};

struct ConvergenceStudy {
    std::string name;
    int base_points = 0;
    double refine = 1.0;
    std::vector<ConvergenceLevel> levels;

    std::vector<double> rates() const {
        std::vector<double> r;
        for (std::size_t l = 0; l + 1 < levels.size(); ++l)
            r.push_back((std::log(levels[l].error) - std::log(levels[l + 1].error)) /
                        (std::log(levels[l].dx) - std::log(levels[l + 1].dx)));
        return r;
    }
    /// Least-squares slope of log(error) against log(dx).
    double fitted_order() const {
        const std::size_t m = levels.size();
        if (m < 2) throw ValidationError("fitted_order needs at least two levels");
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (const auto& l : levels) {
            const double x = std::log(l.dx), y = std::log(l.error);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        return (m * sxy - sx * sy) / (m * sxx - sx * sx);
    }
};

/// Cells per axis at refinement level l: round(base * refine^l).
inline int level_points(int base, double refine, int level) {
    return static_cast<int>(std::lround(base * std::pow(refine, level)));
}

// ---------------------------------------------------------------------------
// Numerical diffusion

struct DiffusionFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd fitted;      ///< covariance / (2 (t + t_O))
    Eigen::MatrixXd numerical;   ///< fitted - exact
    Eigen::VectorXd eigenvalues;   ///< sorted by decreasing magnitude
    Eigen::MatrixXd eigenvectors;  ///< matching columns
    Eigen::VectorXd main_axis() const { return eigenvectors.col(0); }
};

/// Moment-matching Gaussian fit on the first grid.dim axes.
inline DiffusionFit numerical_diffusion_fit(const std::vector<double>& rho, const Grid& grid, double t, double t_offset,
                                            const Eigen::MatrixXd& d_exact) {
    const int S = grid.dim;
    if (static_cast<int>(rho.size()) != grid.vertex_count()) throw ValidationError("diffusion fit: size mismatch");
    if (d_exact.rows() != S || d_exact.cols() != S) throw ValidationError("diffusion fit: exact tensor size mismatch");
    double m = 0.0;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(S);
    for (int r = 0; r < grid.vertex_count(); ++r) {
        const double w = grid.dual_volume(r) * rho[r];
        m += w;
        mu += w * grid.vertex_position(r).head(S);
    }
    if (!(std::abs(m) > 0.0)) throw ValidationError("diffusion fit: zero mass");
    mu /= m;
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(S, S);
    for (int r = 0; r < grid.vertex_count(); ++r) {
        const Eigen::VectorXd y = grid.vertex_position(r).head(S) - mu;
        C += grid.dual_volume(r) * rho[r] * y * y.transpose();
    }
    C /= m;
    DiffusionFit f;
    f.mean = mu;
    f.fitted = C / (2.0 * (t + t_offset));
    f.numerical = f.fitted - d_exact;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (f.numerical + f.numerical.transpose()));
    std::vector<int> idx(S);
    for (int i = 0; i < S; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](int x, int y) { return std::abs(es.eigenvalues()(x)) > std::abs(es.eigenvalues()(y)); });
    f.eigenvalues.resize(S);
    f.eigenvectors.resize(S, S);
    for (int i = 0; i < S; ++i) {
        f.eigenvalues(i) = es.eigenvalues()(idx[i]);
        f.eigenvectors.col(i) = es.eigenvectors().col(idx[i]);
    }
    return f;
}

/// Angle in degrees between two axes (orientation ignored).
inline double axis_angle_deg(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    const double c = std::min(1.0, std::abs(u.dot(v)) / (u.norm() * v.norm()));
    return std::acos(c) * 180.0 / kPi;
}

}  // namespace haptoflow
