#pragma once
// Glioma/haptotaxis coefficients: peanut equilibrium, tumor diffusion and
// drift, volume fraction, activation, growth, and the scaling bridge.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "haptoflow/errors.hpp"
#include "haptoflow/grid.hpp"
#include "haptoflow/sphere_basis.hpp"

namespace haptoflow {

struct ScalingNumbers {
    double eps = 1.0;
    double delta = 1.0;
    double nu = 0.0;
    double theta = 0.0;

    void validate() const {
        if (!(eps > 0.0) || !std::isfinite(eps)) throw ValidationError("eps must be positive and finite");
        if (!(delta > 0.0) || !std::isfinite(delta)) throw ValidationError("delta must be positive and finite");
        if (!(nu >= 0.0) || !std::isfinite(nu)) throw ValidationError("nu must be non-negative and finite");
        if (!(theta >= 0.0) || !std::isfinite(theta)) throw ValidationError("theta must be non-negative and finite");
    }
};

/// Throws unless A is symmetric with all eigenvalues above tol.
inline void require_spd(const Eigen::Matrix3d& A, double tol = 1e-12, const std::string& where = "tensor") {
    if (!A.allFinite()) throw ValidationError(where + " has non-finite entries");
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, A.cwiseAbs().maxCoeff()))
        throw ValidationError(where + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(A, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= tol)
        throw ValidationError(where + " is not positive definite (min eigenvalue " +
                              std::to_string(es.eigenvalues().minCoeff()) + ")");
}

/// Matrix A with E(v) = v^T A v for the peanut distribution.
inline Eigen::Matrix3d peanut_matrix(const Eigen::Matrix3d& water) {
    return 3.0 * water / (4.0 * kPi * water.trace());
}

struct PeanutEquilibrium {
    Eigen::Matrix3d matrix;   ///< E(v) = v^T matrix v
    Eigen::VectorXd moments;  ///< e = <E a>
};

inline PeanutEquilibrium peanut_equilibrium(const Eigen::Matrix3d& water, const MomentBasis& basis) {
    require_spd(water, 1e-12, "water diffusion tensor");
    PeanutEquilibrium p;
    p.matrix = peanut_matrix(water);
    p.moments = basis.quadratic_moments * pack_quadratic_form(p.matrix);
    return p;
}

/// <v_d E a> for E(v) = v^T A v.
inline Eigen::VectorXd equilibrium_flux_moments(const Eigen::Matrix3d& A, int d, const MomentBasis& basis) {
    return basis.cubic_moments[d] * pack_quadratic_form(A);
}

inline Eigen::Matrix3d tumor_diffusion(const Eigen::Matrix3d& water) {
    require_spd(water, 1e-12, "water diffusion tensor");
    return 0.2 * (Eigen::Matrix3d::Identity() + 2.0 * water / water.trace());
}

inline Eigen::Vector3d tumor_drift(const Eigen::Matrix3d& water, const Eigen::Vector3d& grad_q, double lambda_hat) {
    return lambda_hat * tumor_diffusion(water) * grad_q;
}

inline double volume_fraction(const Eigen::Matrix3d& water) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(water, Eigen::EigenvaluesOnly);
    const double lmax = es.eigenvalues().maxCoeff();
    return 1.0 - std::pow(water.trace() / (4.0 * lmax), 1.5);
}

inline double activation(double q, double lambda0, double k_plus, double k_minus) {
    if (!(k_plus >= 0.0) || !(k_minus > 0.0) || !(lambda0 > 0.0))
        throw ValidationError("activation requires k_plus >= 0, k_minus > 0, lambda0 > 0");
    const double alpha = k_plus * q + k_minus;
    const double h_prime = k_plus * k_minus / (alpha * alpha);
    return h_prime / (1.0 + alpha / lambda0);
}

/// Physical logistic rate M (1 - rho/rho_cc).
inline double growth_rate(double rho, double M, double rho_cc) {
    if (!(rho_cc > 0.0)) throw ValidationError("carrying capacity must be positive");
    return M * (1.0 - rho / rho_cc);
}

/// Dimensionless growth factor with theta factored out.
inline double growth_factor(double rho, double rho_cc) { return 1.0 - rho / rho_cc; }

struct PhysicalParameters {
    double c = 0.0;        ///< cell speed [length/time]
    double lambda0 = 0.0;  ///< turning rate [1/time]
    double lambda1 = 0.0;  ///< cell-state dependent turning rate [1/time]
    double M = 0.0;        ///< growth rate [1/time]
    double X = 1.0;        ///< length scale
    double T = 1.0;        ///< time scale
};

inline ScalingNumbers nondimensionalize(const PhysicalParameters& p) {
    if (!(p.c > 0) || !(p.lambda0 > 0) || !(p.lambda1 >= 0) || !(p.M >= 0) || !(p.X > 0) || !(p.T > 0))
        throw ValidationError("nondimensionalize: physical parameters must be positive");
    ScalingNumbers s;
    s.eps = p.c / (p.X * p.lambda0);
    s.delta = p.c * p.c * p.T / (p.lambda0 * p.X * p.X);
    s.nu = p.lambda1 / p.lambda0;
    s.theta = p.M * p.T;
    return s;
}

struct TurningRates {
    double c = 0.0;
    double lambda0 = 0.0;
    double lambda1 = 0.0;
};

/// Inverse map from (eps, D0, a0) at length scale X.
inline TurningRates dimensionalize(double eps, double D0, double a0, double X, double /*T*/) {
    if (!(eps > 0) || !(D0 > 0) || !(a0 >= 0) || !(X > 0))
        throw ValidationError("dimensionalize: inputs must be positive");
    TurningRates r;
    r.c = D0 / (X * eps);
    r.lambda0 = D0 / (X * X * eps * eps);
    r.lambda1 = a0 / (X * eps * eps);
    return r;
}

struct ActivationParameters {
    double lambda0 = 0.8;
    double k_plus = 0.1;
    double k_minus = 0.1;
};

/// Inputs for assembling a ModelField on a grid.
struct ModelInputs {
    std::vector<Eigen::Matrix3d> water;      ///< per primal cell
    std::vector<double> collision_scale;     ///< K_D per primal cell; empty means 1
    std::optional<double> lambda_hat;        ///< fixed activation; otherwise from `activation`
    ActivationParameters activation;
    std::vector<Eigen::Vector3d> grad_q;     ///< per cell; empty means central differences of Q
    /// Optional pointwise water tensor. When set, face equilibria of the stiff
    /// flux are sampled at face centres instead of averaged from the two cells.
    std::function<Eigen::Matrix3d(const Eigen::Vector3d&)> water_at;
    ScalingNumbers scaling;
    double rho_cc = 1.0;
};

class ModelField {
public:
    ScalingNumbers scaling;
    double rho_cc = 1.0;
    int dim = 2;
    int n_cells = 0;
    int n_moments = 0;

    std::vector<Eigen::Matrix3d> water;
    std::vector<Eigen::Matrix3d> eq_matrix;
    std::vector<Eigen::Matrix3d> diffusion;  ///< D_T
    std::vector<Eigen::Vector3d> grad_q;
    std::vector<Eigen::Vector3d> drift;      ///< a_T = lambda_hat D_T grad Q
    std::vector<double> q;
    std::vector<double> lambda_hat;
    std::vector<double> collision_scale;     ///< K_D

    const double* e(int j) const { return e_.data() + idx(j); }
    /// <v_d E_j a>
    const double* ev(int j, int d) const { return ev_.data() + (static_cast<std::size_t>(j) * 3 + d) * n_moments; }
    /// Equilibrium flux moments on the face of cell j normal to d, side s in {0: lower, 1: upper}.
    const double* face_ev(int j, int d, int s) const {
        return face_ev_.data() + ((static_cast<std::size_t>(j) * dim + d) * 2 + s) * n_moments;
    }

    std::vector<double> e_, ev_, face_ev_;

private:
    std::size_t idx(int j) const { return static_cast<std::size_t>(j) * n_moments; }
};

inline ModelField build_model_field(const Grid& grid, const MomentBasis& basis, const ModelInputs& in) {
    in.scaling.validate();
    if (!(in.rho_cc > 0.0)) throw ValidationError("carrying capacity must be positive");
    const int nc = grid.cell_count();
    if (static_cast<int>(in.water.size()) != nc)
        throw ValidationError("water tensor field has " + std::to_string(in.water.size()) + " entries, grid has " +
                              std::to_string(nc) + " cells");
    ModelField m;
    m.scaling = in.scaling;
    m.rho_cc = in.rho_cc;
    m.dim = grid.dim;
    m.n_cells = nc;
    m.n_moments = basis.n_restricted;
    const int n = basis.n_restricted;

    m.water = in.water;
    m.eq_matrix.resize(nc);
    m.diffusion.resize(nc);
    m.q.resize(nc);
    m.e_.assign(static_cast<std::size_t>(nc) * n, 0.0);
    m.ev_.assign(static_cast<std::size_t>(nc) * 3 * n, 0.0);
    for (int j = 0; j < nc; ++j) {
        require_spd(in.water[j], 1e-12, "water tensor of cell " + std::to_string(j));
        m.eq_matrix[j] = peanut_matrix(in.water[j]);
        m.diffusion[j] = tumor_diffusion(in.water[j]);
        m.q[j] = volume_fraction(in.water[j]);
        const auto packed = pack_quadratic_form(m.eq_matrix[j]);
        Eigen::Map<Eigen::VectorXd>(m.e_.data() + static_cast<std::size_t>(j) * n, n) =
            basis.quadratic_moments * packed;
        for (int d = 0; d < 3; ++d)
            Eigen::Map<Eigen::VectorXd>(m.ev_.data() + (static_cast<std::size_t>(j) * 3 + d) * n, n) =
                basis.cubic_moments[d] * packed;
    }

    if (in.collision_scale.empty()) {
        m.collision_scale.assign(nc, 1.0);
    } else {
        if (static_cast<int>(in.collision_scale.size()) != nc)
            throw ValidationError("collision scale field size does not match the grid");
        for (double k : in.collision_scale)
            if (!(k > 0.0)) throw ValidationError("collision scale K_D must be positive");
        m.collision_scale = in.collision_scale;
    }

    m.grad_q.assign(nc, Eigen::Vector3d::Zero());
    if (!in.grad_q.empty()) {
        if (static_cast<int>(in.grad_q.size()) != nc) throw ValidationError("grad_q field size does not match the grid");
        m.grad_q = in.grad_q;
    } else {
        for (int j = 0; j < nc; ++j) {
            for (int d = 0; d < grid.dim; ++d) {
                const int lo = grid.cell_neighbor(j, d, -1);
                const int hi = grid.cell_neighbor(j, d, +1);
                const double h = grid.spacing(d);
                if (lo >= 0 && hi >= 0)
                    m.grad_q[j](d) = (m.q[hi] - m.q[lo]) / (2.0 * h);
                else if (hi >= 0)
                    m.grad_q[j](d) = (m.q[hi] - m.q[j]) / h;
                else if (lo >= 0)
                    m.grad_q[j](d) = (m.q[j] - m.q[lo]) / h;
            }
        }
    }

    m.lambda_hat.resize(nc);
    m.drift.resize(nc);
    for (int j = 0; j < nc; ++j) {
        m.lambda_hat[j] = in.lambda_hat ? *in.lambda_hat
                                        : activation(m.q[j], in.activation.lambda0, in.activation.k_plus,
                                                     in.activation.k_minus);
        m.drift[j] = m.lambda_hat[j] * m.diffusion[j] * m.grad_q[j];
    }

    m.face_ev_.assign(static_cast<std::size_t>(nc) * grid.dim * 2 * n, 0.0);
    for (int j = 0; j < nc; ++j) {
        for (int d = 0; d < grid.dim; ++d) {
            for (int s = 0; s < 2; ++s) {
                double* out = m.face_ev_.data() + ((static_cast<std::size_t>(j) * grid.dim + d) * 2 + s) * n;
                Eigen::Map<Eigen::VectorXd> dst(out, n);
                if (in.water_at) {
                    Eigen::Vector3d x = grid.cell_center(j);
                    x(d) += (s == 0 ? -0.5 : 0.5) * grid.spacing(d);
                    dst = basis.cubic_moments[d] * pack_quadratic_form(peanut_matrix(in.water_at(x)));
                } else {
                    const int k = grid.cell_neighbor(j, d, s == 0 ? -1 : 1);
                    Eigen::Map<const Eigen::VectorXd> own(m.ev(j, d), n);
                    if (k < 0)
                        dst = own;
                    else
                        dst = 0.5 * (own + Eigen::Map<const Eigen::VectorXd>(m.ev(k, d), n));
                }
            }
        }
    }
    return m;
}

}  // namespace haptoflow
