#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "haptoflow/grid.hpp"
#include "haptoflow/model.hpp"

using namespace haptoflow;

namespace {

Eigen::Matrix3d random_spd(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.05, 3.0);
    const Eigen::Matrix3d Q = Eigen::Matrix3d::NullaryExpr([&](Eigen::Index, Eigen::Index) { return u(rng); })
                                  .householderQr()
                                  .householderQ();
    return Q * Eigen::Vector3d(pos(rng), pos(rng), pos(rng)).asDiagonal() * Q.transpose();
}

double peanut_at(const Eigen::Matrix3d& water, const Eigen::Vector3d& v) {
    return 3.0 * v.dot(water * v) / (4.0 * kPi * water.trace());
}

}  // namespace

TEST(Peanut, IsotropicIsUniform) {
    const auto b = build_basis(3);
    const auto p = peanut_equilibrium(Eigen::Matrix3d::Identity(), b);
    for (int q = 0; q < b.n_nodes(); ++q)
        EXPECT_NEAR(b.quad_nodes[q].dot(p.matrix * b.quad_nodes[q]), 1.0 / (4.0 * kPi), 1e-15);
    EXPECT_LT(p.moments.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Peanut, NormalizedAndEven) {
    const auto b = build_basis(3);
    std::mt19937_64 rng(11);
    for (int k = 0; k < 20; ++k) {
        const Eigen::Matrix3d W = k == 0 ? Eigen::Matrix3d(Eigen::Vector3d(2, 1, 1).asDiagonal()) : random_spd(rng);
        const auto p = peanut_equilibrium(W, b);
        EXPECT_NEAR(b.quad([&](const Eigen::Vector3d& v) { return peanut_at(W, v); }), 1.0, 1e-13);
        EXPECT_LT(p.moments.head(3).cwiseAbs().maxCoeff(), 1e-14);
        EXPECT_LT(p.moments.tail(b.n_restricted - 8).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(Peanut, MomentsMatchDirectQuadrature) {
    const auto b = build_basis(2);
    Eigen::Matrix3d W;
    W << 2.0, 0.4, 0.1, 0.4, 1.0, -0.2, 0.1, -0.2, 0.7;
    const auto p = peanut_equilibrium(W, b);
    for (int i = 0; i < b.n_restricted; ++i) {
        const double direct = b.quad([&](const Eigen::Vector3d& v) { return peanut_at(W, v) * evaluate_harmonics(2, v)(i + 1); });
        EXPECT_NEAR(p.moments(i), direct, 1e-14);
    }
}

TEST(Peanut, ExpansionReconstructsDistribution) {
    const auto b = build_basis(2);
    Eigen::Matrix3d W;
    W << 1.5, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 0.6;
    const auto p = peanut_equilibrium(W, b);
    for (int q = 0; q < b.n_nodes(); q += 3) {
        const Eigen::VectorXd m = evaluate_harmonics(2, b.quad_nodes[q]);
        const double rec = m(0) / std::sqrt(4.0 * kPi) + m.tail(b.n_restricted).dot(p.moments);
        EXPECT_NEAR(rec, peanut_at(W, b.quad_nodes[q]), 1e-14);
    }
}

TEST(Peanut, RejectsIndefiniteTensor) {
    EXPECT_THROW(peanut_equilibrium(Eigen::Matrix3d(Eigen::Vector3d(1, -1, 1).asDiagonal()), build_basis(1)),
                 ValidationError);
}

TEST(TumorDiffusion, IsotropicAndDiagonal) {
    EXPECT_TRUE(tumor_diffusion(Eigen::Matrix3d::Identity()).isApprox(Eigen::Matrix3d::Identity() / 3.0));
    EXPECT_TRUE(tumor_diffusion(Eigen::Matrix3d(Eigen::Vector3d(2, 1, 1).asDiagonal()))
                    .isApprox(Eigen::Matrix3d(Eigen::Vector3d(0.4, 0.3, 0.3).asDiagonal()), 1e-15));
}

TEST(TumorDiffusion, MatchesSecondMomentOfPeanut) {
    const auto b = build_basis(1);
    std::mt19937_64 rng(3);
    for (int k = 0; k < 100; ++k) {
        const Eigen::Matrix3d W = random_spd(rng);
        const Eigen::Matrix3d D = tumor_diffusion(W);
        Eigen::Matrix3d Q = Eigen::Matrix3d::Zero();
        for (int q = 0; q < b.n_nodes(); ++q) {
            const Eigen::Vector3d& v = b.quad_nodes[q];
            Q += b.quad_weights[q] * peanut_at(W, v) * v * v.transpose();
        }
        EXPECT_LT((Q - D).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(D.trace(), 1.0, 1e-14);
    }
}

TEST(TumorDrift, Examples) {
    EXPECT_TRUE(tumor_drift(Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(), 0.7).isZero());
    EXPECT_TRUE(tumor_drift(Eigen::Matrix3d::Identity(), Eigen::Vector3d(1, 0, 0), 1.0)
                    .isApprox(Eigen::Vector3d(1.0 / 3.0, 0, 0)));
}

TEST(TumorDrift, EqualsWeightedSecondMoment) {
    const auto b = build_basis(1);
    Eigen::Matrix3d W;
    W << 3.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 0.4;
    const Eigen::Vector3d gq(0.3, -1.1, 0.25);
    const double lh = 0.6;
    Eigen::Vector3d direct = Eigen::Vector3d::Zero();
    for (int q = 0; q < b.n_nodes(); ++q) {
        const Eigen::Vector3d& v = b.quad_nodes[q];
        direct += b.quad_weights[q] * lh * v.dot(gq) * peanut_at(W, v) * v;
    }
    EXPECT_LT((tumor_drift(W, gq, lh) - direct).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(VolumeFraction, Examples) {
    EXPECT_NEAR(volume_fraction(Eigen::Matrix3d::Identity()), 1.0 - std::pow(0.75, 1.5), 1e-15);
    EXPECT_NEAR(volume_fraction(Eigen::Matrix3d::Identity()), 0.3505, 1e-4);
    EXPECT_NEAR(volume_fraction(Eigen::Matrix3d(Eigen::Vector3d(1, 1e-12, 1e-12).asDiagonal())), 0.875, 1e-9);
    std::mt19937_64 rng(5);
    for (int k = 0; k < 50; ++k) {
        const double q = volume_fraction(random_spd(rng));
        EXPECT_GE(q, 0.0);
        EXPECT_LT(q, 1.0);
    }
}

TEST(Activation, Examples) {
    EXPECT_NEAR(activation(0.0, 0.8, 0.1, 0.1), 1.0 / 1.125, 1e-15);
    EXPECT_NEAR(activation(0.5, 0.8, 1e-14, 0.1), 0.0, 1e-12);
    for (double q = 0.0; q <= 1.0; q += 0.1) EXPECT_GT(activation(q, 0.8, 0.1, 0.1), 0.0);
    EXPECT_THROW(activation(0.1, 0.8, 0.1, 0.0), ValidationError);
}

TEST(Scaling, RoundTripWithDimensionalize) {
    PhysicalParameters p{2.1e-4, 0.8, 150.0, 8.44e-7, 80.0, 6.31e7};
    const ScalingNumbers s = nondimensionalize(p);
    const double D0 = s.delta * p.X * p.X / p.T;
    const double a0 = s.nu * D0 / p.X;
    const TurningRates r = dimensionalize(s.eps, D0, a0, p.X, p.T);
    EXPECT_NEAR(r.c / p.c, 1.0, 1e-12);
    EXPECT_NEAR(r.lambda0 / p.lambda0, 1.0, 1e-12);
    EXPECT_NEAR(r.lambda1 / p.lambda1, 1.0, 1e-12);
}

TEST(Scaling, BrainReferenceNumbers) {
    // eps = c/(X lambda0) inverted for X.
    EXPECT_NEAR(2.1e-4 / (3.28e-6 * 0.8), 80.0, 0.05);
    PhysicalParameters p{2.1e-4, 0.8, 150.0, 8.44e-7, 80.0, 6.31e7};
    const auto s = nondimensionalize(p);
    EXPECT_NEAR(s.eps, 3.28e-6, 0.01e-6);
    EXPECT_NEAR(s.theta, 53.3, 0.05);
    EXPECT_NEAR(s.nu, 187.5, 1e-12);
}

TEST(Scaling, RejectsNonPositive) {
    EXPECT_THROW(nondimensionalize({0.0, 0.8, 1.0, 0.0, 1.0, 1.0}), ValidationError);
    EXPECT_THROW(dimensionalize(0.0, 1.0, 0.0, 1.0, 1.0), ValidationError);
    ScalingNumbers s;
    s.eps = -1.0;
    EXPECT_THROW(s.validate(), ValidationError);
}

TEST(Growth, LogisticExamples) {
    EXPECT_DOUBLE_EQ(growth_rate(0.0, 2.0, 1.5), 2.0);
    EXPECT_DOUBLE_EQ(growth_rate(1.5, 2.0, 1.5), 0.0);
    EXPECT_DOUBLE_EQ(growth_rate(3.0, 2.0, 1.5), -2.0);
    EXPECT_THROW(growth_rate(1.0, 1.0, 0.0), ValidationError);
}

TEST(ModelField, GradientOfVolumeFractionByCentralDifferences) {
    const Grid g = build_uniform_grid(2, 4, 0.0, 1.0);
    const auto b = build_basis(1);
    ModelInputs in;
    for (int j = 0; j < g.cell_count(); ++j) {
        const double x = g.cell_center(j)(0);
        in.water.push_back(Eigen::Matrix3d(Eigen::Vector3d(1.0 + 2.0 * x, 1.0, 1.0).asDiagonal()));
    }
    const ModelField m = build_model_field(g, b, in);
    const int j = g.cell_index({1, 1, 0});
    const double expect = (m.q[g.cell_index({2, 1, 0})] - m.q[g.cell_index({0, 1, 0})]) / (2.0 * g.spacing(0));
    EXPECT_NEAR(m.grad_q[j](0), expect, 1e-14);
    EXPECT_NEAR(m.grad_q[j](1), 0.0, 1e-14);
    const int edge = g.cell_index({0, 1, 0});
    EXPECT_NEAR(m.grad_q[edge](0), (m.q[g.cell_index({1, 1, 0})] - m.q[edge]) / g.spacing(0), 1e-14);
    // activation from Q, drift from the closure
    EXPECT_NEAR(m.lambda_hat[j], activation(m.q[j], 0.8, 0.1, 0.1), 1e-15);
    EXPECT_TRUE(m.drift[j].isApprox(tumor_drift(in.water[j], m.grad_q[j], m.lambda_hat[j])));
}

TEST(ModelField, RejectsMismatchedInputs) {
    const Grid g = build_uniform_grid(2, 3, 0.0, 1.0);
    const auto b = build_basis(1);
    ModelInputs in;
    in.water.assign(g.cell_count() - 1, Eigen::Matrix3d::Identity());
    EXPECT_THROW(build_model_field(g, b, in), ValidationError);
    in.water.assign(g.cell_count(), Eigen::Matrix3d::Identity());
    in.collision_scale.assign(g.cell_count(), 0.0);
    EXPECT_THROW(build_model_field(g, b, in), ValidationError);
    in.collision_scale.clear();
    in.rho_cc = 0.0;
    EXPECT_THROW(build_model_field(g, b, in), ValidationError);
}

TEST(ModelField, FluxMomentsMatchQuadrature) {
    const Grid g = build_uniform_grid(2, 2, 0.0, 1.0);
    const auto b = build_basis(3);
    ModelInputs in;
    Eigen::Matrix3d W;
    W << 2.0, 0.3, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0, 0.5;
    in.water.assign(g.cell_count(), W);
    const ModelField m = build_model_field(g, b, in);
    for (int d = 0; d < 3; ++d)
        for (int i = 0; i < b.n_restricted; ++i) {
            const double direct = b.quad([&](const Eigen::Vector3d& v) {
                return v(d) * peanut_at(W, v) * evaluate_harmonics(3, v)(i + 1);
            });
            EXPECT_NEAR(m.ev(0, d)[i], direct, 1e-14);
        }
}
