#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "haptoflow/operators.hpp"
#include "haptoflow/verification.hpp"

using namespace haptoflow;

TEST(FundamentalSolution, ValueAtOrigin) {
    EXPECT_NEAR(fundamental_solution(1.0, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero()),
                1.0 / (4.0 * kPi), 1e-15);
}

TEST(FundamentalSolution, UnitMass) {
    Eigen::Matrix2d D;
    D << 0.02, 0.005, 0.005, 0.01;
    const Eigen::Vector2d a(0.1, -0.05);
    for (double t : {0.2, 0.7}) {
        // Midpoint rule on a box holding many standard deviations.
        const int n = 400;
        const double L = 3.0, h = 2.0 * L / n;
        double m = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                m += fundamental_solution(t, Eigen::Vector2d(-L + (i + 0.5) * h, -L + (j + 0.5) * h), D, a) * h * h;
        EXPECT_NEAR(m, 1.0, 1e-10);
    }
}

TEST(FundamentalSolution, DriftIsATranslation) {
    Eigen::Matrix2d D;
    D << 0.03, 0.01, 0.01, 0.02;
    const Eigen::Vector2d a(0.3, 0.1), x(0.2, -0.1);
    const double t = 0.6;
    EXPECT_NEAR(fundamental_solution(t, x, D, a), fundamental_solution(t, x - a * t, D, Eigen::Vector2d::Zero()), 1e-14);
}

TEST(FundamentalSolution, RejectsBadInput) {
    EXPECT_THROW(fundamental_solution(0.0, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero()),
                 ValidationError);
    EXPECT_THROW(fundamental_solution(1.0, Eigen::Vector2d::Zero(), -Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero()),
                 ValidationError);
}

TEST(FundamentalSetup, RecoversPrescribedTensorAndDrift) {
    const FundamentalSetup s0 = fundamental_test_setup(0.0);
    EXPECT_LT((tumor_diffusion(s0.water) - s0.d_t).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(s0.grad_q.isZero());
    EXPECT_NEAR(s0.d_t.trace(), 1.0, 1e-15);

    const FundamentalSetup s = fundamental_test_setup(0.1);
    EXPECT_DOUBLE_EQ(s.scaling.nu, 10.0);
    const Eigen::Vector3d a = tumor_drift(s.water, s.grad_q, s.lambda_hat);
    EXPECT_LT((a - s.drift_dir).norm(), 1e-10);
    EXPECT_NEAR(s.drift_dir.norm(), 1.0, 1e-15);
    // Main axis of d_t along (-1, 2).
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(s.d_t);
    EXPECT_LT(axis_angle_deg(es.eigenvectors().col(2), Eigen::Vector3d(-1.0, 2.0, 0.0)), 1e-8);
    EXPECT_NEAR(es.eigenvalues()(2), 2.5 / 4.5, 1e-14);
    EXPECT_THROW(fundamental_test_setup(-1.0), ValidationError);
}

TEST(FundamentalSetup, ExactSolutionUsesTimeOffset) {
    const FundamentalSetup s = fundamental_test_setup(0.1);
    const Eigen::Vector3d x(0.6, 0.45, 0.0);
    EXPECT_DOUBLE_EQ(s.rho_exact(0.3, x),
                     fundamental_solution(0.5, Eigen::Vector2d(0.1, -0.05), s.diffusion(), s.drift()));
}

TEST(Manufactured, PolynomialValues) {
    EXPECT_EQ(p6(0.0), 0.0);
    EXPECT_NEAR(p6(1.0), 0.0, 1e-13);
    EXPECT_EQ(p6_prime(0.0), 0.0);
    EXPECT_NEAR(p6_prime(1.0), 0.0, 1e-12);
    EXPECT_NEAR(p6_second(1.0), 0.0, 1e-12);
    EXPECT_NEAR(p6(0.5), 0.5, 1e-15);
    for (double x : {0.1, 0.37, 0.8}) {
        const double h = 1e-5;
        EXPECT_NEAR(p6_prime(x), (p6(x + h) - p6(x - h)) / (2 * h), 1e-7);
        EXPECT_NEAR(p6_second(x), (p6_prime(x + h) - p6_prime(x - h)) / (2 * h), 1e-6);
    }
}

TEST(Manufactured, ExactSolutionIsConstantAtQuarterTime) {
    const ManufacturedCase mc = manufactured_case();
    for (double x : {0.1, 0.5, 0.9}) EXPECT_NEAR(mc.rho(0.25, Eigen::Vector3d(x, 0.3, 0.0)), 2.0, 1e-15);
    EXPECT_NEAR(mc.rho(0.0, Eigen::Vector3d(0.5, 0.5, 0.0)), 2.25, 1e-15);
}

TEST(Manufactured, PeanutDerivativeMatchesFiniteDifference) {
    const ManufacturedCase mc;
    const Eigen::Vector3d x(0.3, 0.6, 0.0), dx(1e-6, 0.0, 0.0);
    const Eigen::Matrix3d fd = (peanut_matrix(mc.water(x + dx)) - peanut_matrix(mc.water(x - dx))) / 2e-6;
    EXPECT_LT((fd - mc.dpeanut_dxi(x)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Manufactured, MomentSourceCancelsDiscreteGradientTerm) {
    // With g = 0 the moment source balances the density-gradient term in the interior.
    auto residual = [](int cells) {
        const ManufacturedCase mc;
        const Grid grid = build_uniform_grid(2, cells, 0.0, 1.0);
        const MomentBasis basis = build_basis(1);
        ModelInputs in;
        for (int j = 0; j < grid.cell_count(); ++j) in.water.push_back(mc.water(grid.cell_center(j)));
        in.scaling.eps = 1.0;
        in.scaling.delta = mc.delta;
        const ModelField model = build_model_field(grid, basis, in);
        const Scheme sc(grid, basis, model, {.stencil = Stencil::plain});
        State s = make_state(grid, basis.n_restricted);
        for (int r = 0; r < grid.vertex_count(); ++r) s.rho[r] = mc.rho(0.1, grid.vertex_position(r));
        std::vector<double> fd, d_rho(grid.vertex_count(), 0.0), d_u(s.u.size(), 0.0);
        micro_fd_rhs(s, sc, fd);
        manufactured_sources(mc, grid, basis, model).add(0.1, d_rho, d_u);
        double r = 0.0, scale = 0.0;
        for (int j = 0; j < grid.cell_count(); ++j) {
            const auto c = grid.cell_coords(j);
            const bool interior = c[0] > 0 && c[1] > 0 && c[0] < cells - 1 && c[1] < cells - 1;
            for (int i = 0; i < basis.n_restricted; ++i) {
                const std::size_t k = static_cast<std::size_t>(j) * basis.n_restricted + i;
                if (interior) r = std::max(r, std::abs(fd[k] + d_u[k]));
                scale = std::max(scale, std::abs(d_u[k]));
            }
        }
        return r / scale;
    };
    const double coarse = residual(20), fine = residual(40);
    EXPECT_LT(coarse, 0.05);
    EXPECT_GT(std::log2(coarse / fine), 1.8);
}

TEST(Quadrants, TableCoefficients) {
    const QuadrantsSolution q = quadrants_coeffs({100.0, 1.0, 100.0, 1.0});
    EXPECT_NEAR(q.alpha, 0.126902069721, 1e-9);
    EXPECT_NEAR(q.a[0], 1.0, 1e-12);
    EXPECT_NEAR(q.a[1], 2.96039604, 1e-6);
    EXPECT_NEAR(q.b[1], -9.6039604, 1e-6);
    EXPECT_NEAR(q.a[2], -0.88275659, 1e-6);
    EXPECT_NEAR(q.b[3], 7.70156488, 1e-6);
    EXPECT_LT(q.max_residual(), 1e-10);
}

TEST(Quadrants, HomogeneousMediumIsSmooth) {
    const QuadrantsSolution q = quadrants_coeffs({3.0, 3.0, 3.0, 3.0});
    EXPECT_NEAR(q.alpha, 1.0, 1e-9);
    EXPECT_LT(q.max_residual(), 1e-10);
    // r^1 (a cos + b sin) with the same coefficients everywhere is a linear function.
    for (int i = 1; i < 4; ++i) {
        EXPECT_NEAR(q.a[i], q.a[0], 1e-8);
        EXPECT_NEAR(q.b[i], q.b[0], 1e-8);
    }
}

TEST(Quadrants, RandomPermeabilitiesSatisfyInterfaces) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(0.5, 50.0);
    for (int k = 0; k < 5; ++k) {
        const QuadrantsSolution q = quadrants_coeffs({U(rng), U(rng), U(rng), U(rng)});
        EXPECT_GT(q.alpha, 0.0);
        EXPECT_LE(q.alpha, 1.0);
        EXPECT_LT(q.max_residual(), 1e-10);
    }
}

TEST(Quadrants, SolutionIsContinuousAcrossAxes) {
    const QuadrantsSolution q = quadrants_coeffs({100.0, 1.0, 100.0, 1.0});
    const double e = 1e-12;
    for (auto [x, y] : {std::pair{0.3, e}, std::pair{e, 0.4}, std::pair{-0.2, e}, std::pair{e, -0.7}}) {
        const double ax = std::abs(x) > 1e-6 ? 0.0 : 1.0;
        EXPECT_NEAR(q(x - 2 * e * ax, y - 2 * e * (1.0 - ax)), q(x, y), 1e-9);
    }
    EXPECT_EQ(q(0.0, 0.0), 0.0);
}

TEST(Halfplane, TableSlopes) {
    const HalfplaneCase c1 = halfplane_case(80.0, 20.0, 2.5, 2.5, Eigen::Vector2d(1.0, 0.0));
    EXPECT_NEAR(c1.s_right(0), 0.44965177, 1e-8);
    EXPECT_NEAR(c1.s_right(1), 0.0, 1e-15);
    const HalfplaneCase c2 = halfplane_case(80.0, 20.0, 2.5, 2.5, Eigen::Vector2d(1.0, 1.0));
    EXPECT_NEAR(c2.s_right(0), 0.35261053, 1e-8);
    EXPECT_NEAR(c2.s_right(1), 1.0, 1e-15);
}

TEST(Halfplane, NoInterfaceKeepsSlope) {
    const HalfplaneCase c = halfplane_case(35.0, 35.0, 2.5, 2.5, Eigen::Vector2d(0.4, -1.2));
    EXPECT_NEAR(c.s_right(0), 0.4, 1e-14);
    EXPECT_NEAR(c.s_right(1), -1.2, 1e-14);
}

TEST(Halfplane, NormalFluxAndDensityContinuous) {
    const HalfplaneCase c = halfplane_case(80.0, 20.0, 2.5, 2.5, Eigen::Vector2d(1.0, 1.0));
    const Eigen::Vector3d l(-1e-14, 0.3, 0.0), r(0.0, 0.3, 0.0);
    EXPECT_NEAR(c.flux(l)(0), c.flux(r)(0), 1e-13);
    EXPECT_NEAR(c.rho(l), c.rho(r), 1e-13);
    EXPECT_NEAR(halfplane_tensor(80.0, 2.5).trace(), 1.0, 1e-15);
    EXPECT_THROW(halfplane_tensor(0.0, 0.0), ValidationError);
}

TEST(Errors, L2Norm) {
    const Grid g = build_uniform_grid(2, 10, 0.0, 1.0);
    std::vector<double> a(g.vertex_count()), b(g.vertex_count());
    for (int r = 0; r < g.vertex_count(); ++r) a[r] = b[r] = std::sin(r);
    EXPECT_EQ(l2_error(a, b, g), 0.0);
    for (double& v : b) v += 0.3;
    EXPECT_NEAR(l2_error(a, b, g), 0.3, 1e-14);
    b.pop_back();
    EXPECT_THROW(l2_error(a, b, g), ValidationError);
}

TEST(Errors, RatesAndFittedOrder) {
    ConvergenceStudy s;
    for (int l = 0; l < 4; ++l) {
        const double h = 0.1 / (1 << l);
        s.levels.push_back({10 << l, h, 3.0 * h * h});
    }
    for (double r : s.rates()) EXPECT_NEAR(r, 2.0, 1e-12);
    EXPECT_NEAR(s.fitted_order(), 2.0, 1e-12);
    s.levels.resize(1);
    EXPECT_TRUE(s.rates().empty());
    EXPECT_THROW(s.fitted_order(), ValidationError);
}

TEST(Errors, LevelPoints) {
    EXPECT_EQ(level_points(20, 1.5, 0), 20);
    EXPECT_EQ(level_points(20, 1.5, 1), 30);
    EXPECT_EQ(level_points(20, 1.5, 2), 45);
    EXPECT_EQ(level_points(20, 1.5, 3), 68);
}

TEST(DiffusionFit, SelfFitOfExactSolution) {
    const FundamentalSetup s = fundamental_test_setup(0.0);
    const Grid g = build_uniform_grid(2, 200, 0.0, 1.0);
    std::vector<double> rho(g.vertex_count());
    for (int r = 0; r < g.vertex_count(); ++r) rho[r] = s.rho_exact(0.5, g.vertex_position(r));
    const DiffusionFit f = numerical_diffusion_fit(rho, g, 0.5, s.t_offset, s.diffusion());
    EXPECT_LT(f.numerical.cwiseAbs().maxCoeff(), 1e-3 * s.D0);
    EXPECT_LT((f.mean - s.center).norm(), 1e-6);
}

TEST(DiffusionFit, InflatedIsotropicGaussian) {
    // Variance 2 (D + k) t for an exact tensor D gives D_num = k I.
    Eigen::Matrix2d D;
    D << 0.004, 0.001, 0.001, 0.002;
    const double k = 0.003, t = 1.0;
    const Grid g = build_uniform_grid(2, 300, -1.0, 1.0);
    std::vector<double> rho(g.vertex_count());
    const Eigen::Matrix2d inflated = D + k * Eigen::Matrix2d::Identity();
    for (int r = 0; r < g.vertex_count(); ++r)
        rho[r] = fundamental_solution(t, g.vertex_position(r).head<2>(), inflated, Eigen::Vector2d::Zero());
    const DiffusionFit f = numerical_diffusion_fit(rho, g, 0.8, 0.2, D);
    EXPECT_NEAR(f.eigenvalues(0), k, 1e-6);
    EXPECT_NEAR(f.eigenvalues(1), k, 1e-6);
    std::vector<double> zero(g.vertex_count(), 0.0);
    EXPECT_THROW(numerical_diffusion_fit(zero, g, 1.0, 0.0, D), ValidationError);
}

TEST(DiffusionFit, AxisAngle) {
    EXPECT_NEAR(axis_angle_deg(Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0)), 0.0, 1e-12);
    EXPECT_NEAR(axis_angle_deg(Eigen::Vector2d(1, 0), Eigen::Vector2d(1, 1)), 45.0, 1e-12);
    EXPECT_NEAR(axis_angle_deg(Eigen::Vector2d(0, 2), Eigen::Vector2d(3, 0)), 90.0, 1e-12);
}
