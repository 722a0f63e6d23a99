#include "kawasaki/errors.hpp"
#include "kawasaki/micro.hpp"
#include "kawasaki/norms.hpp"
#include "kawasaki/operators.hpp"
#include "kawasaki/quadrature.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

using namespace kawasaki;

namespace {

SplineField random_field(int m, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0);
    NormalSource normal;
    Eigen::VectorXd c(m);
    normal.fill(rng, c);
    return SplineField(c);
}

Eigen::VectorXd random_lattice(int n, std::uint64_t seed) {
    Rng rng = make_rng(seed, 1);
    NormalSource normal;
    Eigen::VectorXd x(n);
    normal.fill(rng, x);
    x.array() -= x.mean();
    return x;
}

// N ∫_cell y by 8-point Gauss–Legendre per cell.
Eigen::VectorXd cell_average_oracle(const SplineField& y, int n) {
    const auto& gl = gauss_legendre(8);
    Eigen::VectorXd out(n);
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t q = 0; q < gl.nodes.size(); ++q) acc += gl.weights[q] * y((i + gl.nodes[q]) / n);
        out(i) = acc;
    }
    return out;
}

}  // namespace

TEST_SUITE("operators") {
    TEST_CASE("lattice Laplacian") {
        const MultiscaleGrid g(4, 2, 2);
        const Eigen::Vector4d alt = apply_A(g, SpinConfiguration(Eigen::Vector4d(1, -1, 1, -1))).values();
        CHECK(alt.isApprox(Eigen::Vector4d(64, -64, 64, -64)));
        const Eigen::Vector4d two = apply_A(g, SpinConfiguration(Eigen::Vector4d(1, 0, -1, 0))).values();
        CHECK(two.isApprox(Eigen::Vector4d(32, 0, -32, 0)));
        CHECK(apply_A(g, SpinConfiguration(Eigen::Vector4d(3, 3, 3, 3))).values().norm() < 1e-12);
    }

    TEST_CASE("B-spline values and partition of unity") {
        const int m = 6;
        for (int j = 1; j <= m; ++j) {
            CHECK(bspline_eval(m, j, (2.0 * j - 1) / (2.0 * m)) == doctest::Approx(0.75));
            CHECK(bspline_eval(m, j, (j - 1.0) / m) == doctest::Approx(0.5));
        }
        for (int s = 0; s < 50; ++s) {
            double sum = 0.0;
            for (int j = 1; j <= m; ++j) sum += bspline_eval(m, j, s / 50.0 + 0.003);
            CHECK(std::abs(sum - 1.0) < 1e-14);
        }
    }

    TEST_CASE("Gram matrix") {
        const Eigen::MatrixXd g = gram_matrix(8);
        CHECK(g(0, 0) == doctest::Approx(11.0 / 160.0).epsilon(1e-15));
        CHECK(g(0, 1) == doctest::Approx(13.0 / 480.0).epsilon(1e-15));
        CHECK(g(0, 2) == doctest::Approx(1.0 / 960.0).epsilon(1e-15));
        CHECK(g(0, 4) == 0.0);
        CHECK(g(0, 7) == doctest::Approx(13.0 / 480.0).epsilon(1e-15));
        CHECK((g - gram_matrix_exact(8)).cwiseAbs().maxCoeff() < 1e-15);
        for (int r = 0; r < 8; ++r) CHECK(g.row(r).sum() == doctest::Approx(1.0 / 8.0).epsilon(1e-14));
        CHECK_THROWS_AS(gram_matrix(4), PreconditionError);
        // Fine-grid quadrature of ∫B_1 B_2 for M = 3, where the periodic images overlap.
        const Eigen::MatrixXd g3 = gram_matrix_exact(3);
        double acc = 0.0;
        const int fine = 300000;
        for (int s = 0; s < fine; ++s) {
            const double t = (s + 0.5) / fine;
            acc += bspline_eval(3, 1, t) * bspline_eval(3, 2, t) / fine;
        }
        CHECK(g3(0, 1) == doctest::Approx(acc).epsilon(1e-8));
    }

    TEST_CASE("lift formula and adjointness") {
        const MultiscaleGrid grid(48, 6);
        const OperatorCache cache = OperatorCache::assemble(grid);
        const SplineField y = random_field(6, 5);
        const Eigen::VectorXd lifted = lift_NPt(cache, y).values();
        CHECK((lifted - cell_average_oracle(y, 48)).cwiseAbs().maxCoeff() < 1e-12);
        const int n = 48;
        for (int i = 1; i <= n; ++i) {
            const int j = (i - 1) / grid.block();
            const auto p = y.piece_coeffs(j);
            const double formula = p.alpha / (n * n) * (i * i - i + 1.0 / 3.0) + p.beta / n * (i - 0.5) + p.gamma;
            CHECK(lifted(i - 1) == doctest::Approx(formula).epsilon(1e-11));
        }
        const Eigen::VectorXd x = random_lattice(n, 9);
        const SplineField px = project_P(cache, SpinConfiguration(x));
        CHECK(cache.l2_inner(px.coeffs(), y.coeffs()) == doctest::Approx(x.dot(lifted) / n).epsilon(1e-10));
    }

    TEST_CASE("A NP^t closed forms") {
        const MultiscaleGrid grid(64, 4);
        const OperatorCache cache = OperatorCache::assemble(grid);
        const SplineField y = random_field(4, 11);
        const Eigen::VectorXd z = apply_ANPt(grid, y).values();
        const Eigen::VectorXd composed = apply_A(grid, lift_NPt(cache, y)).values();
        CHECK((z - composed).cwiseAbs().maxCoeff() < 1e-9 * composed.cwiseAbs().maxCoeff());
        const int k = grid.block();
        for (int j = 0; j < 4; ++j) {
            const double a = y.piece_coeffs(j).alpha;
            const double next = y.piece_coeffs((j + 1) % 4).alpha;
            const double prev = y.piece_coeffs((j + 3) % 4).alpha;
            CHECK(z(j * k + 5) == doctest::Approx(-2 * a).epsilon(1e-10));
            CHECK(z(j * k + k - 1) == doctest::Approx(-2 * a + (a - next) / 3.0).epsilon(1e-10));
            CHECK(z(j * k) == doctest::Approx(-2 * a + (a - prev) / 3.0).epsilon(1e-10));
        }
    }

    TEST_CASE("projection") {
        const MultiscaleGrid grid(64, 8);
        const OperatorCache cache = OperatorCache::assemble(grid);
        const SplineField y = random_field(8, 2);
        CHECK((project_P(cache, y).coeffs() - y.coeffs()).cwiseAbs().maxCoeff() < 1e-10);
        const SpinConfiguration x(random_lattice(64, 4));
        const SplineField px = project_P(cache, x);
        const PiecewisePolynomial residual = x.as_piecewise() - px.as_piecewise();
        for (int j = 1; j <= 8; ++j) {
            // ⟨f − Pf, B_j⟩ by midpoint sums fine enough to resolve the polynomial pieces.
            double acc = 0.0;
            const int fine = 64 * 8 * 50;
            for (int s = 0; s < fine; ++s) {
                const double t = (s + 0.5) / fine;
                acc += residual(t) * bspline_eval(8, j, t) / fine;
            }
            CHECK(std::abs(acc) < 1e-7);
        }
        // Dense least-squares oracle for the projection of the sampled cosine.
        Eigen::VectorXd samples(64);
        for (int i = 0; i < 64; ++i) samples(i) = std::cos(2 * std::numbers::pi * (i + 0.5) / 64);
        const SplineField pc = project_P(cache, SpinConfiguration(samples));
        const int fine = 4096;
        Eigen::MatrixXd design(fine, 8);
        Eigen::VectorXd rhs(fine);
        for (int s = 0; s < fine; ++s) {
            const double t = (s + 0.5) / fine;
            for (int j = 1; j <= 8; ++j) design(s, j - 1) = bspline_eval(8, j, t);
            rhs(s) = samples(static_cast<int>(t * 64));
        }
        Eigen::VectorXd ls = design.colPivHouseholderQr().solve(rhs);
        ls.array() -= ls.mean();
        CHECK((ls - pc.coeffs()).cwiseAbs().maxCoeff() < 1e-3);
        CHECK(l2_distance(SpinConfiguration(samples), pc) < 1.0 / 64.0 + 1.0 / 8.0 / 8.0);
    }

    TEST_CASE("PNP^t defect decays like K^-2") {
        const double d32 = OperatorCache::assemble(MultiscaleGrid::from_blocks(8, 32)).defect();
        const double d64 = OperatorCache::assemble(MultiscaleGrid::from_blocks(8, 64)).defect();
        CHECK(d32 / d64 == doctest::Approx(4.0).epsilon(0.1));
        const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid::from_blocks(8, 16));
        const Eigen::MatrixXd g = cache.gram();
        const Eigen::MatrixXd sym = g * (cache.pnpt_matrix() - Eigen::MatrixXd::Identity(8, 8));
        CHECK((sym - sym.transpose()).cwiseAbs().maxCoeff() < 1e-13);
        CHECK_THROWS_AS(OperatorCache::assemble(MultiscaleGrid(8, 8, 1)), ConfigError);
    }

    TEST_CASE("Abar is symmetric positive definite on mean-zero splines") {
        const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid::from_blocks(8, 16));
        CHECK((cache.stiffness() - cache.stiffness().transpose()).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(cache.abar_min_eigenvalue() > 0.0);
        for (std::uint64_t s = 0; s < 5; ++s) {
            const SplineField y = random_field(8, 100 + s);
            const Eigen::VectorXd ay = cache.abar_apply(y.coeffs());
            CHECK(cache.l2_inner(y.coeffs(), ay) > 0.0);
            // ⟨y, Āy⟩ = (1/N) NP^t y · A NP^t y.
            const Eigen::VectorXd lifted = lift_NPt(cache, y).values();
            const Eigen::VectorXd alift = apply_A(cache.grid(), SpinConfiguration(lifted)).values();
            CHECK(cache.l2_inner(y.coeffs(), ay) == doctest::Approx(lifted.dot(alift) / 128).epsilon(1e-10));
            // Ā⁻¹ inverts Ā.
            CHECK((cache.abar_inverse(ay) - y.coeffs()).cwiseAbs().maxCoeff() < 1e-9);
            // ANP^t Ā⁻¹ (Ā z) = ANP^t z.
            const SplineField az(ay);
            CHECK((apply_ANPt_abar_inv(cache, az).values() - apply_ANPt(cache.grid(), y).values()).cwiseAbs().maxCoeff() <
                  1e-8 * alift.cwiseAbs().maxCoeff());
        }
    }

    TEST_CASE("Abar against the H1 form") {
        for (int k : {16, 64}) {
            const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid::from_blocks(4, k));
            const SplineField y = random_field(4, 7);
            const double a = cache.l2_inner(y.coeffs(), cache.abar_apply(y.coeffs()));
            const double h = h1_seminorm(y);
            CHECK(std::abs(a - h * h) <= 2.0 / k * h * h);
        }
    }

    TEST_CASE("fiber decomposition") {
        const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid(64, 4));
        const SpinConfiguration x(random_lattice(64, 21));
        const FiberDecomposition d = fiber_decompose(cache, x);
        CHECK((d.parallel.values() + d.perpendicular.values() - x.values()).norm() < 1e-12);
        CHECK(project_P(cache, d.parallel).coeffs().norm() < 1e-12);
        const SplineField y = random_field(4, 3);
        const SpinConfiguration lifted = lift_NPt(cache, y);
        CHECK(fiber_decompose(cache, lifted).parallel.values().norm() < 1e-10);
        CHECK(fiber_decompose(cache, d.parallel).perpendicular.values().norm() < 1e-10);
        const Eigen::VectorXd foot = fiber_foot_point(cache, y);
        CHECK((project_lattice(cache, foot).coeffs() - y.coeffs()).norm() < 1e-10);
        const Eigen::VectorXd tangent = project_onto_fiber_tangent(cache, x.values());
        CHECK((tangent - d.parallel.values()).norm() < 1e-10);
    }

    TEST_CASE("sigma bound and its second-derivative estimate") {
        for (int m : {4, 8}) {
            const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid::from_blocks(m, 16));
            const double worst = anpt_abar_inv_norm(cache);
            CHECK(1.0 / worst >= 0.1);
            for (std::uint64_t s = 0; s < 20; ++s) {
                const SplineField y = random_field(m, 300 + s);
                CHECK(l2_norm(apply_ANPt_abar_inv(cache, y)) <= worst * l2_norm(y) * (1 + 1e-10));
                // |−∂²y_inv − ANP^t y_inv|_{L²} ≤ |−∂²y_inv|_{L²} / (2√K).
                const SplineField yinv(cache.abar_inverse(y.coeffs()));
                const PiecewisePolynomial second = yinv.as_piecewise().derivative().derivative();
                const PiecewisePolynomial diff =
                    (-1.0) * second - apply_ANPt(cache.grid(), yinv).as_piecewise();
                CHECK(std::sqrt(diff.squared_l2()) <= std::sqrt(second.squared_l2()) / (2.0 * std::sqrt(16.0)));
            }
        }
    }
}
