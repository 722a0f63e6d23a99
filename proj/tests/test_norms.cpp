#include "kawasaki/errors.hpp"
#include "kawasaki/micro.hpp"
#include "kawasaki/norms.hpp"
#include "kawasaki/quadrature.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>

using namespace kawasaki;

namespace {

constexpr double pi = std::numbers::pi;

// H⁻¹ norm² of a step function from its exact Fourier coefficients, Σ_{k≠0} |f̂_k|² / (4π²k²).
double hneg1_fourier_oracle(const Eigen::VectorXd& x, int k_max) {
    const int n = static_cast<int>(x.size());
    double acc = 0.0;
    for (int k = 1; k <= k_max; ++k) {
        std::complex<double> c = 0.0;
        for (int i = 0; i < n; ++i) {
            const double a = 2 * pi * k * i / n, b = 2 * pi * k * (i + 1) / n;
            c += x(i) * (std::exp(std::complex<double>(0, -a)) - std::exp(std::complex<double>(0, -b))) /
                 std::complex<double>(0, 2 * pi * k);
        }
        acc += 2.0 * std::norm(c) / (4 * pi * pi * k * k);
    }
    return acc;
}

SplineField random_field(int m, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0);
    NormalSource normal;
    Eigen::VectorXd c(m);
    normal.fill(rng, c);
    return SplineField(c);
}

}  // namespace

TEST_SUITE("norms") {
    TEST_CASE("L2 norms") {
        CHECK(l2_norm(SpinConfiguration(Eigen::Vector4d(0, 0, 0, 0))) == 0.0);
        CHECK(l2_norm(SpinConfiguration(Eigen::Vector4d(1, -1, 1, -1))) == doctest::Approx(1.0));
        Eigen::VectorXd c = Eigen::VectorXd::Zero(6);
        c(0) = 1.0;
        c(1) = -1.0;
        const SplineField y(c);
        const double gram_form = std::sqrt(c.dot(gram_matrix(6) * c));
        CHECK(l2_norm(y) == doctest::Approx(gram_form).epsilon(1e-13));
        double acc = 0.0;
        const int fine = 200000;
        for (int s = 0; s < fine; ++s) acc += std::pow(y((s + 0.5) / fine), 2) / fine;
        CHECK(l2_norm(y) == doctest::Approx(std::sqrt(acc)).epsilon(1e-8));
    }

    TEST_CASE("H1 seminorm of a spline") {
        CHECK(h1_seminorm(SplineField::zero(5)) == 0.0);
        const SplineField y = random_field(5, 8);
        const auto& gl = gauss_legendre(3);
        double acc = 0.0;
        for (int p = 0; p < 5; ++p) {
            const auto q = y.piece_coeffs(p);
            for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
                const double t = (p + gl.nodes[i]) / 5.0;
                acc += gl.weights[i] / 5.0 * std::pow(2 * q.alpha * t + q.beta, 2);
            }
        }
        CHECK(h1_seminorm(y) == doctest::Approx(std::sqrt(acc)).epsilon(1e-12));
        CHECK_THROWS_AS(h1_seminorm(SpinConfiguration(Eigen::Vector2d(1, -1))), PreconditionError);
        for (int m : {4, 16, 64}) {
            const SplineField r = random_field(m, 40 + m);
            CHECK(h1_seminorm(r) <= 2 * std::sqrt(3.0) * m * l2_norm(r));
        }
    }

    TEST_CASE("H-1 norm") {
        CHECK(hneg1_norm(SpinConfiguration(Eigen::Vector4d(0, 0, 0, 0))) == 0.0);
        const int n = 1024;
        Eigen::VectorXd x(n);
        for (int i = 0; i < n; ++i) x(i) = std::sin(2 * pi * (i + 0.5) / n);
        CHECK(hneg1_norm(SpinConfiguration(x)) == doctest::Approx(1.0 / (2 * std::sqrt(2.0) * pi)).epsilon(1e-5));
        Rng rng = make_rng(17, 0);
        NormalSource normal;
        Eigen::VectorXd r(16);
        normal.fill(rng, r);
        r.array() -= r.mean();
        const double oracle = hneg1_fourier_oracle(r, 20000);
        CHECK(std::pow(hneg1_norm(SpinConfiguration(r)), 2) == doctest::Approx(oracle).epsilon(1e-8));
    }

    TEST_CASE("H-1 projection error scales like 1/M") {
        for (int m : {4, 8, 16}) {
            const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid::from_blocks(m, 16));
            Rng rng = make_rng(5, static_cast<std::uint64_t>(m));
            NormalSource normal;
            Eigen::VectorXd x(16 * m);
            normal.fill(rng, x);
            const SpinConfiguration sx(x);
            const SplineField px = project_P(cache, sx);
            CHECK(hneg1_distance(sx, px) <= 0.5 / m * l2_distance(sx, px));
        }
    }

    TEST_CASE("distances agree with norms of differences") {
        const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid(64, 4));
        Rng rng = make_rng(6, 0);
        NormalSource normal;
        Eigen::VectorXd x(64);
        normal.fill(rng, x);
        const SpinConfiguration sx(x);
        const SplineField y = random_field(4, 12);
        const PiecewisePolynomial diff = sx.as_piecewise() - y.as_piecewise();
        CHECK(l2_distance(sx, y) == doctest::Approx(std::sqrt(diff.squared_l2())).epsilon(1e-12));
        CHECK(hneg1_distance(sx, y) == doctest::Approx(hneg1_norm(diff)).epsilon(1e-12));
        CHECK(hneg1_distance(sx, y.as_piecewise()) == doctest::Approx(hneg1_norm(diff)).epsilon(1e-12));
    }

    TEST_CASE("Dirichlet form") {
        const MultiscaleGrid g(4, 2, 2);
        CHECK(dirichlet_form(g, SpinConfiguration(Eigen::Vector4d(1, -1, 1, -1))) == doctest::Approx(256.0));
        CHECK(dirichlet_form(Eigen::Vector4d(2, 2, 2, 2)) == 0.0);
        Rng rng = make_rng(3, 0);
        NormalSource normal;
        Eigen::VectorXd x(32);
        normal.fill(rng, x);
        x.array() -= x.mean();
        const MultiscaleGrid g32(32, 4);
        CHECK(dirichlet_form(x) == doctest::Approx(x.dot(apply_A(g32, SpinConfiguration(x)).values())).epsilon(1e-9));
    }

    TEST_CASE("Abar norms") {
        const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid::from_blocks(6, 16));
        CHECK(abar_norm(cache, SplineField::zero(6), 1) == 0.0);
        CHECK(abar_norm(cache, SplineField::zero(6), -1) == 0.0);
        const SplineField y = random_field(6, 31);
        // Ā⁻¹ via a dense pseudo-inverse of the stiffness on the mean-zero complement.
        const Eigen::MatrixXd s = cache.stiffness();
        const Eigen::VectorXd gy = cache.gram() * y.coeffs();
        const Eigen::VectorXd d = s.completeOrthogonalDecomposition().pseudoInverse() * gy;
        CHECK(std::pow(abar_norm(cache, y, -1), 2) == doctest::Approx(gy.dot(d)).epsilon(1e-9));
        CHECK(std::pow(abar_norm(cache, y, 1), 2) == doctest::Approx(y.coeffs().dot(s * y.coeffs())).epsilon(1e-12));
        const NormWorkspace ws(cache);
        CHECK(ws.l2(y) == doctest::Approx(l2_norm(y)).epsilon(1e-12));
        const double neg = ws.abar_inv(y) / hneg1_norm(y);
        const double pos = ws.abar(y) / h1_seminorm(y);
        CHECK(neg > 1.0 / 3.0);
        CHECK(neg < 3.0);
        CHECK(pos > 1.0 / 3.0);
        CHECK(pos < 3.0);
    }
}
