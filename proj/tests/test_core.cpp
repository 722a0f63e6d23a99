#include "kawasaki/core.hpp"
#include "kawasaki/errors.hpp"
#include "kawasaki/operators.hpp"
#include "kawasaki/polynomial.hpp"
#include "kawasaki/quadrature.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace kawasaki;

namespace {

// Tilt a with ∫ z exp(−z²/2 − a z − δψ(z)) dz = 0, by trapezoid sums and bisection.
double tilt_oracle(const std::function<double(double)>& delta) {
    auto first_moment = [&](double a) {
        double acc = 0.0;
        for (int i = -40000; i <= 40000; ++i) {
            const double z = i * 1e-3;
            acc += z * std::exp(-0.5 * z * z - a * z - delta(z));
        }
        return acc;
    };
    double lo = -3.0, hi = 3.0;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (first_moment(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST_SUITE("core") {
    TEST_CASE("grid invariants") {
        const MultiscaleGrid g(64, 4);
        CHECK(g.block() == 16);
        CHECK_THROWS_AS(MultiscaleGrid(65, 4), ConfigError);
        CHECK_THROWS_AS(MultiscaleGrid(12, 4), ConfigError);
        CHECK_NOTHROW(MultiscaleGrid(12, 4, 3));
        CHECK(MultiscaleGrid::from_blocks(8, 16).sites() == 128);
    }

    TEST_CASE("spin configuration is re-centred and read as a step function") {
        const SpinConfiguration x(Eigen::Vector4d(2.0, 1.0, -1.0, 2.0));
        CHECK(std::abs(x.values().sum()) < 1e-12);
        const SpinConfiguration two(Eigen::Vector2d(1.0, -1.0));
        CHECK(step_function_view(two, 0.25) == doctest::Approx(1.0));
        CHECK(step_function_view(two, 0.5) == doctest::Approx(-1.0));
        const SpinConfiguration four(Eigen::Vector4d(2.0, 0.0, -2.0, 0.0));
        CHECK(step_function_view(four, 0.6) == doctest::Approx(-2.0));
    }

    TEST_CASE("spline field: mean zero, C1 across knots, matches the B-spline sum") {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> normal;
        const int m = 7;
        Eigen::VectorXd c(m);
        for (int j = 0; j < m; ++j) c(j) = normal(rng);
        const SplineField y(c);
        CHECK(std::abs(y.coeffs().sum()) < 1e-12);
        for (int p = 0; p < m; ++p) {
            const auto a = y.piece_coeffs(p);
            const auto b = y.piece_coeffs((p + 1) % m);
            const double knot = static_cast<double>(p + 1) / m;
            const double kb = (p + 1 == m) ? 0.0 : knot;
            CHECK(a.alpha * knot * knot + a.beta * knot + a.gamma ==
                  doctest::Approx(b.alpha * kb * kb + b.beta * kb + b.gamma).epsilon(1e-10));
            CHECK(2 * a.alpha * knot + a.beta == doctest::Approx(2 * b.alpha * kb + b.beta).epsilon(1e-10));
        }
        for (double theta : {0.01, 0.2, 0.5, 0.77, 0.999}) {
            double sum = 0.0;
            for (int j = 1; j <= m; ++j) sum += y.coeffs()(j - 1) * bspline_eval(m, j, theta);
            CHECK(y(theta) == doctest::Approx(sum).epsilon(1e-12));
        }
        CHECK(std::abs(y.as_piecewise().integral()) < 1e-12);
    }

    TEST_CASE("single-site potential values") {
        const SingleSitePotential gauss(0.0, gaussian_perturbation());
        CHECK(psi_eval(gauss, 2.0, 1) == doctest::Approx(2.0));
        CHECK(psi_eval(gauss, 3.0, 0) == doctest::Approx(4.5));
        const SingleSitePotential cosine(0.0, cosine_perturbation(1.0));
        CHECK(std::abs(psi_eval(cosine, 0.0, 2)) < 1e-14);
        const double h = 1e-4;
        for (double x : {-1.3, 0.2, 2.5}) {
            CHECK(cosine.psi_prime(x) == doctest::Approx((cosine.psi(x + h) - cosine.psi(x - h)) / (2 * h)).epsilon(1e-7));
            CHECK(cosine.psi_second(x) ==
                  doctest::Approx((cosine.psi_prime(x + h) - cosine.psi_prime(x - h)) / (2 * h)).epsilon(1e-7));
        }
        const Perturbation p = cosine_perturbation(0.5);
        CHECK(p.sup_bound == doctest::Approx(0.5));
        CHECK(p.second_derivative_bound == doctest::Approx(0.5));
    }

    TEST_CASE("tilt normalisation") {
        CHECK(normalize_tilt(gaussian_perturbation()).tilt() == 0.0);
        CHECK(std::abs(normalize_tilt(cosine_perturbation(0.7)).tilt()) < 1e-12);
        const double oracle = tilt_oracle([](double z) { return 0.5 * std::cos(z + 1.0); });
        const SingleSitePotential pot = normalize_tilt(cosine_perturbation(0.5, 1.0, 1.0));
        CHECK(pot.tilt() == doctest::Approx(oracle).epsilon(1e-9));
        CHECK(std::abs(oracle) > 1e-3);
        const SingleSiteMeasure mu(pot);
        CHECK(std::abs(mu.expectation([](double x) { return x; })) < 1e-11);
    }

    TEST_CASE("tilted moments of the Gaussian") {
        const SingleSiteMeasure mu(SingleSitePotential(0.0, gaussian_perturbation()));
        for (double s : {-2.0, 0.0, 0.7, 3.0}) {
            const TiltedMoments t = mu.tilted(s);
            CHECK(t.log_partition == doctest::Approx(0.5 * s * s + 0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-12));
            CHECK(t.mean == doctest::Approx(s).epsilon(1e-12));
            CHECK(t.variance == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_SUITE("polynomial") {
    TEST_CASE("quadrature rules") {
        const auto& gh = gauss_hermite(20);
        double mass = 0.0, fourth = 0.0;
        for (std::size_t i = 0; i < gh.nodes.size(); ++i) {
            mass += gh.weights[i];
            fourth += gh.weights[i] * std::pow(gh.nodes[i], 4);
        }
        CHECK(mass == doctest::Approx(std::sqrt(2 * std::numbers::pi)).epsilon(1e-13));
        CHECK(fourth == doctest::Approx(3 * std::sqrt(2 * std::numbers::pi)).epsilon(1e-12));
        const auto& gl = gauss_legendre(4);
        double fifth = 0.0;
        for (std::size_t i = 0; i < gl.nodes.size(); ++i) fifth += gl.weights[i] * std::pow(gl.nodes[i], 5);
        CHECK(fifth == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
    }

    TEST_CASE("polynomial algebra") {
        const Poly p{1.0, -2.0, 3.0};
        CHECK(p(2.0) == doctest::Approx(9.0));
        CHECK(p.derivative()(2.0) == doctest::Approx(10.0));
        CHECK(p.antiderivative()(1.0) == doctest::Approx(1.0));
        CHECK(p.shifted(1.0)(1.0) == doctest::Approx(p(2.0)));
        CHECK((p * p)(1.5) == doctest::Approx(p(1.5) * p(1.5)));
        CHECK(p.integral(2.0) == doctest::Approx(2.0 - 4.0 + 8.0));
    }

    TEST_CASE("piecewise antiderivative of a step function") {
        const std::vector<double> v = {1.0, -1.0};
        const PiecewisePolynomial f = PiecewisePolynomial::step(v);
        const PiecewisePolynomial w = f.mean_zero_antiderivative();
        CHECK(std::abs(w.integral()) < 1e-14);
        CHECK(w(0.5) - w(0.0) == doctest::Approx(0.5));
        // The triangle wave has ∫w² = 1/48.
        CHECK(w.squared_l2() == doctest::Approx(1.0 / 48.0).epsilon(1e-13));
        const std::vector<double> bad = {1.0, 0.0};
        CHECK_THROWS_AS(PiecewisePolynomial::step(bad).mean_zero_antiderivative(), PreconditionError);
    }

    TEST_CASE("periodic cubic interpolant reproduces a smooth profile") {
        const int g = 128;
        std::vector<double> v(g);
        for (int i = 0; i < g; ++i) v[i] = std::cos(2 * std::numbers::pi * i / g);
        const PiecewisePolynomial f = PiecewisePolynomial::periodic_cubic_interpolant(v);
        for (double t : {0.013, 0.31, 0.5, 0.9}) CHECK(std::abs(f(t) - std::cos(2 * std::numbers::pi * t)) < 1e-7);
    }
}
