#include "kawasaki/errors.hpp"
#include "kawasaki/micro.hpp"
#include "kawasaki/norms.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

using namespace kawasaki;

namespace {

constexpr double pi = std::numbers::pi;

Eigen::VectorXd mean_zero_normal(int n, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0);
    NormalSource normal;
    Eigen::VectorXd x(n);
    normal.fill(rng, x);
    x.array() -= x.mean();
    return x;
}

// E[g(X)] for X ~ e^{-ψ} by a wide trapezoid rule.
double trapezoid_expectation(const SingleSitePotential& pot, const std::function<double(double)>& g) {
    const double h = 1e-3;
    double z = 0.0, acc = 0.0;
    for (double x = -14.0; x <= 14.0; x += h) {
        const double w = std::exp(-pot.psi(x));
        z += w;
        acc += w * g(x);
    }
    return acc / z;
}

}  // namespace

TEST_SUITE("micro") {
    TEST_CASE("Hamiltonian gradient matches finite differences") {
        const SingleSitePotential pot = normalize_tilt(cosine_perturbation(0.5, 2.0, 0.3));
        const Eigen::VectorXd x = mean_zero_normal(12, 1);
        const Eigen::VectorXd g = grad_hamiltonian(pot, SpinConfiguration(x));
        const double h = 1e-5;
        for (int i = 0; i < 12; ++i) {
            Eigen::VectorXd xp = x, xm = x;
            xp(i) += h;
            xm(i) -= h;
            CHECK(g(i) == doctest::Approx((hamiltonian(pot, xp) - hamiltonian(pot, xm)) / (2 * h)).epsilon(1e-7));
        }
        CHECK(hamiltonian(SingleSitePotential(), Eigen::Vector2d(1.0, -1.0)) == doctest::Approx(1.0));
    }

    TEST_CASE("steps preserve the mean and the step cap is enforced") {
        const MultiscaleGrid grid(32, 4);
        const SingleSitePotential pot = normalize_tilt(cosine_perturbation(0.5));
        const double cap = kawasaki_dt_cap(grid, pot);
        CHECK(cap == doctest::Approx(1.0 / (4.0 * 32 * 32 * 1.5)));
        KawasakiState s = make_kawasaki_state(SpinConfiguration(mean_zero_normal(32, 2)), 3, 0);
        KawasakiIntegrator integ(pot, grid, 0.5 * cap);
        integ.advance(s, 200);
        CHECK(std::abs(s.x.sum()) < 1e-10);
        CHECK(s.steps == 200);
        CHECK(s.t == doctest::Approx(100 * cap));
        CHECK_THROWS_AS(KawasakiIntegrator(pot, grid, 1.01 * cap), PreconditionError);
        CHECK_THROWS_AS(KawasakiIntegrator(pot, grid, 0.0), PreconditionError);
        KawasakiState wrong = make_kawasaki_state(SpinConfiguration(mean_zero_normal(16, 2)), 3, 0);
        CHECK_THROWS_AS(integ.advance(wrong, 1), PreconditionError);
    }

    TEST_CASE("noise-free Gaussian dynamics damps each Fourier mode exactly") {
        const int n = 32;
        const MultiscaleGrid grid(n, 4);
        const SingleSitePotential pot;
        const double dt = 0.5 * kawasaki_dt_cap(grid, pot);
        for (int k : {1, 3, 16}) {
            Eigen::VectorXd x(n);
            for (int i = 0; i < n; ++i) x(i) = std::cos(2 * pi * k * i / n);
            KawasakiState s = make_kawasaki_state(SpinConfiguration(x), 0, 0);
            s = kawasaki_step(pot, grid, s, dt, {.noise = false});
            const double lambda = 4.0 * n * n * std::pow(std::sin(pi * k / n), 2);
            CHECK((s.x - (1 - lambda * dt) * x).cwiseAbs().maxCoeff() < 1e-12);
        }
    }

    TEST_CASE("stationary site variance of the Gaussian scheme") {
        const int n = 16;
        const MultiscaleGrid grid(n, 4);
        const SingleSitePotential pot;
        const double dt = 0.5 * kawasaki_dt_cap(grid, pot);
        // Euler–Maruyama stationary variance per mode is 2 / (2 − λ dt).
        double expected = 0.0;
        for (int k = 1; k < n; ++k) expected += 2.0 / (2.0 - 4.0 * n * n * std::pow(std::sin(pi * k / n), 2) * dt);
        expected /= n;
        KawasakiState s = make_kawasaki_state(SpinConfiguration(Eigen::VectorXd::Zero(n)), 11, 0);
        KawasakiIntegrator integ(pot, grid, dt);
        integ.advance(s, 2000);
        const int samples = 20000;
        double acc = 0.0, acc2 = 0.0;
        for (int i = 0; i < samples; ++i) {
            integ.advance(s, 20);
            const double v = s.x.squaredNorm() / n;
            acc += v;
            acc2 += v * v;
        }
        const double mean = acc / samples;
        const double sd = std::sqrt(acc2 / samples - mean * mean);
        CHECK(std::abs(mean - expected) < 5.0 * sd / std::sqrt(samples / 4.0));
        CHECK(expected > 1.0 - 1.0 / n);
    }

    TEST_CASE("Gibbs sampling") {
        const MultiscaleGrid grid(8, 2, 2);
        SUBCASE("Gaussian covariance is the mean-zero projector") {
            Rng rng = make_rng(4, 0);
            Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(8, 8);
            const int samples = 40000;
            for (int i = 0; i < samples; ++i) {
                const GibbsSample g = sample_gibbs(SingleSitePotential(), grid, rng);
                if (!g.exact) FAIL("Gaussian sample flagged inexact");
                cov += g.x.values() * g.x.values().transpose();
            }
            cov /= samples;
            const Eigen::MatrixXd pi_mat = Eigen::MatrixXd::Identity(8, 8) - Eigen::MatrixXd::Constant(8, 8, 1.0 / 8);
            CHECK((cov - pi_mat).cwiseAbs().maxCoeff() < 0.03);
        }
        SUBCASE("single-site law matches e^{-psi}") {
            const SingleSitePotential pot = normalize_tilt(cosine_perturbation(1.0, 1.0, 0.5));
            Rng rng = make_rng(5, 0);
            NormalSource normal;
            std::uint64_t attempts = 0;
            const int samples = 100000;
            double m1 = 0.0, m2 = 0.0;
            for (int i = 0; i < samples; ++i) {
                const double x = sample_single_site(pot, rng, normal, attempts);
                m1 += x;
                m2 += x * x;
            }
            m1 /= samples;
            m2 /= samples;
            CHECK(std::abs(m1 - trapezoid_expectation(pot, [](double x) { return x; })) < 0.015);
            CHECK(std::abs(m2 - trapezoid_expectation(pot, [](double x) { return x * x; })) < 0.03);
            CHECK(attempts > static_cast<std::uint64_t>(samples));
            Rng r2 = make_rng(5, 1);
            const GibbsSample g = sample_gibbs(pot, grid, r2);
            CHECK_FALSE(g.exact);
            CHECK(std::abs(g.x.values().sum()) < 1e-12);
        }
        SUBCASE("too large a perturbation is rejected") {
            Rng rng = make_rng(6, 0);
            CHECK_THROWS_AS(sample_gibbs(SingleSitePotential(0.0, cosine_perturbation(4.0)), grid, rng), ConfigError);
        }
    }

    TEST_CASE("fiber sampling stays on the fiber") {
        const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid(32, 4));
        const SplineField y(Eigen::Vector4d(0.3, -0.1, 0.2, -0.4));
        Rng rng = make_rng(8, 0);
        const SpinConfiguration x = sample_fiber(SingleSitePotential(), cache, y, 500, 0.05, rng);
        CHECK((project_P(cache, x).coeffs() - y.coeffs()).cwiseAbs().maxCoeff() < 1e-9);
    }

    TEST_CASE("Gaussian fiber mean is the foot point") {
        const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid(16, 4));
        const SplineField y(Eigen::Vector4d(0.5, -0.2, 0.1, -0.4));
        Rng rng = make_rng(9, 0);
        FiberOptions opt;
        opt.samples = 40000;
        const FiberAverage avg = fiber_average_grad(SingleSitePotential(), cache, y, opt, rng);
        const Eigen::VectorXd foot = fiber_foot_point(cache, y);
        for (int i = 0; i < 16; ++i) CHECK(std::abs(avg.mean(i) - foot(i)) < 5.0 * avg.standard_error(i) + 1e-3);
        CHECK(avg.max_fiber_drift < 1e-9);
        opt.batches = 1;
        CHECK_THROWS_AS(fiber_average_grad(SingleSitePotential(), cache, y, opt, rng), ConfigError);
    }

    TEST_CASE("product-initial relative entropy") {
        const MultiscaleGrid grid(16, 4);
        const Eigen::VectorXd s = 0.3 * mean_zero_normal(16, 12);
        const EntropyBound e = entropy_bound_product_init(SingleSitePotential(), grid, s);
        CHECK(e.total == doctest::Approx(0.5 * s.squaredNorm()));
        CHECK(e.per_site == doctest::Approx(e.total / 16));
        CHECK(entropy_bound_product_init(SingleSitePotential(), grid, Eigen::VectorXd(2 * s)).total ==
              doctest::Approx(4 * e.total));
        const SingleSitePotential pot = normalize_tilt(cosine_perturbation(0.5));
        double oracle = 0.0;
        for (int i = 0; i < 16; ++i) {
            oracle += trapezoid_expectation(pot, [&](double x) { return pot.psi(x + s(i)) - pot.psi(x); });
        }
        CHECK(entropy_bound_product_init(pot, grid, s).total == doctest::Approx(oracle).epsilon(1e-6));
        CHECK_THROWS_AS(entropy_bound_product_init(pot, grid, Eigen::VectorXd(Eigen::VectorXd::Zero(3))),
                        PreconditionError);
    }

    TEST_CASE("Gaussian law flow") {
        const int n = 8;
        const MultiscaleGrid grid(n, 2, 2);
        const Eigen::MatrixXd pi_mat = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
        const Eigen::VectorXd m = mean_zero_normal(n, 13);
        GaussianLawFlow flow(grid, m, pi_mat);
        CHECK(flow.kl() == doctest::Approx(0.5 * m.squaredNorm()));
        GaussianLawFlow pure(grid, Eigen::VectorXd::Zero(n), 0.25 * pi_mat);
        const double k0 = pure.kl();
        CHECK(k0 == doctest::Approx(0.5 * (n - 1) * (0.25 - 1 - std::log(0.25))));
        double prev = flow.kl();
        for (int i = 0; i < 20; ++i) {
            const double rate = flow.kl_rate();
            const double h = 1e-7;
            GaussianLawFlow probe = flow;
            probe.step(h);
            CHECK(rate <= 0.0);
            CHECK((probe.kl() - flow.kl()) / h == doctest::Approx(rate).epsilon(1e-4));
            flow.step(1e-3);
            CHECK(flow.kl() <= prev);
            prev = flow.kl();
        }
        CHECK_THROWS_AS(GaussianLawFlow(grid, Eigen::VectorXd::Zero(3), pi_mat), PreconditionError);
    }

    TEST_CASE("same seed reproduces the trajectory bit for bit") {
        const MultiscaleGrid grid(32, 4);
        const SingleSitePotential pot = normalize_tilt(cosine_perturbation(0.5));
        const double dt = 0.5 * kawasaki_dt_cap(grid, pot);
        auto run = [&](std::uint64_t stream) {
            KawasakiState s = make_kawasaki_state(SpinConfiguration(mean_zero_normal(32, 1)), 77, stream);
            KawasakiIntegrator integ(pot, grid, dt);
            integ.advance(s, 300);
            return s.x;
        };
        CHECK(run(0) == run(0));
        CHECK(run(0) != run(1));
    }
}
