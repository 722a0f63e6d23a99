#include "kawasaki/micro.hpp"

#include "kawasaki/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace kawasaki {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t state = seed ^ (0x632be59bd9b4e019ULL * (stream + 1));
    std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(state)), static_cast<std::uint32_t>(splitmix64(state)),
                      static_cast<std::uint32_t>(splitmix64(state)), static_cast<std::uint32_t>(splitmix64(state))};
    return Rng(seq);
}

double hamiltonian(const SingleSitePotential& pot, const Eigen::VectorXd& x) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) acc += pot.psi(x(i));
    return acc;
}

double hamiltonian(const SingleSitePotential& pot, const SpinConfiguration& x) { return hamiltonian(pot, x.values()); }

void grad_hamiltonian_inplace(const SingleSitePotential& pot, const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    out.resize(x.size());
    if (pot.perturbation().is_zero()) {
        out = x.array() + pot.tilt();
        return;
    }
    for (Eigen::Index i = 0; i < x.size(); ++i) out(i) = pot.psi_prime(x(i));
}

Eigen::VectorXd grad_hamiltonian(const SingleSitePotential& pot, const SpinConfiguration& x) {
    Eigen::VectorXd g;
    grad_hamiltonian_inplace(pot, x.values(), g);
    return g;
}

KawasakiState make_kawasaki_state(const SpinConfiguration& x0, std::uint64_t seed, std::uint64_t stream) {
    KawasakiState s;
    s.x = x0.values();
    s.rng = make_rng(seed, stream);
    return s;
}

double kawasaki_dt_cap(const MultiscaleGrid& grid, const SingleSitePotential& pot, double factor) {
    const double n = grid.sites();
    return factor / (4.0 * n * n * pot.stiffness());
}

KawasakiIntegrator::KawasakiIntegrator(const SingleSitePotential& pot, const MultiscaleGrid& grid, double dt,
                                       KawasakiOptions options)
    : pot_(&pot), grid_(grid), dt_(dt), options_(options) {
    if (!(dt > 0.0) || dt > kawasaki_dt_cap(grid, pot) * (1.0 + 1e-12)) {
        throw PreconditionError("Kawasaki step dt=" + std::to_string(dt) + " exceeds the stability cap " +
                                std::to_string(kawasaki_dt_cap(grid, pot)));
    }
    grad_.resize(grid.sites());
    drift_.resize(grid.sites());
    xi_.resize(grid.sites());
}

void KawasakiIntegrator::advance(KawasakiState& state, std::uint64_t n_steps) {
    const int n = grid_.sites();
    if (state.x.size() != n) {
        throw PreconditionError("Kawasaki state length does not match N");
    }
    const double nd = n;
    const double noise_scale = std::sqrt(2.0 * dt_) * nd;
    for (std::uint64_t s = 0; s < n_steps; ++s) {
        grad_hamiltonian_inplace(*pot_, state.x, grad_);
        apply_A_inplace(n, grad_.data(), drift_.data());
        state.x -= dt_ * drift_;
        if (options_.noise) {
            normal_.fill(state.rng, xi_);
            for (int j = 0; j + 1 < n; ++j) state.x(j) += noise_scale * (xi_(j) - xi_(j + 1));
            state.x(n - 1) += noise_scale * (xi_(n - 1) - xi_(0));
        }
        const double mean = state.x.mean();
        if (!std::isfinite(mean)) {
            throw DivergenceError("Kawasaki dynamics diverged at step " + std::to_string(state.steps + 1) +
                                  " (t=" + std::to_string(state.t) + ")");
        }
        state.x.array() -= mean;
        state.t += dt_;
        ++state.steps;
    }
}

KawasakiState kawasaki_step(const SingleSitePotential& pot, const MultiscaleGrid& grid, KawasakiState state,
                            double dt, const KawasakiOptions& options) {
    KawasakiIntegrator integrator(pot, grid, dt, options);
    integrator.advance(state, 1);
    return state;
}

double sample_single_site(const SingleSitePotential& pot, Rng& rng, NormalSource& normal, std::uint64_t& attempts) {
    // e^{−ψ} ∝ N(−a, 1) · e^{−δψ}; accept with e^{−(δψ + ‖δψ‖∞)} ≤ 1.
    const double bound = pot.perturbation().sup_bound;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::uint64_t local = 1;; ++local) {
        ++attempts;
        const double x = normal(rng) - pot.tilt();
        if (pot.perturbation().is_zero()) return x;
        const double accept = std::exp(-(pot.perturbation().eval(x, 0) + bound));
        if (unif(rng) < accept) return x;
        if (local >= 1000000) {
            throw ConfigError("single-site rejection sampler is not accepting; check the perturbation bounds");
        }
    }
}

GibbsSample sample_gibbs(const SingleSitePotential& pot, const MultiscaleGrid& grid, Rng& rng) {
    NormalSource normal;
    Eigen::VectorXd x(grid.sites());
    if (pot.is_gaussian()) {
        normal.fill(rng, x);
        return {SpinConfiguration(std::move(x)), true, 1.0};
    }
    if (std::exp(-2.0 * pot.perturbation().sup_bound) < 1e-3) {
        throw ConfigError("rejection sampler acceptance would fall below 1e-3 for perturbation '" +
                          pot.perturbation().name + "'");
    }
    std::uint64_t attempts = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = sample_single_site(pot, rng, normal, attempts);
    const double acceptance = static_cast<double>(x.size()) / static_cast<double>(attempts);
    if (acceptance < 1e-3) {
        throw ConfigError("rejection sampler acceptance " + std::to_string(acceptance) + " is below 1e-3");
    }
    return {SpinConfiguration(std::move(x)), false, acceptance};
}

namespace {

void check_fiber(const OperatorCache& cache, const Eigen::VectorXd& x, const SplineField& y, double& worst) {
    const SplineField px = project_lattice(cache, x);
    const double drift = (px.coeffs() - y.coeffs()).cwiseAbs().maxCoeff();
    worst = std::max(worst, drift);
    if (drift > 1e-6) {
        throw AssemblyError("fiber chain left {Px = y} by " + std::to_string(drift) + "; fiber projector is broken");
    }
}

struct FiberChain {
    const SingleSitePotential& pot;
    const OperatorCache& cache;
    double dt;
    Eigen::VectorXd x;
    Eigen::VectorXd grad;
    Eigen::VectorXd xi;
    NormalSource normal;

    void step(Rng& rng) {
        grad_hamiltonian_inplace(pot, x, grad);
        normal.fill(rng, xi);
        const Eigen::VectorXd move = -dt * grad + std::sqrt(2.0 * dt) * xi;
        x += project_onto_fiber_tangent(cache, move);
    }
};

}  // namespace

SpinConfiguration sample_fiber(const SingleSitePotential& pot, const OperatorCache& cache, const SplineField& y,
                               std::uint64_t n_steps, double dt_f, Rng& rng) {
    FiberChain chain{pot, cache, dt_f, fiber_foot_point(cache, y), {}, Eigen::VectorXd(cache.grid().sites()), {}};
    double worst = 0.0;
    for (std::uint64_t s = 0; s < n_steps; ++s) {
        chain.step(rng);
        if ((s + 1) % 256 == 0) check_fiber(cache, chain.x, y, worst);
    }
    check_fiber(cache, chain.x, y, worst);
    return SpinConfiguration(chain.x);
}

FiberAverage fiber_average_grad(const SingleSitePotential& pot, const OperatorCache& cache, const SplineField& y,
                                const FiberOptions& options, Rng& rng) {
    const int n = cache.grid().sites();
    if (options.batches < 2 || options.samples < options.batches) {
        throw ConfigError("fiber averaging needs at least two batches and one sample per batch");
    }
    FiberChain chain{pot, cache, options.dt, fiber_foot_point(cache, y), {}, Eigen::VectorXd(n), {}};
    FiberAverage out;
    for (std::uint64_t s = 0; s < options.burn_in; ++s) chain.step(rng);
    check_fiber(cache, chain.x, y, out.max_fiber_drift);

    const std::uint64_t per_batch = options.samples / options.batches;
    Eigen::MatrixXd batch_means = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(options.batches));
    Eigen::VectorXd sum_x = Eigen::VectorXd::Zero(n);
    for (std::uint64_t b = 0; b < options.batches; ++b) {
        for (std::uint64_t s = 0; s < per_batch; ++s) {
            chain.step(rng);
            grad_hamiltonian_inplace(pot, chain.x, chain.grad);
            batch_means.col(static_cast<Eigen::Index>(b)) += chain.grad;
            sum_x += chain.x;
        }
        batch_means.col(static_cast<Eigen::Index>(b)) /= static_cast<double>(per_batch);
    }
    check_fiber(cache, chain.x, y, out.max_fiber_drift);
    const double nb = static_cast<double>(options.batches);
    out.mean = batch_means.rowwise().mean();
    out.mean_x = sum_x / static_cast<double>(per_batch * options.batches);
    const Eigen::MatrixXd centred = batch_means.colwise() - out.mean;
    out.standard_error = (centred.array().square().rowwise().sum() / (nb * (nb - 1.0))).sqrt();
    return out;
}

EntropyBound entropy_bound_product_init(const SingleSitePotential& pot, const MultiscaleGrid& grid,
                                        const Eigen::VectorXd& shift) {
    if (shift.size() != grid.sites()) {
        throw PreconditionError("entropy_bound_product_init: shift length does not match N");
    }
    double total = 0.0;
    if (pot.perturbation().is_zero()) {
        total = 0.5 * shift.squaredNorm();
    } else {
        // KL(law(s + ξ) | law(ξ)) = E[ψ(ξ + s) − ψ(ξ)] per site.
        const SingleSiteMeasure measure(pot);
        for (Eigen::Index i = 0; i < shift.size(); ++i) {
            const double s = shift(i);
            if (s == 0.0) continue;
            total += measure.expectation([&](double x) { return pot.psi(x + s) - pot.psi(x); });
        }
    }
    return {total, total / grid.sites()};
}

EntropyBound entropy_bound_product_init(const SingleSitePotential& pot, const MultiscaleGrid& grid,
                                        const SplineField& profile) {
    const OperatorCache cache = OperatorCache::assemble(grid);
    return entropy_bound_product_init(pot, grid, lift_NPt(cache, profile).values());
}

GaussianLawFlow::GaussianLawFlow(const MultiscaleGrid& grid, Eigen::VectorXd mean, Eigen::MatrixXd covariance) {
    const int n = grid.sites();
    if (mean.size() != n || covariance.rows() != n || covariance.cols() != n) {
        throw PreconditionError("GaussianLawFlow: mean/covariance size does not match N");
    }
    a_ = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd unit = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < n; ++j) {
        unit.setZero();
        unit(j) = 1.0;
        apply_A_inplace(n, unit.data(), a_.col(j).data());
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a_);
    // Eigenvalues ascend; index 0 is the constant mode.
    basis_ = eig.eigenvectors().rightCols(n - 1);
    lambda_ = eig.eigenvalues().tail(n - 1);
    m_ = basis_.transpose() * mean;
    c_ = basis_.transpose() * covariance * basis_;
}

void GaussianLawFlow::step(double dt) {
    const Eigen::ArrayXd e = (-lambda_.array() * dt).exp();
    m_ = (e * m_.array()).matrix();
    c_ = e.matrix().asDiagonal() * c_ * e.matrix().asDiagonal();
    c_.diagonal().array() += 1.0 - e.square();
}

double GaussianLawFlow::kl() const {
    Eigen::LLT<Eigen::MatrixXd> llt(c_);
    if (llt.info() != Eigen::Success) throw NumericalError("GaussianLawFlow: covariance lost positive definiteness");
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return 0.5 * (c_.trace() - static_cast<double>(c_.rows()) + m_.squaredNorm() - logdet);
}

double GaussianLawFlow::kl_rate() const {
    const Eigen::MatrixXd cinv = c_.llt().solve(Eigen::MatrixXd::Identity(c_.rows(), c_.cols()));
    const Eigen::MatrixXd inner = c_ - 2.0 * Eigen::MatrixXd::Identity(c_.rows(), c_.cols()) + cinv;
    return -(lambda_.asDiagonal() * inner).trace() - m_.dot(lambda_.asDiagonal() * m_);
}

}  // namespace kawasaki
