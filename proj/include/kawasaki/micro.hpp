#pragma once

#include "kawasaki/operators.hpp"

#include <boost/random/normal_distribution.hpp>

#include <cstdint>
#include <random>

namespace kawasaki {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream index), seeded through splitmix64.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);
std::uint64_t splitmix64(std::uint64_t& state);

/// Standard normal draws; boost's ziggurat gives the same sequence on every platform.
class NormalSource {
public:
    double operator()(Rng& rng) { return dist_(rng); }
    void fill(Rng& rng, Eigen::VectorXd& out) {
        for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = dist_(rng);
    }

private:
    boost::random::normal_distribution<double> dist_{0.0, 1.0};
};

double hamiltonian(const SingleSitePotential& pot, const SpinConfiguration& x);
double hamiltonian(const SingleSitePotential& pot, const Eigen::VectorXd& x);
Eigen::VectorXd grad_hamiltonian(const SingleSitePotential& pot, const SpinConfiguration& x);
void grad_hamiltonian_inplace(const SingleSitePotential& pot, const Eigen::VectorXd& x, Eigen::VectorXd& out);

struct KawasakiState {
    Eigen::VectorXd x;  // kept mean-zero by every step
    double t = 0.0;
    Rng rng;
    std::uint64_t steps = 0;

    SpinConfiguration configuration() const { return SpinConfiguration(x); }
};

KawasakiState make_kawasaki_state(const SpinConfiguration& x0, std::uint64_t seed, std::uint64_t stream);

/// Largest admissible Euler–Maruyama step, factor / (4 N² Λ_ψ).
double kawasaki_dt_cap(const MultiscaleGrid& grid, const SingleSitePotential& pot, double factor = 1.0);

struct KawasakiOptions {
    bool noise = true;
};

/// One Euler–Maruyama step X ← X − A∇H(X) dt + √(2dt) Dᵀξ, (Dᵀξ)_j = N(ξ_j − ξ_{j+1}).
KawasakiState kawasaki_step(const SingleSitePotential& pot, const MultiscaleGrid& grid, KawasakiState state,
                            double dt, const KawasakiOptions& options = {});

/// In-place multi-step driver with reusable scratch; same update as kawasaki_step.
class KawasakiIntegrator {
public:
    KawasakiIntegrator(const SingleSitePotential& pot, const MultiscaleGrid& grid, double dt,
                       KawasakiOptions options = {});

    void advance(KawasakiState& state, std::uint64_t n_steps);
    double dt() const { return dt_; }

private:
    const SingleSitePotential* pot_;
    MultiscaleGrid grid_;
    double dt_;
    KawasakiOptions options_;
    NormalSource normal_;
    Eigen::VectorXd grad_;
    Eigen::VectorXd drift_;
    Eigen::VectorXd xi_;
};

struct GibbsSample {
    SpinConfiguration x;
    /// False when the product-plus-projection initializer was used.
    bool exact = true;
    double acceptance = 1.0;
};

/// Sample of μ on X_N: exact in the Gaussian case, otherwise i.i.d. rejection
/// samples from e^{−ψ} projected to mean zero.
GibbsSample sample_gibbs(const SingleSitePotential& pot, const MultiscaleGrid& grid, Rng& rng);
double sample_single_site(const SingleSitePotential& pot, Rng& rng, NormalSource& normal, std::uint64_t& attempts);

struct FiberOptions {
    std::uint64_t burn_in = 400;
    std::uint64_t samples = 4000;
    double dt = 0.05;
    std::uint64_t batches = 20;
};

/// Unadjusted Langevin chain restricted to the fiber {Px = y}. Returns the last state.
SpinConfiguration sample_fiber(const SingleSitePotential& pot, const OperatorCache& cache, const SplineField& y,
                               std::uint64_t n_steps, double dt_f, Rng& rng);

struct FiberAverage {
    Eigen::VectorXd mean;            // E_fiber[∇H]
    Eigen::VectorXd standard_error;  // batch-means standard error per site
    Eigen::VectorXd mean_x;          // E_fiber[x]
    double max_fiber_drift = 0.0;
};

FiberAverage fiber_average_grad(const SingleSitePotential& pot, const OperatorCache& cache, const SplineField& y,
                                const FiberOptions& options, Rng& rng);

struct EntropyBound {
    double total;     // Ent(law | μ)
    double per_site;  // C_Ent = total / N
};

/// Relative entropy of the law of s + ξ (ξ ~ product e^{−ψ}) with respect to the
/// unshifted product law.
EntropyBound entropy_bound_product_init(const SingleSitePotential& pot, const MultiscaleGrid& grid,
                                        const Eigen::VectorXd& shift);
EntropyBound entropy_bound_product_init(const SingleSitePotential& pot, const MultiscaleGrid& grid,
                                        const SplineField& profile);

/// Gaussian law N(m, C) of the linear Kawasaki SDE, propagated exactly over steps of
/// length dt. KL is taken against μ = N(0, Π) on the mean-zero hyperplane.
class GaussianLawFlow {
public:
    GaussianLawFlow(const MultiscaleGrid& grid, Eigen::VectorXd mean, Eigen::MatrixXd covariance);

    void step(double dt);
    double kl() const;
    /// −tr(A(C − 2Π + C⁺)) − mᵀAm.
    double kl_rate() const;
    const Eigen::VectorXd& mean() const { return m_; }
    const Eigen::MatrixXd& covariance() const { return c_; }

private:
    Eigen::MatrixXd a_;
    Eigen::MatrixXd basis_;  // orthonormal basis of the mean-zero hyperplane (eigenvectors of A)
    Eigen::VectorXd lambda_;
    Eigen::VectorXd m_;
    Eigen::MatrixXd c_;
};

}  // namespace kawasaki
