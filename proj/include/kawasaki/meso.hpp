#pragma once

#include "kawasaki/macro.hpp"
#include "kawasaki/micro.hpp"
#include "kawasaki/operators.hpp"

#include <memory>
#include <string>
#include <vector>

namespace kawasaki {

enum class DriftKind { gaussian_exact, mcmc, surrogate_phi };

DriftKind parse_drift_kind(const std::string& name);
std::string to_string(DriftKind kind);

struct MesoDriftMode {
    DriftKind kind = DriftKind::gaussian_exact;
    // mcmc
    FiberOptions fiber;
    /// Largest admissible batch-means standard error, relative to 1 + ‖E∇H‖∞.
    double max_relative_error = 0.05;
    std::uint64_t seed = 0;
    // surrogate_phi
    std::shared_ptr<const FreeEnergyTable> table;

    static MesoDriftMode gaussian() { return {}; }
    static MesoDriftMode surrogate(std::shared_ptr<const FreeEnergyTable> table);
    static MesoDriftMode monte_carlo(FiberOptions fiber, std::uint64_t seed, double max_relative_error = 0.05);
};

/// Throws PreconditionError when the mode cannot be used with the potential.
void validate_drift_mode(const MesoDriftMode& mode, const SingleSitePotential& pot);

struct HbarGradient {
    DriftKind kind;
    /// ∇H̄(y) for gaussian_exact and surrogate_phi.
    SplineField spline;
    /// mcmc: raw fiber average E[∇H | Px = y] and its standard error.
    Eigen::VectorXd fiber_mean;
    Eigen::VectorXd fiber_standard_error;
};

/// gaussian_exact: (PNP^t)⁻¹ y.  surrogate_phi: P(φ'∘y).  mcmc: E_fiber[∇H].
/// The mcmc estimator draws from `rng` (a stream derived from mode.seed when null).
HbarGradient grad_hbar(const OperatorCache& cache, const SingleSitePotential& pot, const MesoDriftMode& mode,
                       const SplineField& y, Rng* rng = nullptr);

/// −Ā∇H̄(η), or −P A E_fiber[∇H] in mcmc mode.
SplineField meso_rhs(const OperatorCache& cache, const SingleSitePotential& pot, const MesoDriftMode& mode,
                     const SplineField& eta, Rng* rng = nullptr);

/// Largest eigenvalue of the drift Jacobian used for the RK4 step cap.
double meso_stiffness(const OperatorCache& cache, const SingleSitePotential& pot, const MesoDriftMode& mode);

struct MesoOptions {
    /// RK4 is stable on [−2.78, 0]; dt · λ_max must stay below this.
    double stability_factor = 2.5;
};

struct MesoTrajectory {
    std::vector<double> times;
    std::vector<SplineField> snapshots;
    std::size_t steps = 0;
    double dt = 0.0;
};

/// Classical RK4 on B-spline coefficients, landing on every snapshot time.
MesoTrajectory meso_integrate(const OperatorCache& cache, const SingleSitePotential& pot, const MesoDriftMode& mode,
                              const SplineField& eta0, double T, double dt_meso,
                              const std::vector<double>& snapshot_times, const MesoOptions& options = {});

/// f : X_N → ℝ with its Euclidean gradient.
struct TestFunction {
    std::string name;
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
};

TestFunction constant_test_function(double c = 1.0);
TestFunction linear_test_function(Eigen::VectorXd v);
TestFunction site_square_test_function(int site);

struct GradientIdentityOptions {
    std::size_t nodes_per_dimension = 16;
    double fd_step = 1e-3;
};

struct GradientIdentityResult {
    bool skipped = false;
    std::string skip_reason;
    Eigen::VectorXd lhs;             // ∫∇f μ(dx|y)
    Eigen::VectorXd pt_grad_fbar;    // P^t ∇f̄(y)
    Eigen::VectorXd covariance;      // cov(f, ∇H)
    double residual = 0.0;           // max |lhs − pt_grad_fbar − covariance|
};

/// Evaluates both sides of ∫∇f μ(dx|y) = P^t∇f̄(y) + cov(f, ∇H) by tensor Gauss–Hermite
/// quadrature over the fiber. Meant for tiny grids (fiber dimension ≲ 6).
GradientIdentityResult check_gradient_identity(const SingleSitePotential& pot, const MultiscaleGrid& tiny_grid,
                                               const TestFunction& f, const SplineField& y,
                                               const GradientIdentityOptions& options = {});

}  // namespace kawasaki
