#pragma once

#include "kawasaki/core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <functional>
#include <utility>

namespace kawasaki {

struct AssemblyOptions {
    /// Smallest admissible eigenvalue of PNP^t; below it the lattice is too coarse
    /// for the spline space and assembly refuses.
    double pnpt_floor = 0.25;
    /// Gauss–Legendre points per spline piece for projecting non-polynomial functions.
    std::size_t projection_points = 16;
};

/// Assembled operators for one (N, M, K) triple. Spline operators act on
/// B-spline coefficient vectors; the lattice side works with length-N vectors.
///
/// With G the Gram matrix, L the N×M lift matrix (column k = NP^t B_k) and A the
/// periodic lattice Laplacian:
///   PNP^t ↦ G⁻¹ (LᵀL / N),   Ā = PANP^t ↦ G⁻¹ (LᵀAL / N).
/// Immutable after assembly.
class OperatorCache {
public:
    static OperatorCache assemble(const MultiscaleGrid& grid, const AssemblyOptions& options = {});

    const MultiscaleGrid& grid() const { return grid_; }
    const AssemblyOptions& options() const { return options_; }

    const Eigen::MatrixXd& gram() const { return gram_; }
    const Eigen::MatrixXd& lift() const { return lift_; }
    /// LᵀAL / N; the Ā quadratic form ⟨ỹ, Ā y⟩ = c̃ᵀ S c.
    const Eigen::MatrixXd& stiffness() const { return stiffness_; }
    /// LᵀL / N; the PNP^t quadratic form.
    const Eigen::MatrixXd& lifted_mass() const { return lifted_mass_; }
    /// Matrices of PNP^t and Ā in B-spline coordinates.
    Eigen::MatrixXd pnpt_matrix() const;
    Eigen::MatrixXd abar_matrix() const;

    /// ‖PNP^t − id‖ in the L² operator norm, measured at assembly.
    double defect() const { return defect_; }
    double pnpt_min_eigenvalue() const { return pnpt_min_; }
    /// Extreme eigenvalues of Ā on the mean-zero spline space.
    double abar_min_eigenvalue() const { return abar_min_; }
    double abar_max_eigenvalue() const { return abar_max_; }

    Eigen::VectorXd gram_solve(const Eigen::VectorXd& rhs) const { return gram_llt_.solve(rhs); }
    /// Coefficients of (PNP^t)⁻¹ y.
    Eigen::VectorXd pnpt_inverse(const Eigen::VectorXd& coeffs) const;
    /// Coefficients of Ā⁻¹ y for mean-zero y.
    Eigen::VectorXd abar_inverse(const Eigen::VectorXd& coeffs) const;
    Eigen::VectorXd abar_apply(const Eigen::VectorXd& coeffs) const;

    /// ⟨y, z⟩_{L²} from coefficients.
    double l2_inner(const Eigen::VectorXd& c1, const Eigen::VectorXd& c2) const { return c1.dot(gram_ * c2); }

private:
    OperatorCache() = default;

    MultiscaleGrid grid_{1, 1, 1};
    AssemblyOptions options_;
    Eigen::MatrixXd gram_;
    Eigen::MatrixXd lift_;
    Eigen::MatrixXd stiffness_;
    Eigen::MatrixXd lifted_mass_;
    Eigen::LLT<Eigen::MatrixXd> gram_llt_;
    Eigen::LLT<Eigen::MatrixXd> lifted_mass_llt_;
    Eigen::LLT<Eigen::MatrixXd> stiffness_deflated_llt_;
    double defect_ = 0.0;
    double pnpt_min_ = 0.0;
    double abar_min_ = 0.0;
    double abar_max_ = 0.0;
};

/// (Ax)_i = N²(−x_{i−1} + 2x_i − x_{i+1}), periodic.
SpinConfiguration apply_A(const MultiscaleGrid& grid, const SpinConfiguration& x);
void apply_A_inplace(int n_sites, const double* x, double* out);

/// B_j(θ) for 1-based j, periodised on the torus.
double bspline_eval(int n_pieces, int j, double theta);

/// Closed-form Gram matrix (1/M)·{11/20, 13/60, 1/120} on the five circulant bands.
/// Requires M >= 5.
Eigen::MatrixXd gram_matrix(int n_pieces);
/// Gram matrix by exact per-piece polynomial integration (any M >= 1).
Eigen::MatrixXd gram_matrix_exact(int n_pieces);

/// L²-orthogonal projection onto the mean-zero spline space.
SplineField project_P(const OperatorCache& cache, const SpinConfiguration& x);
SplineField project_P(const OperatorCache& cache, const SplineField& y);
SplineField project_P(const OperatorCache& cache, const PiecewisePolynomial& f);
/// Projection of a general function, integrated with Gauss–Legendre per piece.
SplineField project_function(const OperatorCache& cache, const std::function<double(double)>& f);
/// P applied to a raw lattice vector (no re-centring of the input required).
SplineField project_lattice(const OperatorCache& cache, const Eigen::VectorXd& x);

/// (NP^t y)_i = N ∫_{cell i} y dθ.
SpinConfiguration lift_NPt(const OperatorCache& cache, const SplineField& y);

/// A ∘ NP^t from the piece curvatures alone.
SpinConfiguration apply_ANPt(const MultiscaleGrid& grid, const SplineField& y);

/// Matrix of Ā on B-spline coefficients (G⁻¹ LᵀAL / N).
Eigen::MatrixXd assemble_abar(const OperatorCache& cache);

struct FiberDecomposition {
    SpinConfiguration parallel;       // x_∥ ∈ ker P
    SpinConfiguration perpendicular;  // x_⊥ = NP^t (PNP^t)⁻¹ P x
};

FiberDecomposition fiber_decompose(const OperatorCache& cache, const SpinConfiguration& x);
/// The fiber foot point x_⊥(y) = NP^t (PNP^t)⁻¹ y, the unique point of range(NP^t) with P x = y.
Eigen::VectorXd fiber_foot_point(const OperatorCache& cache, const SplineField& y);
/// Euclidean projection of a lattice vector onto ker P ∩ X_N.
Eigen::VectorXd project_onto_fiber_tangent(const OperatorCache& cache, const Eigen::VectorXd& v);

/// A NP^t Ā⁻¹ y.
SpinConfiguration apply_ANPt_abar_inv(const OperatorCache& cache, const SplineField& y);

/// sup_y |A NP^t Ā⁻¹ y|_{L²} / |y|_{L²} over the mean-zero spline space (the reciprocal of σ).
double anpt_abar_inv_norm(const OperatorCache& cache);

}  // namespace kawasaki
