#pragma once

#include "kawasaki/operators.hpp"

#include <algorithm>
#include <cmath>

namespace kawasaki {

double l2_norm(const SpinConfiguration& x);
double l2_norm(const SplineField& y);
double l2_norm(const PiecewisePolynomial& f);

/// ‖∂_θ y‖_{L²}. Step functions have no H¹ seminorm; the lattice analogue is dirichlet_form.
double h1_seminorm(const SplineField& y);
[[noreturn]] double h1_seminorm(const SpinConfiguration& x);

/// ‖f‖_{H⁻¹} = ‖w‖_{L²} with w' = f, ∫w = 0, from the exact piecewise antiderivative.
double hneg1_norm(const PiecewisePolynomial& f);
double hneg1_norm(const SpinConfiguration& x);
double hneg1_norm(const SplineField& y);

/// ‖x − y‖ between a step function and a spline, on the common mesh.
double l2_distance(const SpinConfiguration& x, const SplineField& y);
double hneg1_distance(const SpinConfiguration& x, const SplineField& y);
double hneg1_distance(const SpinConfiguration& x, const PiecewisePolynomial& f);
double hneg1_distance(const SplineField& y, const PiecewisePolynomial& f);

/// x·Ax = N² Σ (x_n − x_{n−1})², periodic.
double dirichlet_form(const MultiscaleGrid& grid, const SpinConfiguration& x);
double dirichlet_form(const Eigen::VectorXd& x);

/// sqrt(⟨y, Ā^{±1} y⟩_{L²}).
double abar_norm(const OperatorCache& cache, const SplineField& y, int sign);

/// Borrowed operator cache plus the norm helpers that need it.
class NormWorkspace {
public:
    explicit NormWorkspace(const OperatorCache& cache) : cache_(&cache) {}

    const OperatorCache& cache() const { return *cache_; }
    double abar(const SplineField& y) const { return abar_norm(*cache_, y, +1); }
    double abar_inv(const SplineField& y) const { return abar_norm(*cache_, y, -1); }
    double l2(const SplineField& y) const { return std::sqrt(std::max(0.0, cache_->l2_inner(y.coeffs(), y.coeffs()))); }

private:
    const OperatorCache* cache_;
};

}  // namespace kawasaki
