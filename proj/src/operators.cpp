#include "kawasaki/operators.hpp"

#include "kawasaki/errors.hpp"
#include "kawasaki/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace kawasaki {

namespace {

struct ArcTouch {
    int basis;  // 0-based basis index
    Poly arc;   // restriction to the piece in s ∈ [0, 1)
};

// The three periodised B-spline arcs living on piece p.
std::array<ArcTouch, 3> arcs_on_piece(int p, int m) {
    return {ArcTouch{p, bspline_middle_arc()}, ArcTouch{(p + 1) % m, bspline_rising_arc()},
            ArcTouch{(p - 1 + m) % m, bspline_falling_arc()}};
}

Eigen::MatrixXd exact_lift(const MultiscaleGrid& grid) {
    const int n = grid.sites();
    const int m = grid.pieces();
    const int k = grid.block();
    Eigen::MatrixXd lift = Eigen::MatrixXd::Zero(n, m);
    for (int p = 0; p < m; ++p) {
        for (const auto& touch : arcs_on_piece(p, m)) {
            const Poly anti = touch.arc.antiderivative();
            for (int r = 0; r < k; ++r) {
                const double lo = static_cast<double>(r) / k;
                const double hi = static_cast<double>(r + 1) / k;
                lift(p * k + r, touch.basis) += k * (anti(hi) - anti(lo));
            }
        }
    }
    return lift;
}

// max |λ| of the pencil (B, G) with G SPD.
Eigen::VectorXd pencil_eigenvalues(const Eigen::MatrixXd& b, const Eigen::MatrixXd& g) {
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(b, g, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) {
        throw AssemblyError("generalized eigensolver failed during operator assembly");
    }
    return solver.eigenvalues();
}

}  // namespace

OperatorCache OperatorCache::assemble(const MultiscaleGrid& grid, const AssemblyOptions& options) {
    if (grid.pieces() < 2) {
        throw ConfigError("the mean-zero spline space needs M >= 2");
    }
    if (grid.block() < 2) {
        throw ConfigError("operator assembly needs K >= 2");
    }
    OperatorCache cache;
    cache.grid_ = grid;
    cache.options_ = options;
    const int n = grid.sites();
    const int m = grid.pieces();

    cache.gram_ = gram_matrix_exact(m);
    if (m >= 5) {
        const double gap = (cache.gram_ - gram_matrix(m)).cwiseAbs().maxCoeff();
        if (gap > 1e-12) {
            throw AssemblyError("Gram matrix closed form disagrees with exact integration by " + std::to_string(gap));
        }
    }
    cache.gram_llt_.compute(cache.gram_);
    if (cache.gram_llt_.info() != Eigen::Success) {
        throw AssemblyError("Gram matrix is not positive definite");
    }

    cache.lift_ = exact_lift(grid);
    cache.lifted_mass_ = cache.lift_.transpose() * cache.lift_ / static_cast<double>(n);

    // A L column-wise from the closed-form curvature rule.
    Eigen::MatrixXd a_lift(n, m);
    for (int k = 0; k < m; ++k) {
        Eigen::VectorXd unit = Eigen::VectorXd::Zero(m);
        unit(k) = 1.0;
        // Re-centring shifts B_k by a constant, which leaves every α unchanged.
        a_lift.col(k) = apply_ANPt(grid, SplineField(unit)).values();
    }
    cache.stiffness_ = cache.lift_.transpose() * a_lift / static_cast<double>(n);
    cache.stiffness_ = 0.5 * (cache.stiffness_ + cache.stiffness_.transpose()).eval();

    const Eigen::VectorXd pnpt_eigs = pencil_eigenvalues(cache.lifted_mass_, cache.gram_);
    cache.pnpt_min_ = pnpt_eigs.minCoeff();
    cache.defect_ = (pnpt_eigs.array() - 1.0).abs().maxCoeff();
    if (cache.pnpt_min_ < options.pnpt_floor) {
        throw AssemblyError("PNP^t is ill-conditioned at N=" + std::to_string(n) + ", M=" + std::to_string(m) +
                            " (smallest eigenvalue " + std::to_string(cache.pnpt_min_) + ")");
    }
    cache.lifted_mass_llt_.compute(cache.lifted_mass_);

    // Ā has the constants in its kernel; its mean-zero spectrum is the rest.
    const Eigen::VectorXd abar_eigs = pencil_eigenvalues(cache.stiffness_, cache.gram_);
    cache.abar_max_ = abar_eigs.maxCoeff();
    cache.abar_min_ = abar_eigs(1);
    if (std::abs(abar_eigs(0)) > 1e-9 * cache.abar_max_ || !(cache.abar_min_ > 1e-9 * cache.abar_max_)) {
        throw AssemblyError("Ā is not positive definite on the mean-zero spline space");
    }
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);
    const double tau = cache.stiffness_.trace() / m;
    cache.stiffness_deflated_llt_.compute(cache.stiffness_ + tau * ones * ones.transpose());
    if (cache.stiffness_deflated_llt_.info() != Eigen::Success) {
        throw AssemblyError("deflated Ā factorization failed");
    }
    return cache;
}

Eigen::MatrixXd OperatorCache::pnpt_matrix() const { return gram_llt_.solve(lifted_mass_); }

Eigen::MatrixXd OperatorCache::abar_matrix() const { return gram_llt_.solve(stiffness_); }

Eigen::VectorXd OperatorCache::pnpt_inverse(const Eigen::VectorXd& coeffs) const {
    return lifted_mass_llt_.solve(gram_ * coeffs);
}

Eigen::VectorXd OperatorCache::abar_inverse(const Eigen::VectorXd& coeffs) const {
    Eigen::VectorXd rhs = gram_ * coeffs;
    // Σ_j (G c)_j = ∫ y; keep the right-hand side orthogonal to the kernel.
    rhs.array() -= rhs.mean();
    Eigen::VectorXd d = stiffness_deflated_llt_.solve(rhs);
    d.array() -= d.mean();
    return d;
}

Eigen::VectorXd OperatorCache::abar_apply(const Eigen::VectorXd& coeffs) const {
    return gram_llt_.solve(stiffness_ * coeffs);
}

void apply_A_inplace(int n_sites, const double* x, double* out) {
    const double n2 = static_cast<double>(n_sites) * n_sites;
    for (int i = 0; i < n_sites; ++i) {
        const double left = x[i == 0 ? n_sites - 1 : i - 1];
        const double right = x[i == n_sites - 1 ? 0 : i + 1];
        out[i] = n2 * (2.0 * x[i] - left - right);
    }
}

SpinConfiguration apply_A(const MultiscaleGrid& grid, const SpinConfiguration& x) {
    if (static_cast<int>(x.size()) != grid.sites()) {
        throw PreconditionError("apply_A: configuration length does not match N");
    }
    Eigen::VectorXd out(grid.sites());
    apply_A_inplace(grid.sites(), x.values().data(), out.data());
    return SpinConfiguration(std::move(out));
}

double bspline_eval(int n_pieces, int j, double theta) {
    if (j < 1 || j > n_pieces) {
        throw PreconditionError("bspline_eval: index out of range");
    }
    theta -= std::floor(theta);
    int p = static_cast<int>(std::floor(theta * n_pieces));
    if (p >= n_pieces) p = n_pieces - 1;
    const double s = theta * n_pieces - p;
    double value = 0.0;
    for (const auto& touch : arcs_on_piece(p, n_pieces)) {
        if (touch.basis == j - 1) value += touch.arc(s);
    }
    return value;
}

Eigen::MatrixXd gram_matrix(int n_pieces) {
    if (n_pieces < 5) {
        throw PreconditionError("closed-form Gram matrix needs M >= 5 (got M=" + std::to_string(n_pieces) + ")");
    }
    const int m = n_pieces;
    const double inv = 1.0 / m;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, m);
    for (int j = 0; j < m; ++j) {
        g(j, j) = inv * 11.0 / 20.0;
        g(j, (j + 1) % m) = g((j + 1) % m, j) = inv * 13.0 / 60.0;
        g(j, (j + 2) % m) = g((j + 2) % m, j) = inv / 120.0;
    }
    return g;
}

Eigen::MatrixXd gram_matrix_exact(int n_pieces) {
    const int m = n_pieces;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, m);
    for (int p = 0; p < m; ++p) {
        const auto touches = arcs_on_piece(p, m);
        for (const auto& a : touches) {
            for (const auto& b : touches) {
                g(a.basis, b.basis) += (a.arc * b.arc).integral(1.0) / m;
            }
        }
    }
    return g;
}

namespace {
SplineField from_moments(const OperatorCache& cache, const Eigen::VectorXd& moments) {
    // SplineField re-centres Σc, i.e. removes the constant component.
    return SplineField(cache.gram_solve(moments));
}
}  // namespace

SplineField project_lattice(const OperatorCache& cache, const Eigen::VectorXd& x) {
    if (x.size() != cache.grid().sites()) {
        throw PreconditionError("project_P: lattice vector length does not match N");
    }
    return from_moments(cache, cache.lift().transpose() * x / static_cast<double>(cache.grid().sites()));
}

SplineField project_P(const OperatorCache& cache, const SpinConfiguration& x) {
    return project_lattice(cache, x.values());
}

SplineField project_P(const OperatorCache& cache, const SplineField& y) {
    return project_P(cache, y.as_piecewise());
}

SplineField project_P(const OperatorCache& cache, const PiecewisePolynomial& f) {
    const int m = cache.grid().pieces();
    std::vector<double> knots(static_cast<std::size_t>(m) + 1);
    for (int p = 0; p <= m; ++p) knots[static_cast<std::size_t>(p)] = static_cast<double>(p) / m;
    const auto breaks = merge_breaks(knots, f.breaks());
    const auto fine = f.refined(breaks);
    Eigen::VectorXd moments = Eigen::VectorXd::Zero(m);
    for (std::size_t q = 0; q < fine.size(); ++q) {
        const double left = breaks[q];
        int p = static_cast<int>(std::floor(left * m + 1e-9));
        p = std::clamp(p, 0, m - 1);
        const double s0 = left * m - p;
        for (const auto& touch : arcs_on_piece(p, m)) {
            const Poly arc_local = touch.arc.shifted(s0).scaled_argument(m);
            moments(touch.basis) += (fine.piece(q) * arc_local).integral(fine.width(q));
        }
    }
    return from_moments(cache, moments);
}

SplineField project_function(const OperatorCache& cache, const std::function<double(double)>& f) {
    const int m = cache.grid().pieces();
    const auto& rule = gauss_legendre(cache.options().projection_points);
    Eigen::VectorXd moments = Eigen::VectorXd::Zero(m);
    for (int p = 0; p < m; ++p) {
        for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
            const double s = rule.nodes[q];
            const double fv = f((p + s) / m) * rule.weights[q] / m;
            for (const auto& touch : arcs_on_piece(p, m)) moments(touch.basis) += fv * touch.arc(s);
        }
    }
    return from_moments(cache, moments);
}

SpinConfiguration lift_NPt(const OperatorCache& cache, const SplineField& y) {
    if (y.pieces() != cache.grid().pieces()) {
        throw PreconditionError("lift_NPt: spline piece count does not match M");
    }
    return SpinConfiguration(Eigen::VectorXd(cache.lift() * y.coeffs()));
}

SpinConfiguration apply_ANPt(const MultiscaleGrid& grid, const SplineField& y) {
    const int m = grid.pieces();
    const int k = grid.block();
    if (y.pieces() != m) {
        throw PreconditionError("apply_ANPt: spline piece count does not match M");
    }
    std::vector<double> alpha(static_cast<std::size_t>(m));
    for (int p = 0; p < m; ++p) alpha[static_cast<std::size_t>(p)] = y.piece_coeffs(p).alpha;
    Eigen::VectorXd z(grid.sites());
    for (int p = 0; p < m; ++p) {
        const double a = alpha[static_cast<std::size_t>(p)];
        const double prev = alpha[static_cast<std::size_t>((p - 1 + m) % m)];
        const double next = alpha[static_cast<std::size_t>((p + 1) % m)];
        for (int r = 0; r < k; ++r) z(p * k + r) = -2.0 * a;
        z(p * k) += (a - prev) / 3.0;
        z(p * k + k - 1) += (a - next) / 3.0;
    }
    return SpinConfiguration(std::move(z));
}

Eigen::MatrixXd assemble_abar(const OperatorCache& cache) { return cache.abar_matrix(); }

Eigen::VectorXd project_onto_fiber_tangent(const OperatorCache& cache, const Eigen::VectorXd& v) {
    Eigen::VectorXd centred = v.array() - v.mean();
    const double n = cache.grid().sites();
    const Eigen::VectorXd w = cache.lift().transpose() * centred / n;
    centred -= cache.lift() * cache.pnpt_inverse(cache.gram_solve(w));
    return centred;
}

FiberDecomposition fiber_decompose(const OperatorCache& cache, const SpinConfiguration& x) {
    if (static_cast<int>(x.size()) != cache.grid().sites()) {
        throw PreconditionError("fiber_decompose: configuration length does not match N");
    }
    const double n = cache.grid().sites();
    // x_⊥ = L S_P⁻¹ (Lᵀx / N): Euclidean projection onto range(NP^t).
    const Eigen::VectorXd moments = cache.lift().transpose() * x.values() / n;
    const Eigen::VectorXd perp = cache.lift() * cache.pnpt_inverse(cache.gram_solve(moments));
    if (!perp.allFinite()) {
        throw NumericalError("fiber_decompose: PNP^t solve produced non-finite values");
    }
    return {SpinConfiguration(Eigen::VectorXd(x.values() - perp)), SpinConfiguration(perp)};
}

Eigen::VectorXd fiber_foot_point(const OperatorCache& cache, const SplineField& y) {
    return cache.lift() * cache.pnpt_inverse(y.coeffs());
}

SpinConfiguration apply_ANPt_abar_inv(const OperatorCache& cache, const SplineField& y) {
    return apply_ANPt(cache.grid(), SplineField(cache.abar_inverse(y.coeffs())));
}

double anpt_abar_inv_norm(const OperatorCache& cache) {
    const int m = cache.grid().pieces();
    const double n = cache.grid().sites();
    // Columns: A NP^t Ā⁻¹ applied to each B-spline coefficient direction.
    Eigen::MatrixXd image(cache.grid().sites(), m);
    for (int k = 0; k < m; ++k) {
        Eigen::VectorXd unit = Eigen::VectorXd::Zero(m);
        unit(k) = 1.0;
        const Eigen::VectorXd d = cache.abar_inverse(unit);
        image.col(k) = apply_ANPt(cache.grid(), SplineField(d)).values();
    }
    // Restrict to the mean-zero subspace with an explicit basis e_k - e_{k+1}.
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(m, m - 1);
    for (int k = 0; k + 1 < m; ++k) {
        basis(k, k) = 1.0;
        basis(k + 1, k) = -1.0;
    }
    const Eigen::MatrixXd img = image * basis;
    const Eigen::MatrixXd num = img.transpose() * img / n;
    const Eigen::MatrixXd den = basis.transpose() * cache.gram() * basis;
    return std::sqrt(pencil_eigenvalues(num, den).maxCoeff());
}

}  // namespace kawasaki
