#include "kawasaki/norms.hpp"

#include "kawasaki/errors.hpp"

#include <algorithm>
#include <cmath>

namespace kawasaki {

double l2_norm(const SpinConfiguration& x) {
    if (x.size() == 0) return 0.0;
    return std::sqrt(x.values().squaredNorm() / static_cast<double>(x.size()));
}

double l2_norm(const SplineField& y) { return l2_norm(y.as_piecewise()); }

double l2_norm(const PiecewisePolynomial& f) { return std::sqrt(std::max(0.0, f.squared_l2())); }

double h1_seminorm(const SplineField& y) { return l2_norm(y.as_piecewise().derivative()); }

double h1_seminorm(const SpinConfiguration&) {
    throw PreconditionError("h1_seminorm is undefined for step functions; use dirichlet_form");
}

double hneg1_norm(const PiecewisePolynomial& f) { return l2_norm(f.mean_zero_antiderivative()); }

double hneg1_norm(const SpinConfiguration& x) {
    if (x.size() == 0) return 0.0;
    return hneg1_norm(x.as_piecewise());
}

double hneg1_norm(const SplineField& y) { return hneg1_norm(y.as_piecewise()); }

double l2_distance(const SpinConfiguration& x, const SplineField& y) {
    return l2_norm(x.as_piecewise() - y.as_piecewise());
}

double hneg1_distance(const SpinConfiguration& x, const SplineField& y) {
    return hneg1_norm(x.as_piecewise() - y.as_piecewise());
}

double hneg1_distance(const SpinConfiguration& x, const PiecewisePolynomial& f) {
    return hneg1_norm(x.as_piecewise() - f);
}

double hneg1_distance(const SplineField& y, const PiecewisePolynomial& f) {
    return hneg1_norm(y.as_piecewise() - f);
}

double dirichlet_form(const Eigen::VectorXd& x) {
    const Eigen::Index n = x.size();
    if (n == 0) return 0.0;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = x(i) - x(i == 0 ? n - 1 : i - 1);
        acc += d * d;
    }
    return static_cast<double>(n) * static_cast<double>(n) * acc;
}

double dirichlet_form(const MultiscaleGrid& grid, const SpinConfiguration& x) {
    if (static_cast<int>(x.size()) != grid.sites()) {
        throw PreconditionError("dirichlet_form: configuration length does not match N");
    }
    return dirichlet_form(x.values());
}

double abar_norm(const OperatorCache& cache, const SplineField& y, int sign) {
    if (sign != 1 && sign != -1) {
        throw PreconditionError("abar_norm: sign must be +1 or -1");
    }
    if (y.pieces() != cache.grid().pieces()) {
        throw PreconditionError("abar_norm: spline piece count does not match M");
    }
    const Eigen::VectorXd& c = y.coeffs();
    double q;
    if (sign > 0) {
        q = c.dot(cache.stiffness() * c);
    } else {
        const Eigen::VectorXd d = cache.abar_inverse(c);
        if (!d.allFinite()) throw NumericalError("abar_norm: Ā solve produced non-finite values");
        q = d.dot(cache.gram() * c);
    }
    return std::sqrt(std::max(0.0, q));
}

}  // namespace kawasaki
