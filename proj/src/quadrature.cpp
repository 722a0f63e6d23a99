#include "kawasaki/quadrature.hpp"

#include "kawasaki/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

namespace kawasaki {

namespace {

// Golub–Welsch: nodes are the eigenvalues of the symmetric Jacobi matrix of the
// orthogonal polynomial family, weights are mu0 * (first eigenvector component)^2.
QuadratureRule golub_welsch(const Eigen::VectorXd& diag, const Eigen::VectorXd& offdiag, double mu0) {
    const auto n = diag.size();
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        jacobi(i, i) = diag(i);
        if (i + 1 < n) {
            jacobi(i, i + 1) = offdiag(i);
            jacobi(i + 1, i) = offdiag(i);
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("Golub-Welsch eigensolver failed");
    }
    QuadratureRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) {
        const double v0 = solver.eigenvectors()(0, k);
        rule.nodes[static_cast<std::size_t>(k)] = solver.eigenvalues()(k);
        rule.weights[static_cast<std::size_t>(k)] = mu0 * v0 * v0;
    }
    return rule;
}

template <class Builder>
const QuadratureRule& cached(std::map<std::size_t, QuadratureRule>& cache, std::mutex& mutex, std::size_t n,
                             Builder build) {
    std::lock_guard lock(mutex);
    auto it = cache.find(n);
    if (it == cache.end()) {
        it = cache.emplace(n, build(n)).first;
    }
    return it->second;
}

}  // namespace

const QuadratureRule& gauss_hermite(std::size_t n) {
    static std::map<std::size_t, QuadratureRule> cache;
    static std::mutex mutex;
    if (n == 0) {
        throw PreconditionError("Gauss-Hermite rule needs at least one node");
    }
    return cached(cache, mutex, n, [](std::size_t count) {
        const auto m = static_cast<Eigen::Index>(count);
        Eigen::VectorXd diag = Eigen::VectorXd::Zero(m);
        Eigen::VectorXd off(std::max<Eigen::Index>(m - 1, 0));
        // He_{k+1} = x He_k - k He_{k-1}
        for (Eigen::Index k = 0; k + 1 < m; ++k) {
            off(k) = std::sqrt(static_cast<double>(k + 1));
        }
        return golub_welsch(diag, off, std::sqrt(2.0 * std::numbers::pi));
    });
}

const QuadratureRule& gauss_legendre(std::size_t n) {
    static std::map<std::size_t, QuadratureRule> cache;
    static std::mutex mutex;
    if (n == 0) {
        throw PreconditionError("Gauss-Legendre rule needs at least one node");
    }
    return cached(cache, mutex, n, [](std::size_t count) {
        const auto m = static_cast<Eigen::Index>(count);
        Eigen::VectorXd diag = Eigen::VectorXd::Zero(m);
        Eigen::VectorXd off(std::max<Eigen::Index>(m - 1, 0));
        for (Eigen::Index k = 0; k + 1 < m; ++k) {
            const double kk = static_cast<double>(k + 1);
            off(k) = kk / std::sqrt(4.0 * kk * kk - 1.0);
        }
        QuadratureRule rule = golub_welsch(diag, off, 2.0);
        // map [-1, 1] -> [0, 1]
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            rule.nodes[i] = 0.5 * (rule.nodes[i] + 1.0);
            rule.weights[i] *= 0.5;
        }
        return rule;
    });
}

}  // namespace kawasaki
