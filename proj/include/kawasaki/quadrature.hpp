#pragma once

#include <cstddef>
#include <vector>

namespace kawasaki {

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// Gauss–Hermite rule for the weight exp(-x^2/2) on the real line
/// (probabilists' convention). The weights sum to sqrt(2*pi).
/// Rules are computed once per node count and cached.
const QuadratureRule& gauss_hermite(std::size_t n);

/// Gauss–Legendre rule on [0, 1]; weights sum to 1.
const QuadratureRule& gauss_legendre(std::size_t n);

}  // namespace kawasaki
