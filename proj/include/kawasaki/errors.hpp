#pragma once

#include <stdexcept>
#include <string>

namespace kawasaki {

/// Base class for all errors raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad experiment/potential/grid configuration. The CLI maps this to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A documented precondition of an operation was violated by the caller.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Operator assembly produced something that violates an invariant
/// (indefinite Ā, ill-conditioned PNP^t, ...).
class AssemblyError : public Error {
public:
    using Error::Error;
};

/// Iterative numerics failed: root finding stalled, a state became
/// non-finite, an integrator was driven past its stability region.
class NumericalError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class StiffnessError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Monte Carlo estimate did not reach the requested relative precision.
class StatisticalPrecisionError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

}  // namespace kawasaki
