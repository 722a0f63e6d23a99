#pragma once

#include "kawasaki/polynomial.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace kawasaki {

/// Lattice size N, spline piece count M and block size K with N = K * M.
class MultiscaleGrid {
public:
    static constexpr int default_k_min = 4;

    /// Throws ConfigError unless N = K * M and K >= k_min.
    MultiscaleGrid(int n_sites, int n_pieces, int k_min = default_k_min);

    static MultiscaleGrid from_blocks(int n_pieces, int block_size, int k_min = default_k_min) {
        return MultiscaleGrid(n_pieces * block_size, n_pieces, k_min);
    }

    int sites() const { return n_; }
    int pieces() const { return m_; }
    int block() const { return k_; }

    friend bool operator==(const MultiscaleGrid&, const MultiscaleGrid&) = default;

private:
    int n_;
    int m_;
    int k_;
};

/// N real spins with zero mean, read as a step function on [0, 1).
/// Construction re-centres the input to mean zero.
class SpinConfiguration {
public:
    SpinConfiguration() = default;
    explicit SpinConfiguration(Eigen::VectorXd values);
    explicit SpinConfiguration(std::span<const double> values);

    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
    const Eigen::VectorXd& values() const { return values_; }
    double operator[](std::size_t i) const { return values_(static_cast<Eigen::Index>(i)); }

    PiecewisePolynomial as_piecewise() const;

private:
    Eigen::VectorXd values_;
};

/// x_j for θ in [(j-1)/N, j/N).
double step_function_view(const SpinConfiguration& x, double theta);

/// Global-coordinate form y(θ) = alpha θ² + beta θ + gamma of one spline piece.
struct PieceCoefficients {
    double alpha;
    double beta;
    double gamma;
};

/// Mean-zero C¹ periodic quadratic spline with M pieces, stored through its
/// B-spline coefficients (y = Σ_j c_j B_j). Construction re-centres Σ c_j to 0.
class SplineField {
public:
    SplineField() = default;
    explicit SplineField(Eigen::VectorXd bspline_coeffs);

    static SplineField zero(int n_pieces) { return SplineField(Eigen::VectorXd::Zero(n_pieces)); }

    int pieces() const { return static_cast<int>(coeffs_.size()); }
    const Eigen::VectorXd& coeffs() const { return coeffs_; }

    /// Piece p (0-based) in the local variable s = Mθ - p ∈ [0, 1).
    Poly local_piece(int p) const;
    /// Piece p (0-based) in global θ, as used by the closed-form lattice formulas.
    PieceCoefficients piece_coeffs(int p) const;
    std::vector<PieceCoefficients> all_piece_coeffs() const;

    double operator()(double theta) const;
    PiecewisePolynomial as_piecewise() const;

    friend SplineField operator+(const SplineField& a, const SplineField& b);
    friend SplineField operator-(const SplineField& a, const SplineField& b);
    friend SplineField operator*(double s, const SplineField& a);

private:
    Eigen::VectorXd coeffs_;
};

/// Local pieces of the periodised quadratic B-spline centred on piece k:
/// on piece k it is the middle arc, on piece k+1 the rising arc, on piece k-1
/// the falling arc (in s ∈ [0, 1)).
Poly bspline_rising_arc();
Poly bspline_middle_arc();
Poly bspline_falling_arc();

/// Bounded perturbation δψ with bounded second derivative.
struct Perturbation {
    enum class Kind { zero, cosine, custom };

    Kind kind = Kind::zero;
    std::string name = "gaussian";
    // cosine: beta * cos(omega * x + phase)
    double beta = 0.0;
    double omega = 1.0;
    double phase = 0.0;
    // custom
    std::function<double(double)> value;
    std::function<double(double)> first;
    std::function<double(double)> second;
    /// Declared bounds ‖δψ‖∞ and ‖δψ''‖∞.
    double sup_bound = 0.0;
    double second_derivative_bound = 0.0;

    double eval(double x, int order) const;
    bool is_zero() const { return kind == Kind::zero; }
};

Perturbation gaussian_perturbation();
Perturbation cosine_perturbation(double beta, double omega = 1.0, double phase = 0.0);
Perturbation custom_perturbation(std::string name, std::function<double(double)> value,
                                 std::function<double(double)> first, std::function<double(double)> second,
                                 double sup_bound, double second_derivative_bound);

/// ψ(x) = x²/2 + a x + δψ(x).
class SingleSitePotential {
public:
    SingleSitePotential() = default;
    SingleSitePotential(double tilt, Perturbation perturbation);

    double tilt() const { return a_; }
    const Perturbation& perturbation() const { return delta_; }
    bool is_gaussian() const { return delta_.is_zero() && a_ == 0.0; }
    /// 1 + ‖δψ''‖∞: Lipschitz constant of ψ'.
    double stiffness() const { return 1.0 + delta_.second_derivative_bound; }

    double psi(double x) const;
    double psi_prime(double x) const;
    double psi_second(double x) const;

private:
    double a_ = 0.0;
    Perturbation delta_ = gaussian_perturbation();
};

/// ψ, ψ' or ψ'' at x.
double psi_eval(const SingleSitePotential& pot, double x, int order);

struct TiltOptions {
    std::size_t hermite_nodes = 200;
    double tolerance = 1e-12;
    int max_iterations = 200;
};

/// Chooses the tilt a so that the single-site law e^{-ψ} has mean zero.
SingleSitePotential normalize_tilt(const Perturbation& delta, const TiltOptions& options = {});

/// Moments of the tilted single-site law ∝ exp(σx - ψ(x)).
struct TiltedMoments {
    double log_partition;  // Λ(σ) = log ∫ exp(σx - ψ(x)) dx
    double mean;           // Λ'(σ)
    double variance;       // Λ''(σ)
};

/// Gauss–Hermite integration against the single-site measure. The Gaussian
/// part of ψ is absorbed into the weight, so only e^{-δψ} is sampled.
class SingleSiteMeasure {
public:
    explicit SingleSiteMeasure(SingleSitePotential pot, std::size_t hermite_nodes = 200);

    const SingleSitePotential& potential() const { return pot_; }
    TiltedMoments tilted(double sigma) const;
    /// E[g(x)] under e^{-ψ}/Z.
    double expectation(const std::function<double(double)>& g) const;

private:
    SingleSitePotential pot_;
    const std::vector<double>* nodes_;
    const std::vector<double>* weights_;
};

}  // namespace kawasaki
