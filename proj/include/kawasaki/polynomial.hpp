#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace kawasaki {

/// Dense polynomial of degree < Poly::capacity, coefficients in increasing order.
struct Poly {
    static constexpr int capacity = 10;
    std::array<double, capacity> c{};

    Poly() = default;
    Poly(std::initializer_list<double> coeffs);

    int degree() const;
    double operator()(double t) const;
    Poly derivative() const;
    /// Antiderivative vanishing at t = 0.
    Poly antiderivative() const;
    /// q(t) = p(t + t0).
    Poly shifted(double t0) const;
    /// q(t) = p(s * t).
    Poly scaled_argument(double s) const;
    /// Integral over [0, h].
    double integral(double h) const;

    Poly& operator+=(const Poly& other);
    Poly& operator-=(const Poly& other);
    Poly& operator*=(double s);
};

Poly operator+(Poly a, const Poly& b);
Poly operator-(Poly a, const Poly& b);
Poly operator*(Poly a, double s);
Poly operator*(double s, Poly a);
Poly operator*(const Poly& a, const Poly& b);

/// Periodic piecewise polynomial on the torus [0, 1). Piece k lives on
/// [breaks[k], breaks[k+1]) and is stored in the local variable t = θ - breaks[k].
class PiecewisePolynomial {
public:
    PiecewisePolynomial() = default;
    PiecewisePolynomial(std::vector<double> breaks, std::vector<Poly> pieces);

    /// Pieces on the uniform mesh {k / n}.
    static PiecewisePolynomial uniform(std::vector<Poly> pieces);
    /// Step function with value values[k] on [k/n, (k+1)/n).
    static PiecewisePolynomial step(std::span<const double> values);
    /// Periodic C^1 cubic Hermite interpolant of nodal values at θ_g = g/G, with
    /// nodal slopes from the fourth-order central difference.
    static PiecewisePolynomial periodic_cubic_interpolant(std::span<const double> nodal_values);

    std::size_t size() const { return pieces_.size(); }
    const std::vector<double>& breaks() const { return breaks_; }
    const Poly& piece(std::size_t k) const { return pieces_[k]; }
    double width(std::size_t k) const { return breaks_[k + 1] - breaks_[k]; }

    double operator()(double theta) const;
    double integral() const;
    double squared_l2() const;
    PiecewisePolynomial derivative() const;
    /// The mean-zero periodic antiderivative w (w' = f, ∫w = 0). Throws
    /// PreconditionError when ∫f is not zero to within round-off.
    PiecewisePolynomial mean_zero_antiderivative() const;
    /// Re-express on a finer mesh; `breaks` must contain every current break.
    PiecewisePolynomial refined(std::span<const double> breaks) const;

    PiecewisePolynomial& operator*=(double s);

private:
    std::vector<double> breaks_;
    std::vector<Poly> pieces_;
};

/// Sorted union of two break sets, merging points closer than 1e-12.
std::vector<double> merge_breaks(std::span<const double> a, std::span<const double> b);

PiecewisePolynomial operator+(const PiecewisePolynomial& a, const PiecewisePolynomial& b);
PiecewisePolynomial operator-(const PiecewisePolynomial& a, const PiecewisePolynomial& b);
PiecewisePolynomial operator*(double s, PiecewisePolynomial a);

/// ∫ a b dθ on the common refinement.
double inner_product(const PiecewisePolynomial& a, const PiecewisePolynomial& b);

}  // namespace kawasaki
