#include "kawasaki/core.hpp"

#include "kawasaki/errors.hpp"
#include "kawasaki/quadrature.hpp"

#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <string>

namespace kawasaki {

MultiscaleGrid::MultiscaleGrid(int n_sites, int n_pieces, int k_min) : n_(n_sites), m_(n_pieces), k_(0) {
    if (n_sites <= 0 || n_pieces <= 0) {
        throw ConfigError("grid sizes must be positive (N=" + std::to_string(n_sites) +
                          ", M=" + std::to_string(n_pieces) + ")");
    }
    if (n_sites % n_pieces != 0) {
        throw ConfigError("N=" + std::to_string(n_sites) + " is not a multiple of M=" + std::to_string(n_pieces));
    }
    k_ = n_sites / n_pieces;
    if (k_ < k_min) {
        throw ConfigError("block size K=" + std::to_string(k_) + " is below K_min=" + std::to_string(k_min));
    }
}

namespace {
Eigen::VectorXd recentred(Eigen::VectorXd v) {
    if (v.size() > 0) v.array() -= v.mean();
    return v;
}
}  // namespace

SpinConfiguration::SpinConfiguration(Eigen::VectorXd values) : values_(recentred(std::move(values))) {}

SpinConfiguration::SpinConfiguration(std::span<const double> values)
    : SpinConfiguration(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()))) {}

PiecewisePolynomial SpinConfiguration::as_piecewise() const {
    return PiecewisePolynomial::step(std::span<const double>(values_.data(), size()));
}

double step_function_view(const SpinConfiguration& x, double theta) {
    const auto n = static_cast<double>(x.size());
    theta -= std::floor(theta);
    auto j = static_cast<std::size_t>(std::floor(theta * n));
    if (j >= x.size()) j = x.size() - 1;
    return x[j];
}

Poly bspline_rising_arc() { return Poly{0.0, 0.0, 0.5}; }
Poly bspline_middle_arc() { return Poly{0.5, 1.0, -1.0}; }
Poly bspline_falling_arc() { return Poly{0.5, -1.0, 0.5}; }

SplineField::SplineField(Eigen::VectorXd bspline_coeffs) : coeffs_(recentred(std::move(bspline_coeffs))) {}

Poly SplineField::local_piece(int p) const {
    const int m = pieces();
    const double mid = coeffs_(p);
    const double rise = coeffs_((p + 1) % m);
    const double fall = coeffs_((p - 1 + m) % m);
    Poly q;
    q.c[0] = 0.5 * mid + 0.5 * fall;
    q.c[1] = mid - fall;
    q.c[2] = 0.5 * rise - mid + 0.5 * fall;
    return q;
}

PieceCoefficients SplineField::piece_coeffs(int p) const {
    // s = Mθ - p
    const Poly q = local_piece(p);
    const double m = pieces();
    const double pp = p;
    return {q.c[2] * m * m, q.c[1] * m - 2.0 * q.c[2] * m * pp, q.c[0] - q.c[1] * pp + q.c[2] * pp * pp};
}

std::vector<PieceCoefficients> SplineField::all_piece_coeffs() const {
    std::vector<PieceCoefficients> out;
    out.reserve(static_cast<std::size_t>(pieces()));
    for (int p = 0; p < pieces(); ++p) out.push_back(piece_coeffs(p));
    return out;
}

double SplineField::operator()(double theta) const {
    const int m = pieces();
    theta -= std::floor(theta);
    int p = static_cast<int>(std::floor(theta * m));
    if (p >= m) p = m - 1;
    return local_piece(p)(theta * m - p);
}

PiecewisePolynomial SplineField::as_piecewise() const {
    std::vector<Poly> pieces(static_cast<std::size_t>(this->pieces()));
    for (int p = 0; p < this->pieces(); ++p) {
        pieces[static_cast<std::size_t>(p)] = local_piece(p).scaled_argument(this->pieces());
    }
    return PiecewisePolynomial::uniform(std::move(pieces));
}

SplineField operator+(const SplineField& a, const SplineField& b) { return SplineField(a.coeffs_ + b.coeffs_); }
SplineField operator-(const SplineField& a, const SplineField& b) { return SplineField(a.coeffs_ - b.coeffs_); }
SplineField operator*(double s, const SplineField& a) { return SplineField(s * a.coeffs_); }

double Perturbation::eval(double x, int order) const {
    switch (kind) {
        case Kind::zero:
            return 0.0;
        case Kind::cosine: {
            const double arg = omega * x + phase;
            if (order == 0) return beta * std::cos(arg);
            if (order == 1) return -beta * omega * std::sin(arg);
            return -beta * omega * omega * std::cos(arg);
        }
        case Kind::custom: {
            const double v = order == 0 ? value(x) : (order == 1 ? first(x) : second(x));
            if (order == 0 && std::abs(v) > sup_bound * (1.0 + 1e-12) + 1e-300) {
                throw PreconditionError("perturbation '" + name + "' exceeds its declared sup bound at x=" +
                                        std::to_string(x));
            }
            if (order == 2 && std::abs(v) > second_derivative_bound * (1.0 + 1e-12) + 1e-300) {
                throw PreconditionError("perturbation '" + name + "' exceeds its declared second-derivative bound at x=" +
                                        std::to_string(x));
            }
            return v;
        }
    }
    return 0.0;
}

Perturbation gaussian_perturbation() { return Perturbation{}; }

Perturbation cosine_perturbation(double beta, double omega, double phase) {
    Perturbation p;
    if (beta == 0.0) return p;
    p.kind = Perturbation::Kind::cosine;
    p.name = "cosine";
    p.beta = beta;
    p.omega = omega;
    p.phase = phase;
    p.sup_bound = std::abs(beta);
    p.second_derivative_bound = std::abs(beta) * omega * omega;
    return p;
}

Perturbation custom_perturbation(std::string name, std::function<double(double)> value,
                                 std::function<double(double)> first, std::function<double(double)> second,
                                 double sup_bound, double second_derivative_bound) {
    Perturbation p;
    p.kind = Perturbation::Kind::custom;
    p.name = std::move(name);
    p.value = std::move(value);
    p.first = std::move(first);
    p.second = std::move(second);
    p.sup_bound = sup_bound;
    p.second_derivative_bound = second_derivative_bound;
    return p;
}

SingleSitePotential::SingleSitePotential(double tilt, Perturbation perturbation)
    : a_(tilt), delta_(std::move(perturbation)) {}

double SingleSitePotential::psi(double x) const { return 0.5 * x * x + a_ * x + delta_.eval(x, 0); }

double SingleSitePotential::psi_prime(double x) const {
    if (delta_.kind == Perturbation::Kind::zero) return x + a_;
    return x + a_ + delta_.eval(x, 1);
}

double SingleSitePotential::psi_second(double x) const { return 1.0 + delta_.eval(x, 2); }

double psi_eval(const SingleSitePotential& pot, double x, int order) {
    switch (order) {
        case 0:
            return pot.psi(x);
        case 1:
            return pot.psi_prime(x);
        case 2:
            return pot.psi_second(x);
        default:
            throw PreconditionError("psi_eval order must be 0, 1 or 2");
    }
}

SingleSiteMeasure::SingleSiteMeasure(SingleSitePotential pot, std::size_t hermite_nodes) : pot_(std::move(pot)) {
    const auto& rule = gauss_hermite(hermite_nodes);
    nodes_ = &rule.nodes;
    weights_ = &rule.weights;
}

TiltedMoments SingleSiteMeasure::tilted(double sigma) const {
    const double mu = sigma - pot_.tilt();
    const auto& z = *nodes_;
    const auto& w = *weights_;
    double mass = 0.0;
    double first = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double x = z[k] + mu;
        const double wk = w[k] * std::exp(-pot_.perturbation().eval(x, 0));
        mass += wk;
        first += wk * x;
    }
    const double mean = first / mass;
    double var = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double x = z[k] + mu;
        const double wk = w[k] * std::exp(-pot_.perturbation().eval(x, 0));
        var += wk * (x - mean) * (x - mean);
    }
    return {0.5 * mu * mu + std::log(mass), mean, var / mass};
}

double SingleSiteMeasure::expectation(const std::function<double(double)>& g) const {
    const auto& z = *nodes_;
    const auto& w = *weights_;
    double mass = 0.0;
    double acc = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double x = z[k] - pot_.tilt();
        const double wk = w[k] * std::exp(-pot_.perturbation().eval(x, 0));
        mass += wk;
        acc += wk * g(x);
    }
    return acc / mass;
}

SingleSitePotential normalize_tilt(const Perturbation& delta, const TiltOptions& options) {
    if (delta.is_zero()) return SingleSitePotential(0.0, delta);

    auto mean_at = [&](double a) {
        return SingleSiteMeasure(SingleSitePotential(a, delta), options.hermite_nodes).tilted(0.0).mean;
    };
    // mean(a) is strictly decreasing with slope -Var; |mean(a) + a| is bounded by the perturbation size.
    double lo = -1.0;
    double hi = 1.0;
    int expansions = 0;
    while (mean_at(lo) < 0.0 || mean_at(hi) > 0.0) {
        lo *= 2.0;
        hi *= 2.0;
        if (++expansions > 40) throw NumericalError("normalize_tilt: could not bracket the tilt");
    }
    boost::uintmax_t iterations = static_cast<boost::uintmax_t>(options.max_iterations);
    auto [left, right] = boost::math::tools::toms748_solve(
        mean_at, lo, hi, boost::math::tools::eps_tolerance<double>(std::numeric_limits<double>::digits - 3),
        iterations);
    const double a = 0.5 * (left + right);
    if (iterations >= static_cast<boost::uintmax_t>(options.max_iterations) ||
        std::abs(mean_at(a)) > std::max(options.tolerance, 1e-10)) {
        throw NumericalError("normalize_tilt: root finder did not converge");
    }
    return SingleSitePotential(a, delta);
}

}  // namespace kawasaki
