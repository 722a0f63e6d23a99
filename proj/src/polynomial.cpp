#include "kawasaki/polynomial.hpp"

#include "kawasaki/errors.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kawasaki {

namespace {
constexpr double kBreakTolerance = 1e-12;

// Binomial coefficients up to Poly::capacity - 1.
constexpr auto binomials() {
    std::array<std::array<double, Poly::capacity>, Poly::capacity> b{};
    for (int n = 0; n < Poly::capacity; ++n) {
        b[n][0] = 1.0;
        for (int k = 1; k <= n; ++k) {
            b[n][k] = b[n - 1][k - 1] + (k < n ? b[n - 1][k] : 0.0);
        }
    }
    return b;
}
constexpr auto kBinom = binomials();
}  // namespace

Poly::Poly(std::initializer_list<double> coeffs) {
    if (coeffs.size() > static_cast<std::size_t>(capacity)) {
        throw PreconditionError("polynomial degree exceeds capacity");
    }
    std::copy(coeffs.begin(), coeffs.end(), c.begin());
}

int Poly::degree() const {
    for (int k = capacity - 1; k > 0; --k) {
        if (c[k] != 0.0) return k;
    }
    return 0;
}

double Poly::operator()(double t) const {
    double acc = 0.0;
    for (int k = degree(); k >= 0; --k) acc = acc * t + c[k];
    return acc;
}

Poly Poly::derivative() const {
    Poly d;
    for (int k = 1; k < capacity; ++k) d.c[k - 1] = k * c[k];
    return d;
}

Poly Poly::antiderivative() const {
    if (c[capacity - 1] != 0.0) {
        throw PreconditionError("antiderivative would exceed polynomial capacity");
    }
    Poly a;
    for (int k = 0; k + 1 < capacity; ++k) a.c[k + 1] = c[k] / (k + 1);
    return a;
}

Poly Poly::shifted(double t0) const {
    if (t0 == 0.0) return *this;
    Poly q;
    const int deg = degree();
    // p(t + t0) = sum_n c_n sum_k C(n,k) t^k t0^(n-k)
    for (int n = 0; n <= deg; ++n) {
        if (c[n] == 0.0) continue;
        double pw = 1.0;
        for (int k = n; k >= 0; --k) {
            q.c[k] += c[n] * kBinom[n][k] * pw;
            pw *= t0;
        }
    }
    return q;
}

Poly Poly::scaled_argument(double s) const {
    Poly q;
    double pw = 1.0;
    for (int k = 0; k < capacity; ++k) {
        q.c[k] = c[k] * pw;
        pw *= s;
    }
    return q;
}

double Poly::integral(double h) const {
    double acc = 0.0;
    for (int k = degree(); k >= 0; --k) acc = acc * h + c[k] / (k + 1);
    return acc * h;
}

Poly& Poly::operator+=(const Poly& other) {
    for (int k = 0; k < capacity; ++k) c[k] += other.c[k];
    return *this;
}

Poly& Poly::operator-=(const Poly& other) {
    for (int k = 0; k < capacity; ++k) c[k] -= other.c[k];
    return *this;
}

Poly& Poly::operator*=(double s) {
    for (auto& v : c) v *= s;
    return *this;
}

Poly operator+(Poly a, const Poly& b) { return a += b; }
Poly operator-(Poly a, const Poly& b) { return a -= b; }
Poly operator*(Poly a, double s) { return a *= s; }
Poly operator*(double s, Poly a) { return a *= s; }

Poly operator*(const Poly& a, const Poly& b) {
    const int da = a.degree();
    const int db = b.degree();
    if (da + db >= Poly::capacity) {
        throw PreconditionError("polynomial product exceeds capacity");
    }
    Poly p;
    for (int i = 0; i <= da; ++i) {
        for (int j = 0; j <= db; ++j) p.c[i + j] += a.c[i] * b.c[j];
    }
    return p;
}

PiecewisePolynomial::PiecewisePolynomial(std::vector<double> breaks, std::vector<Poly> pieces)
    : breaks_(std::move(breaks)), pieces_(std::move(pieces)) {
    if (pieces_.empty() || breaks_.size() != pieces_.size() + 1) {
        throw PreconditionError("piecewise polynomial needs n pieces and n+1 breaks");
    }
    if (std::abs(breaks_.front()) > kBreakTolerance || std::abs(breaks_.back() - 1.0) > kBreakTolerance) {
        throw PreconditionError("piecewise polynomial breaks must span [0, 1]");
    }
    for (std::size_t k = 0; k + 1 < breaks_.size(); ++k) {
        if (!(breaks_[k + 1] > breaks_[k])) {
            throw PreconditionError("piecewise polynomial breaks must be strictly increasing");
        }
    }
}

PiecewisePolynomial PiecewisePolynomial::uniform(std::vector<Poly> pieces) {
    const std::size_t n = pieces.size();
    std::vector<double> breaks(n + 1);
    for (std::size_t k = 0; k <= n; ++k) breaks[k] = static_cast<double>(k) / static_cast<double>(n);
    return PiecewisePolynomial(std::move(breaks), std::move(pieces));
}

PiecewisePolynomial PiecewisePolynomial::step(std::span<const double> values) {
    std::vector<Poly> pieces(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) pieces[k].c[0] = values[k];
    return uniform(std::move(pieces));
}

PiecewisePolynomial PiecewisePolynomial::periodic_cubic_interpolant(std::span<const double> nodal) {
    const std::size_t n = nodal.size();
    if (n < 5) {
        throw PreconditionError("cubic interpolant needs at least 5 nodes");
    }
    const double h = 1.0 / static_cast<double>(n);
    auto at = [&](std::ptrdiff_t g) {
        const auto m = static_cast<std::ptrdiff_t>(n);
        return nodal[static_cast<std::size_t>(((g % m) + m) % m)];
    };
    std::vector<double> slope(n);
    for (std::size_t g = 0; g < n; ++g) {
        const auto i = static_cast<std::ptrdiff_t>(g);
        slope[g] = (-at(i + 2) + 8.0 * at(i + 1) - 8.0 * at(i - 1) + at(i - 2)) / (12.0 * h);
    }
    std::vector<Poly> pieces(n);
    for (std::size_t g = 0; g < n; ++g) {
        const double f0 = nodal[g];
        const double f1 = nodal[(g + 1) % n];
        const double d0 = slope[g];
        const double d1 = slope[(g + 1) % n];
        const double delta = (f1 - f0) / h;
        Poly& p = pieces[g];
        p.c[0] = f0;
        p.c[1] = d0;
        p.c[2] = (3.0 * delta - 2.0 * d0 - d1) / h;
        p.c[3] = (d0 + d1 - 2.0 * delta) / (h * h);
    }
    return uniform(std::move(pieces));
}

double PiecewisePolynomial::operator()(double theta) const {
    theta -= std::floor(theta);
    auto it = std::upper_bound(breaks_.begin(), breaks_.end(), theta);
    std::size_t k = it == breaks_.begin() ? 0 : static_cast<std::size_t>(it - breaks_.begin()) - 1;
    k = std::min(k, pieces_.size() - 1);
    return pieces_[k](theta - breaks_[k]);
}

double PiecewisePolynomial::integral() const {
    double acc = 0.0;
    for (std::size_t k = 0; k < pieces_.size(); ++k) acc += pieces_[k].integral(width(k));
    return acc;
}

double PiecewisePolynomial::squared_l2() const {
    double acc = 0.0;
    for (std::size_t k = 0; k < pieces_.size(); ++k) acc += (pieces_[k] * pieces_[k]).integral(width(k));
    return acc;
}

PiecewisePolynomial PiecewisePolynomial::derivative() const {
    std::vector<Poly> d(pieces_.size());
    for (std::size_t k = 0; k < pieces_.size(); ++k) d[k] = pieces_[k].derivative();
    return PiecewisePolynomial(breaks_, std::move(d));
}

PiecewisePolynomial PiecewisePolynomial::mean_zero_antiderivative() const {
    const double total = integral();
    const double scale = std::sqrt(squared_l2());
    if (std::abs(total) > 1e-9 * (1.0 + scale)) {
        throw PreconditionError("H^-1 norm requires a mean-zero function (integral = " + std::to_string(total) +
                                ")");
    }
    // Remove the round-off mean so that w closes up periodically.
    std::vector<Poly> w(pieces_.size());
    double running = 0.0;
    for (std::size_t k = 0; k < pieces_.size(); ++k) {
        Poly f = pieces_[k];
        f.c[0] -= total;
        w[k] = f.antiderivative();
        w[k].c[0] = running;
        running += f.integral(width(k));
    }
    PiecewisePolynomial result(breaks_, std::move(w));
    const double mean_w = result.integral();
    for (auto& p : result.pieces_) p.c[0] -= mean_w;
    return result;
}

PiecewisePolynomial PiecewisePolynomial::refined(std::span<const double> breaks) const {
    std::vector<Poly> pieces;
    pieces.reserve(breaks.size() - 1);
    std::size_t k = 0;
    for (std::size_t j = 0; j + 1 < breaks.size(); ++j) {
        const double left = breaks[j];
        while (k + 1 < pieces_.size() && breaks_[k + 1] <= left + kBreakTolerance) ++k;
        if (breaks[j + 1] > breaks_[k + 1] + kBreakTolerance) {
            throw PreconditionError("refined(): target mesh does not contain the current mesh");
        }
        pieces.push_back(pieces_[k].shifted(left - breaks_[k]));
    }
    return PiecewisePolynomial(std::vector<double>(breaks.begin(), breaks.end()), std::move(pieces));
}

PiecewisePolynomial& PiecewisePolynomial::operator*=(double s) {
    for (auto& p : pieces_) p *= s;
    return *this;
}

std::vector<double> merge_breaks(std::span<const double> a, std::span<const double> b) {
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.size() || j < b.size()) {
        double next;
        if (j >= b.size() || (i < a.size() && a[i] <= b[j])) {
            next = a[i++];
        } else {
            next = b[j++];
        }
        if (out.empty() || next - out.back() > kBreakTolerance) out.push_back(next);
    }
    out.front() = 0.0;
    out.back() = 1.0;
    return out;
}

namespace {
template <class Op>
PiecewisePolynomial combine(const PiecewisePolynomial& a, const PiecewisePolynomial& b, Op op) {
    const auto breaks = merge_breaks(a.breaks(), b.breaks());
    const auto ra = breaks.size() == a.breaks().size() ? a : a.refined(breaks);
    const auto rb = breaks.size() == b.breaks().size() ? b : b.refined(breaks);
    std::vector<Poly> pieces(ra.size());
    for (std::size_t k = 0; k < ra.size(); ++k) pieces[k] = op(ra.piece(k), rb.piece(k));
    return PiecewisePolynomial(breaks, std::move(pieces));
}
}  // namespace

PiecewisePolynomial operator+(const PiecewisePolynomial& a, const PiecewisePolynomial& b) {
    return combine(a, b, [](const Poly& p, const Poly& q) { return p + q; });
}

PiecewisePolynomial operator-(const PiecewisePolynomial& a, const PiecewisePolynomial& b) {
    return combine(a, b, [](const Poly& p, const Poly& q) { return p - q; });
}

PiecewisePolynomial operator*(double s, PiecewisePolynomial a) { return a *= s; }

double inner_product(const PiecewisePolynomial& a, const PiecewisePolynomial& b) {
    return combine(a, b, [](const Poly& p, const Poly& q) { return p * q; }).integral();
}

}  // namespace kawasaki
