#include "kawasaki/macro.hpp"

#include "kawasaki/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace kawasaki {

FreeEnergyTable::FreeEnergyTable(std::vector<double> m_grid, std::vector<double> sigma_star, std::vector<double> phi,
                                 std::vector<double> phi_prime, std::vector<double> phi_double_prime)
    : m_(std::move(m_grid)),
      sigma_(std::move(sigma_star)),
      phi_(std::move(phi)),
      dphi_(std::move(phi_prime)),
      ddphi_(std::move(phi_double_prime)) {
    const std::size_t n = m_.size();
    if (n < 4 || sigma_.size() != n || phi_.size() != n || dphi_.size() != n || ddphi_.size() != n) {
        throw PreconditionError("free-energy table needs at least 4 nodes and consistent columns");
    }
    for (std::size_t k = 0; k + 1 < n; ++k) {
        if (!(dphi_[k + 1] > dphi_[k])) {
            throw NumericalError("free-energy table: φ' is not strictly increasing at m=" + std::to_string(m_[k]));
        }
    }
    lambda_ = *std::min_element(ddphi_.begin(), ddphi_.end());
    Lambda_ = *std::max_element(ddphi_.begin(), ddphi_.end());
    if (!(lambda_ > 0.0)) {
        throw NumericalError("free-energy table: φ'' is not positive on the grid");
    }
    // Fritsch–Carlson: with the exact slopes φ'' the Hermite cubic for φ' is monotone on every cell.
    for (std::size_t k = 0; k + 1 < n; ++k) {
        const double secant = (dphi_[k + 1] - dphi_[k]) / (m_[k + 1] - m_[k]);
        const double a = ddphi_[k] / secant;
        const double b = ddphi_[k + 1] / secant;
        if (a * a + b * b > 9.0) {
            throw NumericalError("free-energy table too coarse for a monotone φ' interpolant near m=" +
                                 std::to_string(m_[k]));
        }
    }
    ddphi_interp_ = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(
        std::vector<double>(m_), std::vector<double>(ddphi_));
}

double FreeEnergyTable::hermite(const std::vector<double>& f, const std::vector<double>& df, double m) const {
    const std::size_t n = m_.size();
    const double h = (m_.back() - m_.front()) / static_cast<double>(n - 1);
    auto k = static_cast<std::size_t>(std::floor((m - m_.front()) / h));
    k = std::min(k, n - 2);
    const double w = m_[k + 1] - m_[k];
    const double t = (m - m_[k]) / w;
    const double t2 = t * t;
    const double t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * f[k] + (t3 - 2 * t2 + t) * w * df[k] + (-2 * t3 + 3 * t2) * f[k + 1] +
           (t3 - t2) * w * df[k + 1];
}

void FreeEnergyTable::check_range(double m) const {
    if (!(m >= m_.front() && m <= m_.back())) {
        throw PreconditionError("free-energy table queried at m=" + std::to_string(m) + " outside [" +
                                std::to_string(m_.front()) + ", " + std::to_string(m_.back()) + "]");
    }
}

double FreeEnergyTable::phi_at(double m) const {
    check_range(m);
    return hermite(phi_, dphi_, m);
}

double FreeEnergyTable::phi_prime_at(double m) const {
    check_range(m);
    return hermite(dphi_, ddphi_, m);
}

double FreeEnergyTable::phi_double_prime_at(double m) const {
    check_range(m);
    return (*ddphi_interp_)(m);
}

void FreeEnergyTable::write_csv(std::ostream& out) const {
    out << "m,sigma_star,phi,phi_prime,phi_double_prime\n";
    out.precision(17);
    for (std::size_t k = 0; k < m_.size(); ++k) {
        out << m_[k] << ',' << sigma_[k] << ',' << phi_[k] << ',' << dphi_[k] << ',' << ddphi_[k] << '\n';
    }
}

double solve_legendre_sigma(const SingleSiteMeasure& measure, double m, const FreeEnergyOptions& options) {
    auto residual = [&](double s) { return measure.tilted(s).mean - m; };
    double sigma = m + measure.potential().tilt();
    double lo = sigma - 1.0;
    double hi = sigma + 1.0;
    int expansions = 0;
    while (residual(lo) > 0.0) {
        lo -= 2.0 * (hi - lo);
        if (++expansions > 60) throw NumericalError("Legendre transform: cannot bracket σ* at m=" + std::to_string(m));
    }
    while (residual(hi) < 0.0) {
        hi += 2.0 * (hi - lo);
        if (++expansions > 60) throw NumericalError("Legendre transform: cannot bracket σ* at m=" + std::to_string(m));
    }
    for (int it = 0; it < options.max_iterations; ++it) {
        const TiltedMoments tm = measure.tilted(sigma);
        const double f = tm.mean - m;
        if (std::abs(f) <= options.tolerance * (1.0 + std::abs(m))) return sigma;
        if (f > 0.0) hi = sigma; else lo = sigma;
        double next = sigma - f / tm.variance;
        if (!(next > lo && next < hi) || !(tm.variance > 0.0)) next = 0.5 * (lo + hi);
        if (hi - lo < 4.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(sigma))) return next;
        sigma = next;
    }
    throw NumericalError("Legendre transform: Newton/bisection stalled at m=" + std::to_string(m) +
                         "; increase the quadrature resolution");
}

FreeEnergyTable build_free_energy(const SingleSitePotential& pot, double m_max, std::size_t grid_size,
                                  const FreeEnergyOptions& options) {
    if (!(m_max > 0.0) || grid_size < 5) {
        throw ConfigError("free energy needs m_max > 0 and at least 5 grid points");
    }
    const SingleSiteMeasure measure(pot, options.hermite_nodes);
    std::vector<double> m(grid_size), sigma(grid_size), phi(grid_size), dphi(grid_size), ddphi(grid_size);
    for (std::size_t k = 0; k < grid_size; ++k) {
        m[k] = -m_max + 2.0 * m_max * static_cast<double>(k) / static_cast<double>(grid_size - 1);
        if (2 * k + 1 == grid_size) m[k] = 0.0;
        const double s = solve_legendre_sigma(measure, m[k], options);
        const TiltedMoments tm = measure.tilted(s);
        sigma[k] = s;
        phi[k] = s * m[k] - tm.log_partition;
        dphi[k] = s;
        ddphi[k] = 1.0 / tm.variance;
    }
    return FreeEnergyTable(std::move(m), std::move(sigma), std::move(phi), std::move(dphi), std::move(ddphi));
}

MacroField::MacroField(Eigen::VectorXd values) : values_(std::move(values)) {
    if (values_.size() > 0) values_.array() -= values_.mean();
}

MacroField MacroField::sample(std::size_t g, const std::function<double(double)>& f) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(g));
    for (std::size_t k = 0; k < g; ++k) v(static_cast<Eigen::Index>(k)) = f(static_cast<double>(k) / static_cast<double>(g));
    return MacroField(std::move(v));
}

double MacroField::squared_l2() const { return values_.squaredNorm() * spacing(); }

PiecewisePolynomial MacroField::interpolant() const {
    return PiecewisePolynomial::periodic_cubic_interpolant(std::span<const double>(values_.data(), size()));
}

MacroScheme parse_macro_scheme(const std::string& name) {
    if (name == "explicit" || name == "explicit_euler") return MacroScheme::explicit_euler;
    if (name == "semi_implicit" || name == "semi-implicit") return MacroScheme::semi_implicit;
    if (name == "rk4" || name == "rk4_fourth_order") return MacroScheme::rk4_fourth_order;
    throw ConfigError("unknown macro scheme '" + name + "'");
}

std::string to_string(MacroScheme scheme) {
    switch (scheme) {
        case MacroScheme::explicit_euler:
            return "explicit_euler";
        case MacroScheme::semi_implicit:
            return "semi_implicit";
        case MacroScheme::rk4_fourth_order:
            return "rk4_fourth_order";
    }
    return "unknown";
}

double macro_dt_cap(const FreeEnergyTable& table, std::size_t g, MacroScheme scheme) {
    const double h = 1.0 / static_cast<double>(g);
    switch (scheme) {
        case MacroScheme::explicit_euler:
            return h * h / (2.0 * table.Lambda_num());
        case MacroScheme::rk4_fourth_order:
            // RK4 covers [−2.78, 0] on the real axis; the fourth-order Laplacian reaches 16/(3h²).
            return 0.5 * h * h / table.Lambda_num();
        case MacroScheme::semi_implicit:
            return std::numeric_limits<double>::infinity();
    }
    return 0.0;
}

namespace {

Eigen::VectorXd phi_prime_of(const FreeEnergyTable& table, const Eigen::VectorXd& z) {
    Eigen::VectorXd out(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) out(i) = table.phi_prime_at(z(i));
    return out;
}

Eigen::VectorXd laplacian2(const Eigen::VectorXd& f) {
    const Eigen::Index g = f.size();
    const double inv_h2 = static_cast<double>(g) * static_cast<double>(g);
    Eigen::VectorXd out(g);
    for (Eigen::Index i = 0; i < g; ++i) {
        out(i) = inv_h2 * (f((i + 1) % g) - 2.0 * f(i) + f((i + g - 1) % g));
    }
    return out;
}

Eigen::VectorXd laplacian4(const Eigen::VectorXd& f) {
    const Eigen::Index g = f.size();
    const double inv_h2 = static_cast<double>(g) * static_cast<double>(g) / 12.0;
    Eigen::VectorXd out(g);
    for (Eigen::Index i = 0; i < g; ++i) {
        out(i) = inv_h2 * (-f((i + 2) % g) + 16.0 * f((i + 1) % g) - 30.0 * f(i) + 16.0 * f((i + g - 1) % g) -
                           f((i + g - 2) % g));
    }
    return out;
}

// Solves the periodic system (1 + 2r) u_i − r u_{i−1} − r u_{i+1} = b_i (cyclic Thomas + Sherman–Morrison).
Eigen::VectorXd cyclic_solve(double r, const Eigen::VectorXd& b) {
    const Eigen::Index n = b.size();
    const double diag = 1.0 + 2.0 * r;
    const double off = -r;
    auto thomas = [&](Eigen::VectorXd rhs, double first_diag, double last_diag) {
        Eigen::VectorXd c(n);
        Eigen::VectorXd d = std::move(rhs);
        double denom = first_diag;
        c(0) = off / denom;
        d(0) /= denom;
        for (Eigen::Index i = 1; i < n; ++i) {
            const double di = i == n - 1 ? last_diag : diag;
            denom = di - off * c(i - 1);
            c(i) = off / denom;
            d(i) = (d(i) - off * d(i - 1)) / denom;
        }
        for (Eigen::Index i = n - 2; i >= 0; --i) d(i) -= c(i) * d(i + 1);
        return d;
    };
    const double gamma = -diag;
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    u(0) = gamma;
    u(n - 1) = off;
    const double first = diag - gamma;
    const double last = diag - off * off / gamma;
    const Eigen::VectorXd y = thomas(b, first, last);
    const Eigen::VectorXd q = thomas(u, first, last);
    const double vy = y(0) + off / gamma * y(n - 1);
    const double vq = q(0) + off / gamma * q(n - 1);
    return y - (vy / (1.0 + vq)) * q;
}

}  // namespace

MacroField macro_step(const FreeEnergyTable& table, const MacroField& zeta, double dt, MacroScheme scheme) {
    const std::size_t g = zeta.size();
    if (g < 5) throw PreconditionError("macro grid needs at least 5 nodes");
    if (!(dt > 0.0) || dt > macro_dt_cap(table, g, scheme) * (1.0 + 1e-12)) {
        throw PreconditionError("macro dt=" + std::to_string(dt) + " exceeds the " + to_string(scheme) +
                                " stability cap " + std::to_string(macro_dt_cap(table, g, scheme)));
    }
    const Eigen::VectorXd& z = zeta.values();
    switch (scheme) {
        case MacroScheme::explicit_euler:
            return MacroField(z + dt * laplacian2(phi_prime_of(table, z)));
        case MacroScheme::semi_implicit: {
            const double lam = table.Lambda_num();
            const Eigen::VectorXd rhs = z + dt * laplacian2(phi_prime_of(table, z) - lam * z);
            const double r = dt * lam * static_cast<double>(g) * static_cast<double>(g);
            return MacroField(cyclic_solve(r, rhs));
        }
        case MacroScheme::rk4_fourth_order: {
            auto f = [&](const Eigen::VectorXd& v) { return laplacian4(phi_prime_of(table, v)); };
            const Eigen::VectorXd k1 = f(z);
            const Eigen::VectorXd k2 = f(z + 0.5 * dt * k1);
            const Eigen::VectorXd k3 = f(z + 0.5 * dt * k2);
            const Eigen::VectorXd k4 = f(z + dt * k3);
            return MacroField(z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
        }
    }
    return zeta;
}

double macro_energy(const FreeEnergyTable& table, const MacroField& zeta) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < zeta.values().size(); ++i) acc += table.phi_at(zeta.values()(i));
    return acc / static_cast<double>(zeta.size());
}

namespace {
double discrete_h1_squared(const Eigen::VectorXd& v) {
    const Eigen::Index g = v.size();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < g; ++i) {
        const double d = v((i + 1) % g) - v(i);
        acc += d * d;
    }
    return acc * static_cast<double>(g);
}
}  // namespace

double macro_dissipation(const FreeEnergyTable& table, const MacroField& zeta) {
    return discrete_h1_squared(phi_prime_of(table, zeta.values()));
}

MacroTrajectory macro_integrate(const FreeEnergyTable& table, const MacroField& zeta0, double T, double dt,
                                const std::vector<double>& snapshot_times, MacroScheme scheme) {
    if (!(T >= 0.0) || !(dt > 0.0)) throw ConfigError("macro_integrate needs T >= 0 and dt > 0");
    std::vector<double> stops = snapshot_times;
    stops.push_back(T);
    std::sort(stops.begin(), stops.end());
    stops.erase(std::unique(stops.begin(), stops.end()), stops.end());

    MacroTrajectory traj;
    MacroField zeta = zeta0;
    double t = 0.0;
    auto record_step_start = [&](const MacroField& z) {
        traj.energy.push_back(macro_energy(table, z));
        traj.dissipation.push_back(macro_dissipation(table, z));
        traj.h1_squared.push_back(discrete_h1_squared(z.values()));
        traj.l2_squared.push_back(z.squared_l2());
    };
    auto is_snapshot = [&](double time) {
        return std::any_of(snapshot_times.begin(), snapshot_times.end(),
                           [&](double s) { return std::abs(s - time) <= 1e-14 * (1.0 + T); });
    };
    if (is_snapshot(0.0)) {
        traj.times.push_back(0.0);
        traj.snapshots.push_back(zeta);
    }
    for (double stop : stops) {
        if (stop <= 0.0) continue;
        if (stop > T) break;
        const double span = stop - t;
        const auto n_steps = static_cast<std::size_t>(std::ceil(span / dt - 1e-9));
        const double h = span / static_cast<double>(std::max<std::size_t>(n_steps, 1));
        for (std::size_t s = 0; s < n_steps; ++s) {
            record_step_start(zeta);
            traj.step_dt.push_back(h);
            zeta = macro_step(table, zeta, h, scheme);
            if (!zeta.values().allFinite()) {
                throw DivergenceError("macro solver produced non-finite values at t=" + std::to_string(t));
            }
        }
        t = stop;
        if (is_snapshot(stop)) {
            traj.times.push_back(stop);
            traj.snapshots.push_back(zeta);
        }
    }
    traj.energy.push_back(macro_energy(table, zeta));
    traj.l2_squared.push_back(zeta.squared_l2());
    return traj;
}

EnergyDecayReport macro_energy_decay_check(const MacroTrajectory& trajectory, double tolerance) {
    EnergyDecayReport report;
    for (std::size_t n = 0; n < trajectory.step_dt.size(); ++n) {
        const double e0 = trajectory.energy[n];
        const double e1 = trajectory.energy[n + 1];
        const double increase = (e1 - e0) / (1.0 + std::abs(e0));
        report.worst_increase = std::max(report.worst_increase, increase);
        if (increase > tolerance) report.monotone = false;
        const double predicted = trajectory.step_dt[n] * trajectory.dissipation[n];
        // Decrements at round-off level carry no information about the rate.
        if (predicted > 1e-12 * (1.0 + std::abs(e0))) {
            const double gap = std::abs((e0 - e1) - predicted) / predicted;
            report.worst_dissipation_gap = std::max(report.worst_dissipation_gap, gap);
        }
    }
    report.dissipation_matches = report.worst_dissipation_gap <= 0.1;
    return report;
}

MacroBoundsReport macro_bounds_check(const FreeEnergyTable& table, const MacroTrajectory& trajectory) {
    MacroBoundsReport report;
    report.sup_bound = table.Lambda_num() / table.lambda_num();
    const double l2_0 = trajectory.l2_squared.empty() ? 0.0 : trajectory.l2_squared.front();
    double sup = 0.0;
    for (double v : trajectory.l2_squared) sup = std::max(sup, v);
    for (std::size_t n = 0; n < trajectory.step_dt.size(); ++n) {
        report.dissipation_integral += trajectory.step_dt[n] * trajectory.dissipation[n];
        report.h1_integral += trajectory.step_dt[n] * trajectory.h1_squared[n];
    }
    if (l2_0 > 0.0) {
        report.sup_ratio = sup / l2_0;
        report.c_dissipation = report.dissipation_integral / l2_0;
        report.c_h1 = report.h1_integral / l2_0;
        report.sup_ok = report.sup_ratio <= report.sup_bound * (1.0 + 1e-12);
    }
    const double lam = table.lambda_num();
    report.h1_ok = report.h1_integral <= report.dissipation_integral / (lam * lam) * (1.0 + 1e-9) + 1e-300;
    return report;
}

}  // namespace kawasaki
