#pragma once

#include "kawasaki/core.hpp"

// pchip.hpp calls isnan unqualified; <math.h> puts it in the global namespace.
#include <math.h>

#include <boost/math/interpolators/pchip.hpp>

#include <Eigen/Core>

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace kawasaki {

struct FreeEnergyOptions {
    std::size_t hermite_nodes = 200;
    double tolerance = 1e-13;
    int max_iterations = 200;
};

/// φ(m) = sup_σ (σm − Λ(σ)) with Λ(σ) = log ∫ exp(σx − ψ(x)) dx, tabulated on a
/// uniform m-grid. φ and φ' are cubic Hermite interpolants built from the exact
/// nodal derivatives (φ' checked monotone at construction); φ'' uses PCHIP.
class FreeEnergyTable {
public:
    FreeEnergyTable(std::vector<double> m_grid, std::vector<double> sigma_star, std::vector<double> phi,
                    std::vector<double> phi_prime, std::vector<double> phi_double_prime);

    const std::vector<double>& m_grid() const { return m_; }
    const std::vector<double>& sigma_star() const { return sigma_; }
    const std::vector<double>& phi() const { return phi_; }
    const std::vector<double>& phi_prime() const { return dphi_; }
    const std::vector<double>& phi_double_prime() const { return ddphi_; }
    double m_max() const { return m_.back(); }

    /// Smallest and largest φ'' on the grid.
    double lambda_num() const { return lambda_; }
    double Lambda_num() const { return Lambda_; }

    /// Interpolated values; throws PreconditionError outside [−m_max, m_max].
    double phi_at(double m) const;
    double phi_prime_at(double m) const;
    double phi_double_prime_at(double m) const;

    void write_csv(std::ostream& out) const;

private:
    void check_range(double m) const;
    double hermite(const std::vector<double>& f, const std::vector<double>& df, double m) const;

    std::vector<double> m_;
    std::vector<double> sigma_;
    std::vector<double> phi_;
    std::vector<double> dphi_;
    std::vector<double> ddphi_;
    double lambda_ = 0.0;
    double Lambda_ = 0.0;
    std::shared_ptr<boost::math::interpolators::pchip<std::vector<double>>> ddphi_interp_;
};

/// σ* solving Λ'(σ) = m by safeguarded Newton with bisection fallback.
double solve_legendre_sigma(const SingleSiteMeasure& measure, double m, const FreeEnergyOptions& options = {});

FreeEnergyTable build_free_energy(const SingleSitePotential& pot, double m_max, std::size_t grid_size,
                                  const FreeEnergyOptions& options = {});

/// Nodal values of ζ at θ_g = g / G, kept mean-zero.
class MacroField {
public:
    MacroField() = default;
    explicit MacroField(Eigen::VectorXd values);
    static MacroField sample(std::size_t g, const std::function<double(double)>& f);

    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
    const Eigen::VectorXd& values() const { return values_; }
    double spacing() const { return 1.0 / static_cast<double>(values_.size()); }
    /// Discrete ‖ζ‖²_{L²} = h Σ ζ_g².
    double squared_l2() const;
    /// C¹ cubic interpolant used for exact comparisons against lattice and spline fields.
    PiecewisePolynomial interpolant() const;

private:
    Eigen::VectorXd values_;
};

enum class MacroScheme {
    explicit_euler,   // ζ ← ζ + dt Δ_h φ'(ζ)
    semi_implicit,    // (I − dt Λ̄ Δ_h) ζ' = ζ + dt Δ_h(φ'(ζ) − Λ̄ζ)
    rk4_fourth_order  // classical RK4 with the fourth-order periodic Laplacian
};

MacroScheme parse_macro_scheme(const std::string& name);
std::string to_string(MacroScheme scheme);

/// Largest stable dt for the scheme (infinite for semi_implicit).
double macro_dt_cap(const FreeEnergyTable& table, std::size_t g, MacroScheme scheme);

MacroField macro_step(const FreeEnergyTable& table, const MacroField& zeta, double dt,
                      MacroScheme scheme = MacroScheme::explicit_euler);

/// (1/G) Σ φ(ζ_g).
double macro_energy(const FreeEnergyTable& table, const MacroField& zeta);
/// |φ'(ζ)|²_{H¹,h} = h Σ (D_h φ'(ζ))².
double macro_dissipation(const FreeEnergyTable& table, const MacroField& zeta);

struct MacroTrajectory {
    std::vector<double> times;
    std::vector<MacroField> snapshots;
    // Per step:
    std::vector<double> step_dt;
    std::vector<double> energy;       // 𝓗 before each step, plus the final value
    std::vector<double> dissipation;  // |φ'(ζ)|²_{H¹,h} before each step
    std::vector<double> h1_squared;   // |ζ|²_{H¹,h} before each step
    std::vector<double> l2_squared;   // ‖ζ‖²_{L²,h} before each step, plus the final value
};

/// Integrates to T with steps of at most dt, landing exactly on every snapshot time.
MacroTrajectory macro_integrate(const FreeEnergyTable& table, const MacroField& zeta0, double T, double dt,
                                const std::vector<double>& snapshot_times,
                                MacroScheme scheme = MacroScheme::explicit_euler);

struct EnergyDecayReport {
    bool monotone = true;
    double worst_increase = 0.0;       // max (𝓗_{n+1} − 𝓗_n) / (1 + |𝓗_n|)
    double worst_dissipation_gap = 0.0;  // max relative gap between the decrement and dt·dissipation
    bool dissipation_matches = true;   // gap ≤ 10%
};

EnergyDecayReport macro_energy_decay_check(const MacroTrajectory& trajectory, double tolerance = 1e-8);

struct MacroBoundsReport {
    double sup_ratio = 0.0;            // sup_t ‖ζ(t)‖² / ‖ζ(0)‖²
    double sup_bound = 0.0;            // Λ_num / λ_num
    double dissipation_integral = 0.0;  // ∫ |φ'(ζ)|²_{H¹} dt
    double h1_integral = 0.0;           // ∫ |ζ|²_{H¹} dt
    double c_dissipation = 0.0;         // dissipation_integral / ‖ζ(0)‖²
    double c_h1 = 0.0;                  // h1_integral / ‖ζ(0)‖²
    bool sup_ok = true;
    bool h1_ok = true;                  // ∫|ζ|²_{H¹} ≤ ∫|φ'(ζ)|²_{H¹} / λ²
    bool passed() const { return sup_ok && h1_ok; }
};

MacroBoundsReport macro_bounds_check(const FreeEnergyTable& table, const MacroTrajectory& trajectory);

}  // namespace kawasaki
