#pragma once

#include "kawasaki/errors.hpp"
#include "kawasaki/macro.hpp"
#include "kawasaki/meso.hpp"
#include "kawasaki/micro.hpp"
#include "kawasaki/norms.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kawasaki {

struct PotentialSpec {
    std::string name = "gaussian";  // gaussian | cosine
    double beta = 0.0;
    double omega = 1.0;
    double phase = 0.0;
};

/// Builds the tilt-normalized potential.
SingleSitePotential make_potential(const PotentialSpec& spec);

/// ζ0(θ) = amplitude · Σ (a_k cos 2πkθ + b_k sin 2πkθ); named profiles: zero, cos1, cos2, mixed.
struct InitialProfile {
    std::string name = "cos1";
    double amplitude = 1.0;

    double operator()(double theta) const;
    /// N ∫_{cell i} ζ0 dθ, exact.
    Eigen::VectorXd cell_averages(int n_sites) const;
    double sup_norm() const;
};

struct ExperimentConfig {
    std::string experiment = "operator_suite";  // micro_to_meso | meso_to_macro | full_limit | operator_suite | free_energy
    PotentialSpec potential;
    std::vector<std::pair<int, int>> ladder;  // (N, M)
    int k_min = MultiscaleGrid::default_k_min;
    double T = 0.02;
    std::size_t snapshots = 20;

    double micro_dt_factor = 0.5;
    double meso_dt = 0.0;  // 0: chosen from the stability limit
    std::size_t macro_grid = 256;
    MacroScheme macro_scheme = MacroScheme::rk4_fourth_order;
    double macro_dt = 0.0;  // 0: 0.9 of the stability cap

    std::size_t realizations = 256;
    std::uint64_t seed = 20240611;
    DriftKind drift_mode = DriftKind::gaussian_exact;
    FiberOptions fiber;
    double mcmc_max_relative_error = 0.05;

    InitialProfile profile;
    std::string initial_law = "equilibrium";  // equilibrium | tilted_equilibrium | deterministic
    std::string eta0 = "profile";             // profile (Pζ0) | zero
    bool micro_noise = true;

    std::string fit_variable;  // K | M | N; empty picks the experiment default
    std::string metric;        // micro_to_meso: abar_inv | hneg1
    double slope_min = -std::numeric_limits<double>::infinity();
    double slope_max = std::numeric_limits<double>::infinity();
    double envelope_factor = 5.0;

    double m_max = 4.0;
    std::size_t free_energy_grid = 801;
    std::size_t hermite_nodes = 200;

    std::size_t samples = 100;  // random draws per size in the operator suite
    int threads = 1;
    std::string outdir = "out";
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
/// Throws ConfigError on any invariant violation.
void validate_config(const ExperimentConfig& config);
/// Canonical form; `outdir` and `threads` are excluded since they do not affect results.
nlohmann::json config_to_json(const ExperimentConfig& config);
std::string config_hash(const ExperimentConfig& config);
std::string code_version();

struct RatePoint {
    double size;
    double error;
    double standard_error;
};

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;  // log(e) = intercept + slope · log(size)
    double slope_standard_error = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t points = 0;
    bool weighted = false;
};

/// Weighted least squares on (log size, log error) with σ_log = stderr / error.
/// Zero standard errors everywhere fall back to ordinary least squares.
RateFit fit_rate(const std::vector<RatePoint>& points);

class DegenerateFitError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

struct PropertyCheck {
    std::string name;
    bool passed = true;
    double measured = 0.0;
    double bound = 0.0;
    std::string detail;
};

struct ErrorRow {
    double size;
    int n;
    int m;
    int k;
    double t;
    std::string metric;
    double error;
    double standard_error;
};

struct SizeResult {
    int n = 0;
    int m = 0;
    int k = 0;
    double size = 0.0;
    double error = 0.0;  // the fitted metric
    double standard_error = 0.0;
    std::map<std::string, double> metrics;
    double wall_seconds = 0.0;
};

struct RateReport {
    std::string experiment;
    std::string config_hash;
    std::string version;
    std::string fit_variable;
    std::string metric;
    std::vector<SizeResult> sizes;
    std::optional<RateFit> fit;
    double slope_min = -std::numeric_limits<double>::infinity();
    double slope_max = std::numeric_limits<double>::infinity();
    std::vector<PropertyCheck> checks;
    std::map<std::string, double> constants;
    std::vector<ErrorRow> rows;
    std::optional<FreeEnergyTable> free_energy;

    bool passed() const;
    void add_check(PropertyCheck check) { checks.push_back(std::move(check)); }
};

/// Raised when Monte Carlo error bars are too wide to separate neighbouring sizes.
class InconclusiveRateError : public StatisticalPrecisionError {
public:
    InconclusiveRateError(const std::string& what, RateReport report)
        : StatisticalPrecisionError(what), report_(std::move(report)) {}
    const RateReport& report() const { return report_; }

private:
    RateReport report_;
};

RateReport run_micro_to_meso(const ExperimentConfig& config);
RateReport run_meso_to_macro(const ExperimentConfig& config);
RateReport run_full_limit(const ExperimentConfig& config);
RateReport run_operator_suite(const ExperimentConfig& config);
RateReport run_free_energy(const ExperimentConfig& config);
RateReport run_experiment(const ExperimentConfig& config);

// Building blocks of the operator suite, usable on their own.
struct SplineAlgebraResult {
    double gram_closed_form_gap;    // max |closed form − (1/M){11/20, 13/60, 1/120, 0}|
    double gram_exact_gap;          // max |closed form − exact integration|
    double partition_of_unity_gap;  // max |Σ_j B_j(θ) − 1|
    double anpt_relative_gap;       // max |closed form − A∘NP^t| / max |A∘NP^t|
};
SplineAlgebraResult check_spline_algebra(const std::vector<int>& pieces, std::uint64_t seed);

struct DefectScaling {
    std::vector<int> blocks;
    std::vector<double> defects;
    RateFit fit;
};
DefectScaling measure_defect_scaling(int pieces, const std::vector<int>& blocks);

struct SigmaMeasurement {
    int m;
    int k;
    double sigma_sampled;  // min over random y of |y| / |ANP^t Ā⁻¹ y|
    double sigma_exact;    // worst case over the whole spline space
};
std::vector<SigmaMeasurement> measure_sigma(const std::vector<int>& pieces, const std::vector<int>& blocks,
                                            std::size_t samples, std::uint64_t seed);

struct NormEquivalence {
    int m;
    int k;
    double neg_min, neg_max;  // |y|_{Ā⁻¹} / |y|_{H⁻¹}
    double pos_min, pos_max;  // |y|_Ā / |y|_{H¹}
};
std::vector<NormEquivalence> measure_norm_equivalence(const std::vector<int>& pieces, const std::vector<int>& blocks,
                                                      std::size_t samples, std::uint64_t seed);

struct PoincareMeasurement {
    int n;
    int m;
    double discrete_constant;  // max Σx² / (N² Σ(x_n − x_{n−1})²)
    double gamma;              // max |x_∥|² M² / x·Ax
};
std::vector<PoincareMeasurement> measure_poincare(const std::vector<std::pair<int, int>>& sizes, std::size_t samples,
                                                  std::uint64_t seed);

struct GradientIdentityCase {
    std::string potential;
    std::string function;
    double residual;
    bool skipped;
};
std::vector<GradientIdentityCase> run_gradient_identity_suite(std::size_t nodes_per_dimension = 16);

/// Random mean-zero spline with standard normal B-spline coefficients.
SplineField random_spline(int pieces, Rng& rng);

/// Runs body(i) for i in [0, count) on up to `threads` workers. Results must be
/// written to per-index slots so that reductions stay in index order.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

nlohmann::ordered_json report_to_json(const RateReport& report);
void write_outputs(const RateReport& report, const std::string& outdir);

}  // namespace kawasaki
