#include "kawasaki/harness.hpp"

#include "kawasaki/quadrature.hpp"

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <mutex>
#include <sstream>
#include <thread>

#ifndef KAWASAKI_VERSION
#define KAWASAKI_VERSION "0.0.0"
#endif

namespace kawasaki {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr double two_pi = 2.0 * std::numbers::pi;

struct Mode {
    int k;
    double a;  // cos
    double b;  // sin
};

std::vector<Mode> profile_modes(const std::string& name) {
    if (name == "zero") return {};
    if (name == "cos1") return {{1, 1.0, 0.0}};
    if (name == "cos2") return {{2, 1.0, 0.0}};
    if (name == "mixed") return {{1, 1.0, 0.0}, {2, 0.0, 0.5}, {3, 0.25, 0.0}};
    throw ConfigError("unknown initial profile '" + name + "' (expected zero, cos1, cos2 or mixed)");
}

/// Solution of ∂_t ζ = ∂²_θ ζ started from the profile.
double heat_solution(const InitialProfile& p, double theta, double t) {
    double v = 0.0;
    for (const Mode& m : profile_modes(p.name)) {
        const double w = two_pi * m.k;
        v += std::exp(-w * w * t) * (m.a * std::cos(w * theta) + m.b * std::sin(w * theta));
    }
    return p.amplitude * v;
}

std::vector<double> snapshot_times(double T, std::size_t count) {
    std::vector<double> times(count);
    for (std::size_t s = 0; s < count; ++s) {
        times[s] = s + 1 == count ? T : T * static_cast<double>(s) / static_cast<double>(count - 1);
    }
    return times;
}

std::uint64_t realization_stream(int n, int m, std::size_t r) {
    std::uint64_t state = (static_cast<std::uint64_t>(n) << 32) ^ static_cast<std::uint64_t>(m);
    return splitmix64(state) ^ static_cast<std::uint64_t>(r);
}

std::string size_label(int n, int m) { return "N" + std::to_string(n) + "_M" + std::to_string(m); }

double size_of(const std::string& variable, int n, int m, int k) {
    if (variable == "K") return k;
    if (variable == "M") return m;
    return n;
}

std::string default_fit_variable(const std::vector<std::pair<int, int>>& ladder, const std::string& fallback) {
    std::set<int> ms, ks;
    for (auto [n, m] : ladder) {
        ms.insert(m);
        ks.insert(n / m);
    }
    if (ms.size() == 1 && ks.size() > 1) return "K";
    if (ks.size() == 1 && ms.size() > 1) return "M";
    return fallback;
}

MesoDriftMode make_drift_mode(const ExperimentConfig& c, const FreeEnergyTable* table) {
    switch (c.drift_mode) {
        case DriftKind::gaussian_exact:
            return MesoDriftMode::gaussian();
        case DriftKind::surrogate_phi:
            return MesoDriftMode::surrogate(std::make_shared<FreeEnergyTable>(*table));
        case DriftKind::mcmc:
            return MesoDriftMode::monte_carlo(c.fiber, c.seed, c.mcmc_max_relative_error);
    }
    return MesoDriftMode::gaussian();
}

/// Orthonormal-free mean-zero basis e_k − e_{k+1} of the spline coefficients.
Eigen::MatrixXd mean_zero_basis(int m) {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(m, m - 1);
    for (int k = 0; k + 1 < m; ++k) {
        b(k, k) = 1.0;
        b(k + 1, k) = -1.0;
    }
    return b;
}

/// (1/N) Σ 1/λ_i over the pencil (S, S_P) on mean-zero coefficients: E|P X|²_{Ā⁻¹} for X ~ N(0, Π).
double equilibrium_abar_inv_floor(const OperatorCache& cache) {
    const Eigen::MatrixXd b = mean_zero_basis(cache.grid().pieces());
    const Eigen::MatrixXd s = b.transpose() * cache.stiffness() * b;
    const Eigen::MatrixXd sp = b.transpose() * cache.lifted_mass() * b;
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(s, sp, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().cwiseInverse().sum() / cache.grid().sites();
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
    MeanSe out;
    if (v.empty()) return out;
    double sum = 0.0;
    for (double x : v) sum += x;
    out.mean = sum / static_cast<double>(v.size());
    if (v.size() < 2) return out;
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    return out;
}

double trapezoid(const std::vector<double>& t, const std::vector<double>& f) {
    double acc = 0.0;
    for (std::size_t i = 1; i < t.size(); ++i) acc += 0.5 * (t[i] - t[i - 1]) * (f[i] + f[i - 1]);
    return acc;
}

/// Per-realization metric series: values[r][metric][snapshot].
using Series = std::vector<std::vector<std::vector<double>>>;

struct EnsembleSpec {
    const SingleSitePotential* pot;
    MultiscaleGrid grid;
    Eigen::VectorXd shift;  // added to the initial sample (cell averages of ζ0)
    bool equilibrium_noise;  // draw ξ ~ μ at t = 0
    bool dynamics_noise;
    double dt_factor;
    std::vector<double> times;
    std::size_t metrics;
};

Series run_ensemble(const EnsembleSpec& spec, std::size_t realizations, std::uint64_t seed, int threads,
                    const std::function<void(const Eigen::VectorXd&, std::size_t, double*)>& measure) {
    const int n = spec.grid.sites();
    const int m = spec.grid.pieces();
    const double cap = kawasaki_dt_cap(spec.grid, *spec.pot, spec.dt_factor);
    Series values(realizations, std::vector<std::vector<double>>(spec.metrics, std::vector<double>(spec.times.size())));
    parallel_for(realizations, threads, [&](std::size_t r) {
        KawasakiState state{Eigen::VectorXd::Zero(n), 0.0, make_rng(seed, realization_stream(n, m, r)), 0};
        if (spec.equilibrium_noise) state.x = sample_gibbs(*spec.pot, spec.grid, state.rng).x.values();
        state.x += spec.shift;
        state.x.array() -= state.x.mean();
        std::vector<double> buf(spec.metrics);
        double t = 0.0;
        for (std::size_t s = 0; s < spec.times.size(); ++s) {
            const double span = spec.times[s] - t;
            if (span > 0.0) {
                const auto steps = static_cast<std::uint64_t>(std::ceil(span / cap - 1e-9));
                KawasakiIntegrator integrator(*spec.pot, spec.grid, span / static_cast<double>(steps),
                                              KawasakiOptions{spec.dynamics_noise});
                integrator.advance(state, steps);
                t = spec.times[s];
            }
            measure(state.x, s, buf.data());
            for (std::size_t q = 0; q < spec.metrics; ++q) values[r][q][s] = buf[q];
        }
    });
    return values;
}

/// Ensemble mean and standard error of one metric at every snapshot.
std::vector<MeanSe> reduce_metric(const Series& values, std::size_t metric) {
    const std::size_t snaps = values.empty() ? 0 : values.front()[metric].size();
    std::vector<MeanSe> out(snaps);
    std::vector<double> col(values.size());
    for (std::size_t s = 0; s < snaps; ++s) {
        for (std::size_t r = 0; r < values.size(); ++r) col[r] = values[r][metric][s];
        out[s] = mean_se(col);
    }
    return out;
}

/// Sup over snapshots of the ensemble mean, with the standard error at the maximizing time.
MeanSe sup_over_time(const std::vector<MeanSe>& series) {
    MeanSe best{-std::numeric_limits<double>::infinity(), 0.0};
    for (const MeanSe& p : series) {
        if (p.mean > best.mean) best = p;
    }
    return best;
}

/// Per-realization time integral of one metric, then its ensemble mean.
MeanSe time_integral(const Series& values, std::size_t metric, const std::vector<double>& times) {
    std::vector<double> integrals(values.size());
    for (std::size_t r = 0; r < values.size(); ++r) integrals[r] = trapezoid(times, values[r][metric]);
    return mean_se(integrals);
}

void add_fit_checks(RateReport& report, const std::vector<RatePoint>& points) {
    try {
        report.fit = fit_rate(points);
    } catch (const Error& e) {
        report.add_check({"rate_fit", false, 0.0, 0.0, e.what()});
        return;
    }
    const RateFit& f = *report.fit;
    std::ostringstream detail;
    detail << "slope " << f.slope << " ± " << f.slope_standard_error << " in " << report.fit_variable;
    report.add_check({"slope_window", f.slope >= report.slope_min && f.slope <= report.slope_max, f.slope,
                      report.slope_max, detail.str()});
}

/// MC error bars must resolve neighbouring sizes: max stderr ≤ ½ min gap.
void check_conclusive(RateReport& report) {
    std::vector<std::pair<double, const SizeResult*>> sorted;
    for (const SizeResult& s : report.sizes) sorted.emplace_back(s.size, &s);
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double min_gap = std::numeric_limits<double>::infinity();
    double max_se = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        max_se = std::max(max_se, sorted[i].second->standard_error);
        if (i > 0) min_gap = std::min(min_gap, std::abs(sorted[i].second->error - sorted[i - 1].second->error));
    }
    const bool ok = max_se <= 0.5 * min_gap;
    report.add_check({"rate_conclusive", ok, max_se, 0.5 * min_gap, "max MC standard error vs half the smallest gap"});
    if (!ok) {
        throw InconclusiveRateError("Monte Carlo standard error " + std::to_string(max_se) +
                                        " exceeds half the smallest inter-size gap " + std::to_string(0.5 * min_gap) +
                                        "; raise the realization count",
                                    report);
    }
}

RateReport make_report(const ExperimentConfig& c) {
    RateReport report;
    report.experiment = c.experiment;
    report.config_hash = config_hash(c);
    report.version = code_version();
    report.slope_min = c.slope_min;
    report.slope_max = c.slope_max;
    report.metric = c.metric;
    return report;
}

FreeEnergyTable macro_table(const ExperimentConfig& c, const SingleSitePotential& pot) {
    FreeEnergyOptions opts;
    opts.hermite_nodes = c.hermite_nodes;
    return build_free_energy(pot, c.m_max, c.free_energy_grid, opts);
}

MacroTrajectory macro_reference(const ExperimentConfig& c, const FreeEnergyTable& table,
                                const std::vector<double>& times) {
    const MacroField zeta0 = MacroField::sample(c.macro_grid, c.profile);
    const double dt = c.macro_dt > 0.0 ? c.macro_dt : 0.9 * macro_dt_cap(table, c.macro_grid, c.macro_scheme);
    return macro_integrate(table, zeta0, c.T, dt, times, c.macro_scheme);
}

/// max_g |ζ_num(T) − heat solution| / max |heat solution|, Gaussian case only.
double heat_closed_form_gap(const InitialProfile& profile, const MacroField& zeta, double t) {
    const auto g = zeta.size();
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < g; ++i) {
        const double theta = static_cast<double>(i) / static_cast<double>(g);
        const double exact = heat_solution(profile, theta, t);
        diff = std::max(diff, std::abs(zeta.values()(static_cast<Eigen::Index>(i)) - exact));
        scale = std::max(scale, std::abs(exact));
    }
    return scale > 0.0 ? diff / scale : diff;
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

/// Λ(σ) = log ∫ exp(σx − ψ(x)) dx by a dense trapezoid rule on a window around the mode.
double brute_log_partition(const SingleSitePotential& pot, double sigma) {
    const double centre = sigma - pot.tilt();
    const double h = 0.005;
    const int half = 8000;
    double peak = -std::numeric_limits<double>::infinity();
    std::vector<double> e(2 * half + 1);
    for (int i = -half; i <= half; ++i) {
        const double x = centre + h * i;
        e[i + half] = sigma * x - pot.psi(x);
        peak = std::max(peak, e[i + half]);
    }
    double acc = 0.0;
    for (double v : e) acc += std::exp(v - peak);
    return peak + std::log(acc * h);
}

/// sup_σ (σm − Λ(σ)) by a grid search followed by golden-section refinement.
double brute_legendre(const SingleSitePotential& pot, double m, double sigma_lo, double sigma_hi) {
    auto objective = [&](double s) { return s * m - brute_log_partition(pot, s); };
    const int grid = 200;
    double best_s = sigma_lo, best = -std::numeric_limits<double>::infinity();
    const double step = (sigma_hi - sigma_lo) / grid;
    for (int i = 0; i <= grid; ++i) {
        const double s = sigma_lo + step * i;
        const double v = objective(s);
        if (v > best) {
            best = v;
            best_s = s;
        }
    }
    double a = best_s - step, b = best_s + step;
    const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = b - ratio * (b - a), x2 = a + ratio * (b - a);
    double f1 = objective(x1), f2 = objective(x2);
    while (b - a > 1e-9) {
        if (f1 < f2) {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = objective(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = objective(x1);
        }
    }
    return std::max({best, f1, f2});
}

std::string format_double(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

SingleSitePotential make_potential(const PotentialSpec& spec) {
    if (spec.name == "gaussian") return normalize_tilt(gaussian_perturbation());
    if (spec.name == "cosine") {
        if (!std::isfinite(spec.beta) || !std::isfinite(spec.omega) || !std::isfinite(spec.phase)) {
            throw ConfigError("cosine potential parameters must be finite");
        }
        return normalize_tilt(cosine_perturbation(spec.beta, spec.omega, spec.phase));
    }
    throw ConfigError("unknown potential '" + spec.name + "' (expected gaussian or cosine)");
}

double InitialProfile::operator()(double theta) const { return heat_solution(*this, theta, 0.0); }

Eigen::VectorXd InitialProfile::cell_averages(int n_sites) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n_sites);
    const double n = n_sites;
    for (const Mode& m : profile_modes(name)) {
        const double w = two_pi * m.k;
        for (int i = 0; i < n_sites; ++i) {
            const double lo = i / n, hi = (i + 1) / n;
            out(i) += n / w *
                      (m.a * (std::sin(w * hi) - std::sin(w * lo)) - m.b * (std::cos(w * hi) - std::cos(w * lo)));
        }
    }
    return amplitude * out;
}

double InitialProfile::sup_norm() const {
    double best = 0.0;
    const int samples = 8192;
    for (int i = 0; i < samples; ++i) best = std::max(best, std::abs((*this)(static_cast<double>(i) / samples)));
    return best;
}

namespace {

ExperimentConfig defaults_for(const std::string& experiment) {
    ExperimentConfig c;
    c.experiment = experiment;
    if (experiment == "micro_to_meso") {
        c.ladder = {{64, 4}, {128, 4}, {256, 4}};
        c.T = 0.02;
        c.profile = {"zero", 1.0};
        c.initial_law = "equilibrium";
        c.metric = "abar_inv";
        c.slope_max = -0.6;
        c.macro_scheme = MacroScheme::rk4_fourth_order;
    } else if (experiment == "meso_to_macro") {
        c.ladder = {{64, 4}, {216, 6}, {512, 8}};
        c.T = 0.05;
        c.profile = {"cos1", 1.0};
        c.initial_law = "deterministic";
        c.metric = "hneg1";
        c.slope_max = -1.4;
    } else if (experiment == "full_limit") {
        c.ladder = {{64, 4}, {125, 5}, {216, 6}};
        c.T = 0.02;
        c.profile = {"cos1", 1.0};
        c.initial_law = "tilted_equilibrium";
        c.metric = "hneg1";
        c.slope_max = -0.4;
    } else if (experiment == "free_energy") {
        c.T = 0.05;
        c.profile = {"cos1", 1.0};
        c.macro_scheme = MacroScheme::explicit_euler;
    } else if (experiment != "operator_suite") {
        throw ConfigError("unknown experiment '" + experiment +
                          "' (expected micro_to_meso, meso_to_macro, full_limit, operator_suite or free_energy)");
    }
    return c;
}

const std::set<std::string> known_keys = {
    "experiment", "potential", "ladder", "k_min", "T", "snapshots", "micro_dt_factor", "meso_dt", "macro_grid",
    "macro_scheme", "macro_dt", "realizations", "seed", "drift_mode", "fiber", "mcmc_max_relative_error",
    "init_profile", "amplitude", "initial_law", "eta0", "micro_noise", "fit_variable", "metric", "slope_min",
    "slope_max", "envelope_factor", "m_max", "free_energy_grid", "hermite_nodes", "samples", "threads", "outdir"};

}  // namespace

ExperimentConfig parse_config(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (!known_keys.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }
    try {
        ExperimentConfig c = defaults_for(j.value("experiment", std::string("operator_suite")));
        if (j.contains("potential")) {
            const json& p = j.at("potential");
            if (p.is_string()) {
                c.potential.name = p.get<std::string>();
            } else {
                for (const auto& [key, value] : p.items()) {
                    if (key != "name" && key != "beta" && key != "omega" && key != "phase") {
                        throw ConfigError("unknown potential key '" + key + "'");
                    }
                }
                read(p, "name", c.potential.name);
                read(p, "beta", c.potential.beta);
                read(p, "omega", c.potential.omega);
                read(p, "phase", c.potential.phase);
            }
        }
        if (j.contains("ladder")) {
            c.ladder.clear();
            for (const json& e : j.at("ladder")) {
                if (e.is_array()) {
                    if (e.size() != 2) throw ConfigError("ladder entries must be [N, M]");
                    c.ladder.emplace_back(e[0].get<int>(), e[1].get<int>());
                } else {
                    c.ladder.emplace_back(e.at("N").get<int>(), e.at("M").get<int>());
                }
            }
        }
        read(j, "k_min", c.k_min);
        read(j, "T", c.T);
        read(j, "snapshots", c.snapshots);
        read(j, "micro_dt_factor", c.micro_dt_factor);
        read(j, "meso_dt", c.meso_dt);
        read(j, "macro_grid", c.macro_grid);
        if (j.contains("macro_scheme")) c.macro_scheme = parse_macro_scheme(j.at("macro_scheme").get<std::string>());
        read(j, "macro_dt", c.macro_dt);
        read(j, "realizations", c.realizations);
        read(j, "seed", c.seed);
        if (j.contains("drift_mode")) c.drift_mode = parse_drift_kind(j.at("drift_mode").get<std::string>());
        if (j.contains("fiber")) {
            const json& f = j.at("fiber");
            read(f, "burn_in", c.fiber.burn_in);
            read(f, "samples", c.fiber.samples);
            read(f, "dt", c.fiber.dt);
            read(f, "batches", c.fiber.batches);
        }
        read(j, "mcmc_max_relative_error", c.mcmc_max_relative_error);
        if (j.contains("init_profile")) {
            const json& p = j.at("init_profile");
            if (p.is_string()) {
                c.profile.name = p.get<std::string>();
            } else {
                read(p, "name", c.profile.name);
                read(p, "amplitude", c.profile.amplitude);
            }
        }
        read(j, "amplitude", c.profile.amplitude);
        read(j, "initial_law", c.initial_law);
        read(j, "eta0", c.eta0);
        read(j, "micro_noise", c.micro_noise);
        read(j, "fit_variable", c.fit_variable);
        read(j, "metric", c.metric);
        if (j.contains("slope_min")) c.slope_min = j.at("slope_min").is_null() ? -INFINITY : j.at("slope_min").get<double>();
        if (j.contains("slope_max")) c.slope_max = j.at("slope_max").is_null() ? INFINITY : j.at("slope_max").get<double>();
        read(j, "envelope_factor", c.envelope_factor);
        read(j, "m_max", c.m_max);
        read(j, "free_energy_grid", c.free_energy_grid);
        read(j, "hermite_nodes", c.hermite_nodes);
        read(j, "samples", c.samples);
        read(j, "threads", c.threads);
        read(j, "outdir", c.outdir);
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

void validate_config(const ExperimentConfig& c) {
    defaults_for(c.experiment);
    make_potential(c.potential);
    profile_modes(c.profile.name);
    const bool rate = c.experiment == "micro_to_meso" || c.experiment == "meso_to_macro" || c.experiment == "full_limit";
    const bool ensemble = c.experiment == "micro_to_meso" || c.experiment == "full_limit";
    if (c.threads < 1) throw ConfigError("threads must be >= 1");
    if (!std::isfinite(c.profile.amplitude)) throw ConfigError("amplitude must be finite");
    if (rate) {
        if (c.ladder.size() < 3) throw ConfigError("a rate experiment needs at least 3 ladder sizes");
        std::set<std::pair<int, int>> seen;
        for (auto [n, m] : c.ladder) {
            if (m < 2 || n <= 0 || n % m != 0) {
                throw ConfigError("ladder entry (" + std::to_string(n) + ", " + std::to_string(m) +
                                  ") does not satisfy N = K M with M >= 2");
            }
            if (n / m < c.k_min) {
                throw ConfigError("ladder entry (" + std::to_string(n) + ", " + std::to_string(m) + ") has K < k_min = " +
                                  std::to_string(c.k_min));
            }
            if (c.experiment == "full_limit" && n / m != m * m) {
                throw ConfigError("full_limit requires K = M^2, got (" + std::to_string(n) + ", " + std::to_string(m) + ")");
            }
            if (!seen.insert({n, m}).second) throw ConfigError("duplicate ladder entry");
        }
        if (!(c.T > 0.0) || !std::isfinite(c.T)) throw ConfigError("T must be positive");
        if (c.snapshots < 2) throw ConfigError("snapshots must be >= 2");
        if (!c.fit_variable.empty() && c.fit_variable != "K" && c.fit_variable != "M" && c.fit_variable != "N") {
            throw ConfigError("fit_variable must be K, M or N");
        }
        if (!(c.slope_min <= c.slope_max)) throw ConfigError("slope_min must not exceed slope_max");
    }
    if (ensemble) {
        if (c.realizations < 2) throw ConfigError("an ensemble experiment needs at least 2 realizations");
        if (!(c.micro_dt_factor > 0.0 && c.micro_dt_factor <= 1.0)) throw ConfigError("micro_dt_factor must be in (0, 1]");
        if (c.initial_law != "equilibrium" && c.initial_law != "tilted_equilibrium" && c.initial_law != "deterministic") {
            throw ConfigError("initial_law must be equilibrium, tilted_equilibrium or deterministic");
        }
    }
    if (c.experiment == "micro_to_meso") {
        if (c.metric != "abar_inv" && c.metric != "hneg1" && c.metric != "l2_time_integral") {
            throw ConfigError("micro_to_meso metric must be abar_inv, hneg1 or l2_time_integral");
        }
        if (c.eta0 != "profile" && c.eta0 != "zero") throw ConfigError("eta0 must be profile or zero");
    }
    if (c.experiment == "meso_to_macro" && c.metric != "hneg1" && c.metric != "l2_time_integral") {
        throw ConfigError("meso_to_macro metric must be hneg1 or l2_time_integral");
    }
    if (c.experiment == "micro_to_meso" || c.experiment == "meso_to_macro") {
        if (c.drift_mode == DriftKind::gaussian_exact && !make_potential(c.potential).is_gaussian()) {
            throw ConfigError("drift_mode gaussian_exact requires the gaussian potential");
        }
        if (c.meso_dt < 0.0) throw ConfigError("meso_dt must be >= 0");
    }
    const bool macro = c.experiment == "meso_to_macro" || c.experiment == "full_limit" || c.experiment == "free_energy" ||
                       (c.experiment == "micro_to_meso" && c.drift_mode == DriftKind::surrogate_phi);
    if (macro) {
        if (c.macro_grid < 8) throw ConfigError("macro_grid must be >= 8");
        if (c.free_energy_grid < 3 || c.free_energy_grid % 2 == 0) throw ConfigError("free_energy_grid must be odd and >= 3");
        if (!(c.m_max > 0.0)) throw ConfigError("m_max must be positive");
        if (c.profile.sup_norm() >= c.m_max) {
            throw ConfigError("the initial profile leaves [-m_max, m_max]; raise m_max or lower the amplitude");
        }
        if (c.macro_dt < 0.0) throw ConfigError("macro_dt must be >= 0");
    }
    if (c.experiment == "free_energy" && c.m_max < 3.0) throw ConfigError("free_energy needs m_max >= 3");
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["experiment"] = c.experiment;
    j["potential"] = {{"name", c.potential.name}, {"beta", c.potential.beta}, {"omega", c.potential.omega},
                      {"phase", c.potential.phase}};
    json ladder = json::array();
    for (auto [n, m] : c.ladder) ladder.push_back({n, m});
    j["ladder"] = ladder;
    j["k_min"] = c.k_min;
    j["T"] = c.T;
    j["snapshots"] = c.snapshots;
    j["micro_dt_factor"] = c.micro_dt_factor;
    j["meso_dt"] = c.meso_dt;
    j["macro_grid"] = c.macro_grid;
    j["macro_scheme"] = to_string(c.macro_scheme);
    j["macro_dt"] = c.macro_dt;
    j["realizations"] = c.realizations;
    j["seed"] = c.seed;
    j["drift_mode"] = to_string(c.drift_mode);
    j["fiber"] = {{"burn_in", c.fiber.burn_in}, {"samples", c.fiber.samples}, {"dt", c.fiber.dt},
                  {"batches", c.fiber.batches}};
    j["mcmc_max_relative_error"] = c.mcmc_max_relative_error;
    j["init_profile"] = {{"name", c.profile.name}, {"amplitude", c.profile.amplitude}};
    j["initial_law"] = c.initial_law;
    j["eta0"] = c.eta0;
    j["micro_noise"] = c.micro_noise;
    j["fit_variable"] = c.fit_variable;
    j["metric"] = c.metric;
    j["slope_min"] = std::isfinite(c.slope_min) ? json(c.slope_min) : json(nullptr);
    j["slope_max"] = std::isfinite(c.slope_max) ? json(c.slope_max) : json(nullptr);
    j["envelope_factor"] = c.envelope_factor;
    j["m_max"] = c.m_max;
    j["free_energy_grid"] = c.free_energy_grid;
    j["hermite_nodes"] = c.hermite_nodes;
    j["samples"] = c.samples;
    return j;
}

std::string config_hash(const ExperimentConfig& c) {
    const std::string text = config_to_json(c).dump();
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

std::string code_version() { return KAWASAKI_VERSION; }

// ---------------------------------------------------------------------------
// Rate fitting

RateFit fit_rate(const std::vector<RatePoint>& points) {
    if (points.size() < 3) throw PreconditionError("fit_rate needs at least 3 points");
    const std::size_t n = points.size();
    bool weighted = true;
    for (const RatePoint& p : points) {
        if (!(p.size > 0.0)) throw PreconditionError("fit_rate: sizes must be positive");
        if (!(p.error > 0.0)) {
            throw DegenerateFitError("fit_rate: non-positive error " + format_double(p.error) + " at size " +
                                     format_double(p.size));
        }
        if (!(p.standard_error > 0.0)) weighted = false;
    }
    std::vector<double> x(n), y(n), w(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = std::log(points[i].size);
        y[i] = std::log(points[i].error);
        if (weighted) {
            const double s = points[i].standard_error / points[i].error;
            w[i] = 1.0 / (s * s);
        }
    }
    double sw = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sw += w[i];
        sx += w[i] * x[i];
        sy += w[i] * y[i];
    }
    const double xb = sx / sw, yb = sy / sw;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += w[i] * (x[i] - xb) * (x[i] - xb);
        sxy += w[i] * (x[i] - xb) * (y[i] - yb);
    }
    if (!(sxx > 0.0)) throw DegenerateFitError("fit_rate: all sizes are equal");
    RateFit fit;
    fit.points = n;
    fit.weighted = weighted;
    fit.slope = sxy / sxx;
    fit.intercept = yb - fit.slope * xb;
    double quantile = 1.959963984540054;
    if (weighted) {
        fit.slope_standard_error = std::sqrt(1.0 / sxx);
    } else {
        double rss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - fit.intercept - fit.slope * x[i];
            rss += r * r;
        }
        const double dof = static_cast<double>(n - 2);
        fit.slope_standard_error = std::sqrt(rss / dof / sxx);
        quantile = boost::math::quantile(boost::math::complement(boost::math::students_t(dof), 0.025));
    }
    fit.ci_low = fit.slope - quantile * fit.slope_standard_error;
    fit.ci_high = fit.slope + quantile * fit.slope_standard_error;
    return fit;
}

bool RateReport::passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const PropertyCheck& c) { return c.passed; });
}

// ---------------------------------------------------------------------------
// Concurrency

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = count;
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Experiments

RateReport run_micro_to_meso(const ExperimentConfig& config) {
    validate_config(config);
    if (config.experiment != "micro_to_meso") throw ConfigError("run_micro_to_meso called with " + config.experiment);
    const SingleSitePotential pot = make_potential(config.potential);
    RateReport report = make_report(config);
    report.fit_variable = config.fit_variable.empty() ? default_fit_variable(config.ladder, "K") : config.fit_variable;
    const std::vector<double> times = snapshot_times(config.T, config.snapshots);

    std::optional<FreeEnergyTable> table;
    if (config.drift_mode == DriftKind::surrogate_phi) table = macro_table(config, pot);
    const MesoDriftMode mode = make_drift_mode(config, table ? &*table : nullptr);

    enum { abar_inv, hneg1, l2, n_metrics };
    const std::array<const char*, n_metrics> names = {"abar_inv", "hneg1", "l2"};
    std::vector<RatePoint> points;
    bool envelope_ok = true;
    double worst_envelope = 0.0;
    for (auto [n, m] : config.ladder) {
        const auto start = std::chrono::steady_clock::now();
        const MultiscaleGrid grid(n, m, config.k_min);
        const OperatorCache cache = OperatorCache::assemble(grid);
        const SplineField eta0 =
            config.eta0 == "zero" ? SplineField::zero(m) : project_function(cache, [&](double th) { return config.profile(th); });
        const MesoOptions meso_options;
        const double meso_dt = config.meso_dt > 0.0
                                   ? config.meso_dt
                                   : std::min(0.5 * meso_options.stability_factor / meso_stiffness(cache, pot, mode),
                                              config.T / static_cast<double>(config.snapshots - 1));
        const MesoTrajectory eta = meso_integrate(cache, pot, mode, eta0, config.T, meso_dt, times, meso_options);

        EnsembleSpec spec{&pot,
                          grid,
                          config.initial_law == "equilibrium" ? Eigen::VectorXd(Eigen::VectorXd::Zero(n))
                                                              : config.profile.cell_averages(n),
                          config.initial_law != "deterministic",
                          config.micro_noise,
                          config.micro_dt_factor,
                          times,
                          n_metrics};
        const Series values = run_ensemble(spec, config.realizations, config.seed, config.threads,
                                           [&](const Eigen::VectorXd& x, std::size_t s, double* out) {
                                               const SplineField d = project_lattice(cache, x) - eta.snapshots[s];
                                               const double a = abar_norm(cache, d, -1);
                                               const double h = hneg1_distance(SpinConfiguration(x), eta.snapshots[s]);
                                               out[abar_inv] = a * a;
                                               out[hneg1] = h * h;
                                               out[l2] = cache.l2_inner(d.coeffs(), d.coeffs());
                                           });

        SizeResult size;
        size.n = n;
        size.m = m;
        size.k = n / m;
        size.size = size_of(report.fit_variable, n, m, size.k);
        for (std::size_t q = 0; q < n_metrics; ++q) {
            const std::vector<MeanSe> series = reduce_metric(values, q);
            for (std::size_t s = 0; s < times.size(); ++s) {
                report.rows.push_back({size.size, n, m, size.k, times[s], names[q], series[s].mean, series[s].se});
            }
            if (q == l2) continue;
            const MeanSe sup = sup_over_time(series);
            size.metrics[std::string("sup_") + names[q]] = sup.mean;
            size.metrics[std::string("sup_") + names[q] + "_stderr"] = sup.se;
            if (config.metric == names[q]) {
                size.error = sup.mean;
                size.standard_error = sup.se;
            }
        }
        const MeanSe integral = time_integral(values, l2, times);
        size.metrics["l2_time_integral"] = integral.mean;
        size.metrics["l2_time_integral_stderr"] = integral.se;
        if (config.metric == "l2_time_integral") {
            size.error = integral.mean;
            size.standard_error = integral.se;
        }

        const double floor = equilibrium_abar_inv_floor(cache);
        const double envelope = config.envelope_factor * (config.T / size.k + floor);
        const double measured = size.metrics["sup_abar_inv"];
        size.metrics["envelope"] = envelope;
        size.metrics["equilibrium_floor"] = floor;
        if (!(measured <= envelope)) envelope_ok = false;
        worst_envelope = std::max(worst_envelope, measured / envelope);

        const std::string label = size_label(n, m);
        report.constants[label + ".equilibrium_floor"] = floor;
        report.constants[label + ".micro_dt"] = kawasaki_dt_cap(grid, pot, config.micro_dt_factor);
        report.constants[label + ".meso_dt"] = meso_dt;
        report.constants[label + ".defect"] = cache.defect();
        size.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        points.push_back({size.size, size.error, size.standard_error});
        report.sizes.push_back(std::move(size));
    }
    report.add_check({"envelope", envelope_ok, worst_envelope, 1.0,
                      "max over sizes of sup_t E|PX - eta|^2_{Abar^-1} / (factor (T/K + equilibrium floor))"});
    add_fit_checks(report, points);
    check_conclusive(report);
    return report;
}

RateReport run_meso_to_macro(const ExperimentConfig& config) {
    validate_config(config);
    if (config.experiment != "meso_to_macro") throw ConfigError("run_meso_to_macro called with " + config.experiment);
    const SingleSitePotential pot = make_potential(config.potential);
    RateReport report = make_report(config);
    report.fit_variable = config.fit_variable.empty() ? "M" : config.fit_variable;
    const std::vector<double> times = snapshot_times(config.T, config.snapshots);

    const FreeEnergyTable table = macro_table(config, pot);
    const MacroTrajectory zeta = macro_reference(config, table, times);
    std::vector<PiecewisePolynomial> zeta_interp;
    for (const MacroField& f : zeta.snapshots) zeta_interp.push_back(f.interpolant());
    report.constants["lambda_num"] = table.lambda_num();
    report.constants["Lambda_num"] = table.Lambda_num();
    if (pot.is_gaussian()) {
        const double gap = heat_closed_form_gap(config.profile, zeta.snapshots.back(), config.T);
        report.constants["macro_closed_form_gap"] = gap;
        report.add_check({"macro_closed_form", gap <= 1e-6, gap, 1e-6, "macro reference vs Fourier heat solution"});
    }
    const EnergyDecayReport decay = macro_energy_decay_check(zeta);
    report.add_check({"macro_energy_decay", decay.monotone, decay.worst_increase, 1e-8, "macro free energy per step"});

    const MesoDriftMode mode = make_drift_mode(config, &table);
    std::vector<RatePoint> points;
    bool lyapunov_ok = true;
    for (auto [n, m] : config.ladder) {
        const auto start = std::chrono::steady_clock::now();
        const MultiscaleGrid grid(n, m, config.k_min);
        const OperatorCache cache = OperatorCache::assemble(grid);
        const SplineField eta0 = project_function(cache, [&](double th) { return config.profile(th); });
        const MesoOptions meso_options;
        const double meso_dt = config.meso_dt > 0.0
                                   ? config.meso_dt
                                   : std::min(0.5 * meso_options.stability_factor / meso_stiffness(cache, pot, mode),
                                              config.T / static_cast<double>(config.snapshots - 1));
        const MesoTrajectory eta = meso_integrate(cache, pot, mode, eta0, config.T, meso_dt, times, meso_options);

        SizeResult size;
        size.n = n;
        size.m = m;
        size.k = n / m;
        size.size = size_of(report.fit_variable, n, m, size.k);
        std::vector<double> hneg1(times.size()), l2(times.size());
        double previous = std::numeric_limits<double>::infinity();
        for (std::size_t s = 0; s < times.size(); ++s) {
            const double h = hneg1_distance(eta.snapshots[s], zeta_interp[s]);
            hneg1[s] = h * h;
            l2[s] = (eta.snapshots[s].as_piecewise() - zeta_interp[s]).squared_l2();
            report.rows.push_back({size.size, n, m, size.k, times[s], "hneg1", hneg1[s], 0.0});
            report.rows.push_back({size.size, n, m, size.k, times[s], "l2", l2[s], 0.0});
            if (mode.kind == DriftKind::gaussian_exact) {
                const double a = abar_norm(cache, eta.snapshots[s], -1);
                if (a * a > previous * (1.0 + 1e-12) + 1e-300) lyapunov_ok = false;
                previous = a * a;
            }
        }
        size.metrics["sup_hneg1"] = *std::max_element(hneg1.begin(), hneg1.end());
        size.metrics["l2_time_integral"] = trapezoid(times, l2);
        size.error = config.metric == "l2_time_integral" ? size.metrics["l2_time_integral"] : size.metrics["sup_hneg1"];
        report.constants[size_label(n, m) + ".meso_dt"] = meso_dt;
        size.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        points.push_back({size.size, size.error, 0.0});
        report.sizes.push_back(std::move(size));
    }
    if (mode.kind == DriftKind::gaussian_exact) {
        report.add_check({"meso_lyapunov_decay", lyapunov_ok, 0.0, 0.0, "<eta, Abar^-1 eta> non-increasing"});
    }
    add_fit_checks(report, points);
    return report;
}

RateReport run_full_limit(const ExperimentConfig& config) {
    validate_config(config);
    if (config.experiment != "full_limit") throw ConfigError("run_full_limit called with " + config.experiment);
    const SingleSitePotential pot = make_potential(config.potential);
    RateReport report = make_report(config);
    report.fit_variable = config.fit_variable.empty() ? "N" : config.fit_variable;
    const std::vector<double> times = snapshot_times(config.T, config.snapshots);

    const FreeEnergyTable table = macro_table(config, pot);
    const MacroTrajectory zeta = macro_reference(config, table, times);
    std::vector<PiecewisePolynomial> zeta_interp;
    for (const MacroField& f : zeta.snapshots) zeta_interp.push_back(f.interpolant());
    report.constants["lambda_num"] = table.lambda_num();
    report.constants["Lambda_num"] = table.Lambda_num();
    if (pot.is_gaussian()) {
        const double gap = heat_closed_form_gap(config.profile, zeta.snapshots.back(), config.T);
        report.constants["macro_closed_form_gap"] = gap;
        report.add_check({"macro_closed_form", gap <= 1e-6, gap, 1e-6, "macro reference vs Fourier heat solution"});
    }

    std::vector<RatePoint> points;
    for (auto [n, m] : config.ladder) {
        const auto start = std::chrono::steady_clock::now();
        const MultiscaleGrid grid(n, m, config.k_min);
        const Eigen::VectorXd shift = config.initial_law == "equilibrium" ? Eigen::VectorXd(Eigen::VectorXd::Zero(n))
                                                                          : config.profile.cell_averages(n);
        EnsembleSpec spec{&pot, grid, shift, config.initial_law != "deterministic", config.micro_noise,
                          config.micro_dt_factor, times, 1};
        const Series values = run_ensemble(spec, config.realizations, config.seed, config.threads,
                                           [&](const Eigen::VectorXd& x, std::size_t s, double* out) {
                                               const double h = hneg1_distance(SpinConfiguration(x), zeta_interp[s]);
                                               out[0] = h * h;
                                           });
        SizeResult size;
        size.n = n;
        size.m = m;
        size.k = n / m;
        size.size = size_of(report.fit_variable, n, m, size.k);
        const std::vector<MeanSe> series = reduce_metric(values, 0);
        for (std::size_t s = 0; s < times.size(); ++s) {
            report.rows.push_back({size.size, n, m, size.k, times[s], "hneg1", series[s].mean, series[s].se});
        }
        const MeanSe sup = sup_over_time(series);
        size.error = sup.mean;
        size.standard_error = sup.se;
        size.metrics["sup_hneg1"] = sup.mean;
        size.metrics["sup_hneg1_stderr"] = sup.se;
        const EntropyBound ent = entropy_bound_product_init(pot, grid, shift);
        size.metrics["C_Ent"] = ent.per_site;
        report.constants[size_label(n, m) + ".C_Ent"] = ent.per_site;
        report.constants[size_label(n, m) + ".micro_dt"] = kawasaki_dt_cap(grid, pot, config.micro_dt_factor);
        size.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        points.push_back({size.size, size.error, size.standard_error});
        report.sizes.push_back(std::move(size));
    }

    std::vector<const SizeResult*> by_n;
    for (const SizeResult& s : report.sizes) by_n.push_back(&s);
    std::sort(by_n.begin(), by_n.end(), [](auto* a, auto* b) { return a->n < b->n; });
    bool decreasing = true;
    for (std::size_t i = 1; i < by_n.size(); ++i) decreasing = decreasing && by_n[i]->error < by_n[i - 1]->error;
    report.add_check({"strictly_decreasing_in_N", decreasing, 0.0, 0.0, "sup_t E|X - zeta|^2_{H^-1} across N"});
    add_fit_checks(report, points);
    check_conclusive(report);
    return report;
}

// ---------------------------------------------------------------------------
// Operator suite

SplineField random_spline(int pieces, Rng& rng) {
    NormalSource normal;
    Eigen::VectorXd c(pieces);
    normal.fill(rng, c);
    return SplineField(c);
}

SplineAlgebraResult check_spline_algebra(const std::vector<int>& pieces, std::uint64_t seed) {
    SplineAlgebraResult out{0.0, 0.0, 0.0, 0.0};
    for (int m : pieces) {
        const Eigen::MatrixXd exact = gram_matrix_exact(m);
        if (m >= 5) {
            const Eigen::MatrixXd closed = gram_matrix(m);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < m; ++j) {
                    const int d = std::min((i - j + m) % m, (j - i + m) % m);
                    const double expected = (d == 0 ? 11.0 / 20.0 : d == 1 ? 13.0 / 60.0 : d == 2 ? 1.0 / 120.0 : 0.0) / m;
                    out.gram_closed_form_gap = std::max(out.gram_closed_form_gap, std::abs(closed(i, j) - expected));
                    out.gram_exact_gap = std::max(out.gram_exact_gap, std::abs(closed(i, j) - exact(i, j)));
                }
            }
        }
        for (int s = 0; s < 997; ++s) {
            const double theta = (s + 0.5) / 997.0;
            double sum = 0.0;
            for (int j = 1; j <= m; ++j) sum += bspline_eval(m, j, theta);
            out.partition_of_unity_gap = std::max(out.partition_of_unity_gap, std::abs(sum - 1.0));
        }
        const MultiscaleGrid grid = MultiscaleGrid::from_blocks(m, 16);
        const OperatorCache cache = OperatorCache::assemble(grid);
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(m));
        for (int trial = 0; trial < 10; ++trial) {
            const SplineField y = random_spline(m, rng);
            const Eigen::VectorXd closed = apply_ANPt(grid, y).values();
            const Eigen::VectorXd composed = apply_A(grid, lift_NPt(cache, y)).values();
            const double scale = composed.cwiseAbs().maxCoeff();
            out.anpt_relative_gap = std::max(out.anpt_relative_gap, (closed - composed).cwiseAbs().maxCoeff() / scale);
        }
    }
    return out;
}

DefectScaling measure_defect_scaling(int pieces, const std::vector<int>& blocks) {
    DefectScaling out;
    out.blocks = blocks;
    std::vector<RatePoint> points;
    for (int k : blocks) {
        const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid::from_blocks(pieces, k, 1));
        out.defects.push_back(cache.defect());
        points.push_back({static_cast<double>(k), cache.defect(), 0.0});
    }
    out.fit = fit_rate(points);
    return out;
}

std::vector<SigmaMeasurement> measure_sigma(const std::vector<int>& pieces, const std::vector<int>& blocks,
                                            std::size_t samples, std::uint64_t seed) {
    std::vector<SigmaMeasurement> out;
    for (int m : pieces) {
        for (int k : blocks) {
            const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid::from_blocks(m, k));
            Rng rng = make_rng(seed, static_cast<std::uint64_t>(m));
            double worst = std::numeric_limits<double>::infinity();
            for (std::size_t s = 0; s < samples; ++s) {
                const SplineField y = random_spline(m, rng);
                worst = std::min(worst, l2_norm(y) / l2_norm(apply_ANPt_abar_inv(cache, y)));
            }
            out.push_back({m, k, worst, 1.0 / anpt_abar_inv_norm(cache)});
        }
    }
    return out;
}

std::vector<NormEquivalence> measure_norm_equivalence(const std::vector<int>& pieces, const std::vector<int>& blocks,
                                                      std::size_t samples, std::uint64_t seed) {
    std::vector<NormEquivalence> out;
    for (int m : pieces) {
        for (int k : blocks) {
            const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid::from_blocks(m, k));
            Rng rng = make_rng(seed, static_cast<std::uint64_t>(m));
            NormEquivalence e{m, k, INFINITY, 0.0, INFINITY, 0.0};
            for (std::size_t s = 0; s < samples; ++s) {
                const SplineField y = random_spline(m, rng);
                const double neg = abar_norm(cache, y, -1) / hneg1_norm(y);
                const double pos = abar_norm(cache, y, +1) / h1_seminorm(y);
                e.neg_min = std::min(e.neg_min, neg);
                e.neg_max = std::max(e.neg_max, neg);
                e.pos_min = std::min(e.pos_min, pos);
                e.pos_max = std::max(e.pos_max, pos);
            }
            out.push_back(e);
        }
    }
    return out;
}

namespace {

/// Random mean-zero lattice vector with increments ξ_n − ξ̄ (a discrete periodic Brownian bridge).
Eigen::VectorXd bridge_sample(int n, Rng& rng, NormalSource& normal) {
    Eigen::VectorXd inc(n);
    normal.fill(rng, inc);
    inc.array() -= inc.mean();
    Eigen::VectorXd x(n);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        acc += inc(i) / n;
        x(i) = acc;
    }
    x.array() -= x.mean();
    return x;
}

/// max_x |x_∥|² M² / x·Ax over mean-zero x, through the Fourier eigenbasis of A.
double exact_fiber_gamma(const OperatorCache& cache) {
    const int n = cache.grid().sites();
    const int m = cache.grid().pieces();
    Eigen::MatrixXd f(n, n - 1);
    Eigen::VectorXd lambda(n - 1);
    int col = 0;
    for (int k = 1; 2 * k < n; ++k) {
        const double l = 4.0 * n * n * std::pow(std::sin(std::numbers::pi * k / n), 2);
        for (int i = 0; i < n; ++i) {
            f(i, col) = std::sqrt(2.0 / n) * std::cos(two_pi * k * i / n);
            f(i, col + 1) = std::sqrt(2.0 / n) * std::sin(two_pi * k * i / n);
        }
        lambda(col) = lambda(col + 1) = l;
        col += 2;
    }
    if (n % 2 == 0) {
        for (int i = 0; i < n; ++i) f(i, col) = (i % 2 == 0 ? 1.0 : -1.0) / std::sqrt(static_cast<double>(n));
        lambda(col) = 4.0 * n * n;
    }
    const Eigen::MatrixXd lf = cache.lift().transpose() * f;
    const Eigen::MatrixXd proj = lf.transpose() * cache.lifted_mass().llt().solve(lf) / n;
    Eigen::MatrixXd w = Eigen::MatrixXd::Identity(n - 1, n - 1) - proj;
    const Eigen::VectorXd scale = lambda.cwiseSqrt().cwiseInverse();
    w = scale.asDiagonal() * w * scale.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(w, Eigen::EigenvaluesOnly);
    return static_cast<double>(m) * m * solver.eigenvalues().maxCoeff();
}

}  // namespace

std::vector<PoincareMeasurement> measure_poincare(const std::vector<std::pair<int, int>>& sizes, std::size_t samples,
                                                  std::uint64_t seed) {
    std::vector<PoincareMeasurement> out;
    for (auto [n, m] : sizes) {
        const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid(n, m));
        Rng rng = make_rng(seed, static_cast<std::uint64_t>(n));
        NormalSource normal;
        PoincareMeasurement p{n, m, 0.0, 0.0};
        for (std::size_t s = 0; s < samples; ++s) {
            const Eigen::VectorXd x = bridge_sample(n, rng, normal);
            const double energy = dirichlet_form(x);
            p.discrete_constant = std::max(p.discrete_constant, x.squaredNorm() / energy);
            p.gamma = std::max(p.gamma, project_onto_fiber_tangent(cache, x).squaredNorm() * m * m / energy);
        }
        out.push_back(p);
    }
    return out;
}

std::vector<GradientIdentityCase> run_gradient_identity_suite(std::size_t nodes_per_dimension) {
    const MultiscaleGrid tiny(8, 2);
    const SplineField y(Eigen::Vector2d(0.3, -0.3));
    Eigen::VectorXd v(8);
    v << 1.0, -2.0, 0.5, 0.25, -0.75, 1.5, -1.0, 0.5;
    const std::vector<TestFunction> functions = {constant_test_function(), linear_test_function(v),
                                                 site_square_test_function(0)};
    const std::vector<std::pair<std::string, SingleSitePotential>> pots = {
        {"gaussian", make_potential({"gaussian", 0.0, 1.0, 0.0})},
        {"cosine", make_potential({"cosine", 0.5, 1.0, 0.0})}};
    GradientIdentityOptions opts;
    opts.nodes_per_dimension = nodes_per_dimension;
    std::vector<GradientIdentityCase> out;
    for (const auto& [name, pot] : pots) {
        for (const TestFunction& f : functions) {
            const GradientIdentityResult r = check_gradient_identity(pot, tiny, f, y, opts);
            out.push_back({name, f.name, r.residual, r.skipped});
        }
    }
    return out;
}

namespace {

/// max_y |y|_{H¹} / (M |y|_{L²}) over random splines.
double inverse_sobolev_constant(int m, std::size_t samples, std::uint64_t seed) {
    Rng rng = make_rng(seed, 0x50b0ULL + static_cast<std::uint64_t>(m));
    double worst = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        const SplineField y = random_spline(m, rng);
        worst = std::max(worst, h1_seminorm(y) / (m * l2_norm(y)));
    }
    return worst;
}

}  // namespace

RateReport run_operator_suite(const ExperimentConfig& config) {
    validate_config(config);
    RateReport report = make_report(config);
    const std::uint64_t seed = config.seed;
    const std::size_t samples = config.samples;

    const SplineAlgebraResult algebra = check_spline_algebra({5, 8, 16, 32}, seed);
    report.constants["gram_closed_form_gap"] = algebra.gram_closed_form_gap;
    report.constants["gram_exact_gap"] = algebra.gram_exact_gap;
    report.constants["partition_of_unity_gap"] = algebra.partition_of_unity_gap;
    report.constants["anpt_relative_gap"] = algebra.anpt_relative_gap;
    report.add_check({"gram_entries", algebra.gram_closed_form_gap <= 1e-12 && algebra.gram_exact_gap <= 1e-12,
                      std::max(algebra.gram_closed_form_gap, algebra.gram_exact_gap), 1e-12, "closed form and exact"});
    report.add_check({"partition_of_unity", algebra.partition_of_unity_gap <= 1e-12, algebra.partition_of_unity_gap,
                      1e-12, ""});
    report.add_check({"anpt_closed_form", algebra.anpt_relative_gap <= 1e-9, algebra.anpt_relative_gap, 1e-9,
                      "relative to A composed with NP^t"});

    const DefectScaling defect = measure_defect_scaling(8, {8, 16, 32, 64});
    for (std::size_t i = 0; i < defect.blocks.size(); ++i) {
        report.constants["defect.M8_K" + std::to_string(defect.blocks[i])] = defect.defects[i];
    }
    report.constants["defect.slope"] = defect.fit.slope;
    report.add_check({"defect_slope", std::abs(defect.fit.slope + 2.0) <= 0.3, defect.fit.slope, -2.0,
                      "log-log slope of |PNP^t - id| in K at M = 8, window -2 ± 0.3"});

    const std::vector<SigmaMeasurement> sigma = measure_sigma({4, 8, 16}, {16, 32, 64}, samples, seed);
    double sigma_min = INFINITY;
    for (const SigmaMeasurement& s : sigma) {
        const std::string label = "sigma.M" + std::to_string(s.m) + "_K" + std::to_string(s.k);
        report.constants[label] = s.sigma_sampled;
        report.constants[label + ".exact"] = s.sigma_exact;
        sigma_min = std::min(sigma_min, s.sigma_sampled);
    }
    report.add_check({"sigma_floor", sigma_min >= 0.1, sigma_min, 0.1, "min |y| / |ANP^t Abar^-1 y| over random y"});

    const std::vector<NormEquivalence> eq = measure_norm_equivalence({4, 8, 16}, {16, 32, 64}, samples, seed);
    bool inside = true;
    double worst_low = INFINITY, worst_high = 0.0;
    double growth_pos = -INFINITY, growth_neg = -INFINITY;  // largest width increase from one K to the next
    for (std::size_t i = 0; i < eq.size(); ++i) {
        const NormEquivalence& e = eq[i];
        const std::string label = "norm_ratio.M" + std::to_string(e.m) + "_K" + std::to_string(e.k);
        report.constants[label + ".neg_min"] = e.neg_min;
        report.constants[label + ".neg_max"] = e.neg_max;
        report.constants[label + ".pos_min"] = e.pos_min;
        report.constants[label + ".pos_max"] = e.pos_max;
        worst_low = std::min({worst_low, e.neg_min, e.pos_min});
        worst_high = std::max({worst_high, e.neg_max, e.pos_max});
        inside = inside && e.neg_min >= 1.0 / 3.0 && e.pos_min >= 1.0 / 3.0 && e.neg_max <= 3.0 && e.pos_max <= 3.0;
        if (i > 0 && eq[i - 1].m == e.m) {
            growth_neg = std::max(growth_neg, (e.neg_max - e.neg_min) - (eq[i - 1].neg_max - eq[i - 1].neg_min));
            growth_pos = std::max(growth_pos, (e.pos_max - e.pos_min) - (eq[i - 1].pos_max - eq[i - 1].pos_min));
        }
    }
    report.add_check({"norm_equivalence_interval", inside, worst_low, 1.0 / 3.0,
                      "ratios in [1/3, 3]; largest ratio " + format_double(worst_high)});
    report.add_check({"norm_equivalence_shrinking_h1", growth_pos <= 1e-12, growth_pos, 0.0,
                      "width of |y|_Abar / |y|_{H^1} non-increasing in K at each M"});
    report.add_check({"norm_equivalence_shrinking_hneg1", growth_neg <= 1e-12, growth_neg, 0.0,
                      "width of |y|_{Abar^-1} / |y|_{H^-1} non-increasing in K at each M"});

    const std::vector<std::pair<int, int>> poincare_sizes = {{64, 4}, {128, 8}, {256, 16}, {512, 32}, {1024, 64}};
    const std::vector<PoincareMeasurement> poincare = measure_poincare(poincare_sizes, 10 * samples, seed);
    bool discrete_ok = true, fiber_ok = true;
    double c_max = 0.0, gamma_max = 0.0, gamma_exact_max = 0.0;
    for (const PoincareMeasurement& p : poincare) {
        const std::string label = "N" + std::to_string(p.n) + "_M" + std::to_string(p.m);
        const double c_exact = 1.0 / (4.0 * p.n * p.n * std::pow(std::sin(std::numbers::pi / p.n), 2));
        const double g_exact = exact_fiber_gamma(OperatorCache::assemble(MultiscaleGrid(p.n, p.m)));
        report.constants["poincare." + label] = p.discrete_constant;
        report.constants["poincare." + label + ".exact"] = c_exact;
        report.constants["gamma." + label] = p.gamma;
        report.constants["gamma." + label + ".exact"] = g_exact;
        discrete_ok = discrete_ok && p.discrete_constant <= c_exact * (1.0 + 1e-9) &&
                      c_exact <= 1.01 / (4.0 * std::numbers::pi * std::numbers::pi);
        fiber_ok = fiber_ok && p.gamma <= g_exact * (1.0 + 1e-9);
        c_max = std::max(c_max, c_exact);
        gamma_max = std::max(gamma_max, p.gamma);
        gamma_exact_max = std::max(gamma_exact_max, g_exact);
    }
    double gamma_exact_min = INFINITY;
    for (const auto& [key, value] : report.constants) {
        if (key.rfind("gamma.", 0) == 0 && key.size() > 6 && key.find(".exact") != std::string::npos) {
            gamma_exact_min = std::min(gamma_exact_min, value);
        }
    }
    report.add_check({"discrete_poincare", discrete_ok, c_max, 1.01 / (4.0 * std::numbers::pi * std::numbers::pi),
                      "sampled constants below the worst case, worst case bounded across N"});
    report.add_check({"fiber_poincare", fiber_ok && gamma_exact_max <= 1.5 * gamma_exact_min, gamma_exact_max,
                      1.5 * gamma_exact_min, "|x_par|^2 <= gamma/M^2 x.Ax, gamma bounded across sizes"});

    double sobolev_max = 0.0, sobolev_min = INFINITY;
    for (int m : {4, 8, 16, 32, 64}) {
        const double c = inverse_sobolev_constant(m, samples, seed);
        report.constants["inverse_sobolev.M" + std::to_string(m)] = c;
        sobolev_max = std::max(sobolev_max, c);
        sobolev_min = std::min(sobolev_min, c);
    }
    report.add_check({"inverse_sobolev", sobolev_max <= 2.0 * sobolev_min, sobolev_max, 2.0 * sobolev_min,
                      "|y|_{H^1} / (M |y|_{L^2}) bounded across M"});

    double residual_max = 0.0;
    bool any_skipped = false;
    for (const GradientIdentityCase& g : run_gradient_identity_suite()) {
        report.constants["gradient_identity." + g.potential + "." + g.function] = g.residual;
        residual_max = std::max(residual_max, g.residual);
        any_skipped = any_skipped || g.skipped;
    }
    report.add_check({"gradient_identity", !any_skipped && residual_max <= 1e-6, residual_max, 1e-6,
                      any_skipped ? "a case was skipped" : "N = 8, M = 2, tensor Gauss-Hermite"});
    return report;
}

// ---------------------------------------------------------------------------
// Free energy and macro solver

RateReport run_free_energy(const ExperimentConfig& config) {
    validate_config(config);
    const SingleSitePotential pot = make_potential(config.potential);
    RateReport report = make_report(config);
    const FreeEnergyTable table = macro_table(config, pot);
    const auto& m = table.m_grid();
    const std::size_t mid = m.size() / 2;

    report.constants["lambda_num"] = table.lambda_num();
    report.constants["Lambda_num"] = table.Lambda_num();
    const double dphi0 = std::abs(table.phi_prime()[mid]);
    report.add_check({"phi_prime_at_zero", dphi0 <= 1e-8, dphi0, 1e-8, ""});

    double min_curv = INFINITY;
    bool monotone = true;
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (std::abs(m[i]) <= 3.0 + 1e-12) min_curv = std::min(min_curv, table.phi_double_prime()[i]);
        if (i > 0) monotone = monotone && table.phi_prime()[i] > table.phi_prime()[i - 1];
    }
    report.add_check({"phi_convex_on_3", min_curv > 0.0, min_curv, 0.0, "min phi'' on [-3, 3]"});
    report.add_check({"phi_prime_increasing", monotone, 0.0, 0.0, ""});

    if (pot.is_gaussian()) {
        double gap = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i) gap = std::max(gap, std::abs(table.phi_prime()[i] - m[i]));
        report.add_check({"gaussian_phi_prime_identity", gap <= 1e-10, gap, 1e-10, "phi'(m) = m"});
    }

    double legendre_gap = 0.0;
    const double sigma_span = std::max(std::abs(table.sigma_star().front()), std::abs(table.sigma_star().back())) + 1.0;
    const std::size_t stride = std::max<std::size_t>(1, (m.size() - 1) / 40);
    for (std::size_t i = 0; i < m.size(); i += stride) {
        const double brute = brute_legendre(pot, m[i], -sigma_span, sigma_span);
        legendre_gap = std::max(legendre_gap, std::abs(brute - table.phi()[i]));
    }
    report.constants["legendre_brute_force_gap"] = legendre_gap;
    report.add_check({"legendre_brute_force", legendre_gap <= 1e-6, legendre_gap, 1e-6,
                      "table phi vs dense quadrature and sigma search"});

    // Heat kernel reproduction with a Gaussian table, explicit scheme, G = 256.
    {
        const FreeEnergyTable gaussian = build_free_energy(make_potential({}), 4.0, 801);
        const std::size_t g = 256;
        const InitialProfile cos1{"cos1", 1.0};
        const MacroField zeta0 = MacroField::sample(g, cos1);
        const double dt = 0.9 * macro_dt_cap(gaussian, g, MacroScheme::explicit_euler);
        const MacroTrajectory traj = macro_integrate(gaussian, zeta0, 0.05, dt, {0.05}, MacroScheme::explicit_euler);
        const double gap = heat_closed_form_gap(cos1, traj.snapshots.back(), 0.05);
        report.constants["heat_kernel_relative_error"] = gap;
        report.add_check({"heat_kernel", gap <= 1e-3, gap, 1e-3, "cos(2 pi theta) at t = 0.05, G = 256"});
    }

    {
        const std::vector<double> times = snapshot_times(config.T, config.snapshots);
        const MacroField zeta0 = MacroField::sample(config.macro_grid, config.profile);
        const double dt =
            config.macro_dt > 0.0 ? config.macro_dt : 0.9 * macro_dt_cap(table, config.macro_grid, config.macro_scheme);
        const MacroTrajectory traj = macro_integrate(table, zeta0, config.T, dt, times, config.macro_scheme);
        const EnergyDecayReport decay = macro_energy_decay_check(traj);
        report.add_check({"energy_non_increasing", decay.monotone, decay.worst_increase, 1e-8, "per step"});
        report.add_check({"energy_dissipation_identity", decay.dissipation_matches, decay.worst_dissipation_gap, 0.1,
                          "decrement vs dt |phi'(zeta)|^2_{H^1}"});
        bool l2_monotone = true;
        for (std::size_t i = 1; i < traj.l2_squared.size(); ++i) {
            l2_monotone = l2_monotone && traj.l2_squared[i] <= traj.l2_squared[i - 1] * (1.0 + 1e-12);
        }
        if (config.macro_scheme == MacroScheme::explicit_euler) {
            report.add_check({"l2_non_increasing", l2_monotone, 0.0, 0.0, "explicit scheme under the dt cap"});
        }
        const MacroBoundsReport bounds = macro_bounds_check(table, traj);
        report.constants["bounds.sup_ratio"] = bounds.sup_ratio;
        report.constants["bounds.sup_bound"] = bounds.sup_bound;
        report.constants["bounds.c_dissipation"] = bounds.c_dissipation;
        report.constants["bounds.c_h1"] = bounds.c_h1;
        report.add_check({"macro_sup_bound", bounds.sup_ok, bounds.sup_ratio, bounds.sup_bound,
                          "sup |zeta|^2 / |zeta0|^2 <= Lambda/lambda"});
        report.add_check({"macro_h1_bound", bounds.h1_ok, bounds.h1_integral,
                          bounds.dissipation_integral / (table.lambda_num() * table.lambda_num()),
                          "int |zeta|^2_{H^1} <= int |phi'(zeta)|^2_{H^1} / lambda^2"});
    }
    report.free_energy = table;
    return report;
}

RateReport run_experiment(const ExperimentConfig& config) {
    if (config.experiment == "micro_to_meso") return run_micro_to_meso(config);
    if (config.experiment == "meso_to_macro") return run_meso_to_macro(config);
    if (config.experiment == "full_limit") return run_full_limit(config);
    if (config.experiment == "operator_suite") return run_operator_suite(config);
    if (config.experiment == "free_energy") return run_free_energy(config);
    throw ConfigError("unknown experiment '" + config.experiment + "'");
}

// ---------------------------------------------------------------------------
// Output

namespace {

ordered_json number(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

}  // namespace

ordered_json report_to_json(const RateReport& r) {
    ordered_json j;
    j["experiment"] = r.experiment;
    j["version"] = r.version;
    j["config_hash"] = r.config_hash;
    j["passed"] = r.passed();
    j["fit_variable"] = r.fit_variable;
    j["metric"] = r.metric;
    ordered_json sizes = ordered_json::array();
    for (const SizeResult& s : r.sizes) {
        ordered_json e;
        e["N"] = s.n;
        e["M"] = s.m;
        e["K"] = s.k;
        e["size"] = s.size;
        e["error"] = number(s.error);
        e["stderr"] = number(s.standard_error);
        ordered_json metrics = ordered_json::object();
        for (const auto& [k, v] : s.metrics) metrics[k] = number(v);
        e["metrics"] = metrics;
        sizes.push_back(e);
    }
    j["sizes"] = sizes;
    if (r.fit) {
        j["fit"] = {{"slope", number(r.fit->slope)},
                    {"intercept", number(r.fit->intercept)},
                    {"slope_stderr", number(r.fit->slope_standard_error)},
                    {"ci_low", number(r.fit->ci_low)},
                    {"ci_high", number(r.fit->ci_high)},
                    {"points", r.fit->points},
                    {"weighted", r.fit->weighted}};
    } else {
        j["fit"] = nullptr;
    }
    j["slope_window"] = {number(r.slope_min), number(r.slope_max)};
    ordered_json checks = ordered_json::array();
    for (const PropertyCheck& c : r.checks) {
        checks.push_back({{"name", c.name},
                          {"passed", c.passed},
                          {"measured", number(c.measured)},
                          {"bound", number(c.bound)},
                          {"detail", c.detail}});
    }
    j["checks"] = checks;
    ordered_json constants = ordered_json::object();
    for (const auto& [k, v] : r.constants) constants[k] = number(v);
    j["constants"] = constants;
    return j;
}

void write_outputs(const RateReport& report, const std::string& outdir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(outdir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + outdir + "': " + ec.message());
    const fs::path dir(outdir);
    {
        std::ofstream out(dir / "report.json");
        out << report_to_json(report).dump(2) << '\n';
    }
    {
        std::ofstream out(dir / "errors.csv");
        out << "size,N,M,K,t,metric,error,stderr\n";
        for (const ErrorRow& row : report.rows) {
            out << format_double(row.size) << ',' << row.n << ',' << row.m << ',' << row.k << ','
                << format_double(row.t) << ',' << row.metric << ',' << format_double(row.error) << ','
                << format_double(row.standard_error) << '\n';
        }
    }
    {
        std::ofstream out(dir / "constants.csv");
        out << "name,value\n";
        for (const auto& [k, v] : report.constants) out << k << ',' << format_double(v) << '\n';
        if (report.fit) {
            out << "fit.slope," << format_double(report.fit->slope) << '\n';
            out << "fit.intercept," << format_double(report.fit->intercept) << '\n';
        }
    }
    if (report.free_energy) {
        std::ofstream out(dir / "free_energy.csv");
        report.free_energy->write_csv(out);
    }
    {
        ordered_json timing;
        timing["experiment"] = report.experiment;
        ordered_json sizes = ordered_json::array();
        for (const SizeResult& s : report.sizes) {
            sizes.push_back({{"N", s.n}, {"M", s.m}, {"K", s.k}, {"wall_seconds", s.wall_seconds}});
        }
        timing["sizes"] = sizes;
        std::ofstream out(dir / "timing.json");
        out << timing.dump(2) << '\n';
    }
}

}  // namespace kawasaki
