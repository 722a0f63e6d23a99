#include "kawasaki/meso.hpp"

#include "kawasaki/errors.hpp"
#include "kawasaki/quadrature.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>

namespace kawasaki {

DriftKind parse_drift_kind(const std::string& name) {
    if (name == "gaussian_exact") return DriftKind::gaussian_exact;
    if (name == "mcmc") return DriftKind::mcmc;
    if (name == "surrogate_phi") return DriftKind::surrogate_phi;
    throw ConfigError("unknown drift mode '" + name + "' (expected gaussian_exact, mcmc or surrogate_phi)");
}

std::string to_string(DriftKind kind) {
    switch (kind) {
        case DriftKind::gaussian_exact:
            return "gaussian_exact";
        case DriftKind::mcmc:
            return "mcmc";
        case DriftKind::surrogate_phi:
            return "surrogate_phi";
    }
    return "unknown";
}

MesoDriftMode MesoDriftMode::surrogate(std::shared_ptr<const FreeEnergyTable> table) {
    MesoDriftMode mode;
    mode.kind = DriftKind::surrogate_phi;
    mode.table = std::move(table);
    return mode;
}

MesoDriftMode MesoDriftMode::monte_carlo(FiberOptions fiber, std::uint64_t seed, double max_relative_error) {
    MesoDriftMode mode;
    mode.kind = DriftKind::mcmc;
    mode.fiber = fiber;
    mode.seed = seed;
    mode.max_relative_error = max_relative_error;
    return mode;
}

void validate_drift_mode(const MesoDriftMode& mode, const SingleSitePotential& pot) {
    if (mode.kind == DriftKind::gaussian_exact && !pot.is_gaussian()) {
        throw PreconditionError("gaussian_exact drift requires δψ ≡ 0 and a = 0 (perturbation '" +
                                pot.perturbation().name + "')");
    }
    if (mode.kind == DriftKind::surrogate_phi && !mode.table) {
        throw PreconditionError("surrogate_phi drift needs a free-energy table");
    }
}

HbarGradient grad_hbar(const OperatorCache& cache, const SingleSitePotential& pot, const MesoDriftMode& mode,
                       const SplineField& y, Rng* rng) {
    validate_drift_mode(mode, pot);
    if (y.pieces() != cache.grid().pieces()) {
        throw PreconditionError("grad_hbar: spline piece count does not match M");
    }
    HbarGradient out{mode.kind, SplineField::zero(y.pieces()), {}, {}};
    switch (mode.kind) {
        case DriftKind::gaussian_exact:
            out.spline = SplineField(cache.pnpt_inverse(y.coeffs()));
            break;
        case DriftKind::surrogate_phi: {
            const FreeEnergyTable& table = *mode.table;
            out.spline = project_function(cache, [&](double theta) { return table.phi_prime_at(y(theta)); });
            break;
        }
        case DriftKind::mcmc: {
            Rng local = make_rng(mode.seed, 0);
            Rng& stream = rng ? *rng : local;
            FiberAverage avg = fiber_average_grad(pot, cache, y, mode.fiber, stream);
            const double scale = 1.0 + avg.mean.cwiseAbs().maxCoeff();
            const double worst = avg.standard_error.maxCoeff();
            if (worst > mode.max_relative_error * scale) {
                throw StatisticalPrecisionError("mcmc drift standard error " + std::to_string(worst) +
                                                " exceeds the cap " + std::to_string(mode.max_relative_error * scale) +
                                                "; raise the fiber sample budget");
            }
            out.fiber_mean = std::move(avg.mean);
            out.fiber_standard_error = std::move(avg.standard_error);
            break;
        }
    }
    return out;
}

SplineField meso_rhs(const OperatorCache& cache, const SingleSitePotential& pot, const MesoDriftMode& mode,
                     const SplineField& eta, Rng* rng) {
    const HbarGradient g = grad_hbar(cache, pot, mode, eta, rng);
    if (mode.kind == DriftKind::mcmc) {
        Eigen::VectorXd a_grad(cache.grid().sites());
        apply_A_inplace(cache.grid().sites(), g.fiber_mean.data(), a_grad.data());
        return -1.0 * project_lattice(cache, a_grad);
    }
    return SplineField(-cache.abar_apply(g.spline.coeffs()));
}

double meso_stiffness(const OperatorCache& cache, const SingleSitePotential& pot, const MesoDriftMode& mode) {
    // Ā(PNP^t)⁻¹ = G⁻¹ S S_P⁻¹ G is similar to S_P⁻¹ S.
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(cache.stiffness(), cache.lifted_mass(),
                                                                     Eigen::EigenvaluesOnly);
    const double linear = solver.eigenvalues().maxCoeff();
    switch (mode.kind) {
        case DriftKind::gaussian_exact:
            return linear;
        case DriftKind::surrogate_phi:
            return cache.abar_max_eigenvalue() * (mode.table ? mode.table->Lambda_num() : pot.stiffness());
        case DriftKind::mcmc:
            return linear * pot.stiffness();
    }
    return linear;
}

MesoTrajectory meso_integrate(const OperatorCache& cache, const SingleSitePotential& pot, const MesoDriftMode& mode,
                              const SplineField& eta0, double T, double dt_meso,
                              const std::vector<double>& snapshot_times, const MesoOptions& options) {
    validate_drift_mode(mode, pot);
    if (!(T >= 0.0) || !(dt_meso > 0.0)) throw ConfigError("meso_integrate needs T >= 0 and dt_meso > 0");
    const double lambda_max = meso_stiffness(cache, pot, mode);
    const double cap = options.stability_factor / lambda_max;
    if (dt_meso > cap) {
        throw StiffnessError("dt_meso=" + std::to_string(dt_meso) + " exceeds the RK4 stability limit " +
                             std::to_string(cap) + " (λ_max=" + std::to_string(lambda_max) + "); use a smaller dt_meso");
    }
    Rng rng = make_rng(mode.seed, 0x6d65736fULL);
    auto rhs = [&](const Eigen::VectorXd& c) { return meso_rhs(cache, pot, mode, SplineField(c), &rng).coeffs(); };

    std::vector<double> stops = snapshot_times;
    stops.push_back(T);
    std::sort(stops.begin(), stops.end());
    stops.erase(std::unique(stops.begin(), stops.end()), stops.end());
    auto is_snapshot = [&](double time) {
        return std::any_of(snapshot_times.begin(), snapshot_times.end(),
                           [&](double s) { return std::abs(s - time) <= 1e-14 * (1.0 + T); });
    };

    MesoTrajectory traj;
    traj.dt = dt_meso;
    Eigen::VectorXd c = eta0.coeffs();
    const double scale0 = 1.0 + c.cwiseAbs().maxCoeff();
    double t = 0.0;
    if (is_snapshot(0.0)) {
        traj.times.push_back(0.0);
        traj.snapshots.push_back(eta0);
    }
    for (double stop : stops) {
        if (stop <= 0.0) continue;
        if (stop > T) break;
        const double span = stop - t;
        const auto n_steps = static_cast<std::size_t>(std::ceil(span / dt_meso - 1e-9));
        const double h = span / static_cast<double>(std::max<std::size_t>(n_steps, 1));
        for (std::size_t s = 0; s < n_steps; ++s) {
            const Eigen::VectorXd k1 = rhs(c);
            const Eigen::VectorXd k2 = rhs(c + 0.5 * h * k1);
            const Eigen::VectorXd k3 = rhs(c + 0.5 * h * k2);
            const Eigen::VectorXd k4 = rhs(c + h * k3);
            c += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            c.array() -= c.mean();
            ++traj.steps;
            if (!c.allFinite() || c.cwiseAbs().maxCoeff() > 1e6 * scale0) {
                throw StiffnessError("meso integration blew up near t=" + std::to_string(t + (s + 1) * h) +
                                     "; use a smaller dt_meso");
            }
        }
        t = stop;
        if (is_snapshot(stop)) {
            traj.times.push_back(stop);
            traj.snapshots.push_back(SplineField(c));
        }
    }
    return traj;
}

TestFunction constant_test_function(double c) {
    return {"constant", [c](const Eigen::VectorXd&) { return c; },
            [](const Eigen::VectorXd& x) { return Eigen::VectorXd(Eigen::VectorXd::Zero(x.size())); }};
}

TestFunction linear_test_function(Eigen::VectorXd v) {
    return {"linear", [v](const Eigen::VectorXd& x) { return v.dot(x); },
            [v](const Eigen::VectorXd&) { return v; }};
}

TestFunction site_square_test_function(int site) {
    return {"site_square", [site](const Eigen::VectorXd& x) { return x(site) * x(site); },
            [site](const Eigen::VectorXd& x) {
                Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
                g(site) = 2.0 * x(site);
                return g;
            }};
}

namespace {

Eigen::VectorXd centred(Eigen::VectorXd v) {
    v.array() -= v.mean();
    return v;
}

struct FiberMoments {
    double mass = 0.0;
    double f = 0.0;
    Eigen::VectorXd grad_f;
    Eigen::VectorXd grad_h;
    Eigen::VectorXd f_grad_h;
};

// Tensor Gauss–Hermite over u ∈ ℝ^d, x = foot + U u; H(x) = ½|foot|² + ½|u|² + Σ δψ(x_i).
// Nodes whose weight product falls below 1e-16 of the largest are dropped.
struct FiberQuadrature {
    const SingleSitePotential& pot;
    const TestFunction& f;
    const Eigen::MatrixXd& basis;
    const QuadratureRule& rule;
    bool full;
    std::vector<double> cutoff;  // per level, on the partial weight product
    std::vector<Eigen::VectorXd> x;
    Eigen::VectorXd gh;
    FiberMoments out;

    void run(int level, double w) {
        const int d = static_cast<int>(basis.cols());
        if (level == d) {
            evaluate(x[static_cast<std::size_t>(d)], w);
            return;
        }
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            const double wi = w * rule.weights[i];
            if (wi < cutoff[static_cast<std::size_t>(level)]) continue;
            x[static_cast<std::size_t>(level) + 1] = x[static_cast<std::size_t>(level)] + rule.nodes[i] * basis.col(level);
            run(level + 1, wi);
        }
    }

    void evaluate(const Eigen::VectorXd& xv, double w) {
        double perturb = 0.0;
        if (!pot.perturbation().is_zero()) {
            for (Eigen::Index i = 0; i < xv.size(); ++i) perturb += pot.perturbation().eval(xv(i), 0);
        }
        w *= std::exp(-perturb);
        const double fv = f.value(xv);
        out.mass += w;
        out.f += w * fv;
        if (full) {
            grad_hamiltonian_inplace(pot, xv, gh);
            out.grad_f += w * f.gradient(xv);
            out.grad_h += w * gh;
            out.f_grad_h += (w * fv) * gh;
        }
    }
};

FiberMoments fiber_moments(const SingleSitePotential& pot, const TestFunction& f, const Eigen::VectorXd& foot,
                           const Eigen::MatrixXd& fiber_basis, std::size_t nodes, bool full) {
    const auto& rule = gauss_hermite(nodes);
    const int n = static_cast<int>(foot.size());
    const int d = static_cast<int>(fiber_basis.cols());
    const double w_max = *std::max_element(rule.weights.begin(), rule.weights.end());
    FiberQuadrature q{pot, f, fiber_basis, rule, full, {}, std::vector<Eigen::VectorXd>(static_cast<std::size_t>(d) + 1, foot),
                      Eigen::VectorXd(n), {}};
    for (int level = 0; level < d; ++level) {
        q.cutoff.push_back(1e-16 * std::pow(w_max, level + 1));
    }
    q.out.grad_f = Eigen::VectorXd::Zero(n);
    q.out.grad_h = Eigen::VectorXd::Zero(n);
    q.out.f_grad_h = Eigen::VectorXd::Zero(n);
    q.run(0, 1.0);
    FiberMoments out = std::move(q.out);
    out.f /= out.mass;
    out.grad_f /= out.mass;
    out.grad_h /= out.mass;
    out.f_grad_h /= out.mass;
    return out;
}

}  // namespace

GradientIdentityResult check_gradient_identity(const SingleSitePotential& pot, const MultiscaleGrid& tiny_grid,
                                               const TestFunction& f, const SplineField& y,
                                               const GradientIdentityOptions& options) {
    GradientIdentityResult result;
    std::optional<OperatorCache> cache;
    try {
        cache.emplace(OperatorCache::assemble(tiny_grid));
    } catch (const AssemblyError& e) {
        result.skipped = true;
        result.skip_reason = e.what();
        return result;
    }
    const int n = tiny_grid.sites();
    const int m = tiny_grid.pieces();
    if (n - m > 8) {
        throw PreconditionError("check_gradient_identity: fiber dimension " + std::to_string(n - m) +
                                " is too large for tensor quadrature");
    }

    // Orthonormal bases of range(NP^t) ∩ X_N and of the fiber directions ker P ∩ X_N.
    Eigen::MatrixXd lifted = cache->lift();
    for (int k = 0; k < m; ++k) lifted.col(k).array() -= lifted.col(k).mean();
    const Eigen::MatrixXd perp_proj = lifted * (lifted.transpose() * lifted).completeOrthogonalDecomposition().pseudoInverse() *
                                      lifted.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> perp_eig(perp_proj);
    const Eigen::MatrixXd w_basis = perp_eig.eigenvectors().rightCols(m - 1);
    const Eigen::MatrixXd par_proj = Eigen::MatrixXd::Identity(n, n) -
                                     Eigen::MatrixXd::Constant(n, n, 1.0 / n) - perp_proj;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> par_eig(par_proj);
    const Eigen::MatrixXd u_basis = par_eig.eigenvectors().rightCols(n - m);

    const Eigen::VectorXd foot = fiber_foot_point(*cache, y);
    const FiberMoments mom = fiber_moments(pot, f, foot, u_basis, options.nodes_per_dimension, true);

    result.lhs = centred(mom.grad_f);
    result.covariance = centred(mom.f_grad_h - mom.f * mom.grad_h);

    // P^t∇f̄(y) = ∇(f̄∘P)(x): derivatives of f̄ along the foot-point directions.
    result.pt_grad_fbar = Eigen::VectorXd::Zero(n);
    const double h = options.fd_step;
    for (int b = 0; b < m - 1; ++b) {
        const Eigen::VectorXd dir = w_basis.col(b);
        auto fbar = [&](double s) {
            return fiber_moments(pot, f, foot + s * dir, u_basis, options.nodes_per_dimension, false).f;
        };
        const double deriv = (-fbar(2 * h) + 8.0 * fbar(h) - 8.0 * fbar(-h) + fbar(-2 * h)) / (12.0 * h);
        result.pt_grad_fbar += deriv * dir;
    }
    result.residual = (result.lhs - result.pt_grad_fbar - result.covariance).cwiseAbs().maxCoeff();
    return result;
}

}  // namespace kawasaki
