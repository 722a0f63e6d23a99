#include "kawasaki/harness.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace kawasaki;

namespace {

ExperimentConfig config_from(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    ExperimentConfig c = parse_config(j);
    validate_config(c);
    return c;
}

std::string run_json(const std::string& text) {
    const ExperimentConfig c = config_from(text);
    py::gil_scoped_release release;
    try {
        return report_to_json(run_experiment(c)).dump();
    } catch (const InconclusiveRateError& e) {
        return report_to_json(e.report()).dump();
    }
}

Eigen::VectorXd simulate(const Eigen::VectorXd& x0, int pieces, const PotentialSpec& spec, double dt_factor,
                         std::uint64_t steps, std::uint64_t seed, bool noise) {
    const int n = static_cast<int>(x0.size());
    const MultiscaleGrid grid(n, pieces);
    const SingleSitePotential pot = make_potential(spec);
    KawasakiState s = make_kawasaki_state(SpinConfiguration(x0), seed, 0);
    KawasakiIntegrator integ(pot, grid, kawasaki_dt_cap(grid, pot, dt_factor), KawasakiOptions{noise});
    py::gil_scoped_release release;
    integ.advance(s, steps);
    return s.x;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Kawasaki dynamics multiscale verification core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    py::class_<PotentialSpec>(m, "PotentialSpec")
        .def(py::init([](std::string name, double beta, double omega, double phase) {
                 return PotentialSpec{std::move(name), beta, omega, phase};
             }),
             py::arg("name") = "gaussian", py::arg("beta") = 0.0, py::arg("omega") = 1.0, py::arg("phase") = 0.0)
        .def_readwrite("name", &PotentialSpec::name)
        .def_readwrite("beta", &PotentialSpec::beta)
        .def_readwrite("omega", &PotentialSpec::omega)
        .def_readwrite("phase", &PotentialSpec::phase);

    m.def("version", &code_version);
    m.def("_run_json", &run_json, py::arg("config_json"));
    m.def("_config_hash_json", [](const std::string& text) { return config_hash(config_from(text)); });
    m.def("_canonical_config_json", [](const std::string& text) { return config_to_json(config_from(text)).dump(); });

    m.def("gram_matrix", &gram_matrix, py::arg("pieces"));
    m.def("bspline_eval", &bspline_eval, py::arg("pieces"), py::arg("j"), py::arg("theta"));
    m.def("hneg1_norm", [](const Eigen::VectorXd& x) { return hneg1_norm(SpinConfiguration(x)); }, py::arg("x"));
    m.def("l2_norm", [](const Eigen::VectorXd& x) { return l2_norm(SpinConfiguration(x)); }, py::arg("x"));
    m.def("project", [](const Eigen::VectorXd& x, int pieces) {
        const OperatorCache cache = OperatorCache::assemble(MultiscaleGrid(static_cast<int>(x.size()), pieces));
        return Eigen::VectorXd(project_P(cache, SpinConfiguration(x)).coeffs());
    }, py::arg("x"), py::arg("pieces"), "B-spline coefficients of Px");
    m.def("defect", [](int n, int pieces) { return OperatorCache::assemble(MultiscaleGrid(n, pieces)).defect(); },
          py::arg("n_sites"), py::arg("pieces"));

    m.def("free_energy", [](const PotentialSpec& spec, double m_max, std::size_t grid) {
        const FreeEnergyTable t = build_free_energy(make_potential(spec), m_max, grid);
        py::dict d;
        d["m"] = t.m_grid();
        d["sigma_star"] = t.sigma_star();
        d["phi"] = t.phi();
        d["phi_prime"] = t.phi_prime();
        d["phi_double_prime"] = t.phi_double_prime();
        d["lambda_num"] = t.lambda_num();
        d["Lambda_num"] = t.Lambda_num();
        return d;
    }, py::arg("potential"), py::arg("m_max") = 4.0, py::arg("grid") = 801);

    m.def("fit_rate", [](const std::vector<double>& sizes, const std::vector<double>& errors,
                         std::vector<double> stderrs) {
        if (stderrs.empty()) stderrs.assign(sizes.size(), 0.0);
        if (sizes.size() != errors.size() || sizes.size() != stderrs.size()) {
            throw PreconditionError("fit_rate: sizes, errors and stderrs must have equal length");
        }
        std::vector<RatePoint> pts;
        for (std::size_t i = 0; i < sizes.size(); ++i) pts.push_back({sizes[i], errors[i], stderrs[i]});
        const RateFit f = fit_rate(pts);
        py::dict d;
        d["slope"] = f.slope;
        d["intercept"] = f.intercept;
        d["slope_stderr"] = f.slope_standard_error;
        d["ci"] = py::make_tuple(f.ci_low, f.ci_high);
        d["weighted"] = f.weighted;
        return d;
    }, py::arg("sizes"), py::arg("errors"), py::arg("stderrs") = std::vector<double>{});

    m.def("simulate", &simulate, py::arg("x0"), py::arg("pieces"), py::arg("potential") = PotentialSpec{},
          py::arg("dt_factor") = 0.5, py::arg("steps") = 1, py::arg("seed") = 0, py::arg("noise") = true,
          "Euler-Maruyama Kawasaki steps from x0; returns the final configuration.");
}
