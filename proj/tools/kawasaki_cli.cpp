#include "kawasaki/harness.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

namespace {

int run(const std::string& experiment, const std::string& config_path, const std::optional<std::uint64_t>& seed,
        const std::optional<std::string>& out, const std::optional<int>& threads) {
    using namespace kawasaki;
    nlohmann::json j = nlohmann::json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config file '" + config_path + "'");
        try {
            j = nlohmann::json::parse(in, nullptr, true, true);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config '" + config_path + "' is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
    }
    if (j.contains("experiment") && j["experiment"] != experiment) {
        throw ConfigError("config declares experiment '" + j["experiment"].dump() + "' but the subcommand runs '" +
                          experiment + "'");
    }
    j["experiment"] = experiment;
    ExperimentConfig config = parse_config(j);
    if (seed) config.seed = *seed;
    if (out) config.outdir = *out;
    if (threads) config.threads = *threads;
    validate_config(config);

    RateReport report;
    try {
        report = run_experiment(config);
    } catch (const InconclusiveRateError& e) {
        write_outputs(e.report(), config.outdir);
        std::cerr << "inconclusive: " << e.what() << '\n';
        return 1;
    }
    write_outputs(report, config.outdir);
    for (const PropertyCheck& c : report.checks) {
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << "  measured=" << c.measured << "  bound=" << c.bound;
        if (!c.detail.empty()) std::cout << "  (" << c.detail << ')';
        std::cout << '\n';
    }
    if (report.fit) {
        std::cout << "slope " << report.fit->slope << " [" << report.fit->ci_low << ", " << report.fit->ci_high
                  << "] in " << report.fit_variable << '\n';
    }
    std::cout << "outputs written to " << config.outdir << '\n';
    return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kawasaki hydrodynamic-limit verification harness"};
    app.set_version_flag("--version", kawasaki::code_version());
    app.require_subcommand(1);

    const std::map<std::string, std::string> commands = {{"operators", "operator_suite"},
                                                         {"micro-meso", "micro_to_meso"},
                                                         {"meso-macro", "meso_to_macro"},
                                                         {"full-limit", "full_limit"},
                                                         {"free-energy", "free_energy"}};
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<int> threads;
    for (const auto& [name, experiment] : commands) {
        CLI::App* sub = app.add_subcommand(name, "run the " + experiment + " experiment");
        sub->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "base seed");
        sub->add_option("--out", out, "output directory");
        sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    for (const auto& [name, experiment] : commands) {
        if (!app.got_subcommand(name)) continue;
        try {
            return run(experiment, config_path, seed, out, threads);
        } catch (const kawasaki::ConfigError& e) {
            std::cerr << "configuration error: " << e.what() << '\n';
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 1;
        }
    }
    return 2;
}
