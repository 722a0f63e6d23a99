#include "kawasaki/errors.hpp"
#include "kawasaki/harness.hpp"

#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace kawasaki;
using nlohmann::json;

namespace {

RateReport run_or_report(const ExperimentConfig& c) {
    try {
        return run_experiment(c);
    } catch (const InconclusiveRateError& e) {
        return e.report();
    }
}

ExperimentConfig small_micro(std::size_t realizations) {
    ExperimentConfig c = parse_config(json{{"experiment", "micro_to_meso"},
                                           {"ladder", json::array({{16, 4}, {32, 4}, {64, 4}})},
                                           {"T", 0.004},
                                           {"snapshots", 5},
                                           {"realizations", realizations},
                                           {"seed", 99}});
    validate_config(c);
    return c;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

const PropertyCheck* find_check(const RateReport& r, const std::string& name) {
    for (const PropertyCheck& c : r.checks) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

}  // namespace

TEST_SUITE("harness") {
    TEST_CASE("rate fit on exact and noisy power laws") {
        std::vector<RatePoint> exact;
        for (double s : {4.0, 8.0, 16.0, 32.0}) exact.push_back({s, 3.0 / s, 0.0});
        const RateFit f = fit_rate(exact);
        CHECK(f.slope == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK(std::exp(f.intercept) == doctest::Approx(3.0).epsilon(1e-12));
        CHECK_FALSE(f.weighted);
        CHECK(f.points == 4);
        CHECK(f.slope_standard_error < 1e-10);

        std::mt19937_64 rng(7);
        std::normal_distribution<double> noise(0.0, 0.01);
        std::vector<RatePoint> noisy;
        for (double s : {4.0, 8.0, 16.0, 32.0, 64.0}) {
            const double e = std::pow(s, -2.0) * (1.0 + noise(rng));
            noisy.push_back({s, e, 0.01 * e});
        }
        const RateFit w = fit_rate(noisy);
        CHECK(w.weighted);
        CHECK(std::abs(w.slope + 2.0) < 0.03);
        CHECK(w.ci_low < -2.0);
        CHECK(w.ci_high > -2.0);

        std::vector<RatePoint> outlier = exact;
        outlier[3].error *= 10.0;
        const RateFit o = fit_rate(outlier);
        CHECK(o.slope > -0.5);
        CHECK(o.slope_standard_error > 0.1);

        CHECK_THROWS_AS(fit_rate({{1.0, 1.0, 0.0}, {2.0, 0.5, 0.0}}), PreconditionError);
        CHECK_THROWS_AS(fit_rate({{1.0, 1.0, 0.0}, {2.0, 0.0, 0.0}, {4.0, 0.25, 0.0}}), DegenerateFitError);
    }

    TEST_CASE("config parsing and validation") {
        CHECK_THROWS_AS(parse_config(json{{"experiment", "micro_to_meso"}, {"bogus", 1}}), ConfigError);
        CHECK_THROWS_AS(parse_config(json{{"experiment", "nope"}}), ConfigError);
        CHECK_THROWS_AS(parse_config(json{{"experiment", "micro_to_meso"}, {"T", "soon"}}), ConfigError);
        CHECK_THROWS_AS(parse_config(json{{"potential", {{"name", "cosine"}, {"gamma", 1}}}}), ConfigError);

        const ExperimentConfig d = parse_config(json{{"experiment", "micro_to_meso"}});
        CHECK(d.ladder.size() >= 3);
        CHECK_NOTHROW(validate_config(d));

        auto invalid = [](json j) {
            j["experiment"] = j.value("experiment", std::string("micro_to_meso"));
            INFO(j.dump());
            CHECK_THROWS_AS(validate_config(parse_config(j)), ConfigError);
        };
        invalid({{"ladder", json::array({{16, 4}, {32, 4}})}});
        invalid({{"ladder", json::array({{18, 4}, {32, 4}, {64, 4}})}});
        invalid({{"ladder", json::array({{32, 4}, {32, 4}, {64, 4}})}});
        invalid({{"ladder", json::array({{8, 4}, {32, 4}, {64, 4}})}});
        invalid({{"potential", {{"name", "cosine"}, {"beta", 0.5}}}, {"drift_mode", "gaussian_exact"}});
        invalid({{"experiment", "full_limit"}, {"ladder", json::array({{64, 4}, {128, 4}, {256, 4}})}});
        invalid({{"experiment", "free_energy"}, {"m_max", 2.0}});
        invalid({{"experiment", "free_energy"}, {"free_energy_grid", 800}});
        invalid({{"experiment", "meso_to_macro"}, {"amplitude", 5.0}});

        const ExperimentConfig obj = parse_config(
            json{{"experiment", "meso_to_macro"},
                 {"ladder", json::array({json{{"N", 64}, {"M", 4}}, json{{"N", 216}, {"M", 6}}, json{{"N", 512}, {"M", 8}}})},
                 {"init_profile", {{"name", "mixed"}, {"amplitude", 0.5}}}});
        CHECK(obj.ladder[1] == std::pair<int, int>(216, 6));
        CHECK(obj.profile.name == "mixed");
        CHECK(obj.profile.amplitude == 0.5);
        CHECK(parse_config(config_to_json(obj)).ladder == obj.ladder);
    }

    TEST_CASE("config hash ignores threads and the output directory") {
        ExperimentConfig a = small_micro(16);
        ExperimentConfig b = a;
        b.threads = 4;
        b.outdir = "/elsewhere";
        CHECK(config_hash(a) == config_hash(b));
        CHECK(config_hash(a).size() == 16);
        b.seed += 1;
        CHECK(config_hash(a) != config_hash(b));
        CHECK_FALSE(code_version().empty());
    }

    TEST_CASE("initial profiles") {
        const InitialProfile cos1{"cos1", 2.0};
        const Eigen::VectorXd avg = cos1.cell_averages(8);
        for (int i = 0; i < 8; ++i) {
            const double exact = 2.0 * 8 / (2 * M_PI) * (std::sin(2 * M_PI * (i + 1) / 8) - std::sin(2 * M_PI * i / 8));
            CHECK(avg(i) == doctest::Approx(exact).epsilon(1e-12));
        }
        CHECK(std::abs(avg.sum()) < 1e-12);
        CHECK(cos1.sup_norm() == doctest::Approx(2.0));
        CHECK(cos1(0.5) == doctest::Approx(-2.0));
        CHECK(InitialProfile{"zero", 1.0}.cell_averages(4).cwiseAbs().maxCoeff() == 0.0);
        CHECK_THROWS_AS(InitialProfile({"square", 1.0})(0.1), ConfigError);
    }

    TEST_CASE("parallel_for covers every index and propagates errors") {
        std::vector<int> hits(1000, 0);
        parallel_for(hits.size(), 3, [&](std::size_t i) { hits[i] += 1; });
        CHECK(std::count(hits.begin(), hits.end(), 1) == 1000);
        CHECK_THROWS_AS(parallel_for(10, 2, [](std::size_t i) {
                            if (i == 7) throw NumericalError("boom");
                        }),
                        NumericalError);
    }

    TEST_CASE("thread count does not change results") {
        ExperimentConfig a = small_micro(24);
        ExperimentConfig b = a;
        b.threads = 3;
        CHECK(report_to_json(run_or_report(a)).dump() == report_to_json(run_or_report(b)).dump());
    }

    TEST_CASE("standard errors halve when realizations quadruple") {
        const RateReport small = run_or_report(small_micro(32));
        const RateReport large = run_or_report(small_micro(128));
        REQUIRE(small.sizes.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            const double ratio = small.sizes[i].standard_error / large.sizes[i].standard_error;
            CHECK(ratio > 1.4);
            CHECK(ratio < 2.8);
        }
    }

    TEST_CASE("zero noise and a zero profile give a degenerate fit") {
        ExperimentConfig c = parse_config(json{{"experiment", "meso_to_macro"}, {"init_profile", "zero"}});
        const RateReport r = run_or_report(c);
        for (const SizeResult& s : r.sizes) CHECK(s.error == 0.0);
        const PropertyCheck* fit = find_check(r, "rate_fit");
        REQUIRE(fit != nullptr);
        CHECK_FALSE(fit->passed);
        CHECK_FALSE(r.passed());

        ExperimentConfig q = small_micro(4);
        q.micro_noise = false;
        q.initial_law = "deterministic";
        const RateReport rq = run_or_report(q);
        for (const SizeResult& s : rq.sizes) CHECK(s.standard_error == 0.0);
    }

    TEST_CASE("written outputs are byte-identical across reruns") {
        const ExperimentConfig c = parse_config(json{{"experiment", "meso_to_macro"}, {"T", 0.02}});
        const auto base = std::filesystem::temp_directory_path() / "kawasaki_harness_test";
        std::filesystem::remove_all(base);
        write_outputs(run_experiment(c), (base / "a").string());
        write_outputs(run_experiment(c), (base / "b").string());
        for (const char* name : {"report.json", "errors.csv", "constants.csv"}) {
            CHECK(std::filesystem::exists(base / "a" / name));
            CHECK(slurp(base / "a" / name) == slurp(base / "b" / name));
        }
        CHECK_FALSE(std::filesystem::exists(base / "a" / "free_energy.csv"));
        const json rep = json::parse(slurp(base / "a" / "report.json"));
        CHECK(rep.at("experiment") == "meso_to_macro");
        CHECK(rep.at("config_hash") == config_hash(c));
        CHECK(slurp(base / "a" / "errors.csv").rfind("size,N,M,K,t,metric,error,stderr", 0) == 0);
        std::filesystem::remove_all(base);
    }
}
