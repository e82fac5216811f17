#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ergodic_limits/config.hpp"
#include "ergodic_limits/errors.hpp"

using namespace ergodic_limits;
using doctest::Approx;

namespace {

std::string error_of(const std::string& text) {
    try {
        parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("ergodic_limits_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("minimal config uses defaults") {
    const auto c = parse_config(R"({"command": "decompose", "map": {"family": "lsv", "parameter": 0.3}})");
    CHECK(c.command == Command::Decompose);
    CHECK(c.map.family == "lsv");
    CHECK(c.numerics.N == 4096);
    CHECK(c.mc.n_samples == 10000);
    CHECK(c.output_dir == "results");
}

TEST_CASE("serialization round trips") {
    ExperimentConfig c;
    c.command = Command::Covariance;
    c.map = {"lsv", 0.4};
    c.observable.terms = {{Term{BasisFunction::Sin, 2.0, 0.5}}, {Term{BasisFunction::Power, 3.0, 1.0}}};
    c.numerics.gk_lags = 12;
    c.mc.seed = 77;
    c.methods = {"direct", "martingale"};
    c.family = {{MapConfig{"doubling", 3}, ObservableConfig{}}};
    const auto back = parse_config(serialize_config(c));
    CHECK(back == c);
}

TEST_CASE("errors carry line numbers") {
    const std::string unknown = "{\n  \"command\": \"wip\",\n  \"map\": {\"family\": \"doubling\", \"parameter\": 2},\n"
                                "  \"mc\": {\n    \"n_orbit\": 100,\n    \"colour\": 1\n  }\n}";
    CHECK(error_of(unknown).rfind("line 6:", 0) == 0);
    CHECK(error_of(unknown).find("colour") != std::string::npos);

    const std::string bad_type = "{\"command\": \"wip\",\n\"map\": {\"family\": \"doubling\",\n\"parameter\": \"two\"}}";
    CHECK(error_of(bad_type).rfind("line 3:", 0) == 0);

    const std::string bad_json = "{\"command\": \"wip\",\n\n\"map\": }";
    CHECK(error_of(bad_json).rfind("line 3:", 0) == 0);

    CHECK_FALSE(error_of("").empty());
    CHECK_FALSE(error_of(R"({"map": {"family": "lsv", "parameter": 0.3}})").empty());
    CHECK_FALSE(error_of(R"({"command": "fly", "map": {"family": "lsv", "parameter": 0.3}})").empty());
    CHECK_FALSE(error_of(R"({"command": "wip", "map": {"family": "lsv", "parameter": 1.3}})").empty());
    CHECK_FALSE(error_of(R"({"command": "wip", "map": {"family": "doubling", "parameter": 2.5}})").empty());
    CHECK_FALSE(error_of(R"({"command": "wip", "map": {"family": "doubling", "parameter": 2}, "times": [0, 1]})").empty());
    CHECK_FALSE(error_of(R"({"command": "moments", "map": {"family": "doubling", "parameter": 2}, "n_ladder": [10, 20]})").empty());
    CHECK_FALSE(error_of(R"({"command": "homogenize", "map": {"family": "doubling", "parameter": 2},
        "homogenize": {"eps_ladder": [0.1, 0.2, 0.05]}})").empty());
}

TEST_CASE("doubling observables are centered exactly") {
    ObservableConfig o;
    o.terms = {{Term{BasisFunction::Power, 2.0, 3.0}, Term{BasisFunction::Cos, 1.0, 1.0}}};
    const Observable v = make_observable(o, make_map({"doubling", 2}), 1000);
    REQUIRE(v.centering_offset().size() == 1);
    CHECK(v.centering_offset()[0] == Approx(1.0));
}

TEST_CASE("decompose run writes a report") {
    const auto dir = scratch("decompose");
    auto c = parse_config(R"({"command": "decompose", "map": {"family": "lsv", "parameter": 0.3},
                              "numerics": {"N": 512}})");
    c.output_dir = dir.string();
    RunOptions o;
    o.quiet = true;
    o.timestamp = "fixed";
    o.dump_operator = true;
    std::ostringstream log;
    CHECK(run_experiment(c, o, log) == 0);
    std::ifstream in(dir / "report.json");
    const auto rep = nlohmann::json::parse(in);
    CHECK(rep["status"] == "ok");
    CHECK(rep["timestamp"] == "fixed");
    CHECK(rep["results"]["sigma_mart"][0][0].get<double>() == Approx(1.274).epsilon(0.01));
    CHECK(std::filesystem::exists(dir / "operator.csv"));
    CHECK_FALSE(rep.contains("threads"));
}

TEST_CASE("degenerate variance maps to exit code 3") {
    const auto dir = scratch("wip");
    auto c = parse_config(R"({"command": "wip", "map": {"family": "doubling", "parameter": 2},
        "observable": {"terms": [[{"fn": "cos", "k": 2}, {"fn": "cos", "k": 1, "coef": -1}]]},
        "mc": {"n_orbit": 100, "n_samples": 200}, "numerics": {"N": 512}})");
    c.output_dir = dir.string();
    RunOptions o;
    o.quiet = true;
    std::ostringstream log;
    CHECK(run_experiment(c, o, log) == 3);
    std::ifstream in(dir / "report.json");
    CHECK(nlohmann::json::parse(in)["error"]["type"] == "DegenerateVariance");
}

TEST_CASE("blowup maps to exit code 4") {
    const auto dir = scratch("blowup");
    auto c = parse_config(R"({"command": "homogenize", "map": {"family": "doubling", "parameter": 2},
        "mc": {"n_samples": 100}, "numerics": {"N": 512},
        "homogenize": {"A": [[60]], "c": [0], "xi": [1], "eps_ladder": [0.1, 0.05, 0.02], "quad_samples": 100000}})");
    c.output_dir = dir.string();
    RunOptions o;
    o.quiet = true;
    std::ostringstream log;
    CHECK(run_experiment(c, o, log) == 4);
}
