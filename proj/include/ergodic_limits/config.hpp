#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ergodic_limits/map_families.hpp"

namespace ergodic_limits {

enum class Command { Decompose, Covariance, Moments, Wip, FamilySweep, B1B2, Homogenize };

std::string to_string(Command c);

struct MapConfig {
    std::string family = "doubling";  ///< doubling | lsv | quadratic
    double parameter = 2.0;
    friend bool operator==(const MapConfig&, const MapConfig&) = default;
};

struct ObservableConfig {
    std::string kind = "terms";  ///< terms | bump
    std::vector<std::vector<Term>> terms{{Term{}}};
    double bump_center = 0.75;
    double bump_width = 0.2;
    double bump_eta = 1.0;
    bool center = true;
    friend bool operator==(const ObservableConfig&, const ObservableConfig&) = default;
};

struct McSection {
    std::int64_t n_orbit = 10'000;
    std::int64_t n_samples = 10'000;
    std::int64_t burn_in = 1'000;
    std::uint64_t seed = 1;
    std::string initial_law = "invariant";  ///< invariant | lebesgue
    friend bool operator==(const McSection&, const McSection&) = default;
};

struct NumericsSection {
    int N = 4096;
    int tau_max = 500;
    double tol = 1e-10;
    std::optional<int> gk_lags;
    std::int64_t gk_length = 10'000'000;
    std::int64_t center_samples = 10'000'000;
    friend bool operator==(const NumericsSection&, const NumericsSection&) = default;
};

struct MemberConfig {
    MapConfig map;
    ObservableConfig observable;
    friend bool operator==(const MemberConfig&, const MemberConfig&) = default;
};

struct HomogenizeSection {
    std::vector<std::vector<double>> A{{0.0}};
    std::vector<double> c{0.0};
    std::string h = "identity";  ///< identity | cubic | linear
    std::vector<std::vector<double>> h_matrix;
    std::vector<double> xi{0.0};
    std::vector<double> eps_ladder{0.05, 0.02, 0.01};
    double T = 1.0;
    std::vector<double> compare_times{1.0};
    bool drift_correction = true;
    std::int64_t quad_samples = 10'000'000;
    friend bool operator==(const HomogenizeSection&, const HomogenizeSection&) = default;
};

struct ExperimentConfig {
    Command command = Command::Decompose;
    MapConfig map;
    ObservableConfig observable;
    McSection mc;
    NumericsSection numerics;
    /// covariance: any of direct, green-kubo, martingale. family-sweep and
    /// wip/homogenize use the first entry.
    std::vector<std::string> methods{"direct", "green-kubo", "martingale"};
    double p = 2.0;
    std::vector<std::int64_t> n_ladder{100, 316, 1000, 3162, 10000};
    std::vector<double> times{0.25, 0.5, 1.0};
    double eps_prime = 1.0;
    std::vector<MemberConfig> family;
    HomogenizeSection homogenize;
    std::string output_dir = "results";

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Parses and validates a JSON config. Errors are ConfigError with messages
/// of the form "line N: ...".
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// Canonical JSON with every field spelled out.
std::string serialize_config(const ExperimentConfig& cfg);

MapDescriptor make_map(const MapConfig& m);
/// Builds the observable and, if requested, centers it for the map.
Observable make_observable(const ObservableConfig& o, const MapDescriptor& map, std::int64_t center_samples);

struct RunOptions {
    std::optional<std::uint64_t> seed;
    int threads = 0;
    bool dump_operator = false;
    bool dump_decomposition = false;
    bool quiet = false;
    /// Input text echoed into report.json; the canonical form when empty.
    std::string source_text;
    /// Overrides the timestamp field (for reproducibility checks).
    std::optional<std::string> timestamp;
};

/// Exit codes: 0 all hard invariants passed, 1 a hard invariant failed or
/// an unexpected error, 2 config error, 3 ConvergenceError, TruncationError,
/// DegenerateVariance or InsufficientData, 4 BlowupError.
int run_experiment(const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log);

}  // namespace ergodic_limits
