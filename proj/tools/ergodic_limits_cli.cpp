// Command-line driver: runs one experiment described by a JSON config.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ergodic_limits/config.hpp"
#include "ergodic_limits/errors.hpp"

int main(int argc, char** argv) {
    namespace el = ergodic_limits;

    CLI::App app{"Limit laws for nonuniformly expanding interval maps"};
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    el::RunOptions opts;
    app.add_option("--config", config_path, "Experiment config (JSON)")->required();
    app.add_option("--seed", seed, "Override the config seed");
    app.add_option("--threads", threads, "Worker threads (default: ERGODIC_LIMITS_THREADS or all cores)");
    app.add_flag("--dump-operator", opts.dump_operator, "Write operator.csv and density.csv");
    app.add_flag("--dump-decomposition", opts.dump_decomposition, "Write decomposition.csv");
    app.add_flag("--quiet", opts.quiet, "Suppress progress output");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    opts.seed = seed;
    if (threads) {
        opts.threads = *threads;
    } else if (const char* env = std::getenv("ERGODIC_LIMITS_THREADS")) {
        opts.threads = std::atoi(env);
    }

    el::ExperimentConfig cfg;
    try {
        std::ifstream in(config_path);
        if (!in) throw el::ConfigError("cannot read config file '" + config_path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        opts.source_text = ss.str();
        cfg = el::parse_config(opts.source_text);
    } catch (const el::ConfigError& e) {
        std::cerr << config_path << ": " << e.what() << '\n';
        return 2;
    }

    try {
        return el::run_experiment(cfg, opts, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
