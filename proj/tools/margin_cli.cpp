#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "margin/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"margin: hyperparameter-marginalization uncertainty experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    int threads = 0;
    bool skip_failures = false;

    CLI::App* run = app.add_subcommand("run", "execute an experiment config");
    run->add_option("config", config_path, "path to the experiment config")->required();
    run->add_option("--out", out_dir, "output directory (overrides config)");
    CLI::Option* seed_opt = run->add_option("--seed", seed, "master seed (overrides config)");
    CLI::Option* threads_opt =
        run->add_option("--threads", threads, "worker threads for fold x method cells");
    run->add_flag("--skip-failures", skip_failures, "skip failing cells instead of aborting");

    CLI::App* validate = app.add_subcommand("validate", "parse and check a config");
    validate->add_option("config", config_path, "path to the experiment config")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (validate->parsed()) {
            margin::ExperimentConfig cfg = margin::load_config(config_path);
            std::printf("OK: %zu sweep label(s), %d fold(s), seed %llu\n", cfg.sweep.size(),
                        cfg.folds, static_cast<unsigned long long>(cfg.seed));
            return 0;
        }
        margin::ExperimentConfig cfg = margin::load_config(config_path);
        if (!out_dir.empty()) cfg.out = out_dir;
        if (*seed_opt) cfg.seed = seed;
        if (*threads_opt) cfg.threads = threads;
        if (skip_failures) cfg.skip_failures = true;
        margin::RunResult result = margin::run_experiment(cfg);
        margin::write_results(result, cfg.out);
        std::printf("wrote %zu row(s) to %s/{results_raw,results_summary,trend}.csv\n",
                    result.rows.size(), cfg.out.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "margin: %s\n", e.what());
        return 1;
    }
}
