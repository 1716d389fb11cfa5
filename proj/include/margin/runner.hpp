#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "margin/data.hpp"
#include "margin/marginals.hpp"
#include "margin/nn.hpp"
#include "margin/optim.hpp"

namespace margin {

enum class DatasetKind { toy, file, two_blob };

// A marginalization-combination method label: "+"-joined tokens from
// {t, theta0, h, m_theta, alg}; "none" (or empty) is the classical point
// estimate.
struct SweepLabel {
    std::string text = "none";
    bool t = false, theta0 = false, h = false, m_theta = false, alg = false;
};

SweepLabel parse_label(const std::string& s);

enum class PriorKind { fixed, lr_gaussian, lr_ramp_uniform };

struct ExperimentConfig {
    // [dataset]
    DatasetKind kind = DatasetKind::toy;
    std::string path;                 // file
    int target_cols = 1;              // file
    int target_select = -1;           // file: keep one target column
    char delimiter = 0;               // file: 0 = auto
    int two_blob_n = 200;             // two_blob
    int folds = 0;                    // 0 = kind default (toy 1, file 20, two_blob 5)
    // [model]
    std::vector<int> hidden = {50};
    Activation activation = Activation::relu;
    OutputHead head = OutputHead::regression_identity;
    double dropout = 0.0;
    // [training]
    LossKind loss = LossKind::mse;
    int epochs = 100;
    Algorithm algorithm = Algorithm::sgd;
    double lr = 0.01;
    bool lr_is_ramp = false;
    double lr_u = 0.05, lr_l = 0.01;
    int batch = 1;
    BatchMode batch_mode = BatchMode::epoch_shuffle;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    PriorKind prior_kind = PriorKind::fixed;
    double prior_lr_mean = 0.01;
    double prior_u_min = 0.04, prior_u_max = 0.06;
    double prior_l_min = 0.008, prior_l_max = 0.012;
    std::vector<std::pair<Algorithm, double>> alg_candidates;  // (kind, weight)
    // [marginalization]
    std::vector<SweepLabel> sweep = {SweepLabel{}};
    int k_theta0 = 20, k_t = 30, k_m = 10, k_h = 5, k_alg = 2;
    bool pair_theta0_h = true;
    // [run]
    std::uint64_t seed = 0;
    std::string out = "results";
    bool trend = false;
    bool adf = false;
    bool timing = true;  // off -> wall_time_s reported as 0 for bit-reproducible output
    double burn_in_frac = 0.5;
    int threads = 1;
    bool skip_failures = false;
};

// Line-oriented "key = value" under [section] headers; '#' lines are
// comments. Unknown keys and malformed values are rejected with their line
// number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

struct ResultRow {
    std::string dataset;
    std::string method;
    int fold = 0;
    std::uint64_t seed = 0;
    double nll = 0.0;
    double metric = 0.0;  // rmse (regression) or accuracy (classification)
    long ensemble_size = 1;
    long models_trained = 1;
    double wall_time_s = 0.0;
    bool full = true;  // false for ensemble-size prefix (trend) rows
};

struct RunResult {
    std::vector<ResultRow> rows;
    std::vector<std::string> skipped;  // failed cells under --skip-failures
    bool classification = false;
};

// Execute every fold x sweep-label cell: train per the label's
// marginalization spec, estimate the predictive distribution on the test
// fold, fit observation noise on the train fold, and emit one row per cell
// (plus ensemble-size prefix rows when trend output is enabled, and
// "(adf)"-suffixed rows when ADF mode is on).
RunResult run_experiment(const ExperimentConfig& cfg);

// results_raw.csv, results_summary.csv (mean +/- population std over folds of
// the full rows) and trend.csv (per-method mean over folds at each ensemble
// size).
void write_results(const RunResult& result, const std::string& dir);

}  // namespace margin
