#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "margin/nn.hpp"
#include "margin/optim.hpp"

namespace margin {

// Keeps sqrt well-defined when all iterates coincide.
inline constexpr double kVarFloor = 1e-30;

// Diagonal Gaussian over post-burn-in training iterates.
struct SwagPosterior {
    ParamVector mean;
    std::vector<double> var;
    long count = 0;
};

// First and second moments of the iterates recorded in the trace. Uses the
// streaming moments when present, stored snapshots otherwise; requires at
// least two included iterates.
SwagPosterior swag_fit(const TrainTrace& trace);

// mean + sqrt(var) .* z with z standard normal, deterministic per seed.
ParamVector swag_sample(const SwagPosterior& post, std::uint64_t seed);

// Text checkpoint (layout version, d, count, mean, var); values round-trip
// exactly via hexfloat.
void save_posterior(const SwagPosterior& post, const std::string& path);
SwagPosterior load_posterior(const std::string& path);

// Bernoulli keep/drop bits aligned to the ParamVector layout. keep_prob is 1
// for bias coordinates and untouched layers.
struct DropoutMask {
    std::vector<std::uint8_t> bits;
    std::vector<double> keep_prob;
};

// Weight coordinates of layers that consume hidden activations (every affine
// layer after the first) are kept independently with probability
// 1 - dropout_rate. Biases and first-layer weights always kept. Kept weights
// are not rescaled; the masked networks are the model family itself.
DropoutMask sample_mask(const ModelSpec& spec, double dropout_rate, std::uint64_t seed);

ParamVector apply_mask(const ParamVector& theta, const DropoutMask& mask);

// Distribution over hyperparameter points p(h).
struct HyperPrior {
    enum class Kind { fixed, lr_gaussian, lr_ramp_uniform };
    Kind kind = Kind::fixed;
    HyperParams base;
    // lr_gaussian: alpha ~ N(lr_mean, (lr_mean / 100)^2), resampled while <= 0
    double lr_mean = 0.01;
    // lr_ramp_uniform: alpha_u ~ U[u_min, u_max], alpha_l ~ U[l_min, l_max];
    // ramp length n_e comes from base.lr
    double u_min = 0.04, u_max = 0.06, l_min = 0.008, l_max = 0.012;
};

HyperParams sample_hyper(const HyperPrior& prior, std::uint64_t seed);

// Independently initialized members trained identically; returns final
// iterates (or full traces for SWAG reuse).
std::vector<TrainTrace> ensemble_train_traces(const ModelSpec& spec, const Dataset& data,
                                              const HyperParams& h, long iterations,
                                              int n_members, std::uint64_t seed,
                                              LossKind loss = LossKind::mse,
                                              const TraceConfig& trace = {});
std::vector<ParamVector> ensemble_train(const ModelSpec& spec, const Dataset& data,
                                        const HyperParams& h, long iterations,
                                        int n_members, std::uint64_t seed,
                                        LossKind loss = LossKind::mse);

// Which conditioning variables to marginalize and with how many draws each.
// An empty selection is the classical point estimate.
struct MarginalizationSpec {
    bool t = false, theta0 = false, h = false, m_theta = false, alg = false;
    int k_t = 30, k_theta0 = 5, k_h = 5, k_m = 10, k_alg = 2;
    std::uint64_t master_seed = 0;
    // Pair one hyperparameter draw with one theta0 member (requires
    // k_h == k_theta0) instead of the full cross product.
    bool pair_theta0_h = true;
    HyperPrior hyper_prior;                     // used when h
    std::optional<AlgorithmSelector> selector;  // used when alg
    TraceConfig trace;
};

struct ParamSample {
    ParamVector params;
    std::optional<DropoutMask> mask;
    int member = 0;  // theta0 member index (0 when theta0 not marginalized)
};

// One training run inside a draw; posterior is fitted only when t is selected.
struct TrainedRun {
    int member = 0;
    HyperParams h_used;
    ParamVector final_params;
    std::optional<SwagPosterior> posterior;
    double train_seconds = 0.0;
};

struct DrawResult {
    std::vector<ParamSample> samples;
    std::vector<TrainedRun> runs;
    long models_trained = 0;
    int n_members = 1;
};

// Expected size of draw_param_samples output for this spec.
long expected_sample_count(const MarginalizationSpec& mspec);

// Sample the approximate posterior over parameters for any combination of
// marginalized variables. For each theta0 member, for each hyperparameter /
// algorithm draw, train; fit a posterior over iterates and draw k_t samples
// when t is selected (final iterate otherwise); attach k_m masks per sample
// when m_theta is selected. The empty spec returns the single trained
// point estimate.
DrawResult draw_param_samples(const MarginalizationSpec& mspec, const ModelSpec& spec,
                              const Dataset& data, const HyperParams& base_h,
                              long iterations, LossKind loss = LossKind::mse);

}  // namespace margin
