#pragma once
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "margin/data.hpp"
#include "margin/nn.hpp"

namespace margin {

enum class Algorithm { sgd, adam };
enum class BatchMode { uniform_iid, epoch_shuffle };

// Learning rate as a function of the epoch index (1-based).
struct ScheduleSpec {
    enum class Kind { constant, swa_ramp };
    Kind kind = Kind::constant;
    double alpha = 0.01;                     // constant
    double alpha_u = 0.05, alpha_l = 0.01;   // swa_ramp endpoints, alpha_u > alpha_l
    int n_e = 1;                             // swa_ramp total epochs

    static ScheduleSpec constant(double a);
    static ScheduleSpec swa_ramp(double u, double l, int epochs);
};

// constant -> alpha. swa_ramp -> alpha_u before 0.5*n_e, alpha_l past 0.9*n_e,
// linear decrease between.
double lr_at(const ScheduleSpec& sched, int epoch);

// The hyperparameter point h: algorithm, step-size schedule, batch size and
// batch processing order.
struct HyperParams {
    Algorithm algorithm = Algorithm::sgd;
    ScheduleSpec lr;
    int batch_size = 1;
    std::uint64_t batch_seed = 0;
    BatchMode batch_mode = BatchMode::epoch_shuffle;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
};

// Which batch index each training step processes. Batches are the contiguous
// blocks [i*b, min((i+1)*b, N)); the plan only permutes processing order.
struct BatchPlan {
    std::size_t N = 0;
    int b = 1;
    std::size_t n_batches = 0;  // ceil(N / b)
    BatchMode mode = BatchMode::epoch_shuffle;
    std::vector<std::uint32_t> order;  // one batch index per step
};

BatchPlan make_batch_plan(std::size_t N, int b, std::uint64_t seed, BatchMode mode,
                          std::size_t steps);

struct TraceConfig {
    long snapshot_cadence = 0;  // 0 -> once per epoch (every n_batches steps)
    long burn_in = -1;          // -1 -> ceil(t / 2)
    bool keep_snapshots = true;
    bool streaming = false;  // accumulate running raw moments instead of storing
};

struct TrainTrace {
    ParamVector final_params;
    std::vector<ParamVector> snapshots;   // iterates at cadence with tau >= burn_in
    std::vector<double> sum, sum_sq;      // streaming raw moments over the same iterates
    long moment_count = 0;
    long iterations = 0;
    long burn_in = 0;
};

class divergence_error : public std::runtime_error {
public:
    divergence_error(long iteration, int member, const std::string& msg)
        : std::runtime_error(msg), iteration(iteration), member(member) {}
    long iteration;
    int member;  // -1 for a single run
};

// t iterations of the chosen algorithm from theta0. The final iterate is a
// deterministic function of (theta0, h, t, data). Throws divergence_error as
// soon as any parameter turns non-finite.
TrainTrace train(const ModelSpec& spec, const ParamVector& theta0, const Dataset& data,
                 const HyperParams& h, long iterations, LossKind loss = LossKind::mse,
                 const TraceConfig& trace = {});

// Finite algorithm-class mixture; weights must sum to 1.
struct AlgorithmSelector {
    std::vector<HyperParams> candidates;
    std::vector<double> weights;

    AlgorithmSelector(std::vector<HyperParams> cands, std::vector<double> w);
};

// One-hot categorical draw over the candidates, deterministic per seed.
const HyperParams& select_algorithm(const AlgorithmSelector& sel, std::uint64_t seed);

}  // namespace margin
