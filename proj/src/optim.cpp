#include "margin/optim.hpp"

#include <cmath>
#include <numeric>

#include "margin/rng.hpp"

namespace margin {

ScheduleSpec ScheduleSpec::constant(double a) {
    if (a <= 0.0) throw std::invalid_argument("schedule: learning rate must be positive");
    ScheduleSpec s;
    s.kind = Kind::constant;
    s.alpha = a;
    return s;
}

ScheduleSpec ScheduleSpec::swa_ramp(double u, double l, int epochs) {
    if (!(u > l && l > 0.0))
        throw std::invalid_argument("schedule: need alpha_u > alpha_l > 0");
    if (epochs < 1) throw std::invalid_argument("schedule: n_e must be >= 1");
    ScheduleSpec s;
    s.kind = Kind::swa_ramp;
    s.alpha_u = u;
    s.alpha_l = l;
    s.n_e = epochs;
    return s;
}

double lr_at(const ScheduleSpec& sched, int epoch) {
    if (sched.kind == ScheduleSpec::Kind::constant) return sched.alpha;
    if (epoch < 1 || epoch > sched.n_e)
        throw std::invalid_argument("lr_at: epoch " + std::to_string(epoch) +
                                    " outside [1, " + std::to_string(sched.n_e) + "]");
    double e = epoch, ne = sched.n_e;
    if (e < 0.5 * ne) return sched.alpha_u;
    if (e > 0.9 * ne) return sched.alpha_l;
    return sched.alpha_u - (sched.alpha_u - sched.alpha_l) * (e - 0.5 * ne) / (0.4 * ne);
}

BatchPlan make_batch_plan(std::size_t N, int b, std::uint64_t seed, BatchMode mode,
                          std::size_t steps) {
    if (N < 1) throw std::invalid_argument("make_batch_plan: empty dataset");
    if (b < 1 || static_cast<std::size_t>(b) > N)
        throw std::invalid_argument("make_batch_plan: need 1 <= b <= N");
    if (steps < 1) throw std::invalid_argument("make_batch_plan: steps must be >= 1");

    BatchPlan plan;
    plan.N = N;
    plan.b = b;
    plan.n_batches = (N + b - 1) / b;
    plan.mode = mode;
    plan.order.reserve(steps);
    Rng rng(seed);
    if (mode == BatchMode::uniform_iid) {
        for (std::size_t s = 0; s < steps; ++s)
            plan.order.push_back(static_cast<std::uint32_t>(rng.uniform_index(plan.n_batches)));
    } else {
        std::vector<std::uint32_t> perm(plan.n_batches);
        while (plan.order.size() < steps) {
            std::iota(perm.begin(), perm.end(), 0u);
            for (std::size_t i = perm.size() - 1; i > 0; --i)
                std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
            for (std::uint32_t idx : perm) {
                if (plan.order.size() == steps) break;
                plan.order.push_back(idx);
            }
        }
    }
    return plan;
}

TrainTrace train(const ModelSpec& spec, const ParamVector& theta0, const Dataset& data,
                 const HyperParams& h, long iterations, LossKind loss,
                 const TraceConfig& trace_cfg) {
    spec.validate();
    if (iterations < 1) throw std::invalid_argument("train: need at least one iteration");
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    if (theta0.size() != param_dim(spec))
        throw std::invalid_argument("train: theta0 length mismatch");

    const std::size_t N = data.size();
    BatchPlan plan = make_batch_plan(N, h.batch_size, h.batch_seed, h.batch_mode,
                                     static_cast<std::size_t>(iterations));
    const long n_batches = static_cast<long>(plan.n_batches);

    TrainTrace trace;
    trace.iterations = iterations;
    trace.burn_in = trace_cfg.burn_in >= 0 ? trace_cfg.burn_in : (iterations + 1) / 2;
    const long cadence =
        trace_cfg.snapshot_cadence > 0 ? trace_cfg.snapshot_cadence : n_batches;
    if (trace_cfg.streaming) {
        trace.sum.assign(theta0.size(), 0.0);
        trace.sum_sq.assign(theta0.size(), 0.0);
    }

    ParamVector theta = theta0;
    std::vector<double> adam_m, adam_v;
    if (h.algorithm == Algorithm::adam) {
        adam_m.assign(theta.size(), 0.0);
        adam_v.assign(theta.size(), 0.0);
    }

    std::vector<Sample> batch;
    for (long tau = 1; tau <= iterations; ++tau) {
        int epoch = static_cast<int>((tau - 1) / n_batches) + 1;
        if (h.lr.kind == ScheduleSpec::Kind::swa_ramp && epoch > h.lr.n_e)
            epoch = h.lr.n_e;
        const double alpha = lr_at(h.lr, epoch);

        std::size_t bi = plan.order[tau - 1];
        std::size_t lo = bi * h.batch_size;
        std::size_t hi = std::min(lo + h.batch_size, N);
        batch.clear();
        for (std::size_t i = lo; i < hi; ++i) batch.push_back({data.X.row(i), data.Y.row(i)});

        auto [batch_loss, grad] = loss_and_grad(spec, theta, batch, loss);
        (void)batch_loss;

        if (h.algorithm == Algorithm::sgd) {
            for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= alpha * grad[j];
        } else {
            double bc1 = 1.0 - std::pow(h.adam_beta1, static_cast<double>(tau));
            double bc2 = 1.0 - std::pow(h.adam_beta2, static_cast<double>(tau));
            for (std::size_t j = 0; j < theta.size(); ++j) {
                adam_m[j] = h.adam_beta1 * adam_m[j] + (1.0 - h.adam_beta1) * grad[j];
                adam_v[j] = h.adam_beta2 * adam_v[j] + (1.0 - h.adam_beta2) * grad[j] * grad[j];
                theta[j] -= alpha * (adam_m[j] / bc1) / (std::sqrt(adam_v[j] / bc2) + h.adam_eps);
            }
        }

        for (double v : theta)
            if (!std::isfinite(v))
                throw divergence_error(tau, -1,
                                       "train: non-finite parameter at iteration " +
                                           std::to_string(tau));

        if (tau >= trace.burn_in && tau % cadence == 0) {
            if (trace_cfg.keep_snapshots) trace.snapshots.push_back(theta);
            if (trace_cfg.streaming) {
                for (std::size_t j = 0; j < theta.size(); ++j) {
                    trace.sum[j] += theta[j];
                    trace.sum_sq[j] += theta[j] * theta[j];
                }
                ++trace.moment_count;
            }
        }
    }
    if (trace_cfg.streaming && !trace_cfg.keep_snapshots) trace.snapshots.clear();
    trace.final_params = std::move(theta);
    return trace;
}

AlgorithmSelector::AlgorithmSelector(std::vector<HyperParams> cands, std::vector<double> w)
    : candidates(std::move(cands)), weights(std::move(w)) {
    if (candidates.empty())
        throw std::invalid_argument("algorithm selector: empty candidate list");
    if (candidates.size() != weights.size())
        throw std::invalid_argument("algorithm selector: weights/candidates size mismatch");
    double sum = 0.0;
    for (double v : weights) {
        if (v < 0.0) throw std::invalid_argument("algorithm selector: negative weight");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("algorithm selector: weights must sum to 1");
}

const HyperParams& select_algorithm(const AlgorithmSelector& sel, std::uint64_t seed) {
    if (sel.candidates.empty())
        throw std::invalid_argument("select_algorithm: empty candidate list");
    Rng rng(seed);
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < sel.weights.size(); ++i) {
        acc += sel.weights[i];
        if (u < acc) return sel.candidates[i];
    }
    return sel.candidates.back();
}

}  // namespace margin
