#include "margin/marginals.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "margin/rng.hpp"

namespace margin {

SwagPosterior swag_fit(const TrainTrace& trace) {
    SwagPosterior post;
    if (trace.moment_count >= 2) {
        const double n = static_cast<double>(trace.moment_count);
        const std::size_t d = trace.sum.size();
        post.mean.resize(d);
        post.var.resize(d);
        for (std::size_t j = 0; j < d; ++j) {
            double mu = trace.sum[j] / n;
            post.mean[j] = mu;
            post.var[j] = std::max(trace.sum_sq[j] / n - mu * mu, kVarFloor);
        }
        post.count = trace.moment_count;
        return post;
    }
    if (trace.snapshots.size() < 2)
        throw std::runtime_error("swag_fit: need at least 2 post-burn-in iterates, have " +
                                 std::to_string(trace.snapshots.size()));
    const double n = static_cast<double>(trace.snapshots.size());
    const std::size_t d = trace.snapshots.front().size();
    post.mean.assign(d, 0.0);
    post.var.assign(d, 0.0);
    for (const ParamVector& snap : trace.snapshots)
        for (std::size_t j = 0; j < d; ++j) post.mean[j] += snap[j];
    for (std::size_t j = 0; j < d; ++j) post.mean[j] /= n;
    for (const ParamVector& snap : trace.snapshots)
        for (std::size_t j = 0; j < d; ++j) {
            double dlt = snap[j] - post.mean[j];
            post.var[j] += dlt * dlt;
        }
    for (std::size_t j = 0; j < d; ++j) post.var[j] = std::max(post.var[j] / n, kVarFloor);
    post.count = static_cast<long>(trace.snapshots.size());
    return post;
}

ParamVector swag_sample(const SwagPosterior& post, std::uint64_t seed) {
    if (post.count < 2) throw std::runtime_error("swag_sample: posterior unfitted");
    Rng rng(seed);
    ParamVector theta(post.mean.size());
    for (std::size_t j = 0; j < theta.size(); ++j)
        theta[j] = post.mean[j] + std::sqrt(post.var[j]) * rng.normal();
    return theta;
}

void save_posterior(const SwagPosterior& post, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_posterior: cannot write '" + path + "'");
    out << "margin-swag-posterior 1\n";
    out << "d " << post.mean.size() << "\n";
    out << "count " << post.count << "\n";
    char buf[64];
    auto write_vec = [&](const char* name, const std::vector<double>& v) {
        out << name;
        for (double x : v) {
            std::snprintf(buf, sizeof(buf), " %a", x);
            out << buf;
        }
        out << "\n";
    };
    write_vec("mean", post.mean);
    write_vec("var", post.var);
    if (!out) throw std::runtime_error("save_posterior: write failed for '" + path + "'");
}

SwagPosterior load_posterior(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_posterior: cannot open '" + path + "'");
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "margin-swag-posterior" || version != 1)
        throw std::runtime_error("load_posterior: '" + path + "' is not a v1 posterior file");
    std::string key;
    std::size_t d = 0;
    SwagPosterior post;
    in >> key >> d;
    if (key != "d") throw std::runtime_error("load_posterior: malformed file (expected 'd')");
    in >> key >> post.count;
    if (key != "count")
        throw std::runtime_error("load_posterior: malformed file (expected 'count')");
    auto read_vec = [&](const char* name, std::vector<double>& v) {
        in >> key;
        if (key != name)
            throw std::runtime_error(std::string("load_posterior: expected '") + name + "'");
        v.resize(d);
        std::string tok;
        for (std::size_t j = 0; j < d; ++j) {
            in >> tok;
            char* end = nullptr;
            v[j] = std::strtod(tok.c_str(), &end);
            if (end != tok.c_str() + tok.size())
                throw std::runtime_error("load_posterior: bad value in '" + path + "'");
        }
    };
    read_vec("mean", post.mean);
    read_vec("var", post.var);
    if (!in) throw std::runtime_error("load_posterior: truncated file '" + path + "'");
    return post;
}

DropoutMask sample_mask(const ModelSpec& spec, double dropout_rate, std::uint64_t seed) {
    spec.validate();
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw std::invalid_argument("sample_mask: dropout_rate must lie in [0, 1)");
    const std::size_t d = param_dim(spec);
    DropoutMask mask;
    mask.bits.assign(d, 1);
    mask.keep_prob.assign(d, 1.0);
    const double keep = 1.0 - dropout_rate;
    Rng rng(seed);
    for (int l = 1; l < spec.num_layers(); ++l) {  // layers fed by hidden activations
        LayerSlice s = layer_slice(spec, l);
        for (std::size_t i = 0; i < s.w_len; ++i) {
            mask.keep_prob[s.w_off + i] = keep;
            mask.bits[s.w_off + i] = rng.uniform() < keep ? 1 : 0;
        }
    }
    return mask;
}

ParamVector apply_mask(const ParamVector& theta, const DropoutMask& mask) {
    if (theta.size() != mask.bits.size())
        throw std::invalid_argument("apply_mask: length mismatch");
    ParamVector out(theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j)
        out[j] = theta[j] * static_cast<double>(mask.bits[j]);
    return out;
}

HyperParams sample_hyper(const HyperPrior& prior, std::uint64_t seed) {
    switch (prior.kind) {
        case HyperPrior::Kind::fixed:
            return prior.base;
        case HyperPrior::Kind::lr_gaussian: {
            if (prior.lr_mean <= 0.0)
                throw std::invalid_argument("sample_hyper: lr_gaussian needs lr_mean > 0");
            Rng rng(seed);
            for (int attempt = 0; attempt < 100; ++attempt) {
                double alpha = rng.normal(prior.lr_mean, prior.lr_mean / 100.0);
                if (alpha > 0.0) {
                    HyperParams h = prior.base;
                    h.lr = ScheduleSpec::constant(alpha);
                    return h;
                }
            }
            throw std::runtime_error(
                "sample_hyper: 100 consecutive nonpositive learning-rate draws; "
                "prior misconfigured");
        }
        case HyperPrior::Kind::lr_ramp_uniform: {
            if (prior.base.lr.kind != ScheduleSpec::Kind::swa_ramp)
                throw std::invalid_argument(
                    "sample_hyper: lr_ramp_uniform needs a swa_ramp base schedule");
            if (!(prior.u_min <= prior.u_max && prior.l_min <= prior.l_max &&
                  prior.l_min > 0.0 && prior.u_min > prior.l_max))
                throw std::invalid_argument("sample_hyper: bad ramp endpoint ranges");
            Rng rng(seed);
            double au = rng.uniform(prior.u_min, prior.u_max);
            double al = rng.uniform(prior.l_min, prior.l_max);
            HyperParams h = prior.base;
            h.lr = ScheduleSpec::swa_ramp(au, al, prior.base.lr.n_e);
            return h;
        }
    }
    throw std::logic_error("sample_hyper: unreachable");
}

std::vector<TrainTrace> ensemble_train_traces(const ModelSpec& spec, const Dataset& data,
                                              const HyperParams& h, long iterations,
                                              int n_members, std::uint64_t seed,
                                              LossKind loss, const TraceConfig& trace) {
    if (n_members < 1) throw std::invalid_argument("ensemble_train: need n_members >= 1");
    std::vector<TrainTrace> traces;
    traces.reserve(n_members);
    for (int k = 0; k < n_members; ++k) {
        ParamVector theta0 = init_params(spec, derive_seed(seed, seed_tag::theta0, k));
        try {
            traces.push_back(train(spec, theta0, data, h, iterations, loss, trace));
        } catch (const divergence_error& e) {
            throw divergence_error(e.iteration, k,
                                   "ensemble member " + std::to_string(k) +
                                       " diverged: " + e.what());
        }
    }
    return traces;
}

std::vector<ParamVector> ensemble_train(const ModelSpec& spec, const Dataset& data,
                                        const HyperParams& h, long iterations,
                                        int n_members, std::uint64_t seed, LossKind loss) {
    TraceConfig cfg;
    cfg.keep_snapshots = false;
    auto traces = ensemble_train_traces(spec, data, h, iterations, n_members, seed, loss, cfg);
    std::vector<ParamVector> finals;
    finals.reserve(traces.size());
    for (TrainTrace& t : traces) finals.push_back(std::move(t.final_params));
    return finals;
}

long expected_sample_count(const MarginalizationSpec& m) {
    long n = 1;
    if (m.theta0) n *= m.k_theta0;
    if (m.h && !(m.pair_theta0_h && m.theta0)) n *= m.k_h;
    if (m.alg) n *= m.k_alg;
    if (m.t) n *= m.k_t;
    if (m.m_theta) n *= m.k_m;
    return n;
}

DrawResult draw_param_samples(const MarginalizationSpec& mspec, const ModelSpec& spec,
                              const Dataset& data, const HyperParams& base_h,
                              long iterations, LossKind loss) {
    if ((mspec.theta0 && mspec.k_theta0 < 1) || (mspec.t && mspec.k_t < 1) ||
        (mspec.h && mspec.k_h < 1) || (mspec.m_theta && mspec.k_m < 1) ||
        (mspec.alg && mspec.k_alg < 1))
        throw std::invalid_argument("draw_param_samples: sample counts must be >= 1");
    if (mspec.alg && !mspec.selector)
        throw std::invalid_argument("draw_param_samples: alg selected without a selector");

    const bool paired = mspec.pair_theta0_h && mspec.theta0 && mspec.h;
    if (paired && mspec.k_h != mspec.k_theta0)
        throw std::invalid_argument(
            "draw_param_samples: paired theta0/h marginalization needs k_h == k_theta0");

    const std::uint64_t master = mspec.master_seed;
    const int n_members = mspec.theta0 ? mspec.k_theta0 : 1;
    const int n_hyper = mspec.h ? (paired ? 1 : mspec.k_h) : 1;
    const int n_alg = mspec.alg ? mspec.k_alg : 1;

    std::vector<HyperParams> hyper_draws;
    if (mspec.h) {
        int count = paired ? mspec.k_theta0 : mspec.k_h;
        for (int j = 0; j < count; ++j)
            hyper_draws.push_back(sample_hyper(mspec.hyper_prior,
                                               derive_seed(master, seed_tag::hyper, j)));
    }
    std::vector<HyperParams> alg_draws;
    if (mspec.alg)
        for (int a = 0; a < n_alg; ++a)
            alg_draws.push_back(
                select_algorithm(*mspec.selector, derive_seed(master, seed_tag::alg, a)));

    TraceConfig trace_cfg = mspec.trace;
    trace_cfg.keep_snapshots = mspec.t;

    DrawResult result;
    result.n_members = n_members;
    long run_index = 0;
    for (int k = 0; k < n_members; ++k) {
        ParamVector theta0 = init_params(spec, derive_seed(master, seed_tag::theta0, k));
        for (int j = 0; j < n_hyper; ++j) {
            for (int a = 0; a < n_alg; ++a, ++run_index) {
                HyperParams h_eff = mspec.alg ? alg_draws[a] : base_h;
                if (mspec.h) h_eff.lr = hyper_draws[paired ? k : j].lr;

                auto t0 = std::chrono::steady_clock::now();
                TrainTrace trace;
                try {
                    trace = train(spec, theta0, data, h_eff, iterations, loss, trace_cfg);
                } catch (const divergence_error& e) {
                    throw divergence_error(e.iteration, k,
                                           "member " + std::to_string(k) +
                                               " diverged: " + e.what());
                }
                ++result.models_trained;

                TrainedRun run;
                run.member = k;
                run.h_used = h_eff;
                run.final_params = trace.final_params;
                if (mspec.t) run.posterior = swag_fit(trace);
                run.train_seconds =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                        .count();

                std::vector<ParamVector> draws;
                if (mspec.t) {
                    const std::uint64_t swag_stream =
                        derive_seed(master, seed_tag::swag, run_index);
                    for (int s = 0; s < mspec.k_t; ++s)
                        draws.push_back(swag_sample(*run.posterior,
                                                    derive_seed(swag_stream, seed_tag::swag, s)));
                } else {
                    draws.push_back(run.final_params);
                }

                const std::uint64_t mask_stream =
                    derive_seed(master, seed_tag::mask, run_index);
                for (std::size_t dix = 0; dix < draws.size(); ++dix) {
                    if (mspec.m_theta) {
                        for (int i = 0; i < mspec.k_m; ++i) {
                            DropoutMask mask = sample_mask(
                                spec, spec.dropout_rate,
                                derive_seed(mask_stream, seed_tag::mask,
                                            dix * static_cast<std::size_t>(mspec.k_m) + i));
                            result.samples.push_back({draws[dix], std::move(mask), k});
                        }
                    } else {
                        result.samples.push_back({std::move(draws[dix]), std::nullopt, k});
                    }
                }
                result.runs.push_back(std::move(run));
            }
        }
    }
    return result;
}

}  // namespace margin
