// Acceptance suite: one line per criterion, nonzero exit if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "margin/adf.hpp"
#include "margin/marginals.hpp"
#include "margin/predictive.hpp"
#include "margin/rng.hpp"
#include "margin/runner.hpp"

using namespace margin;

namespace {

struct Checker {
    std::vector<std::string> failures;
    void require(bool ok, const std::string& msg) {
        if (!ok) failures.push_back(msg);
    }
};

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---------------------------------------------------------------- gradients

ParamVector fd_gradient(const ModelSpec& spec, ParamVector theta,
                        std::span<const Sample> batch, LossKind loss, double step) {
    ParamVector grad(theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j) {
        double keep = theta[j];
        theta[j] = keep + step;
        double up = loss_and_grad(spec, theta, batch, loss).first;
        theta[j] = keep - step;
        double down = loss_and_grad(spec, theta, batch, loss).first;
        theta[j] = keep;
        grad[j] = (up - down) / (2.0 * step);
    }
    return grad;
}

void criterion_gradient(Checker& ck) {
    int done = 0;
    std::uint64_t stream = 0;
    double worst = 0.0;
    while (done < 100) {
        Rng crng(derive_seed(77, 1, stream++));
        std::vector<int> sizes;
        int n_layers = 2 + static_cast<int>(crng.uniform_index(3));
        for (int l = 0; l < n_layers; ++l)
            sizes.push_back(1 + static_cast<int>(crng.uniform_index(6)));
        bool classify = crng.uniform() < 0.4;
        ModelSpec spec;
        spec.layer_sizes = sizes;
        spec.activation = crng.uniform() < 0.7 ? Activation::relu : Activation::identity;
        spec.output_head = classify ? OutputHead::classification_softmax
                                    : OutputHead::regression_identity;
        LossKind loss = classify ? LossKind::cross_entropy : LossKind::mse;

        ParamVector theta = init_params(spec, crng.next_u64());
        for (double& v : theta) v += crng.normal(0.0, 0.3);

        std::vector<std::vector<double>> xs, ys;
        int batch_size = 1 + static_cast<int>(crng.uniform_index(5));
        for (int i = 0; i < batch_size; ++i) {
            std::vector<double> x(spec.input_dim()), y(spec.output_dim(), 0.0);
            for (double& v : x) v = crng.normal();
            if (classify) {
                y[crng.uniform_index(y.size())] = 1.0;
            } else {
                for (double& v : y) v = crng.normal();
            }
            xs.push_back(std::move(x));
            ys.push_back(std::move(y));
        }
        std::vector<Sample> batch;
        for (int i = 0; i < batch_size; ++i)
            batch.push_back({std::span<const double>(xs[i]), std::span<const double>(ys[i])});

        // finite differences straddle the ReLU kink; skip configs sitting on it
        if (spec.activation == Activation::relu) {
            bool near_kink = false;
            for (const Sample& s : batch) {
                std::vector<double> a(s.x.begin(), s.x.end());
                for (int l = 0; l < spec.num_layers() - 1 && !near_kink; ++l) {
                    LayerSlice sl = layer_slice(spec, l);
                    std::vector<double> z(sl.fan_out, 0.0);
                    for (int o = 0; o < sl.fan_out; ++o) {
                        double acc = theta[sl.b_off + o];
                        for (int i = 0; i < sl.fan_in; ++i)
                            acc += theta[sl.w_off + static_cast<std::size_t>(o) * sl.fan_in + i] *
                                   a[i];
                        z[o] = acc;
                        if (std::abs(acc) < 1e-4) near_kink = true;
                    }
                    for (double& v : z) v = v > 0.0 ? v : 0.0;
                    a = z;
                }
                if (near_kink) break;
            }
            if (near_kink) continue;
        }

        ParamVector grad = loss_and_grad(spec, theta, batch, loss).second;
        ParamVector fd = fd_gradient(spec, theta, batch, loss, 1e-5);
        for (std::size_t j = 0; j < grad.size(); ++j) {
            double denom = std::max({std::abs(grad[j]), std::abs(fd[j]), 1.0});
            worst = std::max(worst, std::abs(grad[j] - fd[j]) / denom);
        }
        ++done;
    }
    ck.require(worst < 1e-5, "max relative gradient error " + fmt(worst) + " >= 1e-5");
}

// --------------------------------------------------------------- quadrature

double simpson(const std::function<double(double)>& f, double a, double b, double fa,
               double fb, double fm, double tol, int depth) {
    double m = 0.5 * (a + b);
    double flm = f(0.5 * (a + m)), frm = f(0.5 * (m + b));
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return simpson(f, a, m, fa, fm, flm, tol / 2.0, depth - 1) +
           simpson(f, m, b, fm, fb, frm, tol / 2.0, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b) {
    if (b <= a) return 0.0;
    double m = 0.5 * (a + b);
    return simpson(f, a, b, f(a), f(b), f(m), 1e-13, 48);
}

// split at the density peak so the adaptive subdivision cannot step over a
// narrow spike
double relu_moment(double mu, double sigma, int k) {
    double hi = mu + 12.0 * sigma;
    if (hi <= 0.0) return 0.0;
    double lo = std::max(0.0, mu - 12.0 * sigma);
    auto f = [&](double x) {
        double z = (x - mu) / sigma;
        double pdf = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
        return (k == 1 ? x : x * x) * pdf;
    };
    if (mu > lo && mu < hi) return integrate(f, lo, mu) + integrate(f, mu, hi);
    return integrate(f, lo, hi);
}

void criterion_relu_quadrature(Checker& ck) {
    double worst_mean = 0.0, worst_var = 0.0;
    for (int mi = -5; mi <= 5; ++mi) {
        for (int si = 0; si <= 10; ++si) {
            double mu = mi, sigma = 0.1 + si * 0.29;
            GaussianMoments out = adf_relu({{mu}, {sigma * sigma}});
            double m1 = relu_moment(mu, sigma, 1);
            double m2 = relu_moment(mu, sigma, 2);
            worst_mean = std::max(worst_mean, std::abs(out.mean[0] - m1));
            worst_var = std::max(worst_var, std::abs(out.var[0] - (m2 - m1 * m1)));
        }
    }
    ck.require(worst_mean < 1e-8, "relu mean error " + fmt(worst_mean) + " >= 1e-8");
    ck.require(worst_var < 1e-8, "relu var error " + fmt(worst_var) + " >= 1e-8");
}

// ------------------------------------------------------------ adf linear MC

void criterion_adf_linear_mc(Checker& ck) {
    const int K = 1000000;
    for (int cfg = 0; cfg < 20; ++cfg) {
        Rng prng(derive_seed(4100, 1, cfg));
        double wm = prng.uniform(-2.0, 2.0), wv = prng.uniform(0.01, 1.0);
        double xm = prng.uniform(-2.0, 2.0), xv = prng.uniform(0.01, 1.0);
        double bm = prng.uniform(-1.0, 1.0), bv = prng.uniform(0.01, 0.5);
        GaussianMoments out =
            adf_linear({{xm}, {xv}}, {&wm, 1}, {&wv, 1}, {&bm, 1}, {&bv, 1}, 1, 1);

        Rng mc(derive_seed(4200, 2, cfg));
        double sum = 0.0, sum_sq = 0.0;
        std::vector<double> ys(K);
        for (int k = 0; k < K; ++k) {
            double y = mc.normal(wm, std::sqrt(wv)) * mc.normal(xm, std::sqrt(xv)) +
                       mc.normal(bm, std::sqrt(bv));
            ys[k] = y;
            sum += y;
        }
        double mean = sum / K;
        double m2 = 0.0, m4 = 0.0;
        for (double y : ys) {
            double d = y - mean;
            m2 += d * d;
            m4 += d * d * d * d;
        }
        m2 /= K;
        m4 /= K;
        (void)sum_sq;
        double se_mean = std::sqrt(m2 / K);
        double se_var = std::sqrt(std::max(m4 - m2 * m2, 0.0) / K);
        ck.require(std::abs(out.mean[0] - mean) < 3.0 * se_mean,
                   "config " + std::to_string(cfg) + ": mean off by " +
                       fmt(std::abs(out.mean[0] - mean) / se_mean) + " SE");
        ck.require(std::abs(out.var[0] - m2) < 3.0 * se_var,
                   "config " + std::to_string(cfg) + ": var off by " +
                       fmt(std::abs(out.var[0] - m2) / se_var) + " SE");
    }
}

// --------------------------------------------------------- adf two-layer MC

void criterion_adf_two_layer(Checker& ck) {
    const int K = 100000;
    ModelSpec spec;
    spec.layer_sizes = {1, 16, 1};
    for (int cfg = 0; cfg < 10; ++cfg) {
        ParamVector mean = init_params(spec, derive_seed(9000, 3, cfg));
        mean[param_dim(spec) - 1] += 1.0;  // keep the output mean away from zero
        std::vector<double> var(mean.size());
        Rng vr(derive_seed(9100, 4, cfg));
        for (double& v : var) v = vr.uniform(1e-4, 1e-2);

        GaussianMoments out = adf_forward(spec, {mean, var}, {{0.5}, {0.0}});

        Rng mc(derive_seed(9200, 5, cfg));
        double sum = 0.0, sum_sq = 0.0;
        ParamVector draw(mean.size());
        std::vector<double> x = {0.5};
        for (int k = 0; k < K; ++k) {
            for (std::size_t j = 0; j < draw.size(); ++j)
                draw[j] = mean[j] + std::sqrt(var[j]) * mc.normal();
            double y = forward(spec, draw, x)[0];
            sum += y;
            sum_sq += y * y;
        }
        double mc_mean = sum / K;
        double mc_var = sum_sq / K - mc_mean * mc_mean;
        ck.require(std::abs(out.mean[0] - mc_mean) < 0.10 * std::abs(mc_mean),
                   "config " + std::to_string(cfg) + ": mean rel err " +
                       fmt(std::abs(out.mean[0] - mc_mean) / std::abs(mc_mean)));
        ck.require(std::abs(out.var[0] - mc_var) < 0.25 * mc_var,
                   "config " + std::to_string(cfg) + ": var rel err " +
                       fmt(std::abs(out.var[0] - mc_var) / mc_var));
    }
}

// ------------------------------------------------------------ swag fidelity

void criterion_swag(Checker& ck) {
    // fitted moments equal two-pass statistics of the stored iterates
    ModelSpec spec;
    spec.layer_sizes = {1, 8, 1};
    Dataset ds;
    ds.X = Matrix(12, 1);
    ds.Y = Matrix(12, 1);
    Rng dr(606);
    for (std::size_t i = 0; i < 12; ++i) {
        ds.X(i, 0) = dr.uniform(-1.0, 1.0);
        ds.Y(i, 0) = std::sin(ds.X(i, 0)) + 0.1 * dr.normal();
    }
    HyperParams h;
    h.lr = ScheduleSpec::constant(0.05);
    h.batch_size = 4;
    TraceConfig tc;
    tc.snapshot_cadence = 1;
    TrainTrace trace = train(spec, init_params(spec, 5), ds, h, 60, LossKind::mse, tc);
    SwagPosterior post = swag_fit(trace);
    const double n = static_cast<double>(trace.snapshots.size());
    double worst = 0.0;
    for (std::size_t j = 0; j < post.mean.size(); ++j) {
        double mean = 0.0;
        for (const auto& snap : trace.snapshots) mean += snap[j];
        mean /= n;
        double var = 0.0;
        for (const auto& snap : trace.snapshots) var += (snap[j] - mean) * (snap[j] - mean);
        var = std::max(var / n, kVarFloor);
        worst = std::max({worst, std::abs(post.mean[j] - mean), std::abs(post.var[j] - var)});
    }
    ck.require(worst < 1e-10, "two-pass mismatch " + fmt(worst) + " >= 1e-10");

    // sampling reproduces the fitted moments
    SwagPosterior syn;
    syn.mean = {0.8, -1.2, 1.5};
    syn.var = {0.25, 0.5, 0.1};
    syn.count = 50;
    const int K = 100000;
    std::vector<double> sum(3, 0.0), sum_sq(3, 0.0);
    for (int k = 0; k < K; ++k) {
        ParamVector s = swag_sample(syn, derive_seed(2400, 6, k));
        for (int j = 0; j < 3; ++j) {
            sum[j] += s[j];
            sum_sq[j] += s[j] * s[j];
        }
    }
    for (int j = 0; j < 3; ++j) {
        double mean = sum[j] / K;
        double var = sum_sq[j] / K - mean * mean;
        ck.require(std::abs(mean - syn.mean[j]) < 0.01 * std::abs(syn.mean[j]),
                   "sample mean coordinate " + std::to_string(j) + " off by more than 1%");
        ck.require(std::abs(var - syn.var[j]) < 0.02 * syn.var[j],
                   "sample var coordinate " + std::to_string(j) + " off by more than 2%");
    }
}

// ---------------------------------------------------------------- toy trend

struct RegressionScore {
    double nll = 0.0, rmse_v = 0.0;
};

RegressionScore score_regression(const ModelSpec& spec,
                                 const std::vector<ParamSample>& samples,
                                 const Dataset& train_std, const Dataset& test_std,
                                 const Matrix& test_y_orig, const Standardizer& st) {
    NoiseModel noise = fit_noise(spec, samples, train_std);
    NoiseModel noise_orig{st.inverse_y_var(0, noise.sigma2_noise)};
    double nll_sum = 0.0, se = 0.0;
    for (std::size_t i = 0; i < test_std.size(); ++i) {
        PredictiveStats s = predictive_mc(spec, samples, test_std.X.row(i));
        PredictiveStats so;
        so.mean = {st.inverse_y_mean(0, s.mean[0])};
        so.var = {st.inverse_y_var(0, s.var[0])};
        double y = test_y_orig(i, 0);
        nll_sum += nll_gaussian({&y, 1}, so, noise_orig);
        se += (y - so.mean[0]) * (y - so.mean[0]);
    }
    const double n = static_cast<double>(test_std.size());
    return {nll_sum / n, std::sqrt(se / n)};
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void criterion_toy_trend(Checker& ck) {
    ModelSpec spec;
    spec.layer_sizes = {1, 100, 1};
    const int n_seeds = 5, members = 20, k_t = 30, epochs = 100;
    std::vector<double> nll_classical, nll_ens, nll_multiswag;
    int combined_wins = 0;

    for (int s = 1; s <= n_seeds; ++s) {
        std::uint64_t master = static_cast<std::uint64_t>(s);
        Dataset train = toy_cubic(derive_seed(master, seed_tag::data, 0));
        Dataset grid = toy_cubic_testgrid();
        StandardizedFold sf = standardize_pair(train, grid, true);

        HyperParams h1, h2;
        h1.lr = ScheduleSpec::constant(0.04);
        h1.batch_size = 1;
        h1.batch_seed = derive_seed(master, seed_tag::batch, 0);
        h2.lr = ScheduleSpec::constant(0.05);
        h2.batch_size = 6;
        h2.batch_seed = derive_seed(master, seed_tag::batch, 1);
        const long t1 = static_cast<long>(epochs) * 10;  // N_b = 10 at batch 1
        const long t2 = static_cast<long>(epochs) * 2;   // N_b = ceil(10/6) = 2

        auto traces1 = ensemble_train_traces(spec, sf.train, h1, t1, members, master);
        auto traces2 = ensemble_train_traces(spec, sf.train, h2, t2, members, master);

        auto finals = [](const std::vector<TrainTrace>& traces) {
            std::vector<ParamSample> out;
            for (const TrainTrace& tr : traces)
                out.push_back({tr.final_params, std::nullopt, 0});
            return out;
        };
        std::vector<ParamSample> ens1 = finals(traces1);
        std::vector<ParamSample> ens2 = finals(traces2);
        std::vector<ParamSample> classical = {ens1[0]};
        std::vector<ParamSample> combined = ens1;
        combined.insert(combined.end(), ens2.begin(), ens2.end());

        std::vector<ParamSample> multiswag;
        for (int k = 0; k < members; ++k) {
            SwagPosterior post = swag_fit(traces1[k]);
            std::uint64_t stream = derive_seed(master, seed_tag::swag, k);
            for (int j = 0; j < k_t; ++j)
                multiswag.push_back(
                    {swag_sample(post, derive_seed(stream, seed_tag::swag, j)), std::nullopt, k});
        }

        double v_classical =
            score_regression(spec, classical, sf.train, sf.test, grid.Y, sf.st).nll;
        double v_ens = score_regression(spec, ens1, sf.train, sf.test, grid.Y, sf.st).nll;
        double v_multi =
            score_regression(spec, multiswag, sf.train, sf.test, grid.Y, sf.st).nll;
        double v_ens2 = score_regression(spec, ens2, sf.train, sf.test, grid.Y, sf.st).nll;
        double v_comb = score_regression(spec, combined, sf.train, sf.test, grid.Y, sf.st).nll;

        nll_classical.push_back(v_classical);
        nll_ens.push_back(v_ens);
        nll_multiswag.push_back(v_multi);
        if (v_comb <= std::min(v_ens, v_ens2) + 1e-12) ++combined_wins;
    }

    double med_classical = median(nll_classical);
    double med_ens = median(nll_ens);
    double med_multi = median(nll_multiswag);
    ck.require(med_multi < med_ens, "median NLL t+theta0 (" + fmt(med_multi) +
                                        ") not below theta0 (" + fmt(med_ens) + ")");
    ck.require(med_ens < med_classical, "median NLL theta0 (" + fmt(med_ens) +
                                            ") not below classical (" + fmt(med_classical) +
                                            ")");
    ck.require(combined_wins >= 4, "combined-h ensemble best in only " +
                                       std::to_string(combined_wins) + "/5 seeds");
}

// ------------------------------------------------------- ensemble-size trend

void criterion_ensemble_trend(Checker& ck) {
    ModelSpec spec;
    spec.layer_sizes = {2, 16, 2};
    spec.output_head = OutputHead::classification_softmax;
    spec.dropout_rate = 0.05;
    // lightly trained members stay diverse, which is what the ensemble-size
    // curve measures
    const int n_seeds = 5, members = 5, k_t = 10, k_m = 10, epochs = 5;
    const char* labels[] = {"none", "t", "m_theta", "t+m_theta"};
    int wins[4] = {0, 0, 0, 0};

    for (int s = 1; s <= n_seeds; ++s) {
        std::uint64_t master = 100 + static_cast<std::uint64_t>(s);
        Dataset train = two_blob_classification(derive_seed(master, seed_tag::data, 0), 200);
        Dataset test = two_blob_classification(derive_seed(master, seed_tag::data, 1), 1000);
        StandardizedFold sf = standardize_pair(train, test, false);
        std::vector<int> test_labels(test.size());
        for (std::size_t i = 0; i < test.size(); ++i)
            test_labels[i] = static_cast<int>(test.Y(i, 0));
        // one-hot targets for cross-entropy training
        Dataset train_ds = sf.train;
        Matrix onehot(train_ds.size(), 2);
        for (std::size_t i = 0; i < train_ds.size(); ++i)
            onehot(i, static_cast<int>(train.Y(i, 0))) = 1.0;
        train_ds.Y = std::move(onehot);

        HyperParams h;
        h.lr = ScheduleSpec::constant(0.1);
        h.batch_size = 20;
        h.batch_seed = derive_seed(master, seed_tag::batch, 0);
        const long t = static_cast<long>(epochs) * 10;  // N_b = 10

        auto traces = ensemble_train_traces(spec, train_ds, h, t, members, master,
                                            LossKind::cross_entropy);

        // per-member samples for each label
        std::vector<std::vector<ParamSample>> per_member[4];
        for (int li = 0; li < 4; ++li) per_member[li].resize(members);
        for (int k = 0; k < members; ++k) {
            const ParamVector& final_params = traces[k].final_params;
            per_member[0][k].push_back({final_params, std::nullopt, k});
            SwagPosterior post = swag_fit(traces[k]);
            std::uint64_t swag_stream = derive_seed(master, seed_tag::swag, k);
            std::uint64_t mask_stream = derive_seed(master, seed_tag::mask, k);
            for (int j = 0; j < k_t; ++j)
                per_member[1][k].push_back(
                    {swag_sample(post, derive_seed(swag_stream, seed_tag::swag, j)),
                     std::nullopt, k});
            for (int i = 0; i < k_m; ++i)
                per_member[2][k].push_back(
                    {final_params,
                     sample_mask(spec, spec.dropout_rate,
                                 derive_seed(mask_stream, seed_tag::mask, i)),
                     k});
            for (int j = 0; j < k_t; ++j)
                for (int i = 0; i < k_m / 2; ++i)
                    per_member[3][k].push_back(
                        {per_member[1][k][j].params,
                         sample_mask(spec, spec.dropout_rate,
                                     derive_seed(mask_stream, seed_tag::mask,
                                                 100 + j * (k_m / 2) + i)),
                         k});
        }

        for (int li = 0; li < 4; ++li) {
            auto nll_at = [&](int size) {
                std::vector<ParamSample> samples;
                for (int k = 0; k < size; ++k)
                    samples.insert(samples.end(), per_member[li][k].begin(),
                                   per_member[li][k].end());
                Matrix probs(test.size(), 2);
                for (std::size_t i = 0; i < test.size(); ++i) {
                    PredictiveStats st = predictive_mc(spec, samples, sf.test.X.row(i));
                    probs(i, 0) = st.probs[0];
                    probs(i, 1) = st.probs[1];
                }
                return nll_classification(probs, test_labels);
            };
            if (nll_at(members) < nll_at(1)) ++wins[li];
        }
    }
    for (int li = 0; li < 4; ++li)
        ck.require(wins[li] >= 4, std::string(labels[li]) + ": NLL(5) < NLL(1) in only " +
                                      std::to_string(wins[li]) + "/5 seeds");
}

// ------------------------------------------------------- sample-count algebra

void criterion_sample_algebra(Checker& ck) {
    ModelSpec spec;
    spec.layer_sizes = {1, 3, 1};
    spec.dropout_rate = 0.2;
    Dataset ds;
    ds.X = Matrix(8, 1);
    ds.Y = Matrix(8, 1);
    Rng dr(314);
    for (std::size_t i = 0; i < 8; ++i) {
        ds.X(i, 0) = dr.uniform(-1.0, 1.0);
        ds.Y(i, 0) = 0.3 * ds.X(i, 0);
    }
    HyperParams h;
    h.lr = ScheduleSpec::constant(0.05);
    h.batch_size = 4;

    for (int bits = 0; bits < 16; ++bits) {
        MarginalizationSpec m;
        m.t = bits & 1;
        m.theta0 = bits & 2;
        m.h = bits & 4;
        m.m_theta = bits & 8;
        m.k_t = m.k_theta0 = m.k_h = m.k_m = 2;
        m.pair_theta0_h = false;  // full cross product
        m.master_seed = 1000 + bits;
        m.trace.snapshot_cadence = 1;
        m.hyper_prior.kind = HyperPrior::Kind::lr_gaussian;
        m.hyper_prior.lr_mean = 0.05;
        m.hyper_prior.base = h;
        long expected = 1;
        if (m.t) expected *= 2;
        if (m.theta0) expected *= 2;
        if (m.h) expected *= 2;
        if (m.m_theta) expected *= 2;
        DrawResult draw = draw_param_samples(m, spec, ds, h, 8);
        ck.require(static_cast<long>(draw.samples.size()) == expected,
                   "subset " + std::to_string(bits) + ": got " +
                       std::to_string(draw.samples.size()) + " samples, expected " +
                       std::to_string(expected));
        ck.require(expected_sample_count(m) == expected,
                   "subset " + std::to_string(bits) + ": expected_sample_count mismatch");
    }
}

// ---------------------------------------------------------------- determinism

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void criterion_determinism(Checker& ck) {
    ExperimentConfig cfg = load_config(std::string(MARGIN_CONFIG_DIR) + "/toy.cfg");
    auto dir_a = std::filesystem::temp_directory_path() / "margin_accept_a";
    auto dir_b = std::filesystem::temp_directory_path() / "margin_accept_b";
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    write_results(run_experiment(cfg), dir_a.string());
    write_results(run_experiment(cfg), dir_b.string());
    for (const char* f : {"results_raw.csv", "results_summary.csv", "trend.csv"}) {
        std::string a = read_file(dir_a / f);
        std::string b = read_file(dir_b / f);
        ck.require(!a.empty(), std::string(f) + " empty");
        ck.require(a == b, std::string(f) + " differs between identical runs");
    }
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
}

// ------------------------------------------------------------ dropout identity

void criterion_dropout_identity(Checker& ck) {
    ExperimentConfig cfg = parse_config(
        "[dataset]\nkind = toy\n"
        "[model]\nhidden = 100\ndropout = 0\n"
        "[training]\nepochs = 20\nlr = 0.04\nbatch = 1\n"
        "[marginalization]\nsweep = none, m_theta\nk_m = 2\n"
        "[run]\nseed = 3\ntiming = off\n");
    RunResult result = run_experiment(cfg);
    const ResultRow *plain = nullptr, *masked = nullptr;
    for (const ResultRow& r : result.rows) {
        if (r.method == "none") plain = &r;
        if (r.method == "m_theta") masked = &r;
    }
    ck.require(plain && masked, "missing rows");
    if (plain && masked) {
        ck.require(plain->nll == masked->nll, "NLL differs: " + fmt(plain->nll) + " vs " +
                                                  fmt(masked->nll));
        ck.require(plain->metric == masked->metric, "metric differs");
    }
    // per-sample identity: a rate-0 mask never changes a forward pass
    ModelSpec spec;
    spec.layer_sizes = {1, 100, 1};
    ParamVector theta = init_params(spec, 21);
    DropoutMask mask = sample_mask(spec, 0.0, 22);
    std::vector<double> x = {1.7};
    ck.require(forward(spec, apply_mask(theta, mask), x) == forward(spec, theta, x),
               "rate-0 masked forward differs bitwise");
}

struct Criterion {
    const char* name;
    double limit_s;  // 0 = no stated limit
    void (*fn)(Checker&);
};

}  // namespace

int main() {
    const Criterion criteria[] = {
        {"gradient-correctness", 10.0, criterion_gradient},
        {"adf-relu-quadrature", 5.0, criterion_relu_quadrature},
        {"adf-linear-mc", 30.0, criterion_adf_linear_mc},
        {"adf-two-layer-mc", 60.0, criterion_adf_two_layer},
        {"swag-fidelity", 30.0, criterion_swag},
        {"toy-trend", 600.0, criterion_toy_trend},
        {"ensemble-size-trend", 300.0, criterion_ensemble_trend},
        {"sample-count-algebra", 60.0, criterion_sample_algebra},
        {"determinism", 0.0, criterion_determinism},
        {"dropout-identity", 0.0, criterion_dropout_identity},
    };

    int failed = 0;
    for (const Criterion& c : criteria) {
        Checker ck;
        double start = now_s();
        try {
            c.fn(ck);
        } catch (const std::exception& e) {
            ck.failures.push_back(std::string("exception: ") + e.what());
        }
        double elapsed = now_s() - start;
        if (c.limit_s > 0.0 && elapsed > c.limit_s)
            ck.failures.push_back("runtime " + fmt(elapsed) + " s exceeds " +
                                  fmt(c.limit_s) + " s");
        if (ck.failures.empty()) {
            std::printf("[PASS] %-22s (%.2f s)\n", c.name, elapsed);
        } else {
            ++failed;
            std::printf("[FAIL] %-22s (%.2f s)\n", c.name, elapsed);
            for (const std::string& msg : ck.failures)
                std::printf("       - %s\n", msg.c_str());
        }
        std::fflush(stdout);
    }
    if (failed) std::printf("%d criterion(s) failed\n", failed);
    return failed ? 1 : 0;
}
