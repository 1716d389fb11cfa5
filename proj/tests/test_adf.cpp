#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>

#include "doctest.h"
#include "margin/adf.hpp"
#include "margin/rng.hpp"

using namespace margin;

namespace {

// adaptive Simpson quadrature
double simpson(const std::function<double(double)>& f, double a, double b, double fa,
               double fb, double fm, double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return simpson(f, a, m, fa, fm, flm, tol / 2.0, depth - 1) +
           simpson(f, m, b, fm, fb, frm, tol / 2.0, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
    if (b <= a) return 0.0;
    double m = 0.5 * (a + b);
    return simpson(f, a, b, f(a), f(b), f(m), tol, 48);
}

// E[max(0,X)^k] for X ~ N(mu, sigma^2) by quadrature over the positive axis.
// Splitting at the density peak keeps the adaptive subdivision from stepping
// over a narrow spike.
double relu_moment(double mu, double sigma, int k, double tol = 1e-13) {
    double hi = mu + 12.0 * sigma;
    if (hi <= 0.0) return 0.0;
    double lo = std::max(0.0, mu - 12.0 * sigma);
    auto integrand = [&](double x) {
        double z = (x - mu) / sigma;
        double pdf = std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * M_PI));
        return (k == 1 ? x : x * x) * pdf;
    };
    if (mu > lo && mu < hi)
        return integrate(integrand, lo, mu, tol) + integrate(integrand, mu, hi, tol);
    return integrate(integrand, lo, hi, tol);
}

GaussianMoments unit(double mean, double var) { return {{mean}, {var}}; }

}  // namespace

TEST_CASE("adf_linear: deterministic scalar affine") {
    GaussianMoments in = unit(3.0, 0.0);
    double wm = 2.0, wv = 0.0, bm = 1.0, bv = 0.0;
    GaussianMoments out = adf_linear(in, {&wm, 1}, {&wv, 1}, {&bm, 1}, {&bv, 1}, 1, 1);
    CHECK(out.mean[0] == 7.0);
    CHECK(out.var[0] == 0.0);
}

TEST_CASE("adf_linear: scalar variance composition") {
    GaussianMoments in = unit(3.0, 0.2);
    double wm = 2.0, wv = 0.1, bm = 0.0, bv = 0.05;
    GaussianMoments out = adf_linear(in, {&wm, 1}, {&wv, 1}, {&bm, 1}, {&bv, 1}, 1, 1);
    // Var[W]Var[X] + Var[W]E[X]^2 + E[W]^2 Var[X] + Var[B]
    CHECK(out.var[0] == doctest::Approx(1.77).epsilon(1e-12));
    CHECK(out.mean[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("adf_linear: bias-only channel passes its variance through") {
    GaussianMoments in = unit(0.0, 0.0);
    double wm = 0.0, wv = 0.0, bm = 0.0, bv = 0.37;
    GaussianMoments out = adf_linear(in, {&wm, 1}, {&wv, 1}, {&bm, 1}, {&bv, 1}, 1, 1);
    CHECK(out.mean[0] == 0.0);
    CHECK(out.var[0] == 0.37);
}

TEST_CASE("adf_linear agrees with a large Monte Carlo oracle") {
    Rng rng(99);
    for (int cfg = 0; cfg < 5; ++cfg) {
        double wm = rng.uniform(-2.0, 2.0), wv = rng.uniform(0.01, 1.0);
        double xm = rng.uniform(-2.0, 2.0), xv = rng.uniform(0.01, 1.0);
        double bm = rng.uniform(-1.0, 1.0), bv = rng.uniform(0.01, 0.5);
        GaussianMoments in = unit(xm, xv);
        GaussianMoments out = adf_linear(in, {&wm, 1}, {&wv, 1}, {&bm, 1}, {&bv, 1}, 1, 1);

        const int K = 200000;
        Rng mc(derive_seed(7, 1, cfg));
        double sum = 0.0, sum_sq = 0.0;
        for (int k = 0; k < K; ++k) {
            double w = mc.normal(wm, std::sqrt(wv));
            double x = mc.normal(xm, std::sqrt(xv));
            double b = mc.normal(bm, std::sqrt(bv));
            double y = w * x + b;
            sum += y;
            sum_sq += y * y;
        }
        double mc_mean = sum / K;
        double mc_var = sum_sq / K - mc_mean * mc_mean;
        double se_mean = std::sqrt(mc_var / K);
        CHECK(std::abs(out.mean[0] - mc_mean) < 4.0 * se_mean);
        CHECK(std::abs(out.var[0] - mc_var) < 0.03 * mc_var);
    }
}

TEST_CASE("adf_relu: standard normal input") {
    GaussianMoments out = adf_relu(unit(0.0, 1.0));
    CHECK(out.mean[0] == doctest::Approx(0.398942).epsilon(1e-6));
    CHECK(out.var[0] == doctest::Approx(0.340845).epsilon(1e-6));
}

TEST_CASE("adf_relu: deep-positive and far-negative limits") {
    GaussianMoments pos = adf_relu(unit(10.0, 1e-30));
    CHECK(pos.mean[0] == 10.0);
    CHECK(pos.var[0] == 0.0);

    GaussianMoments neg = adf_relu(unit(-10.0, 1.0));
    CHECK(neg.mean[0] < 1e-20);
    CHECK(neg.mean[0] >= 0.0);
    CHECK(neg.var[0] < 1e-18);
}

TEST_CASE("adf_relu matches adaptive quadrature on the (mu, sigma) grid") {
    for (int mi = -5; mi <= 5; ++mi) {
        for (int si = 0; si <= 10; ++si) {
            double mu = mi;
            double sigma = 0.1 + si * 0.29;
            GaussianMoments out = adf_relu(unit(mu, sigma * sigma));
            double m1 = relu_moment(mu, sigma, 1);
            double m2 = relu_moment(mu, sigma, 2);
            CHECK(std::abs(out.mean[0] - m1) < 1e-8);
            CHECK(std::abs(out.var[0] - (m2 - m1 * m1)) < 1e-8);
        }
    }
}

TEST_CASE("adf_relu: mean nonnegative, dominates mu, monotone in mu") {
    for (int si = 0; si <= 10; ++si) {
        double sigma = 0.1 + si * 0.29;
        double prev = -1.0;
        for (int mi = -5; mi <= 5; ++mi) {
            GaussianMoments out = adf_relu(unit(mi, sigma * sigma));
            CHECK(out.mean[0] >= 0.0);
            CHECK(out.mean[0] >= mi);
            CHECK(out.mean[0] >= prev);
            prev = out.mean[0];
        }
    }
}

TEST_CASE("adf_relu: pre-clamp variance is never materially negative") {
    // the closed form minus mean^2 can only dip below zero by rounding
    for (int mi = -5; mi <= 5; ++mi) {
        for (int si = 0; si <= 10; ++si) {
            double mu = mi, sigma = 0.1 + si * 0.29;
            double r = mu / sigma;
            double cdf = 0.5 * std::erfc(-r / std::sqrt(2.0));
            double pdf = std::exp(-0.5 * r * r) / std::sqrt(2.0 * M_PI);
            double mean = mu * cdf + sigma * pdf;
            double pre_clamp = (mu * mu + sigma * sigma) * cdf + mu * sigma * pdf - mean * mean;
            CHECK(pre_clamp >= -1e-12);
            GaussianMoments out = adf_relu(unit(mu, sigma * sigma));
            CHECK(out.var[0] >= 0.0);
        }
    }
}

TEST_CASE("adf_forward: fully deterministic network equals plain forward") {
    ModelSpec spec;
    spec.layer_sizes = {2, 8, 1};
    ParamVector theta = init_params(spec, 17);
    ParamMoments pm{theta, std::vector<double>(theta.size(), 0.0)};
    GaussianMoments input{{0.4, -0.7}, {0.0, 0.0}};
    GaussianMoments out = adf_forward(spec, pm, input);
    std::vector<double> ref = forward(spec, theta, input.mean);
    CHECK(out.mean[0] == doctest::Approx(ref[0]).epsilon(1e-12));
    CHECK(out.var[0] == 0.0);
}

TEST_CASE("adf_forward rejects the classification head") {
    ModelSpec spec;
    spec.layer_sizes = {2, 4, 2};
    spec.output_head = OutputHead::classification_softmax;
    ParamVector theta = init_params(spec, 3);
    ParamMoments pm{theta, std::vector<double>(theta.size(), 0.0)};
    GaussianMoments input{{0.0, 0.0}, {0.0, 0.0}};
    CHECK_THROWS_AS(adf_forward(spec, pm, input), std::invalid_argument);
}

TEST_CASE("adf_forward: single linear layer matches Monte Carlo sampling") {
    ModelSpec spec;
    spec.layer_sizes = {1, 1};
    spec.activation = Activation::identity;
    ParamMoments pm{{1.2, 0.3}, {0.04, 0.01}};
    GaussianMoments input{{0.5}, {0.0}};
    GaussianMoments out = adf_forward(spec, pm, input);

    const int K = 100000;
    Rng mc(4242);
    double sum = 0.0, sum_sq = 0.0;
    for (int k = 0; k < K; ++k) {
        double w = mc.normal(pm.mean[0], std::sqrt(pm.var[0]));
        double b = mc.normal(pm.mean[1], std::sqrt(pm.var[1]));
        double y = w * 0.5 + b;
        sum += y;
        sum_sq += y * y;
    }
    double mc_mean = sum / K;
    double mc_var = sum_sq / K - mc_mean * mc_mean;
    CHECK(std::abs(out.mean[0] - mc_mean) < 4.0 * std::sqrt(mc_var / K));
    CHECK(std::abs(out.var[0] - mc_var) < 0.03 * mc_var);
}

TEST_CASE("adf_forward: two-layer ReLU net tracks the sampling oracle") {
    ModelSpec spec;
    spec.layer_sizes = {1, 16, 1};
    ParamVector mean = init_params(spec, 7);
    // keep the output mean away from zero so relative error is meaningful
    mean[param_dim(spec) - 1] += 0.5;
    std::vector<double> var(mean.size());
    Rng vr(8);
    for (double& v : var) v = vr.uniform(1e-4, 1e-2);
    ParamMoments pm{mean, var};
    GaussianMoments input{{0.5}, {0.0}};
    GaussianMoments out = adf_forward(spec, pm, input);

    const int K = 100000;
    Rng mc(31337);
    double sum = 0.0, sum_sq = 0.0;
    ParamVector draw(mean.size());
    for (int k = 0; k < K; ++k) {
        for (std::size_t j = 0; j < draw.size(); ++j)
            draw[j] = mean[j] + std::sqrt(var[j]) * mc.normal();
        double y = forward(spec, draw, input.mean)[0];
        sum += y;
        sum_sq += y * y;
    }
    double mc_mean = sum / K;
    double mc_var = sum_sq / K - mc_mean * mc_mean;
    CHECK(std::abs(out.mean[0] - mc_mean) < 0.1 * std::abs(mc_mean));
    CHECK(std::abs(out.var[0] - mc_var) < 0.25 * mc_var);
}
