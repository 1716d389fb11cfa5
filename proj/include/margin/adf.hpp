#pragma once
#include <span>
#include <vector>

#include "margin/nn.hpp"

namespace margin {

// Below this standard deviation the ReLU moment formulas divide by ~0, so the
// deterministic limit (max(0, mu), variance 0) is used instead.
inline constexpr double kSigmaEps = 1e-12;

// Independent per-unit Gaussians flowing through probabilistic layers.
struct GaussianMoments {
    std::vector<double> mean;
    std::vector<double> var;
};

// Independent Gaussian parameters aligned to the ParamVector layout, e.g.
// taken from a fitted SwagPosterior.
struct ParamMoments {
    ParamVector mean;
    std::vector<double> var;
};

// Exact output moments of w*x + b for mutually independent W, X, B:
// mean = E[W] E[X] + E[B],
// var  = Var[W] Var[X] + Var[W] E[X]^2 + E[W]^2 Var[X] + Var[B], summed over
// inputs.
GaussianMoments adf_linear(const GaussianMoments& in, std::span<const double> w_mean,
                           std::span<const double> w_var, std::span<const double> b_mean,
                           std::span<const double> b_var, int fan_in, int fan_out);

// Closed-form ReLU moments of X ~ N(mu, sigma^2): with r = mu/sigma,
// mean = mu Phi(r) + sigma phi(r),
// var  = (mu^2 + sigma^2) Phi(r) + mu sigma phi(r) - mean^2 (clamped at 0).
GaussianMoments adf_relu(const GaussianMoments& in);

// Single-pass moment propagation through the network: alternating linear and
// ReLU probabilistic layers. Regression head only; input variance may be zero
// (deterministic x) or positive (aleatoric input uncertainty).
GaussianMoments adf_forward(const ModelSpec& spec, const ParamMoments& params,
                            const GaussianMoments& input);

}  // namespace margin
