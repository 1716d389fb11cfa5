#pragma once
#include <span>
#include <vector>

#include "margin/marginals.hpp"
#include "margin/nn.hpp"

namespace margin {

// Keeps the Gaussian NLL finite when the ensemble collapses and residuals
// vanish (standardized-target units).
inline constexpr double kNoiseFloor = 1e-6;

// Monte Carlo estimate of the predictive distribution at one input.
struct PredictiveStats {
    std::vector<double> mean;   // per output dimension
    std::vector<double> var;    // population variance over the K outputs
    std::vector<double> probs;  // classification only: averaged class probabilities
    long K = 0;
};

// Mean and population variance of f_theta_k(x) over the samples, masked
// forward where a mask is attached. Classification keeps the averaged
// softmax vector in probs.
PredictiveStats predictive_mc(const ModelSpec& spec, std::span<const ParamSample> samples,
                              std::span<const double> x);

// Homoscedastic observation-noise variance fitted on training residuals.
struct NoiseModel {
    double sigma2_noise = kNoiseFloor;
};

NoiseModel fit_noise(const ModelSpec& spec, std::span<const ParamSample> samples,
                     const Dataset& train);

// Gaussian NLL of y under N(mean, var + sigma2_noise), summed over output
// dimensions.
double nll_gaussian(std::span<const double> y, const PredictiveStats& stats,
                    const NoiseModel& noise);

double rmse(std::span<const double> predictions, std::span<const double> targets);

// probs: one simplex row per test point.
double accuracy(const Matrix& probs, std::span<const int> labels);
double nll_classification(const Matrix& probs, std::span<const int> labels);

}  // namespace margin
