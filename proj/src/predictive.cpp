#include "margin/predictive.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace margin {

PredictiveStats predictive_mc(const ModelSpec& spec, std::span<const ParamSample> samples,
                              std::span<const double> x) {
    if (samples.empty()) throw std::invalid_argument("predictive_mc: need K >= 1 samples");
    const int m = spec.output_dim();
    const double K = static_cast<double>(samples.size());

    std::vector<std::vector<double>> outputs;
    outputs.reserve(samples.size());
    for (const ParamSample& s : samples) {
        if (s.mask) {
            outputs.push_back(forward(spec, apply_mask(s.params, *s.mask), x));
        } else {
            outputs.push_back(forward(spec, s.params, x));
        }
    }

    PredictiveStats stats;
    stats.K = static_cast<long>(samples.size());
    stats.mean.assign(m, 0.0);
    stats.var.assign(m, 0.0);
    for (const auto& out : outputs)
        for (int j = 0; j < m; ++j) stats.mean[j] += out[j];
    for (int j = 0; j < m; ++j) stats.mean[j] /= K;
    for (const auto& out : outputs)
        for (int j = 0; j < m; ++j) {
            double d = out[j] - stats.mean[j];
            stats.var[j] += d * d;
        }
    for (int j = 0; j < m; ++j) stats.var[j] /= K;
    if (spec.output_head == OutputHead::classification_softmax) stats.probs = stats.mean;
    return stats;
}

NoiseModel fit_noise(const ModelSpec& spec, std::span<const ParamSample> samples,
                     const Dataset& train) {
    if (train.size() == 0) throw std::invalid_argument("fit_noise: empty training set");
    double acc = 0.0;
    for (std::size_t i = 0; i < train.size(); ++i) {
        PredictiveStats stats = predictive_mc(spec, samples, train.X.row(i));
        for (std::size_t j = 0; j < train.Y.cols; ++j) {
            double r = train.Y(i, j) - stats.mean[j];
            acc += r * r;
        }
    }
    NoiseModel noise;
    noise.sigma2_noise =
        std::max(acc / static_cast<double>(train.size() * train.Y.cols), kNoiseFloor);
    return noise;
}

double nll_gaussian(std::span<const double> y, const PredictiveStats& stats,
                    const NoiseModel& noise) {
    if (y.size() != stats.mean.size())
        throw std::invalid_argument("nll_gaussian: dimension mismatch");
    constexpr double two_pi = 6.283185307179586476925287;
    double nll = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
        double s2 = stats.var[j] + noise.sigma2_noise;
        double r = y[j] - stats.mean[j];
        nll += 0.5 * std::log(two_pi * s2) + r * r / (2.0 * s2);
    }
    return nll;
}

double rmse(std::span<const double> predictions, std::span<const double> targets) {
    if (predictions.size() != targets.size() || predictions.empty())
        throw std::invalid_argument("rmse: length mismatch or empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        double r = predictions[i] - targets[i];
        acc += r * r;
    }
    return std::sqrt(acc / static_cast<double>(predictions.size()));
}

double accuracy(const Matrix& probs, std::span<const int> labels) {
    if (probs.rows != labels.size() || probs.rows == 0)
        throw std::invalid_argument("accuracy: length mismatch or empty input");
    long correct = 0;
    for (std::size_t i = 0; i < probs.rows; ++i) {
        auto row = probs.row(i);
        std::size_t arg = std::max_element(row.begin(), row.end()) - row.begin();
        if (static_cast<int>(arg) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probs.rows);
}

double nll_classification(const Matrix& probs, std::span<const int> labels) {
    if (probs.rows != labels.size() || probs.rows == 0)
        throw std::invalid_argument("nll_classification: length mismatch or empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.rows; ++i) {
        int lab = labels[i];
        if (lab < 0 || static_cast<std::size_t>(lab) >= probs.cols)
            throw std::invalid_argument("nll_classification: label out of range");
        acc -= std::log(std::max(probs(i, lab), 1e-12));
    }
    return acc / static_cast<double>(probs.rows);
}

}  // namespace margin
