#pragma once
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace margin {

// Dense row-major matrix of doubles.
struct Matrix {
    std::vector<double> v;
    std::size_t rows = 0, cols = 0;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : v(r * c, 0.0), rows(r), cols(c) {}

    double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    const double& operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
    std::span<const double> row(std::size_t i) const { return {v.data() + i * cols, cols}; }
    std::span<double> row(std::size_t i) { return {v.data() + i * cols, cols}; }
};

struct Dataset {
    std::string name;
    Matrix X;  // N x n
    Matrix Y;  // N x m (real targets, or one label column for classification)

    std::size_t size() const { return X.rows; }
    std::size_t input_dim() const { return X.cols; }
    std::size_t target_dim() const { return Y.cols; }
};

// 10 samples of y = x^3 + eps, x ~ U[-4,4], eps ~ N(0, 9). Deterministic per seed.
Dataset toy_cubic(std::uint64_t seed);

// 1000 equally spaced points on [-6, 6] with noiseless targets y = x^3.
Dataset toy_cubic_testgrid();

struct LoadOptions {
    int target_cols = 1;     // trailing columns used as targets
    char delimiter = 0;      // 0 = auto-detect comma vs whitespace
    int target_select = -1;  // keep only this target column (index within targets)
};

// Delimited numeric text table; optional header row is auto-skipped.
// Ragged or non-numeric rows are rejected with the offending location.
Dataset load_delimited(const std::string& path, const LoadOptions& opt = {});

struct FoldSplit {
    int fold_index = 0;
    int n_folds = 0;
    std::vector<int> train_idx, test_idx;
    std::uint64_t split_seed = 0;
};

// Seeded permutation partitioned into n_folds near-equal test blocks.
std::vector<FoldSplit> make_folds(std::size_t N, int n_folds, std::uint64_t split_seed);

// Per-feature and per-target z-score parameters, fitted on the training fold
// only. Std gets a 1e-8 floor.
struct Standardizer {
    std::vector<double> x_mean, x_std, y_mean, y_std;

    void transform_x(std::span<double> x) const;
    std::vector<double> transform_x_copy(std::span<const double> x) const;
    double inverse_y_mean(std::size_t j, double v) const { return y_mean[j] + y_std[j] * v; }
    double inverse_y_var(std::size_t j, double var) const { return y_std[j] * y_std[j] * var; }
};

struct StandardizedFold {
    Standardizer st;
    Dataset train, test;
};

// Materialize a row subset.
Dataset subset(const Dataset& ds, std::span<const int> rows);

// Fit on the fold's training rows, return transformed train/test copies.
// standardize_targets=false (classification) leaves Y untouched.
StandardizedFold standardize(const FoldSplit& fold, const Dataset& ds,
                             bool standardize_targets = true);

// Same, for train/test sets that are separate datasets (fit on train only).
StandardizedFold standardize_pair(const Dataset& train, const Dataset& test,
                                  bool standardize_targets = true);

// Two 2-D unit-variance Gaussian blobs at (-1.5, 0) and (+1.5, 0), N/2 points
// each, labels 0/1 in Y.
Dataset two_blob_classification(std::uint64_t seed, int N);

}  // namespace margin
