#include "margin/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "margin/rng.hpp"

namespace margin {

Dataset toy_cubic(std::uint64_t seed) {
    Dataset ds;
    ds.name = "toy";
    ds.X = Matrix(10, 1);
    ds.Y = Matrix(10, 1);
    Rng rng(seed);
    for (std::size_t i = 0; i < 10; ++i) {
        double x = rng.uniform(-4.0, 4.0);
        double eps = rng.normal(0.0, 3.0);
        ds.X(i, 0) = x;
        ds.Y(i, 0) = x * x * x + eps;
    }
    return ds;
}

Dataset toy_cubic_testgrid() {
    const std::size_t n = 1000;
    Dataset ds;
    ds.name = "toy_grid";
    ds.X = Matrix(n, 1);
    ds.Y = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        double x = -6.0 + 12.0 * static_cast<double>(i) / static_cast<double>(n - 1);
        ds.X(i, 0) = x;
        ds.Y(i, 0) = x * x * x;
    }
    return ds;
}

namespace {

bool parse_double(const std::string& tok, double& out) {
    const char* s = tok.c_str();
    char* end = nullptr;
    out = std::strtod(s, &end);
    return end == s + tok.size() && !tok.empty();
}

std::vector<std::string> split_tokens(const std::string& line, char delim) {
    std::vector<std::string> toks;
    if (delim == ',') {
        std::string cur;
        std::stringstream ss(line);
        while (std::getline(ss, cur, ',')) {
            // trim
            std::size_t b = cur.find_first_not_of(" \t\r");
            std::size_t e = cur.find_last_not_of(" \t\r");
            toks.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
        }
    } else {
        std::stringstream ss(line);
        std::string cur;
        while (ss >> cur) toks.push_back(cur);
    }
    return toks;
}

}  // namespace

Dataset load_delimited(const std::string& path, const LoadOptions& opt) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_delimited: cannot open '" + path + "'");

    std::vector<std::pair<int, std::string>> lines;  // (file line number, text)
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        lines.emplace_back(lineno, line);
    }
    if (lines.empty()) throw std::runtime_error("load_delimited: '" + path + "' has no data rows");

    char delim = opt.delimiter;
    if (delim == 0) delim = lines.front().second.find(',') != std::string::npos ? ',' : ' ';

    std::vector<std::vector<double>> table;
    std::size_t ncols = 0;
    bool first_content = true;
    for (const auto& [no, text] : lines) {
        auto toks = split_tokens(text, delim);
        std::vector<double> row(toks.size());
        bool ok = true;
        std::size_t bad_col = 0;
        for (std::size_t c = 0; c < toks.size(); ++c) {
            if (!parse_double(toks[c], row[c])) {
                ok = false;
                bad_col = c;
                break;
            }
        }
        if (!ok) {
            if (first_content) {  // header row
                first_content = false;
                continue;
            }
            throw std::runtime_error("load_delimited: row " + std::to_string(no) + ", column " +
                                     std::to_string(bad_col + 1) + ": not a number");
        }
        for (double v : row)
            if (!std::isfinite(v))
                throw std::runtime_error("load_delimited: row " + std::to_string(no) +
                                         ": non-finite value");
        if (table.empty()) {
            ncols = row.size();
        } else if (row.size() != ncols) {
            throw std::runtime_error("load_delimited: row " + std::to_string(no) + " has " +
                                     std::to_string(row.size()) + " columns, expected " +
                                     std::to_string(ncols));
        }
        first_content = false;
        table.push_back(std::move(row));
    }
    if (table.empty()) throw std::runtime_error("load_delimited: '" + path + "' has no data rows");
    if (opt.target_cols < 1 || static_cast<std::size_t>(opt.target_cols) >= ncols)
        throw std::invalid_argument("load_delimited: target_cols must leave at least one feature");
    if (opt.target_select >= opt.target_cols)
        throw std::invalid_argument("load_delimited: target_select out of range");

    std::size_t nx = ncols - opt.target_cols;
    Dataset ds;
    ds.name = path;
    ds.X = Matrix(table.size(), nx);
    std::size_t ny = opt.target_select >= 0 ? 1 : static_cast<std::size_t>(opt.target_cols);
    ds.Y = Matrix(table.size(), ny);
    for (std::size_t i = 0; i < table.size(); ++i) {
        for (std::size_t j = 0; j < nx; ++j) ds.X(i, j) = table[i][j];
        if (opt.target_select >= 0) {
            ds.Y(i, 0) = table[i][nx + opt.target_select];
        } else {
            for (std::size_t j = 0; j < ny; ++j) ds.Y(i, j) = table[i][nx + j];
        }
    }
    return ds;
}

std::vector<FoldSplit> make_folds(std::size_t N, int n_folds, std::uint64_t split_seed) {
    if (n_folds < 2) throw std::invalid_argument("make_folds: n_folds must be >= 2");
    if (N < static_cast<std::size_t>(n_folds))
        throw std::invalid_argument("make_folds: N must be >= n_folds");

    std::vector<int> perm(N);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(split_seed);
    for (std::size_t i = N - 1; i > 0; --i)
        std::swap(perm[i], perm[rng.uniform_index(i + 1)]);

    std::vector<FoldSplit> folds(n_folds);
    std::size_t base = N / n_folds, extra = N % n_folds;
    std::size_t pos = 0;
    for (int k = 0; k < n_folds; ++k) {
        std::size_t len = base + (static_cast<std::size_t>(k) < extra ? 1 : 0);
        FoldSplit& f = folds[k];
        f.fold_index = k;
        f.n_folds = n_folds;
        f.split_seed = split_seed;
        f.test_idx.assign(perm.begin() + pos, perm.begin() + pos + len);
        f.train_idx.reserve(N - len);
        for (std::size_t i = 0; i < N; ++i)
            if (i < pos || i >= pos + len) f.train_idx.push_back(perm[i]);
        pos += len;
    }
    return folds;
}

void Standardizer::transform_x(std::span<double> x) const {
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = (x[j] - x_mean[j]) / x_std[j];
}

std::vector<double> Standardizer::transform_x_copy(std::span<const double> x) const {
    std::vector<double> out(x.begin(), x.end());
    transform_x(out);
    return out;
}

Dataset subset(const Dataset& ds, std::span<const int> rows) {
    Dataset out;
    out.name = ds.name;
    out.X = Matrix(rows.size(), ds.X.cols);
    out.Y = Matrix(rows.size(), ds.Y.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < ds.X.cols; ++j) out.X(i, j) = ds.X(rows[i], j);
        for (std::size_t j = 0; j < ds.Y.cols; ++j) out.Y(i, j) = ds.Y(rows[i], j);
    }
    return out;
}

namespace {

constexpr double kStdFloor = 1e-8;

void fit_columns(const Matrix& m, std::span<const int> rows, std::vector<double>& mean,
                 std::vector<double>& sd) {
    mean.assign(m.cols, 0.0);
    sd.assign(m.cols, 0.0);
    for (int r : rows)
        for (std::size_t j = 0; j < m.cols; ++j) mean[j] += m(r, j);
    for (std::size_t j = 0; j < m.cols; ++j) mean[j] /= static_cast<double>(rows.size());
    for (int r : rows)
        for (std::size_t j = 0; j < m.cols; ++j) {
            double d = m(r, j) - mean[j];
            sd[j] += d * d;
        }
    for (std::size_t j = 0; j < m.cols; ++j)
        sd[j] = std::max(std::sqrt(sd[j] / static_cast<double>(rows.size())), kStdFloor);
}

void apply_z(Matrix& m, const std::vector<double>& mean, const std::vector<double>& sd) {
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) m(i, j) = (m(i, j) - mean[j]) / sd[j];
}

}  // namespace

StandardizedFold standardize_pair(const Dataset& train, const Dataset& test,
                                  bool standardize_targets) {
    std::vector<int> all(train.size());
    std::iota(all.begin(), all.end(), 0);
    StandardizedFold out;
    fit_columns(train.X, all, out.st.x_mean, out.st.x_std);
    if (standardize_targets) {
        fit_columns(train.Y, all, out.st.y_mean, out.st.y_std);
    } else {
        out.st.y_mean.assign(train.Y.cols, 0.0);
        out.st.y_std.assign(train.Y.cols, 1.0);
    }
    out.train = train;
    out.test = test;
    apply_z(out.train.X, out.st.x_mean, out.st.x_std);
    apply_z(out.test.X, out.st.x_mean, out.st.x_std);
    if (standardize_targets) {
        apply_z(out.train.Y, out.st.y_mean, out.st.y_std);
        apply_z(out.test.Y, out.st.y_mean, out.st.y_std);
    }
    return out;
}

StandardizedFold standardize(const FoldSplit& fold, const Dataset& ds,
                             bool standardize_targets) {
    return standardize_pair(subset(ds, fold.train_idx), subset(ds, fold.test_idx),
                            standardize_targets);
}

Dataset two_blob_classification(std::uint64_t seed, int N) {
    if (N < 2 || N % 2 != 0)
        throw std::invalid_argument("two_blob_classification: N must be even and >= 2");
    Dataset ds;
    ds.name = "two_blob";
    ds.X = Matrix(N, 2);
    ds.Y = Matrix(N, 1);
    Rng rng(seed);
    for (int i = 0; i < N; ++i) {
        int label = i < N / 2 ? 0 : 1;
        double cx = label == 0 ? -1.5 : 1.5;
        ds.X(i, 0) = rng.normal(cx, 1.0);
        ds.X(i, 1) = rng.normal(0.0, 1.0);
        ds.Y(i, 0) = label;
    }
    return ds;
}

}  // namespace margin
