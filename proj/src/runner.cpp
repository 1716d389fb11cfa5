#include "margin/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "margin/adf.hpp"
#include "margin/predictive.hpp"
#include "margin/rng.hpp"

namespace margin {

SweepLabel parse_label(const std::string& s) {
    SweepLabel label;
    std::string text = s;
    // trim
    auto b = text.find_first_not_of(" \t");
    auto e = text.find_last_not_of(" \t");
    text = b == std::string::npos ? "" : text.substr(b, e - b + 1);
    if (text.empty() || text == "none") {
        label.text = "none";
        return label;
    }
    label.text = text;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, '+')) {
        bool* flag = nullptr;
        if (tok == "t") flag = &label.t;
        else if (tok == "theta0") flag = &label.theta0;
        else if (tok == "h") flag = &label.h;
        else if (tok == "m_theta") flag = &label.m_theta;
        else if (tok == "alg") flag = &label.alg;
        else throw std::invalid_argument("invalid sweep label token '" + tok + "'");
        if (*flag) throw std::invalid_argument("duplicate sweep label token '" + tok + "'");
        *flag = true;
    }
    return label;
}

namespace {

[[noreturn]] void fail_line(int line, const std::string& msg) {
    throw std::runtime_error("config line " + std::to_string(line) + ": " + msg);
}

long to_long(const std::string& v, int line) {
    char* end = nullptr;
    long x = std::strtol(v.c_str(), &end, 10);
    if (end != v.c_str() + v.size() || v.empty()) fail_line(line, "expected integer, got '" + v + "'");
    return x;
}

std::uint64_t to_u64(const std::string& v, int line) {
    char* end = nullptr;
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end != v.c_str() + v.size() || v.empty())
        fail_line(line, "expected unsigned integer, got '" + v + "'");
    return x;
}

double to_real(const std::string& v, int line) {
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size() || v.empty()) fail_line(line, "expected number, got '" + v + "'");
    return x;
}

bool to_bool(const std::string& v, int line) {
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    fail_line(line, "expected on/off, got '" + v + "'");
}

std::vector<std::string> split_csv(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        auto b = tok.find_first_not_of(" \t");
        auto e = tok.find_last_not_of(" \t");
        out.push_back(b == std::string::npos ? "" : tok.substr(b, e - b + 1));
    }
    if (!v.empty() && v.back() == ',') out.push_back("");
    return out;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    std::stringstream ss(text);
    std::string raw;
    std::string section;
    int line = 0;
    bool sweep_set = false;
    while (std::getline(ss, raw)) {
        ++line;
        std::string s = trim(raw);
        if (s.empty() || s[0] == '#') continue;
        if (s.front() == '[') {
            if (s.back() != ']') fail_line(line, "malformed section header");
            section = s.substr(1, s.size() - 2);
            if (section != "dataset" && section != "model" && section != "training" &&
                section != "marginalization" && section != "run")
                fail_line(line, "unknown section [" + section + "]");
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos) fail_line(line, "expected 'key = value'");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (section.empty()) fail_line(line, "key '" + key + "' outside any [section]");

        if (section == "dataset") {
            if (key == "kind") {
                if (val == "toy") cfg.kind = DatasetKind::toy;
                else if (val == "file") cfg.kind = DatasetKind::file;
                else if (val == "two_blob") cfg.kind = DatasetKind::two_blob;
                else fail_line(line, "unknown dataset kind '" + val + "'");
            } else if (key == "path") {
                cfg.path = val;
            } else if (key == "target_cols") {
                cfg.target_cols = static_cast<int>(to_long(val, line));
                if (cfg.target_cols < 1) fail_line(line, "target_cols must be >= 1");
            } else if (key == "target_select") {
                cfg.target_select = static_cast<int>(to_long(val, line));
            } else if (key == "delimiter") {
                if (val == "auto") cfg.delimiter = 0;
                else if (val == "comma") cfg.delimiter = ',';
                else if (val == "whitespace") cfg.delimiter = ' ';
                else fail_line(line, "delimiter must be auto, comma or whitespace");
            } else if (key == "n") {
                cfg.two_blob_n = static_cast<int>(to_long(val, line));
                if (cfg.two_blob_n < 2 || cfg.two_blob_n % 2 != 0)
                    fail_line(line, "n must be even and >= 2");
            } else if (key == "folds") {
                cfg.folds = static_cast<int>(to_long(val, line));
                if (cfg.folds < 1) fail_line(line, "folds must be >= 1");
            } else {
                fail_line(line, "unknown key '" + key + "' in [dataset]");
            }
        } else if (section == "model") {
            if (key == "hidden") {
                cfg.hidden.clear();
                for (const std::string& tok : split_csv(val)) {
                    long width = to_long(tok, line);
                    if (width < 1) fail_line(line, "hidden widths must be >= 1");
                    cfg.hidden.push_back(static_cast<int>(width));
                }
            } else if (key == "activation") {
                if (val == "relu") cfg.activation = Activation::relu;
                else if (val == "identity") cfg.activation = Activation::identity;
                else fail_line(line, "activation must be relu or identity");
            } else if (key == "head") {
                if (val == "regression") cfg.head = OutputHead::regression_identity;
                else if (val == "classification") cfg.head = OutputHead::classification_softmax;
                else fail_line(line, "head must be regression or classification");
            } else if (key == "dropout") {
                cfg.dropout = to_real(val, line);
                if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
                    fail_line(line, "dropout must lie in [0, 1)");
            } else {
                fail_line(line, "unknown key '" + key + "' in [model]");
            }
        } else if (section == "training") {
            if (key == "loss") {
                if (val == "mse") cfg.loss = LossKind::mse;
                else if (val == "cross_entropy") cfg.loss = LossKind::cross_entropy;
                else fail_line(line, "loss must be mse or cross_entropy");
            } else if (key == "epochs") {
                cfg.epochs = static_cast<int>(to_long(val, line));
                if (cfg.epochs < 1) fail_line(line, "epochs must be >= 1");
            } else if (key == "algorithm") {
                if (val == "sgd") cfg.algorithm = Algorithm::sgd;
                else if (val == "adam") cfg.algorithm = Algorithm::adam;
                else fail_line(line, "algorithm must be sgd or adam");
            } else if (key == "lr") {
                cfg.lr = to_real(val, line);
                if (cfg.lr <= 0.0) fail_line(line, "lr must be positive");
            } else if (key == "lr_schedule") {
                if (val == "constant") cfg.lr_is_ramp = false;
                else if (val == "swa_ramp") cfg.lr_is_ramp = true;
                else fail_line(line, "lr_schedule must be constant or swa_ramp");
            } else if (key == "lr_u") {
                cfg.lr_u = to_real(val, line);
            } else if (key == "lr_l") {
                cfg.lr_l = to_real(val, line);
            } else if (key == "batch") {
                cfg.batch = static_cast<int>(to_long(val, line));
                if (cfg.batch < 1) fail_line(line, "batch must be >= 1");
            } else if (key == "batch_mode") {
                if (val == "epoch_shuffle") cfg.batch_mode = BatchMode::epoch_shuffle;
                else if (val == "uniform_iid") cfg.batch_mode = BatchMode::uniform_iid;
                else fail_line(line, "batch_mode must be epoch_shuffle or uniform_iid");
            } else if (key == "adam_beta1") {
                cfg.adam_beta1 = to_real(val, line);
            } else if (key == "adam_beta2") {
                cfg.adam_beta2 = to_real(val, line);
            } else if (key == "adam_eps") {
                cfg.adam_eps = to_real(val, line);
            } else if (key == "hyper_prior") {
                if (val == "fixed") cfg.prior_kind = PriorKind::fixed;
                else if (val == "lr_gaussian") cfg.prior_kind = PriorKind::lr_gaussian;
                else if (val == "lr_ramp_uniform") cfg.prior_kind = PriorKind::lr_ramp_uniform;
                else fail_line(line, "hyper_prior must be fixed, lr_gaussian or lr_ramp_uniform");
            } else if (key == "lr_mean") {
                cfg.prior_lr_mean = to_real(val, line);
                if (cfg.prior_lr_mean <= 0.0) fail_line(line, "lr_mean must be positive");
            } else if (key == "lr_u_min") {
                cfg.prior_u_min = to_real(val, line);
            } else if (key == "lr_u_max") {
                cfg.prior_u_max = to_real(val, line);
            } else if (key == "lr_l_min") {
                cfg.prior_l_min = to_real(val, line);
            } else if (key == "lr_l_max") {
                cfg.prior_l_max = to_real(val, line);
            } else if (key == "alg_candidates") {
                cfg.alg_candidates.clear();
                for (const std::string& tok : split_csv(val)) {
                    auto colon = tok.find(':');
                    if (colon == std::string::npos)
                        fail_line(line, "alg_candidates entries are kind:weight");
                    std::string kind = trim(tok.substr(0, colon));
                    double w = to_real(trim(tok.substr(colon + 1)), line);
                    Algorithm a;
                    if (kind == "sgd") a = Algorithm::sgd;
                    else if (kind == "adam") a = Algorithm::adam;
                    else fail_line(line, "alg candidate must be sgd or adam");
                    cfg.alg_candidates.emplace_back(a, w);
                }
            } else {
                fail_line(line, "unknown key '" + key + "' in [training]");
            }
        } else if (section == "marginalization") {
            if (key == "sweep") {
                cfg.sweep.clear();
                sweep_set = true;
                for (const std::string& tok : split_csv(val)) {
                    try {
                        cfg.sweep.push_back(parse_label(tok));
                    } catch (const std::invalid_argument& e) {
                        fail_line(line, e.what());
                    }
                }
                if (cfg.sweep.empty()) fail_line(line, "sweep must name at least one label");
            } else if (key == "k_theta0" || key == "k_t" || key == "k_m" || key == "k_h" ||
                       key == "k_alg") {
                int v = static_cast<int>(to_long(val, line));
                if (v < 1) fail_line(line, key + " must be >= 1");
                if (key == "k_theta0") cfg.k_theta0 = v;
                else if (key == "k_t") cfg.k_t = v;
                else if (key == "k_m") cfg.k_m = v;
                else if (key == "k_h") cfg.k_h = v;
                else cfg.k_alg = v;
            } else if (key == "pair_theta0_h") {
                cfg.pair_theta0_h = to_bool(val, line);
            } else {
                fail_line(line, "unknown key '" + key + "' in [marginalization]");
            }
        } else {  // run
            if (key == "seed") {
                cfg.seed = to_u64(val, line);
            } else if (key == "out") {
                cfg.out = val;
            } else if (key == "trend") {
                cfg.trend = to_bool(val, line);
            } else if (key == "adf") {
                cfg.adf = to_bool(val, line);
            } else if (key == "timing") {
                cfg.timing = to_bool(val, line);
            } else if (key == "burn_in_frac") {
                cfg.burn_in_frac = to_real(val, line);
                if (!(cfg.burn_in_frac > 0.0 && cfg.burn_in_frac <= 1.0))
                    fail_line(line, "burn_in_frac must lie in (0, 1]");
            } else if (key == "threads") {
                cfg.threads = static_cast<int>(to_long(val, line));
                if (cfg.threads < 1) fail_line(line, "threads must be >= 1");
            } else if (key == "skip_failures") {
                cfg.skip_failures = to_bool(val, line);
            } else {
                fail_line(line, "unknown key '" + key + "' in [run]");
            }
        }
    }
    (void)sweep_set;
    if (cfg.kind == DatasetKind::file && cfg.path.empty())
        throw std::runtime_error("config: dataset kind 'file' requires a path");
    if (cfg.folds == 0)
        cfg.folds = cfg.kind == DatasetKind::toy ? 1 : (cfg.kind == DatasetKind::file ? 20 : 5);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

namespace {

struct FoldData {
    int fold = 0;
    Dataset train;  // standardized X; Y standardized (regression) or one-hot (classification)
    Dataset test;   // standardized X
    Matrix test_y_orig;           // regression metrics are in original units
    Standardizer st;
    std::vector<int> test_labels;  // classification
};

int count_classes(const Matrix& y) {
    int n_classes = 0;
    for (std::size_t i = 0; i < y.rows; ++i) {
        double v = y(i, 0);
        double r = std::round(v);
        if (std::abs(v - r) > 1e-9 || r < 0)
            throw std::runtime_error("classification labels must be nonnegative integers");
        n_classes = std::max(n_classes, static_cast<int>(r) + 1);
    }
    return n_classes;
}

std::vector<int> label_column(const Matrix& y) {
    std::vector<int> labels(y.rows);
    for (std::size_t i = 0; i < y.rows; ++i) labels[i] = static_cast<int>(std::round(y(i, 0)));
    return labels;
}

Matrix one_hot(const std::vector<int>& labels, int n_classes) {
    Matrix m(labels.size(), n_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) m(i, labels[i]) = 1.0;
    return m;
}

std::vector<FoldData> prepare_folds(const ExperimentConfig& cfg, int& n_classes,
                                    std::string& dataset_name) {
    const bool classification = cfg.head == OutputHead::classification_softmax;
    std::vector<FoldData> folds;
    if (cfg.kind == DatasetKind::toy) {
        Dataset tr = toy_cubic(derive_seed(cfg.seed, seed_tag::data, 0));
        Dataset te = toy_cubic_testgrid();
        if (classification) throw std::runtime_error("toy dataset is regression-only");
        StandardizedFold sf = standardize_pair(tr, te, true);
        FoldData f;
        f.fold = 0;
        f.train = std::move(sf.train);
        f.test = std::move(sf.test);
        f.test_y_orig = te.Y;
        f.st = std::move(sf.st);
        folds.push_back(std::move(f));
        dataset_name = "toy";
        n_classes = 0;
        return folds;
    }

    Dataset ds;
    if (cfg.kind == DatasetKind::file) {
        LoadOptions opt;
        opt.target_cols = cfg.target_cols;
        opt.delimiter = cfg.delimiter;
        opt.target_select = cfg.target_select;
        ds = load_delimited(cfg.path, opt);
        dataset_name = std::filesystem::path(cfg.path).stem().string();
    } else {
        ds = two_blob_classification(derive_seed(cfg.seed, seed_tag::data, 0), cfg.two_blob_n);
        dataset_name = "two_blob";
    }
    n_classes = classification ? count_classes(ds.Y) : 0;

    auto splits = make_folds(ds.size(), cfg.folds, derive_seed(cfg.seed, seed_tag::fold, 0));
    for (const FoldSplit& split : splits) {
        StandardizedFold sf = standardize(split, ds, !classification);
        FoldData f;
        f.fold = split.fold_index;
        f.st = std::move(sf.st);
        if (classification) {
            f.test_labels = label_column(sf.test.Y);
            std::vector<int> train_labels = label_column(sf.train.Y);
            f.train = std::move(sf.train);
            f.train.Y = one_hot(train_labels, n_classes);
            f.test = std::move(sf.test);
        } else {
            f.test_y_orig = subset(ds, split.test_idx).Y;
            f.train = std::move(sf.train);
            f.test = std::move(sf.test);
        }
        folds.push_back(std::move(f));
    }
    return folds;
}

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

// Forward outputs for every sample on every row of X: cube[s] holds
// rows*m values, row-major.
std::vector<std::vector<double>> output_cube(const ModelSpec& spec,
                                             const std::vector<ParamSample>& samples,
                                             const Matrix& X) {
    const int m = spec.output_dim();
    std::vector<std::vector<double>> cube(samples.size());
    for (std::size_t s = 0; s < samples.size(); ++s) {
        ParamVector theta_eff =
            samples[s].mask ? apply_mask(samples[s].params, *samples[s].mask)
                            : samples[s].params;
        cube[s].reserve(X.rows * m);
        for (std::size_t r = 0; r < X.rows; ++r) {
            std::vector<double> out = forward(spec, theta_eff, X.row(r));
            cube[s].insert(cube[s].end(), out.begin(), out.end());
        }
    }
    return cube;
}

// Per-row mean/variance over the first `count` cube entries.
void cube_stats(const std::vector<std::vector<double>>& cube, std::size_t count,
                std::size_t rows, int m, Matrix& mean, Matrix& var) {
    mean = Matrix(rows, m);
    var = Matrix(rows, m);
    const double K = static_cast<double>(count);
    for (std::size_t s = 0; s < count; ++s) {
        const std::vector<double>& out = cube[s];
        for (std::size_t i = 0; i < rows * m; ++i) mean.v[i] += out[i];
    }
    for (double& v : mean.v) v /= K;
    for (std::size_t s = 0; s < count; ++s) {
        const std::vector<double>& out = cube[s];
        for (std::size_t i = 0; i < rows * m; ++i) {
            double d = out[i] - mean.v[i];
            var.v[i] += d * d;
        }
    }
    for (double& v : var.v) v /= K;
}

struct CellMetrics {
    double nll = 0.0, metric = 0.0;
};

// Regression: noise fitted on standardized train residuals; NLL and RMSE in
// original target units via the fold's standardizer.
CellMetrics regression_metrics(const FoldData& fold, const Matrix& mean_std,
                               const Matrix& var_std, const Matrix& train_mean_std) {
    const std::size_t m = fold.train.Y.cols;
    double resid2 = 0.0;
    for (std::size_t i = 0; i < fold.train.size(); ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double r = fold.train.Y(i, j) - train_mean_std(i, j);
            resid2 += r * r;
        }
    double noise_std_units =
        std::max(resid2 / static_cast<double>(fold.train.size() * m), kNoiseFloor);

    constexpr double two_pi = 6.283185307179586476925287;
    double nll_sum = 0.0, se_sum = 0.0;
    for (std::size_t i = 0; i < fold.test.size(); ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double mu = fold.st.inverse_y_mean(j, mean_std(i, j));
            double s2 = fold.st.inverse_y_var(j, var_std(i, j) + noise_std_units);
            double r = fold.test_y_orig(i, j) - mu;
            nll_sum += 0.5 * std::log(two_pi * s2) + r * r / (2.0 * s2);
            se_sum += r * r;
        }
    }
    CellMetrics out;
    const double n = static_cast<double>(fold.test.size());
    out.nll = nll_sum / n;
    out.metric = std::sqrt(se_sum / (n * static_cast<double>(m)));
    return out;
}

CellMetrics classification_metrics(const FoldData& fold, const Matrix& probs) {
    CellMetrics out;
    out.nll = nll_classification(probs, fold.test_labels);
    out.metric = accuracy(probs, fold.test_labels);
    return out;
}

struct CellTask {
    int fold_index;
    int label_index;
};

std::vector<ResultRow> run_cell(const ExperimentConfig& cfg, const ModelSpec& spec,
                                const FoldData& fold, const SweepLabel& label,
                                const std::string& dataset_name) {
    const bool classification = cfg.head == OutputHead::classification_softmax;
    // method cells within a fold share their training randomness, so method
    // columns are computed from the same base models (and a rate-0 mask cell
    // reproduces the no-mask cell exactly); component tags keep the mask,
    // SWAG and hyperparameter streams isolated from one another
    const std::uint64_t cell_seed = derive_seed(cfg.seed, seed_tag::fold, fold.fold);

    const std::size_t n_train = fold.train.size();
    const long n_batches = (static_cast<long>(n_train) + cfg.batch - 1) / cfg.batch;
    const long t = static_cast<long>(cfg.epochs) * n_batches;

    HyperParams base_h;
    base_h.algorithm = cfg.algorithm;
    base_h.lr = cfg.lr_is_ramp ? ScheduleSpec::swa_ramp(cfg.lr_u, cfg.lr_l, cfg.epochs)
                               : ScheduleSpec::constant(cfg.lr);
    base_h.batch_size = cfg.batch;
    base_h.batch_seed = derive_seed(cell_seed, seed_tag::batch, 0);
    base_h.batch_mode = cfg.batch_mode;
    base_h.adam_beta1 = cfg.adam_beta1;
    base_h.adam_beta2 = cfg.adam_beta2;
    base_h.adam_eps = cfg.adam_eps;

    MarginalizationSpec mspec;
    mspec.t = label.t;
    mspec.theta0 = label.theta0 || cfg.trend;
    mspec.h = label.h;
    mspec.m_theta = label.m_theta;
    mspec.alg = label.alg;
    mspec.k_t = cfg.k_t;
    mspec.k_theta0 = mspec.theta0 ? cfg.k_theta0 : 1;
    mspec.k_h = cfg.k_h;
    mspec.k_m = cfg.k_m;
    mspec.k_alg = cfg.k_alg;
    mspec.master_seed = cell_seed;
    mspec.pair_theta0_h = cfg.pair_theta0_h;
    if (mspec.pair_theta0_h && mspec.theta0 && mspec.h) mspec.k_h = mspec.k_theta0;
    mspec.trace.burn_in = static_cast<long>(std::ceil(cfg.burn_in_frac * static_cast<double>(t)));
    if (label.h) {
        HyperPrior prior;
        prior.base = base_h;
        prior.kind = cfg.prior_kind == PriorKind::fixed ? HyperPrior::Kind::fixed
                     : cfg.prior_kind == PriorKind::lr_gaussian
                         ? HyperPrior::Kind::lr_gaussian
                         : HyperPrior::Kind::lr_ramp_uniform;
        prior.lr_mean = cfg.prior_lr_mean;
        prior.u_min = cfg.prior_u_min;
        prior.u_max = cfg.prior_u_max;
        prior.l_min = cfg.prior_l_min;
        prior.l_max = cfg.prior_l_max;
        mspec.hyper_prior = prior;
    }
    if (label.alg) {
        if (cfg.alg_candidates.empty())
            throw std::runtime_error("label '" + label.text +
                                     "' needs alg_candidates in [training]");
        std::vector<HyperParams> cands;
        std::vector<double> weights;
        for (const auto& [kind, w] : cfg.alg_candidates) {
            HyperParams h = base_h;
            h.algorithm = kind;
            cands.push_back(h);
            weights.push_back(w);
        }
        mspec.selector.emplace(std::move(cands), std::move(weights));
    }

    DrawResult draw = draw_param_samples(mspec, spec, fold.train, base_h, t, cfg.loss);

    // member-major sample order lets ensemble-size prefixes be contiguous
    std::vector<std::size_t> member_sample_end(draw.n_members, 0);
    std::vector<long> member_models(draw.n_members, 0);
    std::vector<double> member_seconds(draw.n_members, 0.0);
    for (std::size_t s = 0; s < draw.samples.size(); ++s)
        member_sample_end[draw.samples[s].member] = s + 1;
    for (const TrainedRun& run : draw.runs) {
        member_models[run.member] += 1;
        member_seconds[run.member] += run.train_seconds;
    }

    const int m = spec.output_dim();
    auto test_cube = output_cube(spec, draw.samples, fold.test.X);
    std::vector<std::vector<double>> train_cube;
    if (!classification) train_cube = output_cube(spec, draw.samples, fold.train.X);

    std::vector<int> sizes;
    if (cfg.trend && draw.n_members > 1) {
        for (int k = 1; k <= draw.n_members; ++k) sizes.push_back(k);
    } else {
        sizes.push_back(draw.n_members);
    }

    std::vector<ResultRow> rows;
    double train_time_acc = 0.0;
    int next_member = 0;
    long models_acc = 0;
    for (int k : sizes) {
        double eval_start = now_seconds();
        for (; next_member < k; ++next_member) {
            train_time_acc += member_seconds[next_member];
            models_acc += member_models[next_member];
        }
        std::size_t count = member_sample_end[k - 1];

        ResultRow row;
        row.dataset = dataset_name;
        row.method = label.text;
        row.fold = fold.fold;
        row.seed = cfg.seed;
        row.ensemble_size = k;
        row.models_trained = models_acc;
        row.full = (k == draw.n_members);
        CellMetrics metrics;
        if (classification) {
            Matrix probs, var_unused;
            cube_stats(test_cube, count, fold.test.size(), m, probs, var_unused);
            metrics = classification_metrics(fold, probs);
        } else {
            Matrix mean_std, var_std, train_mean, train_var;
            cube_stats(test_cube, count, fold.test.size(), m, mean_std, var_std);
            cube_stats(train_cube, count, fold.train.size(), m, train_mean, train_var);
            metrics = regression_metrics(fold, mean_std, var_std, train_mean);
        }
        if (!std::isfinite(metrics.nll) || !std::isfinite(metrics.metric))
            throw std::runtime_error("non-finite metric at ensemble size " +
                                     std::to_string(k));
        row.nll = metrics.nll;
        row.metric = metrics.metric;
        row.wall_time_s =
            cfg.timing ? train_time_acc + (now_seconds() - eval_start) : 0.0;
        rows.push_back(std::move(row));
    }

    // One-shot (ADF) rows: moment propagation through the fitted posteriors.
    if (cfg.adf && label.t && !classification) {
        // per-run output moments on test and train rows
        const std::size_t n_runs = draw.runs.size();
        std::vector<std::vector<double>> run_test_mean(n_runs), run_test_var(n_runs),
            run_train_mean(n_runs);
        double adf_start = now_seconds();
        GaussianMoments input;
        for (std::size_t ri = 0; ri < n_runs; ++ri) {
            const SwagPosterior& post = *draw.runs[ri].posterior;
            ParamMoments pm{post.mean, post.var};
            input.var.assign(fold.test.X.cols, 0.0);
            for (std::size_t r = 0; r < fold.test.size(); ++r) {
                auto x = fold.test.X.row(r);
                input.mean.assign(x.begin(), x.end());
                GaussianMoments g = adf_forward(spec, pm, input);
                run_test_mean[ri].insert(run_test_mean[ri].end(), g.mean.begin(), g.mean.end());
                run_test_var[ri].insert(run_test_var[ri].end(), g.var.begin(), g.var.end());
            }
            for (std::size_t r = 0; r < fold.train.size(); ++r) {
                auto x = fold.train.X.row(r);
                input.mean.assign(x.begin(), x.end());
                GaussianMoments g = adf_forward(spec, pm, input);
                run_train_mean[ri].insert(run_train_mean[ri].end(), g.mean.begin(),
                                          g.mean.end());
            }
        }
        double adf_shared = cfg.timing ? now_seconds() - adf_start : 0.0;

        double train_acc2 = 0.0;
        long models_acc2 = 0;
        int nm = 0;
        for (int k : sizes) {
            double eval_start = now_seconds();
            for (; nm < k; ++nm) {
                train_acc2 += member_seconds[nm];
                models_acc2 += member_models[nm];
            }
            std::size_t run_count = 0;
            while (run_count < n_runs && draw.runs[run_count].member < k) ++run_count;
            const double R = static_cast<double>(run_count);

            // mixture moments over the member prefix
            Matrix mean_std(fold.test.size(), m), var_std(fold.test.size(), m);
            for (std::size_t ri = 0; ri < run_count; ++ri)
                for (std::size_t i = 0; i < mean_std.v.size(); ++i) {
                    mean_std.v[i] += run_test_mean[ri][i];
                    var_std.v[i] += run_test_var[ri][i] +
                                    run_test_mean[ri][i] * run_test_mean[ri][i];
                }
            for (std::size_t i = 0; i < mean_std.v.size(); ++i) {
                mean_std.v[i] /= R;
                var_std.v[i] = std::max(var_std.v[i] / R - mean_std.v[i] * mean_std.v[i], 0.0);
            }
            Matrix train_mean(fold.train.size(), m);
            for (std::size_t ri = 0; ri < run_count; ++ri)
                for (std::size_t i = 0; i < train_mean.v.size(); ++i)
                    train_mean.v[i] += run_train_mean[ri][i];
            for (double& v : train_mean.v) v /= R;

            CellMetrics metrics = regression_metrics(fold, mean_std, var_std, train_mean);
            ResultRow row;
            row.dataset = dataset_name;
            row.method = label.text + "(adf)";
            row.fold = fold.fold;
            row.seed = cfg.seed;
            row.ensemble_size = k;
            row.models_trained = models_acc2;
            row.full = (k == draw.n_members);
            row.nll = metrics.nll;
            row.metric = metrics.metric;
            row.wall_time_s =
                cfg.timing ? train_acc2 + adf_shared + (now_seconds() - eval_start) : 0.0;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
    int n_classes = 0;
    std::string dataset_name;
    std::vector<FoldData> folds = prepare_folds(cfg, n_classes, dataset_name);
    const bool classification = cfg.head == OutputHead::classification_softmax;

    ModelSpec spec;
    spec.layer_sizes.push_back(static_cast<int>(folds.front().train.X.cols));
    for (int hdim : cfg.hidden) spec.layer_sizes.push_back(hdim);
    spec.layer_sizes.push_back(classification ? n_classes
                                              : static_cast<int>(folds.front().train.Y.cols));
    spec.activation = cfg.activation;
    spec.output_head = cfg.head;
    spec.dropout_rate = cfg.dropout;
    spec.validate();
    if (classification && cfg.loss == LossKind::mse)
        throw std::runtime_error("classification runs train with loss = cross_entropy");
    if (!classification && cfg.loss == LossKind::cross_entropy)
        throw std::runtime_error("cross_entropy requires head = classification");

    std::vector<CellTask> cells;
    for (std::size_t f = 0; f < folds.size(); ++f)
        for (std::size_t l = 0; l < cfg.sweep.size(); ++l)
            cells.push_back({static_cast<int>(f), static_cast<int>(l)});

    std::vector<std::vector<ResultRow>> cell_rows(cells.size());
    std::vector<std::string> cell_errors(cells.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&]() {
        while (true) {
            std::size_t c = next.fetch_add(1);
            if (c >= cells.size()) return;
            const CellTask& task = cells[c];
            try {
                cell_rows[c] = run_cell(cfg, spec, folds[task.fold_index],
                                        cfg.sweep[task.label_index], dataset_name);
            } catch (const std::exception& e) {
                cell_errors[c] = std::string(e.what());
            }
        }
    };

    int n_threads = std::min<int>(cfg.threads, static_cast<int>(cells.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (std::thread& th : pool) th.join();
    }

    RunResult result;
    result.classification = classification;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        if (!cell_errors[c].empty()) {
            std::string context = "fold " + std::to_string(cells[c].fold_index) + ", label '" +
                                  cfg.sweep[cells[c].label_index].text +
                                  "': " + cell_errors[c];
            if (cfg.skip_failures) {
                std::fprintf(stderr, "margin: skipping cell (%s)\n", context.c_str());
                result.skipped.push_back(context);
                continue;
            }
            throw std::runtime_error("experiment cell failed: " + context);
        }
        for (ResultRow& row : cell_rows[c]) result.rows.push_back(std::move(row));
    }
    return result;
}

namespace {

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string fmt_time(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

void write_results(const RunResult& result, const std::string& dir) {
    if (result.rows.empty()) throw std::invalid_argument("write_results: no rows");
    std::filesystem::create_directories(dir);
    const std::filesystem::path base(dir);

    {
        std::ofstream raw(base / "results_raw.csv");
        if (!raw) throw std::runtime_error("write_results: cannot write results_raw.csv");
        raw << "dataset,method,fold,seed,nll,metric,ensemble_size,models_trained,wall_time_s\n";
        for (const ResultRow& r : result.rows)
            raw << r.dataset << ',' << r.method << ',' << r.fold << ',' << r.seed << ','
                << fmt_g(r.nll) << ',' << fmt_g(r.metric) << ',' << r.ensemble_size << ','
                << r.models_trained << ',' << fmt_time(r.wall_time_s) << '\n';
    }

    // summary over folds of the full rows, in first-seen method order
    {
        std::vector<std::pair<std::string, std::string>> order;  // (dataset, method)
        std::map<std::pair<std::string, std::string>, std::vector<const ResultRow*>> groups;
        for (const ResultRow& r : result.rows) {
            if (!r.full) continue;
            auto key = std::make_pair(r.dataset, r.method);
            if (groups.find(key) == groups.end()) order.push_back(key);
            groups[key].push_back(&r);
        }
        std::ofstream summary(base / "results_summary.csv");
        if (!summary)
            throw std::runtime_error("write_results: cannot write results_summary.csv");
        summary << "dataset,method,nll_mean,nll_std,metric_mean,metric_std\n";
        for (const auto& key : order) {
            const auto& rows = groups[key];
            const double n = static_cast<double>(rows.size());
            double nll_mean = 0.0, metric_mean = 0.0;
            for (const ResultRow* r : rows) {
                nll_mean += r->nll;
                metric_mean += r->metric;
            }
            nll_mean /= n;
            metric_mean /= n;
            double nll_var = 0.0, metric_var = 0.0;
            for (const ResultRow* r : rows) {
                nll_var += (r->nll - nll_mean) * (r->nll - nll_mean);
                metric_var += (r->metric - metric_mean) * (r->metric - metric_mean);
            }
            summary << key.first << ',' << key.second << ',' << fmt_g(nll_mean) << ','
                    << fmt_g(std::sqrt(nll_var / n)) << ',' << fmt_g(metric_mean) << ','
                    << fmt_g(std::sqrt(metric_var / n)) << '\n';
        }
    }

    // mean over folds at each ensemble size, in first-seen order
    {
        std::vector<std::tuple<std::string, std::string, long>> order;
        std::map<std::tuple<std::string, std::string, long>, std::pair<std::vector<double>,
                                                                       std::vector<double>>>
            groups;
        for (const ResultRow& r : result.rows) {
            auto key = std::make_tuple(r.dataset, r.method, r.ensemble_size);
            if (groups.find(key) == groups.end()) order.push_back(key);
            groups[key].first.push_back(r.nll);
            groups[key].second.push_back(r.metric);
        }
        std::ofstream trend(base / "trend.csv");
        if (!trend) throw std::runtime_error("write_results: cannot write trend.csv");
        trend << "dataset,method,ensemble_size,nll,metric\n";
        for (const auto& key : order) {
            const auto& [nlls, metrics] = groups[key];
            double nll = 0.0, metric = 0.0;
            for (double v : nlls) nll += v;
            for (double v : metrics) metric += v;
            nll /= static_cast<double>(nlls.size());
            metric /= static_cast<double>(metrics.size());
            trend << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key)
                  << ',' << fmt_g(nll) << ',' << fmt_g(metric) << '\n';
        }
    }
}

}  // namespace margin
