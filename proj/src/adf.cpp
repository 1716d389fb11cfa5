#include "margin/adf.hpp"

#include <cmath>
#include <stdexcept>

namespace margin {

namespace {
constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;
constexpr double kInvSqrt2 = 0.7071067811865475244008444;

double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }
double norm_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }
}  // namespace

GaussianMoments adf_linear(const GaussianMoments& in, std::span<const double> w_mean,
                           std::span<const double> w_var, std::span<const double> b_mean,
                           std::span<const double> b_var, int fan_in, int fan_out) {
    const std::size_t wn = static_cast<std::size_t>(fan_in) * fan_out;
    if (in.mean.size() != static_cast<std::size_t>(fan_in) || in.var.size() != in.mean.size() ||
        w_mean.size() != wn || w_var.size() != wn ||
        b_mean.size() != static_cast<std::size_t>(fan_out) || b_var.size() != b_mean.size())
        throw std::invalid_argument("adf_linear: shape mismatch");

    GaussianMoments out;
    out.mean.assign(fan_out, 0.0);
    out.var.assign(fan_out, 0.0);
    for (int o = 0; o < fan_out; ++o) {
        const double* wm = w_mean.data() + static_cast<std::size_t>(o) * fan_in;
        const double* wv = w_var.data() + static_cast<std::size_t>(o) * fan_in;
        double mu = b_mean[o];
        double var = b_var[o];
        for (int i = 0; i < fan_in; ++i) {
            mu += wm[i] * in.mean[i];
            var += wv[i] * in.var[i] + wv[i] * in.mean[i] * in.mean[i] +
                   wm[i] * wm[i] * in.var[i];
        }
        out.mean[o] = mu;
        out.var[o] = var;
    }
    return out;
}

GaussianMoments adf_relu(const GaussianMoments& in) {
    if (in.mean.size() != in.var.size())
        throw std::invalid_argument("adf_relu: shape mismatch");
    GaussianMoments out;
    out.mean.resize(in.mean.size());
    out.var.resize(in.mean.size());
    for (std::size_t i = 0; i < in.mean.size(); ++i) {
        double mu = in.mean[i];
        double var = in.var[i];
        if (var < 0.0) throw std::invalid_argument("adf_relu: negative input variance");
        double sigma = std::sqrt(var);
        if (sigma < kSigmaEps) {
            out.mean[i] = mu > 0.0 ? mu : 0.0;
            out.var[i] = 0.0;
            continue;
        }
        double r = mu / sigma;
        double cdf = norm_cdf(r);
        double pdf = norm_pdf(r);
        double m = mu * cdf + sigma * pdf;
        double v = (mu * mu + var) * cdf + mu * sigma * pdf - m * m;
        out.mean[i] = m;
        out.var[i] = v > 0.0 ? v : 0.0;
    }
    return out;
}

GaussianMoments adf_forward(const ModelSpec& spec, const ParamMoments& params,
                            const GaussianMoments& input) {
    spec.validate();
    if (spec.output_head != OutputHead::regression_identity)
        throw std::invalid_argument("adf_forward: only the regression head is supported");
    if (params.mean.size() != param_dim(spec) || params.var.size() != params.mean.size())
        throw std::invalid_argument("adf_forward: parameter moments length mismatch");
    if (input.mean.size() != static_cast<std::size_t>(spec.input_dim()) ||
        input.var.size() != input.mean.size())
        throw std::invalid_argument("adf_forward: input moments length mismatch");

    GaussianMoments z = input;
    for (int l = 0; l < spec.num_layers(); ++l) {
        LayerSlice s = layer_slice(spec, l);
        std::span<const double> wm(params.mean.data() + s.w_off, s.w_len);
        std::span<const double> wv(params.var.data() + s.w_off, s.w_len);
        std::span<const double> bm(params.mean.data() + s.b_off, s.b_len);
        std::span<const double> bv(params.var.data() + s.b_off, s.b_len);
        z = adf_linear(z, wm, wv, bm, bv, s.fan_in, s.fan_out);
        if (l < spec.num_layers() - 1 && spec.activation == Activation::relu)
            z = adf_relu(z);
    }
    return z;
}

}  // namespace margin
