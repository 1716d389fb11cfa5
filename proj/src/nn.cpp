#include "margin/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "margin/rng.hpp"

namespace margin {

void ModelSpec::validate() const {
    if (layer_sizes.size() < 2)
        throw std::invalid_argument("model spec: need at least input and output sizes");
    for (int s : layer_sizes)
        if (s < 1) throw std::invalid_argument("model spec: layer sizes must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw std::invalid_argument("model spec: dropout_rate must lie in [0, 1)");
}

LayerSlice layer_slice(const ModelSpec& spec, int layer) {
    LayerSlice s;
    std::size_t off = 0;
    for (int l = 0; l <= layer; ++l) {
        s.fan_in = spec.layer_sizes[l];
        s.fan_out = spec.layer_sizes[l + 1];
        s.w_off = off;
        s.w_len = static_cast<std::size_t>(s.fan_in) * s.fan_out;
        s.b_off = s.w_off + s.w_len;
        s.b_len = static_cast<std::size_t>(s.fan_out);
        off = s.b_off + s.b_len;
    }
    return s;
}

std::size_t param_dim(const ModelSpec& spec) {
    std::size_t d = 0;
    for (int l = 0; l + 1 < static_cast<int>(spec.layer_sizes.size()); ++l) {
        std::size_t in = spec.layer_sizes[l], out = spec.layer_sizes[l + 1];
        d += in * out + out;
    }
    return d;
}

ParamVector init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    ParamVector theta(param_dim(spec), 0.0);
    Rng rng(seed);
    for (int l = 0; l < spec.num_layers(); ++l) {
        LayerSlice s = layer_slice(spec, l);
        double limit = std::sqrt(6.0 / (s.fan_in + s.fan_out));
        for (std::size_t i = 0; i < s.w_len; ++i)
            theta[s.w_off + i] = rng.uniform(-limit, limit);
        // biases stay zero
    }
    return theta;
}

namespace {

void affine(std::span<const double> theta, const LayerSlice& s,
            std::span<const double> in, std::span<double> out) {
    for (int o = 0; o < s.fan_out; ++o) {
        double acc = theta[s.b_off + o];
        const double* w = theta.data() + s.w_off + static_cast<std::size_t>(o) * s.fan_in;
        for (int i = 0; i < s.fan_in; ++i) acc += w[i] * in[i];
        out[o] = acc;
    }
}

void softmax_inplace(std::span<double> z) {
    double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

}  // namespace

std::vector<double> forward(const ModelSpec& spec, std::span<const double> theta,
                            std::span<const double> x) {
    if (static_cast<int>(x.size()) != spec.input_dim())
        throw std::invalid_argument("forward: input has size " + std::to_string(x.size()) +
                                    ", spec expects " + std::to_string(spec.input_dim()));
    if (theta.size() != param_dim(spec))
        throw std::invalid_argument("forward: parameter vector length mismatch");

    std::vector<double> a(x.begin(), x.end()), z;
    for (int l = 0; l < spec.num_layers(); ++l) {
        LayerSlice s = layer_slice(spec, l);
        z.assign(s.fan_out, 0.0);
        affine(theta, s, a, z);
        bool last = (l == spec.num_layers() - 1);
        if (!last && spec.activation == Activation::relu)
            for (double& v : z) v = v > 0.0 ? v : 0.0;
        a.swap(z);
    }
    if (spec.output_head == OutputHead::classification_softmax) softmax_inplace(a);
    return a;
}

std::pair<double, ParamVector> loss_and_grad(const ModelSpec& spec,
                                             std::span<const double> theta,
                                             std::span<const Sample> batch,
                                             LossKind loss) {
    if (batch.empty()) throw std::invalid_argument("loss_and_grad: empty batch");
    if (loss == LossKind::cross_entropy &&
        spec.output_head != OutputHead::classification_softmax)
        throw std::invalid_argument("cross_entropy requires the classification head");
    if (theta.size() != param_dim(spec))
        throw std::invalid_argument("loss_and_grad: parameter vector length mismatch");

    const int L = spec.num_layers();
    const int m = spec.output_dim();
    const double B = static_cast<double>(batch.size());

    double total_loss = 0.0;
    ParamVector grad(theta.size(), 0.0);

    // per-layer pre-activations and activations, reused across samples
    std::vector<std::vector<double>> pre(L), act(L + 1);

    for (const Sample& sample : batch) {
        if (static_cast<int>(sample.x.size()) != spec.input_dim() ||
            static_cast<int>(sample.y.size()) != m)
            throw std::invalid_argument("loss_and_grad: sample dimensions mismatch spec");

        act[0].assign(sample.x.begin(), sample.x.end());
        for (int l = 0; l < L; ++l) {
            LayerSlice s = layer_slice(spec, l);
            pre[l].assign(s.fan_out, 0.0);
            affine(theta, s, act[l], pre[l]);
            act[l + 1] = pre[l];
            if (l < L - 1 && spec.activation == Activation::relu)
                for (double& v : act[l + 1]) v = v > 0.0 ? v : 0.0;
        }

        // delta = dLoss/d(pre-activation of the output layer)
        std::vector<double> delta(m);
        if (loss == LossKind::mse) {
            std::vector<double> out = act[L];
            if (spec.output_head == OutputHead::classification_softmax)
                softmax_inplace(out);
            double sample_loss = 0.0;
            std::vector<double> dout(m);  // dLoss/d(head output)
            for (int j = 0; j < m; ++j) {
                double r = out[j] - sample.y[j];
                sample_loss += r * r / m;
                dout[j] = 2.0 * r / (B * m);
            }
            total_loss += sample_loss / B;
            if (spec.output_head == OutputHead::classification_softmax) {
                // pull dout back through the softmax Jacobian
                double dot = 0.0;
                for (int j = 0; j < m; ++j) dot += dout[j] * out[j];
                for (int j = 0; j < m; ++j) delta[j] = out[j] * (dout[j] - dot);
            } else {
                delta = dout;
            }
        } else {  // cross_entropy, fused with log-softmax
            const std::vector<double>& z = act[L];
            double mx = *std::max_element(z.begin(), z.end());
            double lse = 0.0;
            for (double v : z) lse += std::exp(v - mx);
            lse = std::log(lse) + mx;
            double sample_loss = 0.0;
            for (int j = 0; j < m; ++j) sample_loss -= sample.y[j] * (z[j] - lse);
            total_loss += sample_loss / B;
            for (int j = 0; j < m; ++j)
                delta[j] = (std::exp(z[j] - lse) - sample.y[j]) / B;
        }

        // backpropagate
        for (int l = L - 1; l >= 0; --l) {
            LayerSlice s = layer_slice(spec, l);
            for (int o = 0; o < s.fan_out; ++o) {
                double d = delta[o];
                double* gw = grad.data() + s.w_off + static_cast<std::size_t>(o) * s.fan_in;
                const double* ain = act[l].data();
                for (int i = 0; i < s.fan_in; ++i) gw[i] += d * ain[i];
                grad[s.b_off + o] += d;
            }
            if (l > 0) {
                std::vector<double> prev(s.fan_in, 0.0);
                for (int o = 0; o < s.fan_out; ++o) {
                    double d = delta[o];
                    const double* w =
                        theta.data() + s.w_off + static_cast<std::size_t>(o) * s.fan_in;
                    for (int i = 0; i < s.fan_in; ++i) prev[i] += w[i] * d;
                }
                if (spec.activation == Activation::relu)
                    for (int i = 0; i < s.fan_in; ++i)
                        if (pre[l - 1][i] <= 0.0) prev[i] = 0.0;
                delta.swap(prev);
            }
        }
    }
    return {total_loss, std::move(grad)};
}

}  // namespace margin
