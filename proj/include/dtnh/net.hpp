#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dtnh/errors.hpp"
#include "dtnh/tensor.hpp"

namespace dtnh {

enum class LayerKind : std::uint8_t {
    Dense,
    Relu,
    Conv2d,
    Flatten,
    SoftmaxCrossEntropyHead
};

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Relu: return "relu";
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::SoftmaxCrossEntropyHead: return "softmax-cross-entropy-head";
    }
    return "?";
}

/// One layer of a feed-forward net. Extents are kind-specific; `tap` marks
/// the layer output as a feature map for knowledge-distillation matching.
struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t in_width = 0, out_width = 0;            // dense
    std::size_t in_ch = 0, out_ch = 0, kh = 0, kw = 0;  // conv2d
    std::size_t stride = 1;                             // conv2d
    bool tap = false;

    static LayerSpec dense(std::size_t in, std::size_t out, bool tap = false) {
        LayerSpec l;
        l.kind = LayerKind::Dense;
        l.in_width = in;
        l.out_width = out;
        l.tap = tap;
        return l;
    }
    static LayerSpec relu(bool tap = false) {
        LayerSpec l;
        l.kind = LayerKind::Relu;
        l.tap = tap;
        return l;
    }
    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kh,
                            std::size_t kw, std::size_t stride = 1,
                            bool tap = false) {
        LayerSpec l;
        l.kind = LayerKind::Conv2d;
        l.in_ch = in_ch;
        l.out_ch = out_ch;
        l.kh = kh;
        l.kw = kw;
        l.stride = stride;
        l.tap = tap;
        return l;
    }
    static LayerSpec flatten() {
        LayerSpec l;
        l.kind = LayerKind::Flatten;
        return l;
    }

    std::size_t param_count() const {
        switch (kind) {
            case LayerKind::Dense: return in_width * out_width + out_width;
            case LayerKind::Conv2d: return out_ch * in_ch * kh * kw + out_ch;
            default: return 0;
        }
    }
};

/// Architecture plus derived bookkeeping: per-layer activation shapes
/// (batch dimension excluded), parameter offsets, total parameter count d.
struct NetworkSpec {
    std::vector<LayerSpec> layers;
    std::vector<std::size_t> input_shape;  // sans batch
    std::vector<std::vector<std::size_t>> out_shapes;  // per layer, sans batch
    std::vector<std::size_t> param_offsets;
    std::size_t param_count = 0;

    static NetworkSpec build(std::vector<std::size_t> input_shape,
                             std::vector<LayerSpec> layers) {
        if (layers.empty()) throw ConfigError("network: at least one layer required");
        NetworkSpec s;
        s.input_shape = std::move(input_shape);
        s.layers = std::move(layers);
        std::vector<std::size_t> cur = s.input_shape;
        for (std::size_t i = 0; i < s.layers.size(); ++i) {
            const LayerSpec& l = s.layers[i];
            s.param_offsets.push_back(s.param_count);
            s.param_count += l.param_count();
            switch (l.kind) {
                case LayerKind::Dense: {
                    std::size_t w = Tensor::size_of(cur);
                    if (cur.size() != 1 || w != l.in_width)
                        throw ConfigError("layer " + std::to_string(i) +
                                          ": dense expects rank-1 input of width " +
                                          std::to_string(l.in_width));
                    cur = {l.out_width};
                    break;
                }
                case LayerKind::Relu:
                    break;  // shape-preserving
                case LayerKind::Conv2d: {
                    if (cur.size() != 3 || cur[0] != l.in_ch)
                        throw ConfigError("layer " + std::to_string(i) +
                                          ": conv2d expects (C,H,W) input with C=" +
                                          std::to_string(l.in_ch));
                    if (cur[1] < l.kh || cur[2] < l.kw)
                        throw ConfigError("layer " + std::to_string(i) +
                                          ": conv2d kernel larger than input");
                    std::size_t oh = (cur[1] - l.kh) / l.stride + 1;
                    std::size_t ow = (cur[2] - l.kw) / l.stride + 1;
                    cur = {l.out_ch, oh, ow};
                    break;
                }
                case LayerKind::Flatten:
                    cur = {Tensor::size_of(cur)};
                    break;
                case LayerKind::SoftmaxCrossEntropyHead:
                    if (i + 1 != s.layers.size())
                        throw ConfigError("loss head must be the final layer");
                    break;  // marker only; logits pass through
            }
            s.out_shapes.push_back(cur);
        }
        return s;
    }

    std::vector<std::size_t> tap_indices() const {
        std::vector<std::size_t> t;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].tap) t.push_back(i);
        return t;
    }

    std::size_t num_classes() const { return Tensor::size_of(out_shapes.back()); }
};

/// One mini-batch: inputs with leading extent b, integer labels of length b.
struct MiniBatch {
    Tensor inputs;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

/// Forward-pass record: logits, tapped feature maps, and the per-layer
/// inputs the backward pass needs.
struct ForwardRecord {
    Tensor logits;
    std::vector<std::pair<std::size_t, Tensor>> feature_maps;
    std::vector<Tensor> layer_inputs;   // input to layer i
    std::vector<Tensor> layer_outputs;  // output of layer i
};

namespace detail {

inline Tensor with_batch(const std::vector<std::size_t>& shape, std::size_t b) {
    std::vector<std::size_t> s{b};
    s.insert(s.end(), shape.begin(), shape.end());
    return Tensor::zeros(s);
}

inline Tensor dense_forward(const LayerSpec& l, const double* p, const Tensor& x) {
    const std::size_t b = x.shape[0], in = l.in_width, out = l.out_width;
    Tensor y = Tensor::zeros({b, out});
    const double* w = p;            // in x out, row-major
    const double* bias = p + in * out;
    for (std::size_t s = 0; s < b; ++s) {
        const double* xi = x.data.data() + s * in;
        double* yi = y.data.data() + s * out;
        for (std::size_t j = 0; j < out; ++j) yi[j] = bias[j];
        for (std::size_t i = 0; i < in; ++i) {
            const double xv = xi[i];
            const double* wr = w + i * out;
            for (std::size_t j = 0; j < out; ++j) yi[j] += xv * wr[j];
        }
    }
    return y;
}

inline Tensor dense_backward(const LayerSpec& l, const double* p, const Tensor& x,
                             const Tensor& dy, double* gp) {
    const std::size_t b = x.shape[0], in = l.in_width, out = l.out_width;
    const double* w = p;
    double* gw = gp;
    double* gb = gp + in * out;
    Tensor dx = Tensor::zeros(x.shape);
    for (std::size_t s = 0; s < b; ++s) {
        const double* xi = x.data.data() + s * in;
        const double* dyi = dy.data.data() + s * out;
        double* dxi = dx.data.data() + s * in;
        for (std::size_t j = 0; j < out; ++j) gb[j] += dyi[j];
        for (std::size_t i = 0; i < in; ++i) {
            const double* wr = w + i * out;
            double* gwr = gw + i * out;
            double acc = 0.0;
            for (std::size_t j = 0; j < out; ++j) {
                gwr[j] += xi[i] * dyi[j];
                acc += wr[j] * dyi[j];
            }
            dxi[i] += acc;
        }
    }
    return dx;
}

inline Tensor conv2d_forward(const LayerSpec& l, const double* p, const Tensor& x,
                             const std::vector<std::size_t>& out_shape) {
    const std::size_t b = x.shape[0], ic = l.in_ch, ih = x.shape[2], iw = x.shape[3];
    const std::size_t oc = l.out_ch, oh = out_shape[1], ow = out_shape[2];
    const double* w = p;  // (oc, ic, kh, kw)
    const double* bias = p + oc * ic * l.kh * l.kw;
    Tensor y = with_batch(out_shape, b);
    for (std::size_t s = 0; s < b; ++s)
        for (std::size_t o = 0; o < oc; ++o)
            for (std::size_t yy = 0; yy < oh; ++yy)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    double acc = bias[o];
                    for (std::size_t c = 0; c < ic; ++c)
                        for (std::size_t ky = 0; ky < l.kh; ++ky)
                            for (std::size_t kx = 0; kx < l.kw; ++kx) {
                                const std::size_t sy = yy * l.stride + ky;
                                const std::size_t sx = xx * l.stride + kx;
                                acc += w[((o * ic + c) * l.kh + ky) * l.kw + kx] *
                                       x.data[((s * ic + c) * ih + sy) * iw + sx];
                            }
                    y.data[((s * oc + o) * oh + yy) * ow + xx] = acc;
                }
    return y;
}

inline Tensor conv2d_backward(const LayerSpec& l, const double* p, const Tensor& x,
                              const Tensor& dy, double* gp) {
    const std::size_t b = x.shape[0], ic = l.in_ch, ih = x.shape[2], iw = x.shape[3];
    const std::size_t oc = l.out_ch, oh = dy.shape[2], ow = dy.shape[3];
    const double* w = p;
    double* gw = gp;
    double* gb = gp + oc * ic * l.kh * l.kw;
    Tensor dx = Tensor::zeros(x.shape);
    for (std::size_t s = 0; s < b; ++s)
        for (std::size_t o = 0; o < oc; ++o)
            for (std::size_t yy = 0; yy < oh; ++yy)
                for (std::size_t xx = 0; xx < ow; ++xx) {
                    const double g = dy.data[((s * oc + o) * oh + yy) * ow + xx];
                    gb[o] += g;
                    for (std::size_t c = 0; c < ic; ++c)
                        for (std::size_t ky = 0; ky < l.kh; ++ky)
                            for (std::size_t kx = 0; kx < l.kw; ++kx) {
                                const std::size_t sy = yy * l.stride + ky;
                                const std::size_t sx = xx * l.stride + kx;
                                const std::size_t wi =
                                    ((o * ic + c) * l.kh + ky) * l.kw + kx;
                                const std::size_t xi =
                                    ((s * ic + c) * ih + sy) * iw + sx;
                                gw[wi] += g * x.data[xi];
                                dx.data[xi] += g * w[wi];
                            }
                }
    return dx;
}

}  // namespace detail

/// Deterministic fan-in-scaled uniform init; biases zero.
inline FlatVector init_params(const NetworkSpec& spec, std::uint64_t seed) {
    FlatVector params(spec.param_count);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        if (l.param_count() == 0) continue;
        std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + i + 1);
        std::size_t fan_in =
            l.kind == LayerKind::Dense ? l.in_width : l.in_ch * l.kh * l.kw;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        double* p = params.data.data() + spec.param_offsets[i];
        const std::size_t nw = l.param_count() -
                               (l.kind == LayerKind::Dense ? l.out_width : l.out_ch);
        for (std::size_t k = 0; k < nw; ++k) p[k] = u(rng);
        // remaining entries are biases, already zero
    }
    return params;
}

inline ForwardRecord forward(const NetworkSpec& spec, const FlatVector& params,
                             const Tensor& batch_inputs) {
    if (params.size() != spec.param_count)
        throw DimensionError("forward: params length " + std::to_string(params.size()) +
                             " != d=" + std::to_string(spec.param_count));
    if (batch_inputs.rank() != spec.input_shape.size() + 1)
        throw DimensionError("forward: input rank mismatch");
    for (std::size_t i = 0; i < spec.input_shape.size(); ++i)
        if (batch_inputs.shape[i + 1] != spec.input_shape[i])
            throw DimensionError("forward: input extent " + std::to_string(i + 1) +
                                 " mismatch");
    const std::size_t b = batch_inputs.shape[0];

    ForwardRecord rec;
    Tensor cur = batch_inputs;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& l = spec.layers[i];
        rec.layer_inputs.push_back(cur);
        const double* p = params.data.data() + spec.param_offsets[i];
        switch (l.kind) {
            case LayerKind::Dense:
                cur = detail::dense_forward(l, p, cur);
                break;
            case LayerKind::Relu: {
                Tensor y = cur;
                for (double& v : y.data) v = std::max(v, 0.0);
                cur = std::move(y);
                break;
            }
            case LayerKind::Conv2d:
                cur = detail::conv2d_forward(l, p, cur, spec.out_shapes[i]);
                break;
            case LayerKind::Flatten: {
                Tensor y = cur;
                y.shape = {b, Tensor::size_of(spec.out_shapes[i])};
                cur = std::move(y);
                break;
            }
            case LayerKind::SoftmaxCrossEntropyHead:
                break;  // logits pass through
        }
        rec.layer_outputs.push_back(cur);
        if (l.tap) rec.feature_maps.emplace_back(i, cur);
    }
    rec.logits = cur;
    return rec;
}

/// Reverse pass: gradient of a scalar whose derivative w.r.t. the logits is
/// `d_logits` and w.r.t. each tapped output is `tap_grads[i]`. Either side may
/// be absent (empty tensor / missing key).
inline FlatVector backward(const NetworkSpec& spec, const FlatVector& params,
                           const ForwardRecord& rec, const Tensor& d_logits,
                           const std::map<std::size_t, Tensor>& tap_grads = {}) {
    FlatVector grad(spec.param_count);
    Tensor d_out = d_logits.data.empty()
                       ? Tensor::zeros(rec.logits.shape)
                       : d_logits;
    for (std::size_t ii = spec.layers.size(); ii-- > 0;) {
        const LayerSpec& l = spec.layers[ii];
        if (auto it = tap_grads.find(ii); it != tap_grads.end()) {
            if (it->second.data.size() != d_out.data.size())
                throw DimensionError("backward: tap gradient shape mismatch at layer " +
                                     std::to_string(ii));
            for (std::size_t k = 0; k < d_out.data.size(); ++k)
                d_out.data[k] += it->second.data[k];
        }
        const double* p = params.data.data() + spec.param_offsets[ii];
        double* gp = grad.data.data() + spec.param_offsets[ii];
        switch (l.kind) {
            case LayerKind::Dense:
                d_out = detail::dense_backward(l, p, rec.layer_inputs[ii], d_out, gp);
                break;
            case LayerKind::Relu: {
                const Tensor& x = rec.layer_inputs[ii];
                Tensor dx = d_out;
                for (std::size_t k = 0; k < dx.data.size(); ++k)
                    if (x.data[k] <= 0.0) dx.data[k] = 0.0;
                d_out = std::move(dx);
                break;
            }
            case LayerKind::Conv2d:
                d_out = detail::conv2d_backward(l, p, rec.layer_inputs[ii], d_out, gp);
                break;
            case LayerKind::Flatten: {
                Tensor dx = d_out;
                dx.shape = rec.layer_inputs[ii].shape;
                d_out = std::move(dx);
                break;
            }
            case LayerKind::SoftmaxCrossEntropyHead:
                break;
        }
    }
    return grad;
}

/// Numerically stable softmax cross-entropy over a batch of logits.
/// Returns the mean loss; if `d_logits` is non-null, fills it with the
/// gradient of the mean loss w.r.t. the logits.
inline double softmax_cross_entropy(const Tensor& logits,
                                    const std::vector<int>& labels,
                                    Tensor* d_logits = nullptr) {
    const std::size_t b = logits.shape[0], c = logits.shape[1];
    if (labels.size() != b)
        throw DimensionError("softmax_cross_entropy: labels length mismatch");
    if (d_logits) *d_logits = Tensor::zeros(logits.shape);
    double total = 0.0;
    for (std::size_t s = 0; s < b; ++s) {
        const int y = labels[s];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw DataError("label " + std::to_string(y) + " out of range [0," +
                            std::to_string(c) + ")");
        const double* z = logits.data.data() + s * c;
        double zmax = *std::max_element(z, z + c);
        double lse = 0.0;
        for (std::size_t j = 0; j < c; ++j) lse += std::exp(z[j] - zmax);
        lse = zmax + std::log(lse);
        total += lse - z[y];
        if (d_logits) {
            double* g = d_logits->data.data() + s * c;
            for (std::size_t j = 0; j < c; ++j)
                g[j] = std::exp(z[j] - lse) / static_cast<double>(b);
            g[y] -= 1.0 / static_cast<double>(b);
        }
    }
    return total / static_cast<double>(b);
}

/// Mean cross-entropy J over the mini-batch and its gradient w.r.t. params.
inline std::pair<double, FlatVector> empirical_loss_and_grad(
    const NetworkSpec& spec, const FlatVector& params, const MiniBatch& batch) {
    if (batch.size() == 0) throw DataError("empirical_loss_and_grad: empty batch");
    ForwardRecord rec = forward(spec, params, batch.inputs);
    Tensor d_logits;
    double loss = softmax_cross_entropy(rec.logits, batch.labels, &d_logits);
    FlatVector g = backward(spec, params, rec, d_logits);
    return {loss, std::move(g)};
}

/// Feature-map matching penalty between the current params and frozen source
/// params on the same batch: mean over the batch of summed squared distances
/// between tapped outputs. Gradient flows through the current params only.
inline std::pair<double, FlatVector> feature_grad(const NetworkSpec& spec,
                                                  const FlatVector& params,
                                                  const FlatVector& source_params,
                                                  const MiniBatch& batch) {
    if (source_params.size() != spec.param_count)
        throw ConfigError("feature_grad: source params length mismatch");
    if (spec.tap_indices().empty())
        throw ConfigError("feature_grad: no tapped layers declared");
    const double b = static_cast<double>(batch.size());
    ForwardRecord rec = forward(spec, params, batch.inputs);
    ForwardRecord src = forward(spec, source_params, batch.inputs);

    double omega = 0.0;
    std::map<std::size_t, Tensor> tap_grads;
    for (std::size_t t = 0; t < rec.feature_maps.size(); ++t) {
        const auto& [idx, ft] = rec.feature_maps[t];
        const Tensor& fs = src.feature_maps[t].second;
        Tensor g = Tensor::zeros(ft.shape);
        for (std::size_t k = 0; k < ft.data.size(); ++k) {
            const double diff = ft.data[k] - fs.data[k];
            omega += diff * diff;
            g.data[k] = 2.0 * diff / b;
        }
        tap_grads.emplace(idx, std::move(g));
    }
    omega /= b;
    FlatVector g = backward(spec, params, rec, Tensor{}, tap_grads);
    return {omega, std::move(g)};
}

}  // namespace dtnh
