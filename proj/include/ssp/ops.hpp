#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ssp/rng.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

/// 2-D convolution parameters. Kernels are square with odd side; padding is
/// always zero-padding.
template <typename T>
struct ConvSpecT {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;
    std::vector<T> weights; // out * in * k * k, row-major
    std::vector<T> bias;    // out

    T weight(std::size_t oc, std::size_t ic, std::size_t ky, std::size_t kx) const {
        return weights[((oc * in_channels + ic) * kernel + ky) * kernel + kx];
    }
    T& weight(std::size_t oc, std::size_t ic, std::size_t ky, std::size_t kx) {
        return weights[((oc * in_channels + ic) * kernel + ky) * kernel + kx];
    }

    void validate() const {
        if (kernel % 2 == 0) throw ContractError("kernel size must be odd");
        if (stride == 0) throw ContractError("stride must be positive");
        if (weights.size() != in_channels * out_channels * kernel * kernel)
            throw ContractError("conv weight count mismatch");
        if (bias.size() != out_channels)
            throw ContractError("conv bias count mismatch");
    }

    /// Fan-in scaled uniform init (+- sqrt(1/fan_in)), zero bias.
    static ConvSpecT seeded(std::size_t in_c, std::size_t out_c, std::size_t k,
                            std::size_t stride, std::size_t pad, Rng& rng) {
        ConvSpecT s;
        s.in_channels = in_c;
        s.out_channels = out_c;
        s.kernel = k;
        s.stride = stride;
        s.pad = pad;
        s.weights.resize(in_c * out_c * k * k);
        s.bias.assign(out_c, T(0));
        const double bound = std::sqrt(1.0 / static_cast<double>(in_c * k * k));
        for (auto& w : s.weights)
            w = static_cast<T>(rng.uniform(-bound, bound));
        return s;
    }
};

using ConvSpec = ConvSpecT<float>;

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s,
                                   std::size_t p) {
    const std::size_t padded = in + 2 * p;
    if (padded < k) return 0;
    return (padded - k) / s + 1;
}

} // namespace detail

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const ConvSpecT<T>& spec) {
    spec.validate();
    if (input.rank() != 3) throw ContractError("conv2d expects a rank-3 tensor");
    if (input.channels() != spec.in_channels)
        throw ContractError("conv2d channel mismatch");
    const std::size_t out_h =
        detail::conv_out_extent(input.height(), spec.kernel, spec.stride, spec.pad);
    const std::size_t out_w =
        detail::conv_out_extent(input.width(), spec.kernel, spec.stride, spec.pad);
    if (out_h == 0 || out_w == 0) throw ContractError("conv2d zero-sized output");

    TensorT<T> out = TensorT<T>::chw(spec.out_channels, out_h, out_w, Tag::feature);
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(input.height());
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(input.width());
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc)
        for (std::size_t oy = 0; oy < out_h; ++oy)
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                T acc = spec.bias[oc];
                for (std::size_t ic = 0; ic < spec.in_channels; ++ic)
                    for (std::size_t ky = 0; ky < spec.kernel; ++ky) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * spec.stride + ky) -
                            static_cast<std::ptrdiff_t>(spec.pad);
                        if (iy < 0 || iy >= H) continue;
                        for (std::size_t kx = 0; kx < spec.kernel; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * spec.stride + kx) -
                                static_cast<std::ptrdiff_t>(spec.pad);
                            if (ix < 0 || ix >= W) continue;
                            acc += spec.weight(oc, ic, ky, kx) *
                                   input.at(ic, static_cast<std::size_t>(iy),
                                            static_cast<std::size_t>(ix));
                        }
                    }
                out.at(oc, oy, ox) = acc;
            }
    return out;
}

template <typename T>
struct ConvGradsT {
    TensorT<T> input;
    std::vector<T> weights;
    std::vector<T> bias;
};

using ConvGrads = ConvGradsT<float>;

/// Gradients of conv2d w.r.t. input, weights and bias given the upstream
/// gradient on the output.
template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& input, const ConvSpecT<T>& spec,
                              const TensorT<T>& upstream) {
    spec.validate();
    ConvGradsT<T> g;
    g.input = TensorT<T>(input.dims(), input.tag());
    g.weights.assign(spec.weights.size(), T(0));
    g.bias.assign(spec.bias.size(), T(0));

    const std::size_t out_h = upstream.height();
    const std::size_t out_w = upstream.width();
    const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(input.height());
    const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(input.width());
    for (std::size_t oc = 0; oc < spec.out_channels; ++oc)
        for (std::size_t oy = 0; oy < out_h; ++oy)
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const T up = upstream.at(oc, oy, ox);
                g.bias[oc] += up;
                for (std::size_t ic = 0; ic < spec.in_channels; ++ic)
                    for (std::size_t ky = 0; ky < spec.kernel; ++ky) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * spec.stride + ky) -
                            static_cast<std::ptrdiff_t>(spec.pad);
                        if (iy < 0 || iy >= H) continue;
                        for (std::size_t kx = 0; kx < spec.kernel; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * spec.stride + kx) -
                                static_cast<std::ptrdiff_t>(spec.pad);
                            if (ix < 0 || ix >= W) continue;
                            const std::size_t uy = static_cast<std::size_t>(iy);
                            const std::size_t ux = static_cast<std::size_t>(ix);
                            g.weights[((oc * spec.in_channels + ic) * spec.kernel +
                                       ky) * spec.kernel + kx] +=
                                up * input.at(ic, uy, ux);
                            g.input.at(ic, uy, ux) +=
                                up * spec.weight(oc, ic, ky, kx);
                        }
                    }
            }
    return g;
}

/// Channel softmax with temperature, computed with max-subtraction.
template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& logits, double temperature) {
    if (logits.rank() != 3) throw ContractError("softmax expects a rank-3 tensor");
    if (logits.channels() < 1) throw ContractError("softmax needs >= 1 channel");
    if (!(temperature > 0)) throw ContractError("softmax temperature must be > 0");
    TensorT<T> out(logits.dims(), Tag::probs);
    const std::size_t C = logits.channels();
    for (std::size_t y = 0; y < logits.height(); ++y)
        for (std::size_t x = 0; x < logits.width(); ++x) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < C; ++c)
                m = std::max(m, static_cast<double>(logits.at(c, y, x)) / temperature);
            double denom = 0;
            for (std::size_t c = 0; c < C; ++c)
                denom += std::exp(static_cast<double>(logits.at(c, y, x)) / temperature - m);
            for (std::size_t c = 0; c < C; ++c)
                out.at(c, y, x) = static_cast<T>(
                    std::exp(static_cast<double>(logits.at(c, y, x)) / temperature - m) /
                    denom);
        }
    return out;
}

/// Gradient of softmax_channels w.r.t. its logits given the upstream gradient
/// on the probabilities. `probs` is the forward output at the same temperature.
template <typename T>
TensorT<T> softmax_channels_backward(const TensorT<T>& probs,
                                     const TensorT<T>& upstream,
                                     double temperature) {
    if (!probs.same_shape(upstream))
        throw ContractError("softmax backward shape mismatch");
    TensorT<T> out(probs.dims(), Tag::logits);
    const std::size_t C = probs.channels();
    for (std::size_t y = 0; y < probs.height(); ++y)
        for (std::size_t x = 0; x < probs.width(); ++x) {
            double dot = 0;
            for (std::size_t c = 0; c < C; ++c)
                dot += static_cast<double>(upstream.at(c, y, x)) * probs.at(c, y, x);
            for (std::size_t c = 0; c < C; ++c)
                out.at(c, y, x) = static_cast<T>(
                    (static_cast<double>(upstream.at(c, y, x)) - dot) *
                    probs.at(c, y, x) / temperature);
        }
    return out;
}

/// Per-pixel index of the maximum channel; ties break toward the lowest index.
template <typename T>
LabelMap argmax_channels(const TensorT<T>& logits) {
    if (logits.rank() != 3) throw ContractError("argmax expects a rank-3 tensor");
    if (logits.channels() < 1) throw ContractError("argmax needs >= 1 channel");
    LabelMap out(logits.height(), logits.width());
    for (std::size_t y = 0; y < logits.height(); ++y)
        for (std::size_t x = 0; x < logits.width(); ++x) {
            std::size_t best = 0;
            T best_v = logits.at(0, y, x);
            for (std::size_t c = 1; c < logits.channels(); ++c) {
                const T v = logits.at(c, y, x);
                if (v > best_v) { // strict: ties keep the lowest index
                    best_v = v;
                    best = c;
                }
            }
            out.at(y, x) = static_cast<std::int32_t>(best);
        }
    return out;
}

namespace detail {

/// 4-neighbor bilinear kernel shared by the sampling and warping routines.
/// Writes one interpolated value per channel; returns false (and writes the
/// fill value) when (x, y) lies outside [0, W-1] x [0, H-1].
template <typename T>
bool sample_bilinear(const TensorT<T>& t, double x, double y, T fill, T* out) {
    const std::size_t C = t.channels();
    const double maxx = static_cast<double>(t.width()) - 1.0;
    const double maxy = static_cast<double>(t.height()) - 1.0;
    if (!(x >= 0.0 && x <= maxx && y >= 0.0 && y <= maxy)) {
        for (std::size_t c = 0; c < C; ++c) out[c] = fill;
        return false;
    }
    const std::size_t x0 = static_cast<std::size_t>(x);
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t x1 = std::min(x0 + 1, t.width() - 1);
    const std::size_t y1 = std::min(y0 + 1, t.height() - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    const double w00 = (1 - fx) * (1 - fy);
    const double w10 = fx * (1 - fy);
    const double w01 = (1 - fx) * fy;
    const double w11 = fx * fy;
    for (std::size_t c = 0; c < C; ++c)
        out[c] = static_cast<T>(w00 * t.at(c, y0, x0) + w10 * t.at(c, y0, x1) +
                                w01 * t.at(c, y1, x0) + w11 * t.at(c, y1, x1));
    return true;
}

/// Transpose of sample_bilinear: scatters `grad` (one value per channel) back
/// onto the input gradient with the same interpolation weights.
template <typename T>
void scatter_bilinear(TensorT<T>& dinput, double x, double y, const T* grad) {
    const double maxx = static_cast<double>(dinput.width()) - 1.0;
    const double maxy = static_cast<double>(dinput.height()) - 1.0;
    if (!(x >= 0.0 && x <= maxx && y >= 0.0 && y <= maxy)) return;
    const std::size_t x0 = static_cast<std::size_t>(x);
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t x1 = std::min(x0 + 1, dinput.width() - 1);
    const std::size_t y1 = std::min(y0 + 1, dinput.height() - 1);
    const double fx = x - static_cast<double>(x0);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < dinput.channels(); ++c) {
        const double g = grad[c];
        dinput.at(c, y0, x0) += static_cast<T>((1 - fx) * (1 - fy) * g);
        dinput.at(c, y0, x1) += static_cast<T>(fx * (1 - fy) * g);
        dinput.at(c, y1, x0) += static_cast<T>((1 - fx) * fy * g);
        dinput.at(c, y1, x1) += static_cast<T>(fx * fy * g);
    }
}

} // namespace detail

template <typename T>
struct SampleT {
    std::vector<T> values;
    bool valid = false;
};

/// Bilinear lookup at a continuous coordinate. The sample is valid when the
/// point lies inside the lattice hull [0, W-1] x [0, H-1]; otherwise every
/// channel gets the fill value.
template <typename T>
SampleT<T> bilinear_sample(const TensorT<T>& t, double x, double y, T fill) {
    if (t.rank() != 3) throw ContractError("bilinear_sample expects rank 3");
    SampleT<T> s;
    s.values.resize(t.channels());
    s.valid = detail::sample_bilinear(t, x, y, fill, s.values.data());
    return s;
}

/// Bilinear resize with the align-corners-false convention:
/// source coordinate = (i + 0.5) * in/out - 0.5, neighbors clamped to the
/// border (edge replication).
template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& input, std::size_t out_h,
                           std::size_t out_w) {
    if (input.rank() != 3) throw ContractError("bilinear_resize expects rank 3");
    if (out_h == 0 || out_w == 0)
        throw ContractError("bilinear_resize zero-sized output");
    TensorT<T> out = TensorT<T>::chw(input.channels(), out_h, out_w, input.tag());
    const double sy = static_cast<double>(input.height()) / static_cast<double>(out_h);
    const double sx = static_cast<double>(input.width()) / static_cast<double>(out_w);
    std::vector<T> vals(input.channels());
    for (std::size_t oy = 0; oy < out_h; ++oy)
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            double srcy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
            double srcx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            srcy = std::clamp(srcy, 0.0, static_cast<double>(input.height()) - 1.0);
            srcx = std::clamp(srcx, 0.0, static_cast<double>(input.width()) - 1.0);
            detail::sample_bilinear(input, srcx, srcy, T(0), vals.data());
            for (std::size_t c = 0; c < input.channels(); ++c)
                out.at(c, oy, ox) = vals[c];
        }
    return out;
}

/// Distributes the upstream gradient back through bilinear_resize with the
/// same interpolation weights.
template <typename T>
TensorT<T> bilinear_resize_backward(const std::vector<std::size_t>& in_dims,
                                    const TensorT<T>& upstream) {
    if (in_dims.size() != 3) throw ContractError("resize backward expects rank 3");
    TensorT<T> dinput(in_dims, upstream.tag());
    const double sy = static_cast<double>(in_dims[1]) /
                      static_cast<double>(upstream.height());
    const double sx = static_cast<double>(in_dims[2]) /
                      static_cast<double>(upstream.width());
    std::vector<T> g(upstream.channels());
    for (std::size_t oy = 0; oy < upstream.height(); ++oy)
        for (std::size_t ox = 0; ox < upstream.width(); ++ox) {
            double srcy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
            double srcx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            srcy = std::clamp(srcy, 0.0, static_cast<double>(in_dims[1]) - 1.0);
            srcx = std::clamp(srcx, 0.0, static_cast<double>(in_dims[2]) - 1.0);
            for (std::size_t c = 0; c < upstream.channels(); ++c)
                g[c] = upstream.at(c, oy, ox);
            detail::scatter_bilinear(dinput, srcx, srcy, g.data());
        }
    return dinput;
}

} // namespace ssp
