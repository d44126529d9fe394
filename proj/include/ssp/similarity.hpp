#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "ssp/geometry.hpp"
#include "ssp/ops.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

enum class SimilarityMode : std::uint8_t { learned_conv, cosine };

/// Produces the per-pixel interpolation weight alpha from the warped past and
/// current feature maps (both at stride 4 of the frame resolution).
///
/// learned_conv: convolutions on the channel concatenation, 3x3 / stride 1 /
/// pad 1, ReLU between layers, sigmoid output; channel counts run
/// 2C -> C -> C/2 -> 1. cosine: parameter-free per-pixel cosine similarity
/// mapped to [0,1] via (s+1)/2.
template <typename T>
struct SimilarityLayerT {
    SimilarityMode mode = SimilarityMode::learned_conv;
    std::vector<ConvSpecT<T>> stack;

    static SimilarityLayerT cosine() {
        SimilarityLayerT l;
        l.mode = SimilarityMode::cosine;
        return l;
    }

    /// Three 3x3 layers, channels 2C -> C -> C/2 -> 1.
    static SimilarityLayerT learned(std::size_t feature_channels, Rng& rng) {
        SimilarityLayerT l;
        const std::size_t c = feature_channels;
        const std::size_t mid = c / 2 >= 1 ? c / 2 : 1;
        l.stack.push_back(ConvSpecT<T>::seeded(2 * c, c, 3, 1, 1, rng));
        l.stack.push_back(ConvSpecT<T>::seeded(c, mid, 3, 1, 1, rng));
        l.stack.push_back(ConvSpecT<T>::seeded(mid, 1, 3, 1, 1, rng));
        l.validate(feature_channels);
        return l;
    }

    void validate(std::size_t feature_channels) const {
        if (mode == SimilarityMode::cosine) {
            if (!stack.empty())
                throw ContractError("cosine similarity layer has no parameters");
            return;
        }
        if (stack.empty()) throw ContractError("empty similarity stack");
        if (stack.front().in_channels != 2 * feature_channels)
            throw ContractError("similarity stack must take 2x feature channels");
        for (std::size_t i = 0; i + 1 < stack.size(); ++i) {
            if (stack[i].out_channels * 2 != stack[i].in_channels)
                throw ContractError("similarity stack must halve channels");
            if (stack[i].out_channels != stack[i + 1].in_channels)
                throw ContractError("similarity stack channel chain broken");
        }
        if (stack.back().out_channels != 1)
            throw ContractError("similarity stack must end in one channel");
        for (const auto& s : stack) s.validate();
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& s : stack) n += s.weights.size() + s.bias.size();
        return n;
    }

    /// Flattens parameters layer by layer, weights then bias.
    std::vector<T> export_params() const {
        std::vector<T> p;
        p.reserve(param_count());
        for (const auto& s : stack) {
            p.insert(p.end(), s.weights.begin(), s.weights.end());
            p.insert(p.end(), s.bias.begin(), s.bias.end());
        }
        return p;
    }

    void import_params(std::span<const T> p) {
        if (p.size() != param_count())
            throw ContractError("similarity parameter blob size mismatch");
        std::size_t off = 0;
        for (auto& s : stack) {
            std::copy(p.begin() + off, p.begin() + off + s.weights.size(),
                      s.weights.begin());
            off += s.weights.size();
            std::copy(p.begin() + off, p.begin() + off + s.bias.size(),
                      s.bias.begin());
            off += s.bias.size();
        }
    }
};

using SimilarityLayer = SimilarityLayerT<float>;

template <typename T>
struct SimilarityForwardT {
    TensorT<T> concat;              // 2C x h x w stack input (learned mode)
    std::vector<TensorT<T>> pre;    // pre-activation conv outputs
    TensorT<T> alpha_lowres;        // 1 x h x w, after sigmoid / cosine map
    TensorT<T> alpha;               // 1 x H x W, upsampled and validity-masked
};

namespace detail {

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw ContractError("channel concat spatial mismatch");
    TensorT<T> out = TensorT<T>::chw(a.channels() + b.channels(), a.height(),
                                     a.width(), Tag::feature);
    std::copy(a.values().begin(), a.values().end(), out.values().begin());
    std::copy(b.values().begin(), b.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(a.size()));
    return out;
}

} // namespace detail

/// Forward pass retaining the intermediates needed by the backward pass.
/// `validity` is the full-resolution warp mask; alpha is forced to 0 wherever
/// it is 0, so invalid pixels fall back to the current estimate.
template <typename T>
SimilarityForwardT<T> similarity_alpha_forward(const TensorT<T>& feat_past_warped,
                                               const TensorT<T>& feat_current,
                                               const TensorT<T>& validity,
                                               const SimilarityLayerT<T>& layer) {
    if (!feat_past_warped.same_shape(feat_current))
        throw ContractError("similarity feature shape mismatch");
    if (feat_past_warped.rank() != 3 || validity.rank() != 3 ||
        validity.channels() != 1)
        throw ContractError("similarity expects rank-3 features and 1-ch validity");

    const std::size_t h = feat_current.height();
    const std::size_t w = feat_current.width();
    const std::size_t H = validity.height();
    const std::size_t W = validity.width();
    if (H % h != 0 || W % w != 0 || H / h != W / w)
        throw ContractError("validity resolution must be a multiple of feature grid");

    SimilarityForwardT<T> f;
    if (layer.mode == SimilarityMode::learned_conv) {
        layer.validate(feat_current.channels());
        f.concat = detail::concat_channels(feat_past_warped, feat_current);
        TensorT<T> x = f.concat;
        for (std::size_t i = 0; i < layer.stack.size(); ++i) {
            TensorT<T> pre = conv2d(x, layer.stack[i]);
            f.pre.push_back(pre);
            if (i + 1 < layer.stack.size()) {
                for (std::size_t j = 0; j < pre.size(); ++j)
                    if (pre[j] < T(0)) pre[j] = T(0);
                x = std::move(pre);
            }
        }
        const TensorT<T>& last = f.pre.back();
        f.alpha_lowres = TensorT<T>::chw(1, h, w, Tag::alpha);
        for (std::size_t i = 0; i < last.size(); ++i)
            f.alpha_lowres[i] =
                static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(last[i]))));
    } else {
        // Cosine similarity per pixel; zero-norm conventions keep the
        // self-similarity example exact: both zero -> 1, one zero -> 0.
        f.alpha_lowres = TensorT<T>::chw(1, h, w, Tag::alpha);
        const std::size_t C = feat_current.channels();
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double d = 0, na = 0, nb = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    const double a = feat_past_warped.at(c, y, x);
                    const double b = feat_current.at(c, y, x);
                    d += a * b;
                    na += a * a;
                    nb += b * b;
                }
                double s;
                if (na < 1e-24 && nb < 1e-24)
                    s = 1.0;
                else if (na < 1e-24 || nb < 1e-24)
                    s = 0.0;
                else
                    s = d / (std::sqrt(na) * std::sqrt(nb));
                f.alpha_lowres.at(0, y, x) = static_cast<T>((s + 1.0) / 2.0);
            }
    }

    f.alpha = bilinear_resize(f.alpha_lowres, H, W);
    f.alpha.set_tag(Tag::alpha);
    for (std::size_t i = 0; i < f.alpha.size(); ++i)
        if (validity[i] == T(0)) f.alpha[i] = T(0);
    return f;
}

template <typename T>
TensorT<T> similarity_alpha(const TensorT<T>& feat_past_warped,
                            const TensorT<T>& feat_current,
                            const TensorT<T>& validity,
                            const SimilarityLayerT<T>& layer) {
    return similarity_alpha_forward(feat_past_warped, feat_current, validity, layer)
        .alpha;
}

template <typename T>
struct SimilarityGradsT {
    std::vector<ConvGradsT<T>> stack;
    TensorT<T> feat_past_warped;
    TensorT<T> feat_current;

    /// Flattened like SimilarityLayerT::export_params().
    std::vector<T> export_params() const {
        std::vector<T> p;
        for (const auto& g : stack) {
            p.insert(p.end(), g.weights.begin(), g.weights.end());
            p.insert(p.end(), g.bias.begin(), g.bias.end());
        }
        return p;
    }
};

/// Backward pass for the learned mode: gradients w.r.t. the stack parameters
/// and both feature inputs given the upstream gradient on the full-resolution
/// alpha.
template <typename T>
SimilarityGradsT<T> similarity_alpha_backward(const SimilarityForwardT<T>& fwd,
                                              const TensorT<T>& validity,
                                              const SimilarityLayerT<T>& layer,
                                              const TensorT<T>& d_alpha) {
    if (layer.mode != SimilarityMode::learned_conv)
        throw ContractError("similarity backward is defined for the learned mode");
    if (!d_alpha.same_shape(fwd.alpha))
        throw ContractError("similarity backward upstream shape mismatch");

    TensorT<T> d_up = d_alpha;
    for (std::size_t i = 0; i < d_up.size(); ++i)
        if (validity[i] == T(0)) d_up[i] = T(0);

    TensorT<T> d_low = bilinear_resize_backward(fwd.alpha_lowres.dims(), d_up);

    // Sigmoid.
    TensorT<T> d_pre = d_low;
    for (std::size_t i = 0; i < d_pre.size(); ++i) {
        const double a = fwd.alpha_lowres[i];
        d_pre[i] = static_cast<T>(static_cast<double>(d_low[i]) * a * (1.0 - a));
    }

    SimilarityGradsT<T> grads;
    grads.stack.resize(layer.stack.size());
    for (std::size_t li = layer.stack.size(); li-- > 0;) {
        // Reconstruct the layer input: concat for the first layer, the ReLU
        // of the previous pre-activation otherwise.
        TensorT<T> in;
        if (li == 0) {
            in = fwd.concat;
        } else {
            in = fwd.pre[li - 1];
            for (std::size_t j = 0; j < in.size(); ++j)
                if (in[j] < T(0)) in[j] = T(0);
        }
        grads.stack[li] = conv2d_backward(in, layer.stack[li], d_pre);
        if (li > 0) {
            d_pre = std::move(grads.stack[li].input);
            const TensorT<T>& pre_prev = fwd.pre[li - 1];
            for (std::size_t j = 0; j < d_pre.size(); ++j)
                if (pre_prev[j] <= T(0)) d_pre[j] = T(0);
            grads.stack[li].input = TensorT<T>(); // consumed
        }
    }

    const TensorT<T>& d_concat = grads.stack[0].input;
    const std::size_t C = fwd.concat.channels() / 2;
    grads.feat_past_warped =
        TensorT<T>::chw(C, fwd.concat.height(), fwd.concat.width(), Tag::feature);
    grads.feat_current =
        TensorT<T>::chw(C, fwd.concat.height(), fwd.concat.width(), Tag::feature);
    const std::size_t half = grads.feat_past_warped.size();
    for (std::size_t i = 0; i < half; ++i) {
        grads.feat_past_warped[i] = d_concat[i];
        grads.feat_current[i] = d_concat[i + half];
    }
    return grads;
}

/// Eq.-exact linear interpolation in logit space:
/// out = alpha * p_warped + (1 - alpha) * q, with alpha broadcast over
/// channels. The result is clamped to [min(p, q), max(p, q)] per entry so the
/// convexity invariant holds exactly under float rounding.
template <typename T>
TensorT<T> propagate_step(const TensorT<T>& q, const TensorT<T>& p_warped,
                          const TensorT<T>& alpha) {
    if (!q.same_shape(p_warped)) throw ContractError("propagate shape mismatch");
    if (alpha.rank() != 3 || alpha.channels() != 1 ||
        alpha.height() != q.height() || alpha.width() != q.width())
        throw ContractError("propagate alpha must be 1 x H x W");
    validate_tag(alpha);

    TensorT<T> out(q.dims(), Tag::logits);
    for (std::size_t c = 0; c < q.channels(); ++c)
        for (std::size_t y = 0; y < q.height(); ++y)
            for (std::size_t x = 0; x < q.width(); ++x) {
                const T a = alpha.at(0, y, x);
                const T pv = p_warped.at(c, y, x);
                const T qv = q.at(c, y, x);
                const T mixed = a * pv + (T(1) - a) * qv;
                out.at(c, y, x) =
                    std::clamp(mixed, std::min(pv, qv), std::max(pv, qv));
            }
    return out;
}

template <typename T>
struct PropagateGradsT {
    TensorT<T> q;
    TensorT<T> p_warped;
    TensorT<T> alpha;
};

template <typename T>
PropagateGradsT<T> propagate_step_backward(const TensorT<T>& q,
                                           const TensorT<T>& p_warped,
                                           const TensorT<T>& alpha,
                                           const TensorT<T>& upstream) {
    if (!upstream.same_shape(q))
        throw ContractError("propagate backward shape mismatch");
    PropagateGradsT<T> g;
    g.q = TensorT<T>(q.dims(), Tag::logits);
    g.p_warped = TensorT<T>(q.dims(), Tag::logits);
    g.alpha = TensorT<T>(alpha.dims(), Tag::alpha);
    for (std::size_t c = 0; c < q.channels(); ++c)
        for (std::size_t y = 0; y < q.height(); ++y)
            for (std::size_t x = 0; x < q.width(); ++x) {
                const T a = alpha.at(0, y, x);
                const T up = upstream.at(c, y, x);
                g.q.at(c, y, x) = (T(1) - a) * up;
                g.p_warped.at(c, y, x) = a * up;
                g.alpha.at(0, y, x) +=
                    (p_warped.at(c, y, x) - q.at(c, y, x)) * up;
            }
    return g;
}

/// Recurrent per-video state: the previous SSP output and feature map.
/// Absent on frame 0, present afterwards. One state per stream; no
/// concurrent mutation.
struct PropagatorState {
    std::optional<Tensor> last_prediction;
    std::optional<Tensor> last_features;
    std::size_t frame_index = 0;
};

inline PropagatorState reset(PropagatorState&) { return {}; }

/// One streaming step. Frame 0 returns q bit-exactly and primes the state;
/// afterwards the stored prediction and features are aligned to the current
/// frame by H (identity when registration is disabled), alpha is computed
/// from the feature similarity, and the propagated logits both get returned
/// and become the stored state. With force_alpha_zero the step reduces to the
/// image model (output = q) while still updating the state.
Tensor video_step(PropagatorState& state, const Tensor& q, const Tensor& feat,
                  const std::optional<Homography>& H_past_to_current,
                  const SimilarityLayer& layer, bool force_alpha_zero = false);

} // namespace ssp
