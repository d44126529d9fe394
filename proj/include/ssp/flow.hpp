#pragma once

#include <cmath>
#include <utility>

#include "ssp/geometry.hpp"
#include "ssp/ops.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

/// Per-pixel displacement field, 2 channels (horizontal u, vertical v), in
/// pixels. A field tagged a->b transports content from frame a onto frame b's
/// grid: its vectors are stored at target (frame b) pixels and point to the
/// source location in frame a. Flows are oracle inputs, never estimated.
template <typename T>
struct FlowFieldT {
    TensorT<T> uv; // 2 x H x W

    FlowFieldT() = default;
    explicit FlowFieldT(TensorT<T> t) : uv(std::move(t)) {
        if (uv.rank() != 3 || uv.channels() != 2)
            throw ContractError("flow field must be a 2-channel rank-3 tensor");
        uv.set_tag(Tag::flow);
    }
    static FlowFieldT zeros(std::size_t h, std::size_t w) {
        return FlowFieldT(TensorT<T>::chw(2, h, w, Tag::flow));
    }

    std::size_t height() const { return uv.height(); }
    std::size_t width() const { return uv.width(); }
    T u(std::size_t y, std::size_t x) const { return uv.at(0, y, x); }
    T v(std::size_t y, std::size_t x) const { return uv.at(1, y, x); }
    T& u(std::size_t y, std::size_t x) { return uv.at(0, y, x); }
    T& v(std::size_t y, std::size_t x) { return uv.at(1, y, x); }

    void validate() const {
        for (std::size_t i = 0; i < uv.size(); ++i)
            if (!std::isfinite(static_cast<double>(uv[i])))
                throw ContractError("flow field contains non-finite values");
    }
};

using FlowField = FlowFieldT<float>;

/// Backward warping: output(y, x) = bilinear sample of the input at
/// (x + u(y, x), y + v(y, x)). For a flow tagged a->b the input lives in
/// frame a and the output on frame b's grid. Mask semantics match
/// warp_homography.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> warp_flow(const TensorT<T>& input,
                                            const FlowFieldT<T>& flow, T fill) {
    if (input.rank() != 3) throw ContractError("warp_flow expects rank 3");
    if (input.height() != flow.height() || input.width() != flow.width())
        throw ContractError("warp_flow shape mismatch");
    TensorT<T> out(input.dims(), input.tag());
    TensorT<T> mask = TensorT<T>::chw(1, flow.height(), flow.width(), Tag::mask);
    std::vector<T> vals(input.channels());
    for (std::size_t y = 0; y < flow.height(); ++y)
        for (std::size_t x = 0; x < flow.width(); ++x) {
            const double sx = static_cast<double>(x) + flow.u(y, x);
            const double sy = static_cast<double>(y) + flow.v(y, x);
            const bool ok = detail::sample_bilinear(input, sx, sy, fill, vals.data());
            for (std::size_t c = 0; c < input.channels(); ++c)
                out.at(c, y, x) = vals[c];
            mask.at(0, y, x) = ok ? T(1) : T(0);
        }
    return {std::move(out), std::move(mask)};
}

/// Gradient of warp_flow w.r.t. the input values (flow held fixed).
template <typename T>
TensorT<T> warp_flow_backward(const std::vector<std::size_t>& in_dims,
                              const FlowFieldT<T>& flow,
                              const TensorT<T>& upstream) {
    TensorT<T> dinput(in_dims, upstream.tag());
    std::vector<T> g(upstream.channels());
    for (std::size_t y = 0; y < flow.height(); ++y)
        for (std::size_t x = 0; x < flow.width(); ++x) {
            const double sx = static_cast<double>(x) + flow.u(y, x);
            const double sy = static_cast<double>(y) + flow.v(y, x);
            for (std::size_t c = 0; c < upstream.channels(); ++c)
                g[c] = upstream.at(c, y, x);
            detail::scatter_bilinear(dinput, sx, sy, g.data());
        }
    return dinput;
}

/// Photometric occlusion weight O = exp(-L1 distance across channels) of
/// Eq.-style consistency weighting: 1 where the warped past frame matches the
/// current frame, decaying toward 0 with the photometric error. Inputs are
/// [0,1] images; `past_warped` must already be warped onto the current grid.
template <typename T>
TensorT<T> photometric_weight(const TensorT<T>& current,
                              const TensorT<T>& past_warped) {
    if (!current.same_shape(past_warped))
        throw ContractError("photometric_weight shape mismatch");
    TensorT<T> out = TensorT<T>::chw(1, current.height(), current.width(), Tag::alpha);
    for (std::size_t y = 0; y < current.height(); ++y)
        for (std::size_t x = 0; x < current.width(); ++x) {
            double l1 = 0;
            for (std::size_t c = 0; c < current.channels(); ++c)
                l1 += std::abs(static_cast<double>(current.at(c, y, x)) -
                               static_cast<double>(past_warped.at(c, y, x)));
            out.at(0, y, x) = static_cast<T>(std::exp(-l1));
        }
    return out;
}

/// Binary forward/backward flow consistency check, evaluated pointwise on
/// per-pixel 2-vectors (the caller aligns one flow onto the other's grid
/// first): occluded (1) where
///   |f + b|^2 > 0.01 (|f|^2 + |b|^2) + 0.5.
/// The two threshold constants are fixed.
template <typename T>
TensorT<T> occlusion_mask_fb(const FlowFieldT<T>& flow_fwd,
                             const FlowFieldT<T>& flow_bwd_warped) {
    if (!flow_fwd.uv.same_shape(flow_bwd_warped.uv))
        throw ContractError("occlusion_mask_fb shape mismatch");
    TensorT<T> mask =
        TensorT<T>::chw(1, flow_fwd.height(), flow_fwd.width(), Tag::mask);
    for (std::size_t y = 0; y < flow_fwd.height(); ++y)
        for (std::size_t x = 0; x < flow_fwd.width(); ++x) {
            const double fu = flow_fwd.u(y, x), fv = flow_fwd.v(y, x);
            const double bu = flow_bwd_warped.u(y, x), bv = flow_bwd_warped.v(y, x);
            const double lhs = (fu + bu) * (fu + bu) + (fv + bv) * (fv + bv);
            const double rhs = 0.01 * (fu * fu + fv * fv + bu * bu + bv * bv) + 0.5;
            mask.at(0, y, x) = lhs > rhs ? T(1) : T(0);
        }
    return mask;
}

/// Flow field equivalent to a homography warp: for H mapping frame-a
/// coordinates to frame-b coordinates, returns the field tagged a->b, stored
/// on b's grid, each vector pointing to H^{-1}(pixel) in frame a.
template <typename T>
FlowFieldT<T> flow_from_homography(const Homography& H, std::size_t h,
                                   std::size_t w) {
    const Homography inv = H.inverse();
    FlowFieldT<T> f = FlowFieldT<T>::zeros(h, w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const Vec2 src = apply_homography(inv, static_cast<double>(x),
                                              static_cast<double>(y));
            f.u(y, x) = static_cast<T>(src.x - static_cast<double>(x));
            f.v(y, x) = static_cast<T>(src.y - static_cast<double>(y));
        }
    return f;
}

} // namespace ssp
