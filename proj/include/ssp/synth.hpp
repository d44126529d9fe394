#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssp/flow.hpp"
#include "ssp/geometry.hpp"
#include "ssp/rng.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

/// Procedural aerial-scene parameters. The camera drifts over a textured
/// ground plane with optional moving sprites; every derived quantity
/// (homographies, flows, labels) is computed analytically.
struct SceneConfig {
    std::size_t width = 64;
    std::size_t height = 64;
    std::size_t frames = 30;
    std::size_t classes = 4;
    std::size_t regions = 40;        // Voronoi sites over the visible footprint
    std::size_t sprites = 2;
    double sprite_speed_min = 0.5;   // px/frame
    double sprite_speed_max = 2.0;   // px/frame
    double sprite_radius_px = 6.0;
    double altitude = 8.0;           // meters above the ground plane
    double focal = 64.0;             // pixels
    double base_speed = 0.15;        // m/frame persistent lateral drift
    double jitter = 0.05;            // m/frame uniform jitter bound
    double max_yaw_rate = 0.02;      // rad/frame
    double noise = 0.0;              // sensor noise std on [0,1] RGB
    std::size_t annotate_every = 5;  // every Nth frame counts as labeled
    std::uint64_t seed = 0;

    void validate() const;
};

/// Desk-scale oracle sequence: frames plus exact ground truth for every
/// quantity the pipeline consumes.
struct SyntheticSequence {
    SceneConfig config;
    std::vector<Tensor> frames;            // 3 x H x W, [0,1] RGB
    std::vector<LabelMap> labels;          // per frame, all frames
    std::vector<Homography> homographies;  // H_{k-1 -> k}, one per pair
    std::vector<FlowField> flows_fwd;      // W_{(k-1)->k}, on frame-k grids
    std::vector<FlowField> flows_bwd;      // W_{k->(k-1)}, on frame-(k-1) grids
    std::vector<CameraPose> poses;
    std::vector<std::size_t> annotated;    // sparse-annotation emulation
};

SyntheticSequence generate_sequence(const SceneConfig& config);

/// Frozen, parameter-free stride-4 feature extractor standing in for the
/// image model's first feature map. 8 channels per 4x4 block: mean RGB (3),
/// RGB standard deviation (3), mean absolute horizontal and vertical
/// luminance differences within the block (2). Rejects dims not divisible
/// by 4.
Tensor surrogate_features(const Tensor& frame);

/// Per-pixel linear classifier over the upsampled feature stack. mu/sigma
/// are frozen standardization statistics; only weight and bias train.
template <typename T>
struct LinearHeadT {
    std::size_t in_features = 0;
    std::size_t classes = 0;
    std::vector<T> weight; // classes x in_features
    std::vector<T> bias;   // classes
    std::vector<T> mu;     // in_features
    std::vector<T> sigma;  // in_features, strictly positive

    static LinearHeadT seeded(std::size_t in_features, std::size_t classes,
                              Rng& rng) {
        LinearHeadT h;
        h.in_features = in_features;
        h.classes = classes;
        h.weight.resize(classes * in_features);
        h.bias.assign(classes, T(0));
        h.mu.assign(in_features, T(0));
        h.sigma.assign(in_features, T(1));
        const double bound = std::sqrt(1.0 / static_cast<double>(in_features));
        for (auto& w : h.weight) w = static_cast<T>(rng.uniform(-bound, bound));
        return h;
    }

    void validate() const {
        if (weight.size() != classes * in_features ||
            bias.size() != classes || mu.size() != in_features ||
            sigma.size() != in_features)
            throw ContractError("linear head size mismatch");
        for (const auto& s : sigma)
            if (!(s > T(0))) throw ContractError("head sigma must be positive");
    }

    std::size_t param_count() const { return weight.size() + bias.size(); }

    std::vector<T> export_params() const {
        std::vector<T> p(weight);
        p.insert(p.end(), bias.begin(), bias.end());
        return p;
    }

    void import_params(std::span<const T> p) {
        if (p.size() != param_count())
            throw ContractError("head parameter blob size mismatch");
        std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(weight.size()),
                  weight.begin());
        std::copy(p.begin() + static_cast<std::ptrdiff_t>(weight.size()), p.end(),
                  bias.begin());
    }
};

using LinearHead = LinearHeadT<float>;

/// Standardizes a feature stack with the head's frozen statistics:
/// (f - mu) / sigma per channel.
template <typename T>
TensorT<T> standardize_features(const TensorT<T>& feat, const LinearHeadT<T>& head) {
    if (feat.channels() != head.in_features)
        throw ContractError("feature/head channel mismatch");
    TensorT<T> out(feat.dims(), Tag::feature);
    for (std::size_t c = 0; c < feat.channels(); ++c)
        for (std::size_t y = 0; y < feat.height(); ++y)
            for (std::size_t x = 0; x < feat.width(); ++x)
                out.at(c, y, x) = (feat.at(c, y, x) - head.mu[c]) / head.sigma[c];
    return out;
}

/// Applies the linear classifier to an already-standardized feature stack.
template <typename T>
TensorT<T> head_linear(const LinearHeadT<T>& head, const TensorT<T>& feat_std) {
    head.validate();
    if (feat_std.channels() != head.in_features)
        throw ContractError("head input channel mismatch");
    TensorT<T> out = TensorT<T>::chw(head.classes, feat_std.height(),
                                     feat_std.width(), Tag::logits);
    for (std::size_t c = 0; c < head.classes; ++c)
        for (std::size_t y = 0; y < feat_std.height(); ++y)
            for (std::size_t x = 0; x < feat_std.width(); ++x) {
                T acc = head.bias[c];
                for (std::size_t f = 0; f < head.in_features; ++f)
                    acc += head.weight[c * head.in_features + f] *
                           feat_std.at(f, y, x);
                out.at(c, y, x) = acc;
            }
    return out;
}

/// Full surrogate image model: logits = head(standardized upsampled
/// features) + seeded Gaussian perturbation of the given level. The noise is
/// the per-frame flicker the propagation exists to suppress; it depends only
/// on (noise_seed, shape), so frames can be processed in any order.
Tensor surrogate_logits(const Tensor& frame, const LinearHead& head,
                        double noise_level, std::uint64_t noise_seed);

/// Freezes the head's standardization statistics to the per-channel mean and
/// standard deviation of the upsampled features over the given frames.
void set_head_stats(LinearHead& head, std::span<const Tensor> frames);

/// Multinomial logistic regression head fit on annotated frames (frozen
/// afterwards in 2-step training). Deterministic given the seed.
struct HeadFitConfig {
    std::size_t iterations = 300;
    double lr = 2.0;
    std::size_t sample_budget = 20000; // pixels drawn across all frames
    std::uint64_t seed = 0;
};

LinearHead fit_linear_head(std::span<const Tensor> frames,
                           std::span<const LabelMap> labels,
                           std::size_t classes, const HeadFitConfig& config);

/// Desk-scale teacher: logits with +margin on the (possibly corrupted) class
/// and 0 elsewhere. Corruption flips a pixel to a seeded-random other class
/// with probability corruption_rate.
Tensor make_teacher_logits(const LabelMap& labels, std::size_t classes,
                           double margin, double corruption_rate,
                           std::uint64_t seed);

} // namespace ssp
