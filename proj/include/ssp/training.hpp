#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ssp/flow.hpp"
#include "ssp/geometry.hpp"
#include "ssp/losses.hpp"
#include "ssp/similarity.hpp"
#include "ssp/synth.hpp"

namespace ssp {

enum class TrainMode : std::uint8_t { base, distillation };

struct TrainConfig {
    double lr = 0.2;
    double momentum = 0.9;
    std::size_t epochs = 10;
    std::uint64_t seed = 0; // batch ordering + parameter init
    TrainMode mode = TrainMode::base;
    bool one_step = false;  // joint training from scratch vs frozen warm-started head
    std::int32_t ignore_index = 255;

    void validate() const {
        if (!(lr > 0)) throw ContractError("learning rate must be positive");
        if (epochs < 1) throw ContractError("epochs must be >= 1");
    }
};

/// One consecutive-frame training pair. Everything here is constant during a
/// step except the parameters: the surrogate logits are recomputed from the
/// head so gradients can reach it in one-step training.
template <typename T>
struct PairSampleT {
    TensorT<T> feat_p, feat_q;       // stride-4 features (similarity input)
    TensorT<T> headin_p, headin_q;   // standardized full-res features (head input)
    TensorT<T> noise_p, noise_q;     // additive surrogate flicker
    Homography H;                    // past -> current
    bool use_registration = true;
    FlowFieldT<T> flow_pq;           // past -> current optical flow
    TensorT<T> occ_weight;           // photometric O on the current grid
    LabelMap labels_q;               // base mode
    bool has_labels = false;
    TensorT<T> teacher_cq, teacher_cp; // consistent teacher logits (kd mode)
    bool has_teacher = false;
};

using PairSample = PairSampleT<float>;

template <typename T>
PairSampleT<T> cast_sample(const PairSample& s) {
    PairSampleT<T> o;
    o.feat_p = cast<T>(s.feat_p);
    o.feat_q = cast<T>(s.feat_q);
    o.headin_p = cast<T>(s.headin_p);
    o.headin_q = cast<T>(s.headin_q);
    o.noise_p = cast<T>(s.noise_p);
    o.noise_q = cast<T>(s.noise_q);
    o.H = s.H;
    o.use_registration = s.use_registration;
    o.flow_pq = FlowFieldT<T>(cast<T>(s.flow_pq.uv));
    o.occ_weight = cast<T>(s.occ_weight);
    o.labels_q = s.labels_q;
    o.has_labels = s.has_labels;
    o.teacher_cq = cast<T>(s.teacher_cq);
    o.teacher_cp = cast<T>(s.teacher_cp);
    o.has_teacher = s.has_teacher;
    return o;
}

/// Forward pass of the two-frame training objective (Fig.-style pair
/// training): the past surrogate prediction is aligned and propagated onto
/// the current frame, and the mode's total loss is evaluated. Templated so
/// the finite-difference oracle can run the identical computation in double.
template <typename T>
double two_frame_loss(const PairSampleT<T>& s, const SimilarityLayerT<T>& layer,
                      const LinearHeadT<T>& head, const LossWeights& weights,
                      TrainMode mode, std::int32_t ignore_index = 255) {
    const TensorT<T> q_p_raw = head_linear(head, s.headin_p);
    const TensorT<T> q_q_raw = head_linear(head, s.headin_q);
    TensorT<T> q_p = q_p_raw;
    TensorT<T> q_q = q_q_raw;
    for (std::size_t i = 0; i < q_p.size(); ++i) q_p[i] += s.noise_p[i];
    for (std::size_t i = 0; i < q_q.size(); ++i) q_q[i] += s.noise_q[i];

    TensorT<T> p_warped, valid, feat_warped;
    if (s.use_registration) {
        auto pw = warp_homography(q_p, s.H, T(0));
        p_warped = std::move(pw.first);
        valid = std::move(pw.second);
        const double scale = static_cast<double>(q_p.height()) /
                             static_cast<double>(s.feat_p.height());
        auto fw = warp_homography(
            s.feat_p, scale == 1.0 ? s.H : homography_at_scale(s.H, scale), T(0));
        feat_warped = std::move(fw.first);
    } else {
        p_warped = q_p;
        valid = TensorT<T>::chw(1, q_p.height(), q_p.width(), Tag::mask, T(1));
        feat_warped = s.feat_p;
    }

    const auto sim =
        similarity_alpha_forward(feat_warped, s.feat_q, valid, layer);
    const TensorT<T> pred_q = propagate_step(q_q, p_warped, sim.alpha);
    const TensorT<T>& pred_p = q_p;

    if (mode == TrainMode::base) {
        if (!s.has_labels)
            throw ContractError("base training requires current-frame labels");
        return total_loss_base(pred_q, pred_p, s.flow_pq, s.labels_q,
                               ignore_index, s.occ_weight, weights);
    }
    if (!s.has_teacher)
        throw ContractError("distillation training requires teacher tensors");
    return total_loss_kd(pred_q, pred_p, s.teacher_cq, s.teacher_cp, s.flow_pq,
                         s.occ_weight, weights);
}

struct GraphGrads {
    double loss = 0;
    std::vector<float> layer; // flattened like SimilarityLayer::export_params
    std::vector<float> head;  // flattened like LinearHead::export_params
};

/// Forward + manual reverse pass: gradients of the two-frame objective
/// w.r.t. the similarity-layer parameters and, when train_head is set, the
/// surrogate head parameters.
GraphGrads two_frame_backward(const PairSample& s, const SimilarityLayer& layer,
                              const LinearHead& head, const LossWeights& weights,
                              TrainMode mode, bool train_head,
                              std::int32_t ignore_index = 255);

/// Plain SGD with momentum: v <- m v + g; p <- p - lr v.
template <typename T>
void sgd_step(std::span<T> params, std::span<const T> grads, double lr,
              double momentum, std::span<T> velocity) {
    if (params.size() != grads.size() || params.size() != velocity.size())
        throw ContractError("sgd_step size mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = static_cast<T>(momentum * velocity[i] + grads[i]);
        params[i] -= static_cast<T>(lr * velocity[i]);
    }
}

struct GradCheckReport {
    std::string name;
    double max_rel_err = 0;
    std::size_t worst_index = 0;
    double analytic = 0;
    double numeric = 0;
    std::size_t checked = 0;

    bool pass(double tolerance) const {
        return checked > 0 && max_rel_err < tolerance;
    }
};

/// Central finite differences against an analytic gradient. The loss callable
/// is evaluated in double precision at theta +- epsilon per coordinate;
/// relative error is |a - n| / max(|a|, |n|, 1e-8). Throws on a non-finite
/// loss value.
GradCheckReport grad_check(const std::string& name,
                           const std::function<double(std::span<const double>)>& loss_fn,
                           std::span<const double> theta,
                           std::span<const double> analytic, double epsilon);

/// The full gradient suite: conv2d, bilinear_resize, similarity + propagate,
/// the individual losses, and the composed base/distillation training
/// objectives, each over `instances` seeded random 8x8 instances.
std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed,
                                                 std::size_t instances,
                                                 double epsilon = 1e-3);

struct TrainResult {
    SimilarityLayer layer;
    LinearHead head;
    std::vector<double> epoch_losses;
};

/// Iterates the pairs in seeded shuffled order, one SGD step per pair.
/// The returned trace holds the mean loss per epoch.
TrainResult train(std::span<const PairSample> samples, const TrainConfig& config,
                  const LossWeights& weights, const SimilarityLayer& initial_layer,
                  const LinearHead& initial_head);

} // namespace ssp
