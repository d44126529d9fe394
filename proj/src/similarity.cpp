#include "ssp/similarity.hpp"

namespace ssp {

Tensor video_step(PropagatorState& state, const Tensor& q, const Tensor& feat,
                  const std::optional<Homography>& H_past_to_current,
                  const SimilarityLayer& layer, bool force_alpha_zero) {
    if (q.rank() != 3 || feat.rank() != 3)
        throw ContractError("video_step expects rank-3 logits and features");
    if (q.height() % feat.height() != 0 || q.width() % feat.width() != 0 ||
        q.height() / feat.height() != q.width() / feat.width())
        throw ContractError("feature grid must evenly divide the frame");

    Tensor out;
    if (state.frame_index == 0) {
        out = q; // first frame of each video: image model only
    } else if (force_alpha_zero) {
        out = q; // no-interpolation ablation reduces to the image model
    } else {
        if (!H_past_to_current)
            throw ContractError("missing homography after frame 0");
        const Homography& H = *H_past_to_current;

        auto [p_warped, valid] = warp_homography(*state.last_prediction, H, 0.0f);
        const double scale =
            static_cast<double>(q.height()) / static_cast<double>(feat.height());
        const Homography H_feat =
            scale == 1.0 ? H : homography_at_scale(H, scale);
        auto [feat_warped, feat_valid] =
            warp_homography(*state.last_features, H_feat, 0.0f);
        (void)feat_valid; // alpha masking uses the full-resolution mask

        const Tensor alpha = similarity_alpha(feat_warped, feat, valid, layer);
        out = propagate_step(q, p_warped, alpha);
    }

    state.last_prediction = out;
    state.last_features = feat;
    state.frame_index += 1;
    return out;
}

} // namespace ssp
