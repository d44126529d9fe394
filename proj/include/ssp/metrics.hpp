#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssp/flow.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

/// C x C confusion counts; rows index ground truth, columns prediction.
/// Matrices are mergeable (associative addition) for parallel evaluation.
class ConfusionMatrix {
public:
    ConfusionMatrix(std::size_t classes, std::int32_t ignore_index);

    /// Counts only where valid = 1 (when given) and truth != ignore_index.
    /// Out-of-range labels are an error.
    void accumulate(const LabelMap& truth, const LabelMap& pred,
                    const Tensor* valid = nullptr);
    void merge(const ConfusionMatrix& other);

    std::size_t classes() const { return classes_; }
    std::uint64_t count(std::size_t truth, std::size_t pred) const {
        return counts_[truth * classes_ + pred];
    }
    std::uint64_t total() const;

    /// Mean over classes with nonzero union of diag / (row + col - diag);
    /// classes absent from both truth and prediction are excluded from the
    /// mean. Throws on an empty matrix.
    double miou() const;

private:
    std::size_t classes_;
    std::int32_t ignore_index_;
    std::vector<std::uint64_t> counts_;
};

/// Temporal consistency of one consecutive pair: the previous prediction is
/// warped onto the current frame by nearest-neighbor resampling of the flow,
/// pixels that leave the frame are excluded via the warp validity rule, and
/// the mIoU of (warped_prev, curr) is returned.
double tc_pair(const LabelMap& pred_prev, const LabelMap& pred_curr,
               const FlowField& flow_prev_to_curr);

/// Mean of tc_pair over all consecutive pairs; requires >= 2 frames.
double tc_video(std::span<const LabelMap> preds,
                std::span<const FlowField> flows);

} // namespace ssp
