#include "ssp/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace ssp {

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::int32_t ignore_index)
    : classes_(classes), ignore_index_(ignore_index),
      counts_(classes * classes, 0) {
    if (classes == 0) throw ContractError("confusion matrix needs >= 1 class");
}

void ConfusionMatrix::accumulate(const LabelMap& truth, const LabelMap& pred,
                                 const Tensor* valid) {
    if (truth.height != pred.height || truth.width != pred.width)
        throw ContractError("confusion accumulate shape mismatch");
    if (valid && (valid->rank() != 3 || valid->channels() != 1 ||
                  valid->height() != truth.height || valid->width() != truth.width))
        throw ContractError("confusion validity mask shape mismatch");
    for (std::size_t y = 0; y < truth.height; ++y)
        for (std::size_t x = 0; x < truth.width; ++x) {
            if (valid && valid->at(0, y, x) != 1.0f) continue;
            const std::int32_t t = truth.at(y, x);
            if (t == ignore_index_) continue;
            const std::int32_t p = pred.at(y, x);
            if (t < 0 || t >= static_cast<std::int32_t>(classes_) || p < 0 ||
                p >= static_cast<std::int32_t>(classes_))
                throw ContractError("label out of range in confusion matrix");
            ++counts_[static_cast<std::size_t>(t) * classes_ +
                      static_cast<std::size_t>(p)];
        }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes_ != classes_)
        throw ContractError("confusion merge class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t n = 0;
    for (const auto c : counts_) n += c;
    return n;
}

double ConfusionMatrix::miou() const {
    if (total() == 0) throw ContractError("mIoU of an empty confusion matrix");
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < classes_; ++c) {
        std::uint64_t row = 0, col = 0;
        for (std::size_t k = 0; k < classes_; ++k) {
            row += count(c, k);
            col += count(k, c);
        }
        const std::uint64_t diag = count(c, c);
        const std::uint64_t uni = row + col - diag;
        if (uni == 0) continue; // absent from both truth and prediction
        sum += static_cast<double>(diag) / static_cast<double>(uni);
        ++n;
    }
    return sum / static_cast<double>(n);
}

double tc_pair(const LabelMap& pred_prev, const LabelMap& pred_curr,
               const FlowField& flow_prev_to_curr) {
    if (pred_prev.height != pred_curr.height || pred_prev.width != pred_curr.width)
        throw ContractError("tc_pair shape mismatch");
    if (flow_prev_to_curr.height() != pred_curr.height ||
        flow_prev_to_curr.width() != pred_curr.width)
        throw ContractError("tc_pair flow shape mismatch");

    std::int32_t max_label = 0;
    for (const auto l : pred_prev.data) max_label = std::max(max_label, l);
    for (const auto l : pred_curr.data) max_label = std::max(max_label, l);
    const std::size_t classes = static_cast<std::size_t>(max_label) + 1;

    // Nearest-neighbor warp: class indices must not be blended.
    ConfusionMatrix cm(classes, -1);
    LabelMap warped(pred_curr.height, pred_curr.width);
    Tensor valid = Tensor::chw(1, pred_curr.height, pred_curr.width, Tag::mask);
    const double maxx = static_cast<double>(pred_prev.width) - 1.0;
    const double maxy = static_cast<double>(pred_prev.height) - 1.0;
    for (std::size_t y = 0; y < pred_curr.height; ++y)
        for (std::size_t x = 0; x < pred_curr.width; ++x) {
            const double sx =
                static_cast<double>(x) + flow_prev_to_curr.u(y, x);
            const double sy =
                static_cast<double>(y) + flow_prev_to_curr.v(y, x);
            if (sx < 0.0 || sx > maxx || sy < 0.0 || sy > maxy) continue;
            warped.at(y, x) =
                pred_prev.at(static_cast<std::size_t>(std::lround(sy)),
                             static_cast<std::size_t>(std::lround(sx)));
            valid.at(0, y, x) = 1.0f;
        }
    cm.accumulate(warped, pred_curr, &valid);
    return cm.miou();
}

double tc_video(std::span<const LabelMap> preds,
                std::span<const FlowField> flows) {
    if (preds.size() < 2)
        throw ContractError("tc_video needs at least 2 frames");
    if (flows.size() != preds.size() - 1)
        throw ContractError("tc_video needs one flow per consecutive pair");
    double sum = 0;
    for (std::size_t i = 0; i + 1 < preds.size(); ++i)
        sum += tc_pair(preds[i], preds[i + 1], flows[i]);
    return sum / static_cast<double>(flows.size());
}

} // namespace ssp
