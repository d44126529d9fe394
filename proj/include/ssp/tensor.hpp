#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ssp/error.hpp"

namespace ssp {

/// Semantic role of a tensor. Tags travel with the data and carry
/// tag-specific invariants checked by validate_tag().
enum class Tag : std::uint8_t { image, feature, logits, probs, alpha, flow, mask };

inline const char* tag_name(Tag t) {
    switch (t) {
        case Tag::image: return "image";
        case Tag::feature: return "feature";
        case Tag::logits: return "logits";
        case Tag::probs: return "probs";
        case Tag::alpha: return "alpha";
        case Tag::flow: return "flow";
        case Tag::mask: return "mask";
    }
    return "?";
}

/// Dense row-major array of rank <= 4. The pipeline convention is
/// channel-height-width for rank 3; there is no batch axis (streams are
/// processed one frame at a time). The pipeline scalar is float; the double
/// instantiation exists for the finite-difference oracles.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    TensorT(std::vector<std::size_t> dims, Tag tag, T fill = T(0))
        : dims_(std::move(dims)), tag_(tag) {
        if (dims_.size() > 4)
            throw ContractError("tensor rank > 4");
        data_.assign(element_count(dims_), fill);
    }

    static TensorT chw(std::size_t c, std::size_t h, std::size_t w, Tag tag,
                       T fill = T(0)) {
        return TensorT({c, h, w}, tag, fill);
    }

    std::size_t rank() const { return dims_.size(); }
    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t dim(std::size_t i) const { return dims_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t channels() const { return dim3(0); }
    std::size_t height() const { return dim3(1); }
    std::size_t width() const { return dim3(2); }

    Tag tag() const { return tag_; }
    void set_tag(Tag t) { tag_ = t; }

    T& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * dims_[1] + y) * dims_[2] + x];
    }
    T at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * dims_[1] + y) * dims_[2] + x];
    }

    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    bool same_shape(const TensorT& o) const { return dims_ == o.dims_; }

    void fill(T v) { data_.assign(data_.size(), v); }

    static std::size_t element_count(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }

private:
    std::size_t dim3(std::size_t i) const {
        if (dims_.size() != 3)
            throw ContractError("rank-3 accessor on rank-" +
                                std::to_string(dims_.size()) + " tensor");
        return dims_[i];
    }

    std::vector<std::size_t> dims_;
    std::vector<T> data_;
    Tag tag_ = Tag::image;
};

using Tensor = TensorT<float>;

/// Per-pixel class indices produced by argmax_channels and label files.
struct LabelMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::int32_t> data;

    LabelMap() = default;
    LabelMap(std::size_t h, std::size_t w, std::int32_t fill = 0)
        : height(h), width(w), data(h * w, fill) {}

    std::int32_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    std::int32_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
    std::size_t size() const { return data.size(); }

    bool operator==(const LabelMap&) const = default;
};

template <typename U, typename T>
TensorT<U> cast(const TensorT<T>& t) {
    TensorT<U> out(t.dims(), t.tag());
    for (std::size_t i = 0; i < t.size(); ++i)
        out[i] = static_cast<U>(t[i]);
    return out;
}

/// Checks the tag-specific invariant and throws ContractError on violation:
/// probs sum to 1 +- 1e-5 per pixel, alpha is one channel in [0,1],
/// masks contain only 0 or 1.
template <typename T>
void validate_tag(const TensorT<T>& t) {
    switch (t.tag()) {
        case Tag::probs: {
            if (t.rank() != 3) throw ContractError("probs tensor must be rank 3");
            for (std::size_t y = 0; y < t.height(); ++y)
                for (std::size_t x = 0; x < t.width(); ++x) {
                    double s = 0;
                    for (std::size_t c = 0; c < t.channels(); ++c)
                        s += t.at(c, y, x);
                    if (std::abs(s - 1.0) > 1e-5)
                        throw ContractError("probs channel sum " +
                                            std::to_string(s) + " != 1");
                }
            break;
        }
        case Tag::alpha: {
            if (t.rank() != 3 || t.channels() != 1)
                throw ContractError("alpha tensor must have one channel");
            for (std::size_t i = 0; i < t.size(); ++i)
                if (!(t[i] >= T(0) && t[i] <= T(1)))
                    throw ContractError("alpha value outside [0, 1]");
            break;
        }
        case Tag::mask: {
            for (std::size_t i = 0; i < t.size(); ++i)
                if (t[i] != T(0) && t[i] != T(1))
                    throw ContractError("mask value not 0 or 1");
            break;
        }
        default:
            break;
    }
}

} // namespace ssp
