#include <doctest.h>

#include <cmath>

#include "ssp/ops.hpp"
#include "ssp/rng.hpp"
#include "ssp/tensor.hpp"

using namespace ssp;

namespace {

Tensor random_chw(Rng& rng, std::size_t c, std::size_t h, std::size_t w,
                  double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::chw(c, h, w, Tag::feature);
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

/// Independent finite-difference oracle in double precision for an op whose
/// scalar loss is sum(g * op(x)).
template <typename Forward>
double fd_max_rel_err(const Tensor& input, const Tensor& upstream, Forward fwd,
                      const Tensor& analytic, double eps = 1e-3) {
    auto x = cast<double>(input);
    const auto g = cast<double>(upstream);
    auto eval = [&](const TensorT<double>& t) {
        const auto out = fwd(t);
        double l = 0;
        for (std::size_t i = 0; i < out.size(); ++i) l += out[i] * g[i];
        return l;
    };
    double worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double up = eval(x);
        x[i] = keep - eps;
        const double down = eval(x);
        x[i] = keep;
        const double numeric = (up - down) / (2 * eps);
        const double a = analytic[i];
        worst = std::max(worst, std::abs(a - numeric) /
                                    std::max({std::abs(a), std::abs(numeric),
                                              1e-8}));
    }
    return worst;
}

} // namespace

TEST_CASE("tensor invariants") {
    Tensor t = Tensor::chw(2, 3, 4, Tag::logits);
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);
    t.at(1, 2, 3) = 5.0f;
    CHECK(t[t.size() - 1] == 5.0f);

    Tensor mask = Tensor::chw(1, 2, 2, Tag::mask, 1.0f);
    CHECK_NOTHROW(validate_tag(mask));
    mask[0] = 0.5f;
    CHECK_THROWS_AS(validate_tag(mask), ContractError);

    Tensor alpha = Tensor::chw(1, 2, 2, Tag::alpha, 0.25f);
    CHECK_NOTHROW(validate_tag(alpha));
    alpha[1] = 1.5f;
    CHECK_THROWS_AS(validate_tag(alpha), ContractError);
}

TEST_CASE("conv2d all-ones 3x3 kernel under zero padding") {
    Tensor input = Tensor::chw(1, 3, 3, Tag::feature, 1.0f);
    ConvSpec spec;
    spec.in_channels = 1;
    spec.out_channels = 1;
    spec.kernel = 3;
    spec.stride = 1;
    spec.pad = 1;
    spec.weights.assign(9, 1.0f);
    spec.bias.assign(1, 0.0f);
    const Tensor out = conv2d(input, spec);
    CHECK(out.at(0, 1, 1) == doctest::Approx(9.0));
    CHECK(out.at(0, 0, 0) == doctest::Approx(4.0));
    CHECK(out.at(0, 0, 2) == doctest::Approx(4.0));
    CHECK(out.at(0, 2, 0) == doctest::Approx(4.0));
    CHECK(out.at(0, 2, 2) == doctest::Approx(4.0));
}

TEST_CASE("conv2d identity kernel reproduces the input") {
    Rng rng(7);
    const Tensor input = random_chw(rng, 2, 5, 6);
    ConvSpec spec;
    spec.in_channels = 2;
    spec.out_channels = 2;
    spec.kernel = 3;
    spec.stride = 1;
    spec.pad = 1;
    spec.weights.assign(2 * 2 * 9, 0.0f);
    spec.bias.assign(2, 0.0f);
    spec.weight(0, 0, 1, 1) = 1.0f;
    spec.weight(1, 1, 1, 1) = 1.0f;
    const Tensor out = conv2d(input, spec);
    for (std::size_t i = 0; i < input.size(); ++i) CHECK(out[i] == input[i]);
}

TEST_CASE("conv2d error cases") {
    Tensor input = Tensor::chw(2, 4, 4, Tag::feature);
    ConvSpec spec;
    spec.in_channels = 3; // mismatch
    spec.out_channels = 1;
    spec.kernel = 3;
    spec.weights.assign(3 * 9, 0.0f);
    spec.bias.assign(1, 0.0f);
    CHECK_THROWS_AS(conv2d(input, spec), ContractError);

    spec.in_channels = 2;
    spec.kernel = 4; // even kernel
    spec.weights.assign(2 * 16, 0.0f);
    CHECK_THROWS_AS(conv2d(input, spec), ContractError);

    spec.kernel = 3;
    spec.pad = 0;
    spec.stride = 1;
    spec.weights.assign(2 * 9, 0.0f);
    Tensor tiny = Tensor::chw(2, 2, 2, Tag::feature); // smaller than kernel
    CHECK_THROWS_AS(conv2d(tiny, spec), ContractError);
}

TEST_CASE("conv2d backward matches central finite differences") {
    Rng rng(42);
    const Tensor input = random_chw(rng, 4, 8, 8);
    ConvSpec spec = ConvSpec::seeded(4, 2, 3, 1, 1, rng);
    const Tensor upstream = random_chw(rng, 2, 8, 8);
    const auto grads = conv2d_backward(input, spec, upstream);

    ConvSpecT<double> spec_d;
    spec_d.in_channels = 4;
    spec_d.out_channels = 2;
    spec_d.kernel = 3;
    spec_d.stride = 1;
    spec_d.pad = 1;
    spec_d.weights.assign(spec.weights.begin(), spec.weights.end());
    spec_d.bias.assign(spec.bias.begin(), spec.bias.end());
    const double err = fd_max_rel_err(
        input, upstream,
        [&](const TensorT<double>& x) { return conv2d(x, spec_d); },
        grads.input);
    CHECK(err < 1e-3);
}

TEST_CASE("conv2d linearity for bias-free specs") {
    Rng rng(3);
    const Tensor x = random_chw(rng, 3, 6, 6);
    const Tensor y = random_chw(rng, 3, 6, 6);
    ConvSpec spec = ConvSpec::seeded(3, 2, 3, 1, 1, rng);
    const float a = 0.7f, b = -1.3f;
    Tensor mix = x;
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const Tensor lhs = conv2d(mix, spec);
    const Tensor cx = conv2d(x, spec);
    const Tensor cy = conv2d(y, spec);
    for (std::size_t i = 0; i < lhs.size(); ++i)
        CHECK(lhs[i] == doctest::Approx(a * cx[i] + b * cy[i]).epsilon(1e-5));
}

TEST_CASE("softmax_channels examples and properties") {
    Tensor logits = Tensor::chw(2, 1, 1, Tag::logits);
    logits.at(0, 0, 0) = 0.0f;
    logits.at(1, 0, 0) = 0.0f;
    Tensor p = softmax_channels(logits, 1.0);
    CHECK(p.at(0, 0, 0) == doctest::Approx(0.5));
    CHECK(p.at(1, 0, 0) == doctest::Approx(0.5));

    logits.at(0, 0, 0) = 2.0f;
    logits.at(1, 0, 0) = 0.0f;
    p = softmax_channels(logits, 2.0);
    CHECK(p.at(0, 0, 0) == doctest::Approx(0.7310586).epsilon(1e-6));
    CHECK(p.at(1, 0, 0) == doctest::Approx(0.2689414).epsilon(1e-6));

    // shift invariance
    Rng rng(11);
    Tensor z = random_chw(rng, 4, 3, 3, -5.0, 5.0);
    z.set_tag(Tag::logits);
    Tensor shifted = z;
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t x = 0; x < 3; ++x) shifted.at(c, y, x) += 11.5f;
    const Tensor p1 = softmax_channels(z, 1.0);
    const Tensor p2 = softmax_channels(shifted, 1.0);
    for (std::size_t i = 0; i < p1.size(); ++i)
        CHECK(std::abs(p1[i] - p2[i]) < 1e-6);

    // strictly positive, normalized
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] > 0.0f);
    CHECK_NOTHROW(validate_tag(p1));
    CHECK_THROWS_AS(softmax_channels(z, 0.0), ContractError);
}

TEST_CASE("argmax_channels tie-break and trivial cases") {
    Tensor one = Tensor::chw(1, 2, 2, Tag::logits, 3.5f);
    const LabelMap l1 = argmax_channels(one);
    for (const auto v : l1.data) CHECK(v == 0);

    Tensor t = Tensor::chw(3, 1, 1, Tag::logits);
    t.at(0, 0, 0) = 1.0f;
    t.at(1, 0, 0) = 3.0f;
    t.at(2, 0, 0) = 2.0f;
    CHECK(argmax_channels(t).at(0, 0) == 1);

    Tensor tie = Tensor::chw(2, 1, 1, Tag::logits, 5.0f);
    CHECK(argmax_channels(tie).at(0, 0) == 0);
}

TEST_CASE("bilinear_sample examples") {
    Tensor t = Tensor::chw(1, 2, 3, Tag::image);
    // row 0: 1 2 3 / row 1: 4 5 6
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 3; ++x)
            t.at(0, y, x) = static_cast<float>(y * 3 + x + 1);

    auto s = bilinear_sample(t, 1.0, 1.0, -1.0f);
    CHECK(s.valid);
    CHECK(s.values[0] == doctest::Approx(5.0));

    Tensor row = Tensor::chw(1, 1, 2, Tag::image);
    row.at(0, 0, 0) = 2.0f;
    row.at(0, 0, 1) = 4.0f;
    s = bilinear_sample(row, 0.5, 0.0, -1.0f);
    CHECK(s.valid);
    CHECK(s.values[0] == doctest::Approx(3.0));

    s = bilinear_sample(row, -0.01, 0.0, -1.0f);
    CHECK_FALSE(s.valid);
    CHECK(s.values[0] == -1.0f);
}

TEST_CASE("bilinear_sample is continuous across cell boundaries") {
    Rng rng(5);
    const Tensor t = random_chw(rng, 1, 6, 6, 0.0, 1.0);
    const double eps = 1e-6;
    for (double x : {1.0, 2.0, 3.0, 4.0}) {
        for (double y : {0.5, 1.0, 2.5}) {
            const auto lo = bilinear_sample(t, x - eps, y, 0.0f);
            const auto hi = bilinear_sample(t, x + eps, y, 0.0f);
            CHECK(std::abs(lo.values[0] - hi.values[0]) < 1e-4);
        }
    }
}

TEST_CASE("bilinear_resize identity and constants") {
    Rng rng(9);
    const Tensor t = random_chw(rng, 2, 5, 7);
    const Tensor same = bilinear_resize(t, 5, 7);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(same[i] == t[i]);

    Tensor c = Tensor::chw(1, 4, 4, Tag::image, 0.375f);
    const Tensor up = bilinear_resize(c, 9, 13);
    for (std::size_t i = 0; i < up.size(); ++i)
        CHECK(up[i] == doctest::Approx(0.375f));

    CHECK_THROWS_AS(bilinear_resize(c, 0, 4), ContractError);
}

TEST_CASE("bilinear_resize backward matches finite differences") {
    Rng rng(13);
    const Tensor input = random_chw(rng, 1, 4, 4);
    const Tensor upstream = random_chw(rng, 1, 8, 8);
    const Tensor analytic = bilinear_resize_backward(input.dims(), upstream);
    const double err = fd_max_rel_err(
        input, upstream,
        [&](const TensorT<double>& x) { return bilinear_resize(x, 8, 8); },
        analytic);
    CHECK(err < 1e-3);
}

TEST_CASE("forward ops are pure (bit-identical reruns)") {
    Rng rng(21);
    const Tensor x = random_chw(rng, 3, 8, 8);
    ConvSpec spec = ConvSpec::seeded(3, 2, 3, 1, 1, rng);
    const Tensor a = conv2d(x, spec);
    const Tensor b = conv2d(x, spec);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    const Tensor s1 = softmax_channels(x, 2.0);
    const Tensor s2 = softmax_channels(x, 2.0);
    for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
}
