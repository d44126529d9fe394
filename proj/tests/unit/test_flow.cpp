#include <doctest.h>

#include <cmath>

#include "ssp/flow.hpp"
#include "ssp/rng.hpp"

using namespace ssp;

namespace {

Tensor random_image(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
    Tensor t = Tensor::chw(c, h, w, Tag::image);
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    return t;
}

} // namespace

TEST_CASE("warp_flow with zero flow is the identity") {
    Rng rng(2);
    const Tensor t = random_image(rng, 3, 5, 5);
    const FlowField zero = FlowField::zeros(5, 5);
    const auto [out, mask] = warp_flow(t, zero, 0.0f);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(out[i] == t[i]);
    for (std::size_t i = 0; i < mask.size(); ++i) CHECK(mask[i] == 1.0f);
}

TEST_CASE("warp_flow uniform flow shifts one column") {
    Tensor ramp = Tensor::chw(1, 2, 4, Tag::image);
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            ramp.at(0, y, x) = static_cast<float>(x + 10 * y);
    FlowField flow = FlowField::zeros(2, 4);
    for (std::size_t y = 0; y < 2; ++y)
        for (std::size_t x = 0; x < 4; ++x) flow.u(y, x) = 1.0f;
    const auto [out, mask] = warp_flow(ramp, flow, -5.0f);
    for (std::size_t y = 0; y < 2; ++y) {
        for (std::size_t x = 0; x < 3; ++x) {
            CHECK(out.at(0, y, x) == doctest::Approx(ramp.at(0, y, x + 1)));
            CHECK(mask.at(0, y, x) == 1.0f);
        }
        CHECK(out.at(0, y, 3) == -5.0f);
        CHECK(mask.at(0, y, 3) == 0.0f);
    }
}

TEST_CASE("warp_flow from a homography matches warp_homography") {
    Rng rng(7);
    const Tensor img = random_image(rng, 2, 12, 12);
    std::array<double, 9> v = {1.01, 0.02, 0.7, -0.01, 0.99, -0.4, 1e-4, 5e-5, 1.0};
    const Homography h = Homography::from_rowmajor(std::span<const double, 9>(v));
    const auto [via_h, mask_h] = warp_homography(img, h, 0.0f);
    const FlowField flow = flow_from_homography<float>(h, 12, 12);
    const auto [via_f, mask_f] = warp_flow(img, flow, 0.0f);
    for (std::size_t y = 0; y < 12; ++y)
        for (std::size_t x = 0; x < 12; ++x)
            if (mask_h.at(0, y, x) == 1.0f && mask_f.at(0, y, x) == 1.0f)
                for (std::size_t c = 0; c < 2; ++c)
                    CHECK(std::abs(via_h.at(c, y, x) - via_f.at(c, y, x)) < 1e-5);
}

TEST_CASE("warp_flow shape mismatch") {
    const Tensor t = Tensor::chw(1, 4, 4, Tag::image);
    const FlowField flow = FlowField::zeros(5, 4);
    CHECK_THROWS_AS(warp_flow(t, flow, 0.0f), ContractError);
}

TEST_CASE("photometric_weight examples") {
    Rng rng(9);
    const Tensor img = random_image(rng, 3, 4, 4);
    const Tensor same = photometric_weight(img, img);
    for (std::size_t i = 0; i < same.size(); ++i) CHECK(same[i] == 1.0f);

    Tensor zero = Tensor::chw(3, 1, 1, Tag::image, 0.0f);
    Tensor one = Tensor::chw(3, 1, 1, Tag::image, 1.0f);
    const Tensor o = photometric_weight(one, zero);
    CHECK(o.at(0, 0, 0) == doctest::Approx(std::exp(-3.0)).epsilon(1e-6));
}

TEST_CASE("photometric_weight is symmetric and monotone in the difference") {
    Rng rng(10);
    const Tensor a = random_image(rng, 3, 3, 3);
    const Tensor b = random_image(rng, 3, 3, 3);
    const Tensor ab = photometric_weight(a, b);
    const Tensor ba = photometric_weight(b, a);
    for (std::size_t i = 0; i < ab.size(); ++i) CHECK(ab[i] == ba[i]);

    // increasing one channel's absolute difference cannot raise the weight
    Tensor worse = b;
    worse.at(0, 1, 1) = worse.at(0, 1, 1) + (worse.at(0, 1, 1) >= a.at(0, 1, 1)
                                                 ? 0.2f
                                                 : -0.2f);
    const Tensor w = photometric_weight(a, worse);
    CHECK(w.at(0, 1, 1) <= ab.at(0, 1, 1));
}

TEST_CASE("occlusion_mask_fb examples") {
    FlowField fwd = FlowField::zeros(2, 2);
    FlowField bwd = FlowField::zeros(2, 2);

    // exactly opposite flows: consistent
    fwd.u(0, 0) = 3.0f;
    fwd.v(0, 0) = -1.0f;
    bwd.u(0, 0) = -3.0f;
    bwd.v(0, 0) = 1.0f;
    Tensor mask = occlusion_mask_fb(fwd, bwd);
    CHECK(mask.at(0, 0, 0) == 0.0f);

    // strongly inconsistent: |f+b|^2 = 400 > 0.01*200 + 0.5
    fwd.u(0, 1) = 10.0f;
    bwd.u(0, 1) = 10.0f;
    mask = occlusion_mask_fb(fwd, bwd);
    CHECK(mask.at(0, 0, 1) == 1.0f);

    // both zero: 0 > 0.5 is false
    CHECK(mask.at(0, 1, 1) == 0.0f);
}

TEST_CASE("occlusion_mask_fb is invariant under joint negation") {
    Rng rng(12);
    FlowField f = FlowField::zeros(4, 4);
    FlowField b = FlowField::zeros(4, 4);
    for (std::size_t i = 0; i < f.uv.size(); ++i) {
        f.uv[i] = static_cast<float>(rng.uniform(-4, 4));
        b.uv[i] = static_cast<float>(rng.uniform(-4, 4));
    }
    const Tensor m1 = occlusion_mask_fb(f, b);
    FlowField fn = f, bn = b;
    for (std::size_t i = 0; i < fn.uv.size(); ++i) {
        fn.uv[i] = -fn.uv[i];
        bn.uv[i] = -bn.uv[i];
    }
    const Tensor m2 = occlusion_mask_fb(fn, bn);
    for (std::size_t i = 0; i < m1.size(); ++i) CHECK(m1[i] == m2[i]);
}

TEST_CASE("flow field validation rejects non-finite values") {
    FlowField f = FlowField::zeros(2, 2);
    CHECK_NOTHROW(f.validate());
    f.u(0, 0) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(f.validate(), ContractError);
}
