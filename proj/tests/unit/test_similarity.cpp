#include <doctest.h>

#include <cmath>

#include "ssp/rng.hpp"
#include "ssp/similarity.hpp"

using namespace ssp;

namespace {

Tensor random_feat(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
    Tensor t = Tensor::chw(c, h, w, Tag::feature);
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

Tensor ones_mask(std::size_t h, std::size_t w) {
    return Tensor::chw(1, h, w, Tag::mask, 1.0f);
}

} // namespace

TEST_CASE("cosine similarity of identical features is alpha = 1") {
    Rng rng(3);
    const Tensor f = random_feat(rng, 4, 2, 2);
    const Tensor alpha = similarity_alpha(f, f, ones_mask(8, 8),
                                          SimilarityLayer::cosine());
    for (std::size_t i = 0; i < alpha.size(); ++i)
        CHECK(alpha[i] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("cosine similarity of orthogonal features is alpha = 0.5") {
    Tensor a = Tensor::chw(2, 1, 1, Tag::feature);
    Tensor b = Tensor::chw(2, 1, 1, Tag::feature);
    a.at(0, 0, 0) = 1.0f;
    b.at(1, 0, 0) = 1.0f;
    const Tensor alpha =
        similarity_alpha(a, b, ones_mask(4, 4), SimilarityLayer::cosine());
    for (std::size_t i = 0; i < alpha.size(); ++i)
        CHECK(alpha[i] == doctest::Approx(0.5));
}

TEST_CASE("all-zero learned stack gives alpha = 0.5 on valid pixels") {
    Rng rng(5);
    SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    for (auto& spec : layer.stack) {
        std::fill(spec.weights.begin(), spec.weights.end(), 0.0f);
        std::fill(spec.bias.begin(), spec.bias.end(), 0.0f);
    }
    const Tensor fp = random_feat(rng, 8, 2, 2);
    const Tensor fq = random_feat(rng, 8, 2, 2);
    Tensor validity = ones_mask(8, 8);
    validity.at(0, 3, 3) = 0.0f;
    const Tensor alpha = similarity_alpha(fp, fq, validity, layer);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
            if (y == 3 && x == 3)
                CHECK(alpha.at(0, y, x) == 0.0f);
            else
                CHECK(alpha.at(0, y, x) == doctest::Approx(0.5));
        }
}

TEST_CASE("learned stack enforces channel halving geometry") {
    Rng rng(6);
    SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    REQUIRE(layer.stack.size() == 3);
    CHECK(layer.stack[0].in_channels == 16);
    CHECK(layer.stack[0].out_channels == 8);
    CHECK(layer.stack[1].out_channels == 4);
    CHECK(layer.stack[2].out_channels == 1);
    CHECK_NOTHROW(layer.validate(8));

    const Tensor fp = random_feat(rng, 4, 2, 2); // wrong channel count
    const Tensor fq = random_feat(rng, 4, 2, 2);
    CHECK_THROWS_AS(similarity_alpha(fp, fq, ones_mask(8, 8), layer),
                    ContractError);
}

TEST_CASE("propagate_step ablation endpoints") {
    Rng rng(7);
    Tensor q = random_feat(rng, 3, 4, 4);
    q.set_tag(Tag::logits);
    Tensor p = random_feat(rng, 3, 4, 4);
    p.set_tag(Tag::logits);

    const Tensor zero = Tensor::chw(1, 4, 4, Tag::alpha, 0.0f);
    const Tensor out0 = propagate_step(q, p, zero);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(out0[i] == q[i]);

    const Tensor one = Tensor::chw(1, 4, 4, Tag::alpha, 1.0f);
    const Tensor out1 = propagate_step(q, p, one);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(out1[i] == p[i]);

    Tensor half = Tensor::chw(1, 1, 1, Tag::alpha, 0.5f);
    Tensor q1 = Tensor::chw(1, 1, 1, Tag::logits, 4.0f);
    Tensor p1 = Tensor::chw(1, 1, 1, Tag::logits, 2.0f);
    CHECK(propagate_step(q1, p1, half).at(0, 0, 0) == doctest::Approx(3.0));
}

TEST_CASE("propagate_step rejects alpha outside [0, 1]") {
    Tensor q = Tensor::chw(1, 2, 2, Tag::logits, 0.0f);
    Tensor p = Tensor::chw(1, 2, 2, Tag::logits, 1.0f);
    Tensor bad = Tensor::chw(1, 2, 2, Tag::alpha, 0.5f);
    bad[0] = 1.25f;
    CHECK_THROWS_AS(propagate_step(q, p, bad), ContractError);
}

TEST_CASE("Eq-1 convexity holds exactly over random triples") {
    Rng rng(8);
    for (int i = 0; i < 10000; ++i) {
        Tensor q = Tensor::chw(1, 1, 1, Tag::logits,
                               static_cast<float>(rng.uniform(-10, 10)));
        Tensor p = Tensor::chw(1, 1, 1, Tag::logits,
                               static_cast<float>(rng.uniform(-10, 10)));
        Tensor a = Tensor::chw(1, 1, 1, Tag::alpha,
                               static_cast<float>(rng.uniform(0, 1)));
        const float out = propagate_step(q, p, a).at(0, 0, 0);
        CHECK(out >= std::min(p[0], q[0]));
        CHECK(out <= std::max(p[0], q[0]));
    }
}

TEST_CASE("interpolation between equals is exact") {
    Rng rng(9);
    Tensor q = random_feat(rng, 2, 3, 3);
    q.set_tag(Tag::logits);
    Tensor alpha = Tensor::chw(1, 3, 3, Tag::alpha);
    for (std::size_t i = 0; i < alpha.size(); ++i)
        alpha[i] = static_cast<float>(rng.uniform(0, 1));
    const Tensor out = propagate_step(q, q, alpha);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(out[i] == q[i]);
}

TEST_CASE("propagate/similarity gradients agree with finite differences") {
    // Composition: loss = sum(g * propagate(q, p, alpha(theta))) checked
    // against double-precision central differences over the stack params.
    Rng rng(10);
    SimilarityLayer layer = SimilarityLayer::learned(4, rng);
    const Tensor fp = random_feat(rng, 4, 2, 2);
    const Tensor fq = random_feat(rng, 4, 2, 2);
    const Tensor validity = ones_mask(8, 8);
    Tensor q = random_feat(rng, 3, 8, 8);
    q.set_tag(Tag::logits);
    Tensor p = random_feat(rng, 3, 8, 8);
    p.set_tag(Tag::logits);
    const Tensor upstream = random_feat(rng, 3, 8, 8);

    const auto fwd = similarity_alpha_forward(fp, fq, validity, layer);
    const Tensor out = propagate_step(q, p, fwd.alpha);
    (void)out;
    const auto pg = propagate_step_backward(q, p, fwd.alpha, upstream);
    const auto sg = similarity_alpha_backward(fwd, validity, layer, pg.alpha);
    const std::vector<float> analytic = sg.export_params();

    // double twin
    SimilarityLayerT<double> layer_d;
    layer_d.mode = SimilarityMode::learned_conv;
    for (const auto& cs : layer.stack) {
        ConvSpecT<double> sp;
        sp.in_channels = cs.in_channels;
        sp.out_channels = cs.out_channels;
        sp.kernel = cs.kernel;
        sp.stride = cs.stride;
        sp.pad = cs.pad;
        sp.weights.assign(cs.weights.begin(), cs.weights.end());
        sp.bias.assign(cs.bias.begin(), cs.bias.end());
        layer_d.stack.push_back(sp);
    }
    const auto fp_d = cast<double>(fp);
    const auto fq_d = cast<double>(fq);
    const auto validity_d = cast<double>(validity);
    const auto q_d = cast<double>(q);
    const auto p_d = cast<double>(p);
    const auto g_d = cast<double>(upstream);

    std::vector<double> theta(analytic.size());
    {
        const auto params = layer.export_params();
        std::copy(params.begin(), params.end(), theta.begin());
    }
    auto eval = [&](const std::vector<double>& th) {
        SimilarityLayerT<double> l = layer_d;
        l.import_params(th);
        const auto alpha = similarity_alpha(fp_d, fq_d, validity_d, l);
        const auto o = propagate_step(q_d, p_d, alpha);
        double loss = 0;
        for (std::size_t i = 0; i < o.size(); ++i) loss += o[i] * g_d[i];
        return loss;
    };
    double worst = 0;
    std::vector<double> work = theta;
    for (std::size_t i = 0; i < work.size(); ++i) {
        const double keep = work[i];
        work[i] = keep + 1e-3;
        const double up = eval(work);
        work[i] = keep - 1e-3;
        const double down = eval(work);
        work[i] = keep;
        const double numeric = (up - down) / 2e-3;
        const double a = analytic[i];
        worst = std::max(worst,
                         std::abs(a - numeric) /
                             std::max({std::abs(a), std::abs(numeric), 1e-8}));
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("video_step first frame returns q bit-exactly") {
    Rng rng(11);
    SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    Tensor q = random_feat(rng, 4, 8, 8);
    q.set_tag(Tag::logits);
    const Tensor feat = random_feat(rng, 8, 2, 2);
    PropagatorState state;
    const Tensor out = video_step(state, q, feat, std::nullopt, layer);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(out[i] == q[i]);
    CHECK(state.frame_index == 1);
}

TEST_CASE("video_step requires a homography after frame 0") {
    Rng rng(12);
    SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    Tensor q = random_feat(rng, 4, 8, 8);
    q.set_tag(Tag::logits);
    const Tensor feat = random_feat(rng, 8, 2, 2);
    PropagatorState state;
    (void)video_step(state, q, feat, std::nullopt, layer);
    CHECK_THROWS_AS(video_step(state, q, feat, std::nullopt, layer),
                    ContractError);
}

TEST_CASE("static video converges: step-to-step change is non-increasing") {
    Rng rng(13);
    SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    Tensor q = random_feat(rng, 4, 8, 8);
    q.set_tag(Tag::logits);
    const Tensor feat = random_feat(rng, 8, 2, 2);

    PropagatorState state;
    Tensor prev = video_step(state, q, feat, std::nullopt, layer);
    double last_change = std::numeric_limits<double>::infinity();
    for (int k = 1; k < 12; ++k) {
        const Tensor out =
            video_step(state, q, feat, Homography::identity(), layer);
        double change = 0;
        for (std::size_t i = 0; i < out.size(); ++i)
            change = std::max(change,
                              std::abs(static_cast<double>(out[i]) - prev[i]));
        CHECK(change <= last_change + 1e-7);
        last_change = change;
        prev = out;
    }
}

TEST_CASE("two-frame sequence with alpha forced to zero reduces to q") {
    Rng rng(14);
    SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    Tensor q0 = random_feat(rng, 4, 8, 8);
    Tensor q1 = random_feat(rng, 4, 8, 8);
    q0.set_tag(Tag::logits);
    q1.set_tag(Tag::logits);
    const Tensor f0 = random_feat(rng, 8, 2, 2);
    const Tensor f1 = random_feat(rng, 8, 2, 2);
    PropagatorState state;
    (void)video_step(state, q0, f0, std::nullopt, layer, true);
    const Tensor out = video_step(state, q1, f1, Homography::identity(), layer,
                                  true);
    for (std::size_t i = 0; i < q1.size(); ++i) CHECK(out[i] == q1[i]);
}

TEST_CASE("validity masking pins the output to q on invalid pixels") {
    Rng rng(15);
    SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    Tensor q0 = random_feat(rng, 4, 8, 8);
    Tensor q1 = random_feat(rng, 4, 8, 8);
    q0.set_tag(Tag::logits);
    q1.set_tag(Tag::logits);
    const Tensor f0 = random_feat(rng, 8, 2, 2);
    const Tensor f1 = random_feat(rng, 8, 2, 2);

    // Translation by +3 px: the three left columns have no valid source.
    Homography h;
    h(0, 2) = 3.0;
    PropagatorState state;
    (void)video_step(state, q0, f0, std::nullopt, layer);
    const Tensor out = video_step(state, q1, f1, h, layer);
    for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 3; ++x)
                CHECK(out.at(c, y, x) == q1.at(c, y, x));
}

TEST_CASE("reset clears state and isolates videos") {
    Rng rng(16);
    SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    Tensor qa = random_feat(rng, 4, 8, 8);
    Tensor qb = random_feat(rng, 4, 8, 8);
    Tensor q1 = random_feat(rng, 4, 8, 8);
    qa.set_tag(Tag::logits);
    qb.set_tag(Tag::logits);
    q1.set_tag(Tag::logits);
    const Tensor fa = random_feat(rng, 8, 2, 2);
    const Tensor fb = random_feat(rng, 8, 2, 2);
    const Tensor f1 = random_feat(rng, 8, 2, 2);

    // Video A then reset, then video B.
    PropagatorState state;
    (void)video_step(state, qa, fa, std::nullopt, layer);
    (void)video_step(state, q1, f1, Homography::identity(), layer);
    state = reset(state);
    CHECK(state.frame_index == 0);
    CHECK_FALSE(state.last_prediction.has_value());
    state = reset(state); // idempotent
    CHECK(state.frame_index == 0);

    const Tensor b0 = video_step(state, qb, fb, std::nullopt, layer);
    const Tensor b1 = video_step(state, q1, f1, Homography::identity(), layer);

    // Fresh state processing video B alone must match bit-for-bit.
    PropagatorState fresh;
    const Tensor c0 = video_step(fresh, qb, fb, std::nullopt, layer);
    const Tensor c1 = video_step(fresh, q1, f1, Homography::identity(), layer);
    for (std::size_t i = 0; i < b0.size(); ++i) CHECK(b0[i] == c0[i]);
    for (std::size_t i = 0; i < b1.size(); ++i) CHECK(b1[i] == c1[i]);
}
