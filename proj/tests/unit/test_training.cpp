#include <doctest.h>

#include <cmath>

#include "ssp/training.hpp"

using namespace ssp;

namespace {

PairSample small_sample(std::uint64_t seed) {
    Rng rng(seed);
    constexpr std::size_t frame = 8, classes = 4, features = 8;
    PairSample s;
    auto rand_t = [&rng](std::size_t c, std::size_t h, std::size_t w, Tag tag,
                         double lo, double hi) {
        Tensor t = Tensor::chw(c, h, w, tag);
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = static_cast<float>(rng.uniform(lo, hi));
        return t;
    };
    s.feat_p = rand_t(features, 2, 2, Tag::feature, 0, 1);
    s.feat_q = rand_t(features, 2, 2, Tag::feature, 0, 1);
    s.headin_p = rand_t(features, frame, frame, Tag::feature, -1, 1);
    s.headin_q = rand_t(features, frame, frame, Tag::feature, -1, 1);
    s.noise_p = rand_t(classes, frame, frame, Tag::logits, -0.5, 0.5);
    s.noise_q = rand_t(classes, frame, frame, Tag::logits, -0.5, 0.5);
    s.H = Homography::identity();
    s.flow_pq = FlowField::zeros(frame, frame);
    s.occ_weight = Tensor::chw(1, frame, frame, Tag::alpha, 1.0f);
    s.labels_q = LabelMap(frame, frame);
    for (auto& l : s.labels_q.data)
        l = static_cast<std::int32_t>(rng.bounded(classes));
    s.has_labels = true;
    LabelMap tl(frame, frame);
    for (auto& l : tl.data) l = static_cast<std::int32_t>(rng.bounded(classes));
    s.teacher_cq = make_teacher_logits(tl, classes, 5.0, 0.0, rng.next_u64());
    for (auto& l : tl.data) l = static_cast<std::int32_t>(rng.bounded(classes));
    s.teacher_cp = make_teacher_logits(tl, classes, 5.0, 0.0, rng.next_u64());
    s.has_teacher = true;
    return s;
}

} // namespace

TEST_CASE("sgd_step basics") {
    std::vector<float> p = {1.0f, -2.0f};
    std::vector<float> v = {0.0f, 0.0f};

    // zero gradient leaves parameters unchanged
    std::vector<float> g0 = {0.0f, 0.0f};
    sgd_step<float>(p, g0, 0.1, 0.9, v);
    CHECK(p[0] == 1.0f);
    CHECK(p[1] == -2.0f);

    // momentum 0, lr 1, g = p drives parameters to zero
    std::vector<float> g = p;
    std::fill(v.begin(), v.end(), 0.0f);
    sgd_step<float>(p, g, 1.0, 0.0, v);
    CHECK(p[0] == 0.0f);
    CHECK(p[1] == 0.0f);
}

TEST_CASE("sgd converges on a quadratic bowl for lr < 1") {
    for (const double lr : {0.1, 0.5, 0.9}) {
        std::vector<float> p = {3.0f};
        std::vector<float> v = {0.0f};
        for (int i = 0; i < 200; ++i) {
            std::vector<float> g = {2.0f * p[0]};
            sgd_step<float>(p, g, lr, 0.0, v);
        }
        CHECK(std::abs(p[0]) < 1e-3);
    }
}

TEST_CASE("grad_check exact on a linear loss and catches corruption") {
    const std::vector<double> w = {0.5, -1.25, 2.0, 0.0};
    std::vector<double> theta = {1.0, 2.0, 3.0, 4.0};
    auto f = [&w](std::span<const double> th) {
        double s = 0;
        for (std::size_t i = 0; i < th.size(); ++i) s += w[i] * th[i];
        return s;
    };
    auto report = grad_check("linear", f, theta, w, 1e-3);
    CHECK(report.max_rel_err < 1e-9);

    std::vector<double> corrupted = w;
    corrupted[1] *= 2.0; // one entry doubled
    report = grad_check("corrupted", f, theta, corrupted, 1e-3);
    CHECK(report.max_rel_err > 1e-3);
}

TEST_CASE("gradcheck suite passes at tolerance 1e-3") {
    const auto reports = run_gradcheck_suite(0, 2, 1e-3);
    REQUIRE(reports.size() == 9);
    for (const auto& r : reports) {
        INFO(r.name, " max_rel_err=", r.max_rel_err);
        CHECK(r.pass(1e-3));
    }
}

TEST_CASE("two_frame_loss float and double paths agree") {
    const PairSample s = small_sample(3);
    Rng rng(4);
    const SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    const LinearHead head = LinearHead::seeded(8, 4, rng);
    LossWeights w;
    w.lambda_base = 0.5;
    const double lf = two_frame_loss(s, layer, head, w, TrainMode::base);

    const auto sd = cast_sample<double>(s);
    SimilarityLayerT<double> ld;
    ld.mode = SimilarityMode::learned_conv;
    for (const auto& cs : layer.stack) {
        ConvSpecT<double> sp;
        sp.in_channels = cs.in_channels;
        sp.out_channels = cs.out_channels;
        sp.kernel = cs.kernel;
        sp.stride = cs.stride;
        sp.pad = cs.pad;
        sp.weights.assign(cs.weights.begin(), cs.weights.end());
        sp.bias.assign(cs.bias.begin(), cs.bias.end());
        ld.stack.push_back(sp);
    }
    LinearHeadT<double> hd;
    hd.in_features = head.in_features;
    hd.classes = head.classes;
    hd.weight.assign(head.weight.begin(), head.weight.end());
    hd.bias.assign(head.bias.begin(), head.bias.end());
    hd.mu.assign(head.mu.begin(), head.mu.end());
    hd.sigma.assign(head.sigma.begin(), head.sigma.end());
    const double ldouble_ = two_frame_loss(sd, ld, hd, w, TrainMode::base);
    CHECK(lf == doctest::Approx(ldouble_).epsilon(1e-4));
}

TEST_CASE("train with lr = 0 is rejected, tiny lr leaves params almost fixed") {
    TrainConfig config;
    config.lr = 0.0;
    CHECK_THROWS_AS(config.validate(), ContractError);
}

TEST_CASE("train descends on a single repeated pair") {
    std::vector<PairSample> samples = {small_sample(11)};
    Rng rng(12);
    const SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    const LinearHead head = LinearHead::seeded(8, 4, rng);

    TrainConfig config;
    config.lr = 0.05;
    config.momentum = 0.0;
    config.epochs = 6;
    config.mode = TrainMode::base;
    LossWeights w;
    w.lambda_base = 0.5;

    const TrainResult result = train(samples, config, w, layer, head);
    REQUIRE(result.epoch_losses.size() == 6);
    for (const auto l : result.epoch_losses) CHECK(std::isfinite(l));
    // non-increasing on a fixed objective with a small step
    for (std::size_t e = 1; e < result.epoch_losses.size(); ++e)
        CHECK(result.epoch_losses[e] <= result.epoch_losses[e - 1] + 1e-9);
}

TEST_CASE("base and distillation modes produce different trajectories") {
    std::vector<PairSample> samples = {small_sample(21), small_sample(22)};
    Rng rng(23);
    const SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    const LinearHead head = LinearHead::seeded(8, 4, rng);

    TrainConfig base_cfg;
    base_cfg.lr = 0.05;
    base_cfg.epochs = 2;
    base_cfg.mode = TrainMode::base;
    TrainConfig kd_cfg = base_cfg;
    kd_cfg.mode = TrainMode::distillation;

    LossWeights w;
    w.lambda_base = 0.5;
    w.lambda_kd = 1.0;

    const auto r_base = train(samples, base_cfg, w, layer, head);
    const auto r_kd = train(samples, kd_cfg, w, layer, head);
    const auto pb = r_base.layer.export_params();
    const auto pk = r_kd.layer.export_params();
    bool differs = false;
    for (std::size_t i = 0; i < pb.size(); ++i)
        if (pb[i] != pk[i]) differs = true;
    CHECK(differs);
}

TEST_CASE("one_step training moves the head, frozen mode does not") {
    std::vector<PairSample> samples = {small_sample(31)};
    Rng rng(32);
    const SimilarityLayer layer = SimilarityLayer::learned(8, rng);
    const LinearHead head = LinearHead::seeded(8, 4, rng);

    TrainConfig frozen;
    frozen.lr = 0.05;
    frozen.epochs = 1;
    TrainConfig joint = frozen;
    joint.one_step = true;

    LossWeights w;
    const auto r_frozen = train(samples, frozen, w, layer, head);
    const auto r_joint = train(samples, joint, w, layer, head);

    const auto hf = r_frozen.head.export_params();
    const auto h0 = head.export_params();
    for (std::size_t i = 0; i < hf.size(); ++i) CHECK(hf[i] == h0[i]);

    const auto hj = r_joint.head.export_params();
    bool moved = false;
    for (std::size_t i = 0; i < hj.size(); ++i)
        if (hj[i] != h0[i]) moved = true;
    CHECK(moved);
}
