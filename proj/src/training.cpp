#include "ssp/training.hpp"

#include <cmath>

namespace ssp {

namespace {

/// d(loss)/d(head params) contribution from a logits gradient, given the
/// standardized head input the logits were computed from.
void accumulate_head_grads(const LinearHead& head, const Tensor& headin,
                           const Tensor& dlogits, std::vector<float>& dw,
                           std::vector<float>& db) {
    for (std::size_t c = 0; c < head.classes; ++c)
        for (std::size_t y = 0; y < headin.height(); ++y)
            for (std::size_t x = 0; x < headin.width(); ++x) {
                const float g = dlogits.at(c, y, x);
                if (g == 0.0f) continue;
                db[c] += g;
                for (std::size_t f = 0; f < head.in_features; ++f)
                    dw[c * head.in_features + f] += g * headin.at(f, y, x);
            }
}

} // namespace

GraphGrads two_frame_backward(const PairSample& s, const SimilarityLayer& layer,
                              const LinearHead& head, const LossWeights& weights,
                              TrainMode mode, bool train_head,
                              std::int32_t ignore_index) {
    weights.validate();

    // ---- forward, retaining intermediates ----
    Tensor q_p = head_linear(head, s.headin_p);
    Tensor q_q = head_linear(head, s.headin_q);
    for (std::size_t i = 0; i < q_p.size(); ++i) q_p[i] += s.noise_p[i];
    for (std::size_t i = 0; i < q_q.size(); ++i) q_q[i] += s.noise_q[i];

    Tensor p_warped, valid, feat_warped;
    if (s.use_registration) {
        auto pw = warp_homography(q_p, s.H, 0.0f);
        p_warped = std::move(pw.first);
        valid = std::move(pw.second);
        const double scale = static_cast<double>(q_p.height()) /
                             static_cast<double>(s.feat_p.height());
        auto fw = warp_homography(
            s.feat_p, scale == 1.0 ? s.H : homography_at_scale(s.H, scale), 0.0f);
        feat_warped = std::move(fw.first);
    } else {
        p_warped = q_p;
        valid = Tensor::chw(1, q_p.height(), q_p.width(), Tag::mask, 1.0f);
        feat_warped = s.feat_p;
    }

    const auto sim = similarity_alpha_forward(feat_warped, s.feat_q, valid, layer);
    const Tensor pred_q = propagate_step(q_q, p_warped, sim.alpha);
    const Tensor& pred_p = q_p;

    const double lambda =
        mode == TrainMode::base ? weights.lambda_base : weights.lambda_kd;
    const Tensor probs_q = softmax_channels(pred_q, 1.0);
    const Tensor probs_p = softmax_channels(pred_p, 1.0);
    auto [x_hat, warp_valid] = warp_flow(probs_p, s.flow_pq, 0.0f);
    Tensor tc_weight = s.occ_weight;
    for (std::size_t i = 0; i < tc_weight.size(); ++i)
        tc_weight[i] *= warp_valid[i];

    GraphGrads out;
    Tensor d_pred_q(pred_q.dims(), Tag::logits);
    Tensor d_pred_p(pred_p.dims(), Tag::logits);

    if (mode == TrainMode::base) {
        if (!s.has_labels)
            throw ContractError("base training requires current-frame labels");
        out.loss = loss_ce(pred_q, s.labels_q, ignore_index);
        d_pred_q = loss_ce_backward(pred_q, s.labels_q, ignore_index);
    } else {
        if (!s.has_teacher)
            throw ContractError("distillation training requires teacher tensors");
        out.loss = loss_kl(pred_q, s.teacher_cq, weights.tau) +
                   loss_kl(pred_p, s.teacher_cp, weights.tau);
        d_pred_q = loss_kl_backward(pred_q, s.teacher_cq, weights.tau);
        d_pred_p = loss_kl_backward(pred_p, s.teacher_cp, weights.tau);
    }

    if (lambda != 0.0) {
        out.loss += lambda * loss_tc(probs_q, x_hat, tc_weight);
        const auto tc = loss_tc_backward(probs_q, x_hat, tc_weight, lambda);
        const Tensor d_from_tc_q = softmax_channels_backward(probs_q, tc.y, 1.0);
        for (std::size_t i = 0; i < d_pred_q.size(); ++i)
            d_pred_q[i] += d_from_tc_q[i];
        if (train_head) {
            const Tensor d_probs_p =
                warp_flow_backward(probs_p.dims(), s.flow_pq, tc.x_hat);
            const Tensor d_from_tc_p =
                softmax_channels_backward(probs_p, d_probs_p, 1.0);
            for (std::size_t i = 0; i < d_pred_p.size(); ++i)
                d_pred_p[i] += d_from_tc_p[i];
        }
    }

    // ---- through the propagation ----
    const auto pg = propagate_step_backward(q_q, p_warped, sim.alpha, d_pred_q);
    if (layer.mode == SimilarityMode::learned_conv) {
        const auto sim_grads = similarity_alpha_backward(sim, valid, layer, pg.alpha);
        out.layer = sim_grads.export_params();
    }

    if (train_head) {
        Tensor d_q_p = d_pred_p;
        const Tensor d_p_warped_src =
            s.use_registration
                ? warp_homography_backward(q_p.dims(), s.H, pg.p_warped)
                : pg.p_warped;
        for (std::size_t i = 0; i < d_q_p.size(); ++i)
            d_q_p[i] += d_p_warped_src[i];

        std::vector<float> dw(head.weight.size(), 0.0f);
        std::vector<float> db(head.bias.size(), 0.0f);
        accumulate_head_grads(head, s.headin_q, pg.q, dw, db);
        accumulate_head_grads(head, s.headin_p, d_q_p, dw, db);
        out.head = std::move(dw);
        out.head.insert(out.head.end(), db.begin(), db.end());
    }
    return out;
}

GradCheckReport grad_check(
    const std::string& name,
    const std::function<double(std::span<const double>)>& loss_fn,
    std::span<const double> theta, std::span<const double> analytic,
    double epsilon) {
    if (theta.size() != analytic.size())
        throw ContractError("grad_check analytic gradient size mismatch");
    GradCheckReport report;
    report.name = name;
    std::vector<double> work(theta.begin(), theta.end());
    for (std::size_t i = 0; i < work.size(); ++i) {
        const double keep = work[i];
        work[i] = keep + epsilon;
        const double up = loss_fn(work);
        work[i] = keep - epsilon;
        const double down = loss_fn(work);
        work[i] = keep;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw ContractError("grad_check encountered a non-finite loss");
        const double numeric = (up - down) / (2.0 * epsilon);
        const double a = analytic[i];
        const double rel = std::abs(a - numeric) /
                           std::max({std::abs(a), std::abs(numeric), 1e-8});
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        ++report.checked;
    }
    return report;
}

namespace {

std::vector<double> to_double(std::span<const float> v) {
    return std::vector<double>(v.begin(), v.end());
}

Tensor random_tensor(Rng& rng, std::size_t c, std::size_t h, std::size_t w,
                     Tag tag, double lo, double hi) {
    Tensor t = Tensor::chw(c, h, w, tag);
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

/// Near-identity homography with a small translation, rotation and
/// perspective component; keeps most warp samples inside an 8x8 frame.
Homography random_homography(Rng& rng) {
    std::array<double, 9> h = {1.0 + rng.uniform(-0.02, 0.02),
                               rng.uniform(-0.02, 0.02),
                               rng.uniform(-0.8, 0.8),
                               rng.uniform(-0.02, 0.02),
                               1.0 + rng.uniform(-0.02, 0.02),
                               rng.uniform(-0.8, 0.8),
                               rng.uniform(-1e-3, 1e-3),
                               rng.uniform(-1e-3, 1e-3),
                               1.0};
    return Homography::from_rowmajor(std::span<const double, 9>(h));
}

PairSample random_pair_sample(Rng& rng, std::size_t frame, std::size_t classes,
                              std::size_t features) {
    const std::size_t fh = frame / 4, fw = frame / 4;
    PairSample s;
    s.feat_p = random_tensor(rng, features, fh, fw, Tag::feature, 0.0, 1.0);
    s.feat_q = random_tensor(rng, features, fh, fw, Tag::feature, 0.0, 1.0);
    s.headin_p = random_tensor(rng, features, frame, frame, Tag::feature, -1.0, 1.0);
    s.headin_q = random_tensor(rng, features, frame, frame, Tag::feature, -1.0, 1.0);
    s.noise_p = random_tensor(rng, classes, frame, frame, Tag::logits, -1.0, 1.0);
    s.noise_q = random_tensor(rng, classes, frame, frame, Tag::logits, -1.0, 1.0);
    s.H = random_homography(rng);
    s.use_registration = true;
    Tensor uv = Tensor::chw(2, frame, frame, Tag::flow);
    for (std::size_t i = 0; i < uv.size(); ++i)
        uv[i] = static_cast<float>(rng.uniform(-1.2, 1.2));
    s.flow_pq = FlowField(std::move(uv));
    s.occ_weight = random_tensor(rng, 1, frame, frame, Tag::alpha, 0.05, 1.0);
    s.labels_q = LabelMap(frame, frame);
    for (auto& l : s.labels_q.data) {
        l = static_cast<std::int32_t>(rng.bounded(classes + 1));
        if (l == static_cast<std::int32_t>(classes)) l = 255; // some ignored
    }
    s.has_labels = true;
    LabelMap teach_labels(frame, frame);
    for (auto& l : teach_labels.data)
        l = static_cast<std::int32_t>(rng.bounded(classes));
    s.teacher_cq = make_teacher_logits(teach_labels, classes, 4.0, 0.0,
                                       rng.next_u64());
    for (auto& l : teach_labels.data)
        l = static_cast<std::int32_t>(rng.bounded(classes));
    s.teacher_cp = make_teacher_logits(teach_labels, classes, 4.0, 0.0,
                                       rng.next_u64());
    s.has_teacher = true;
    return s;
}

GradCheckReport worst_of(GradCheckReport acc, const GradCheckReport& r) {
    if (acc.name.empty()) acc.name = r.name;
    acc.checked += r.checked;
    if (r.max_rel_err > acc.max_rel_err) {
        acc.max_rel_err = r.max_rel_err;
        acc.worst_index = r.worst_index;
        acc.analytic = r.analytic;
        acc.numeric = r.numeric;
    }
    return acc;
}

} // namespace

std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed,
                                                 std::size_t instances,
                                                 double epsilon) {
    constexpr std::size_t frame = 8;
    constexpr std::size_t classes = 4;
    constexpr std::size_t features = 8;
    std::vector<GradCheckReport> reports;

    GradCheckReport conv_r, resize_r, sim_r, prop_r, tc_r, ce_r, kl_r, base_r, kd_r;

    for (std::size_t inst = 0; inst < instances; ++inst) {
        Rng rng(mix_seed(seed, inst));

        // conv2d: loss = sum(g * conv(x)); theta = [input, weights, bias]
        {
            const Tensor input = random_tensor(rng, 4, frame, frame, Tag::feature,
                                               -1.0, 1.0);
            ConvSpec spec = ConvSpec::seeded(4, 2, 3, 1, 1, rng);
            for (auto& b : spec.bias) b = static_cast<float>(rng.uniform(-0.2, 0.2));
            const Tensor up =
                random_tensor(rng, 2, frame, frame, Tag::feature, -1.0, 1.0);
            const auto grads = conv2d_backward(input, spec, up);
            std::vector<double> theta = to_double(input.values());
            std::vector<double> analytic = to_double(grads.input.values());
            {
                auto wd = to_double(spec.weights);
                auto bd = to_double(spec.bias);
                theta.insert(theta.end(), wd.begin(), wd.end());
                theta.insert(theta.end(), bd.begin(), bd.end());
                auto gw = to_double(grads.weights);
                auto gb = to_double(grads.bias);
                analytic.insert(analytic.end(), gw.begin(), gw.end());
                analytic.insert(analytic.end(), gb.begin(), gb.end());
            }
            const auto up_d = cast<double>(up);
            const auto in_dims = input.dims();
            auto f = [&](std::span<const double> th) {
                TensorT<double> x(in_dims, Tag::feature);
                std::copy(th.begin(), th.begin() + static_cast<std::ptrdiff_t>(x.size()),
                          x.values().begin());
                ConvSpecT<double> sp;
                sp.in_channels = 4;
                sp.out_channels = 2;
                sp.kernel = 3;
                sp.stride = 1;
                sp.pad = 1;
                sp.weights.assign(th.begin() + static_cast<std::ptrdiff_t>(x.size()),
                                  th.begin() + static_cast<std::ptrdiff_t>(
                                                   x.size() + 4 * 2 * 9));
                sp.bias.assign(th.end() - 2, th.end());
                const auto out = conv2d(x, sp);
                double l = 0;
                for (std::size_t i = 0; i < out.size(); ++i) l += out[i] * up_d[i];
                return l;
            };
            conv_r = worst_of(conv_r, grad_check("conv2d", f, theta, analytic, epsilon));
        }

        // bilinear_resize 1x4x4 -> 1x8x8
        {
            const Tensor input = random_tensor(rng, 1, 4, 4, Tag::feature, -1.0, 1.0);
            const Tensor up = random_tensor(rng, 1, 8, 8, Tag::feature, -1.0, 1.0);
            const Tensor dinput = bilinear_resize_backward(input.dims(), up);
            const auto up_d = cast<double>(up);
            auto f = [&](std::span<const double> th) {
                TensorT<double> x({1, 4, 4}, Tag::feature);
                std::copy(th.begin(), th.end(), x.values().begin());
                const auto out = bilinear_resize(x, 8, 8);
                double l = 0;
                for (std::size_t i = 0; i < out.size(); ++i) l += out[i] * up_d[i];
                return l;
            };
            resize_r = worst_of(
                resize_r, grad_check("bilinear_resize", f, to_double(input.values()),
                                     to_double(dinput.values()), epsilon));
        }

        // similarity_alpha: theta = [layer params, feat_past, feat_cur]
        {
            Rng init(mix_seed(seed ^ 0x5151, inst));
            SimilarityLayer layer = SimilarityLayer::learned(features, init);
            const Tensor fp = random_tensor(rng, features, 2, 2, Tag::feature, -1.0, 1.0);
            const Tensor fq = random_tensor(rng, features, 2, 2, Tag::feature, -1.0, 1.0);
            Tensor validity = Tensor::chw(1, 8, 8, Tag::mask, 1.0f);
            for (std::size_t i = 0; i < validity.size(); ++i)
                if (rng.uniform() < 0.1) validity[i] = 0.0f;
            const Tensor up = random_tensor(rng, 1, 8, 8, Tag::alpha, -1.0, 1.0);

            const auto fwd = similarity_alpha_forward(fp, fq, validity, layer);
            const auto g = similarity_alpha_backward(fwd, validity, layer, up);
            std::vector<double> theta = to_double(layer.export_params());
            std::vector<double> analytic = to_double(g.export_params());
            {
                auto a = to_double(fp.values());
                auto b = to_double(fq.values());
                theta.insert(theta.end(), a.begin(), a.end());
                theta.insert(theta.end(), b.begin(), b.end());
                auto ga = to_double(g.feat_past_warped.values());
                auto gb = to_double(g.feat_current.values());
                analytic.insert(analytic.end(), ga.begin(), ga.end());
                analytic.insert(analytic.end(), gb.begin(), gb.end());
            }
            const auto validity_d = cast<double>(validity);
            const auto up_d = cast<double>(up);
            const std::size_t n_params = layer.param_count();
            const std::size_t n_feat = fp.size();
            auto layer_d_template = [&]() {
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
                    ld.stack.push_back(std::move(sp));
                }
                return ld;
            }();
            auto f = [&](std::span<const double> th) {
                SimilarityLayerT<double> ld = layer_d_template;
                ld.import_params(th.subspan(0, n_params));
                TensorT<double> a({features, 2, 2}, Tag::feature);
                TensorT<double> b({features, 2, 2}, Tag::feature);
                std::copy(th.begin() + static_cast<std::ptrdiff_t>(n_params),
                          th.begin() + static_cast<std::ptrdiff_t>(n_params + n_feat),
                          a.values().begin());
                std::copy(th.begin() + static_cast<std::ptrdiff_t>(n_params + n_feat),
                          th.end(), b.values().begin());
                const auto alpha = similarity_alpha(a, b, validity_d, ld);
                double l = 0;
                for (std::size_t i = 0; i < alpha.size(); ++i)
                    l += alpha[i] * up_d[i];
                return l;
            };
            sim_r = worst_of(sim_r,
                             grad_check("similarity_alpha", f, theta, analytic, epsilon));
        }

        // propagate_step: theta = [q, p, alpha], alpha kept in (0.1, 0.9)
        {
            const Tensor q = random_tensor(rng, classes, frame, frame, Tag::logits,
                                           -2.0, 2.0);
            const Tensor p = random_tensor(rng, classes, frame, frame, Tag::logits,
                                           -2.0, 2.0);
            const Tensor alpha =
                random_tensor(rng, 1, frame, frame, Tag::alpha, 0.1, 0.9);
            const Tensor up = random_tensor(rng, classes, frame, frame, Tag::logits,
                                            -1.0, 1.0);
            const auto g = propagate_step_backward(q, p, alpha, up);
            std::vector<double> theta = to_double(q.values());
            std::vector<double> analytic = to_double(g.q.values());
            {
                auto a = to_double(p.values());
                auto b = to_double(alpha.values());
                theta.insert(theta.end(), a.begin(), a.end());
                theta.insert(theta.end(), b.begin(), b.end());
                auto ga = to_double(g.p_warped.values());
                auto gb = to_double(g.alpha.values());
                analytic.insert(analytic.end(), ga.begin(), ga.end());
                analytic.insert(analytic.end(), gb.begin(), gb.end());
            }
            const auto up_d = cast<double>(up);
            const std::size_t n = q.size();
            auto f = [&](std::span<const double> th) {
                TensorT<double> qd({classes, frame, frame}, Tag::logits);
                TensorT<double> pd({classes, frame, frame}, Tag::logits);
                TensorT<double> ad({1, frame, frame}, Tag::alpha);
                std::copy(th.begin(), th.begin() + static_cast<std::ptrdiff_t>(n),
                          qd.values().begin());
                std::copy(th.begin() + static_cast<std::ptrdiff_t>(n),
                          th.begin() + static_cast<std::ptrdiff_t>(2 * n),
                          pd.values().begin());
                std::copy(th.begin() + static_cast<std::ptrdiff_t>(2 * n), th.end(),
                          ad.values().begin());
                const auto out = propagate_step(qd, pd, ad);
                double l = 0;
                for (std::size_t i = 0; i < out.size(); ++i) l += out[i] * up_d[i];
                return l;
            };
            prop_r = worst_of(prop_r,
                              grad_check("propagate_step", f, theta, analytic, epsilon));
        }

        // loss_tc: theta = [y, x_hat]
        {
            const Tensor y = random_tensor(rng, classes, frame, frame, Tag::probs,
                                           0.01, 1.0);
            const Tensor xh = random_tensor(rng, classes, frame, frame, Tag::probs,
                                            0.01, 1.0);
            const Tensor w = random_tensor(rng, 1, frame, frame, Tag::alpha, 0.05, 1.0);
            const auto g = loss_tc_backward(y, xh, w);
            std::vector<double> theta = to_double(y.values());
            std::vector<double> analytic = to_double(g.y.values());
            {
                auto a = to_double(xh.values());
                theta.insert(theta.end(), a.begin(), a.end());
                auto ga = to_double(g.x_hat.values());
                analytic.insert(analytic.end(), ga.begin(), ga.end());
            }
            const auto w_d = cast<double>(w);
            const std::size_t n = y.size();
            auto f = [&](std::span<const double> th) {
                TensorT<double> yd({classes, frame, frame}, Tag::probs);
                TensorT<double> xd({classes, frame, frame}, Tag::probs);
                std::copy(th.begin(), th.begin() + static_cast<std::ptrdiff_t>(n),
                          yd.values().begin());
                std::copy(th.begin() + static_cast<std::ptrdiff_t>(n), th.end(),
                          xd.values().begin());
                return loss_tc(yd, xd, w_d);
            };
            tc_r = worst_of(tc_r, grad_check("loss_tc", f, theta, analytic, epsilon));
        }

        // loss_ce
        {
            const Tensor logits = random_tensor(rng, classes, frame, frame,
                                                Tag::logits, -2.0, 2.0);
            LabelMap labels(frame, frame);
            for (auto& l : labels.data) {
                l = static_cast<std::int32_t>(rng.bounded(classes + 1));
                if (l == static_cast<std::int32_t>(classes)) l = 255;
            }
            const Tensor g = loss_ce_backward(logits, labels, 255);
            auto f = [&](std::span<const double> th) {
                TensorT<double> x({classes, frame, frame}, Tag::logits);
                std::copy(th.begin(), th.end(), x.values().begin());
                return loss_ce(x, labels, 255);
            };
            ce_r = worst_of(ce_r,
                            grad_check("loss_ce", f, to_double(logits.values()),
                                       to_double(g.values()), epsilon));
        }

        // loss_kl
        {
            const Tensor student = random_tensor(rng, classes, frame, frame,
                                                 Tag::logits, -2.0, 2.0);
            const Tensor teacher = random_tensor(rng, classes, frame, frame,
                                                 Tag::logits, -2.0, 2.0);
            const Tensor g = loss_kl_backward(student, teacher, 2.0);
            const auto teacher_d = cast<double>(teacher);
            auto f = [&](std::span<const double> th) {
                TensorT<double> x({classes, frame, frame}, Tag::logits);
                std::copy(th.begin(), th.end(), x.values().begin());
                return loss_kl(x, teacher_d, 2.0);
            };
            kl_r = worst_of(kl_r,
                            grad_check("loss_kl", f, to_double(student.values()),
                                       to_double(g.values()), epsilon));
        }

        // composed training losses: theta = [layer params, head params]
        for (int kd = 0; kd <= 1; ++kd) {
            const PairSample sample = random_pair_sample(rng, frame, classes, features);
            Rng init(mix_seed(seed ^ 0xabcd, inst * 2 + static_cast<std::size_t>(kd)));
            SimilarityLayer layer = SimilarityLayer::learned(features, init);
            LinearHead head = LinearHead::seeded(features, classes, init);

            LossWeights w;
            w.lambda_base = 0.5;
            w.lambda_kd = 1.0; // desk-scale calibrated weight
            w.tau = 2.0;
            const TrainMode mode = kd ? TrainMode::distillation : TrainMode::base;

            const auto g = two_frame_backward(sample, layer, head, w, mode, true);
            std::vector<double> theta = to_double(layer.export_params());
            std::vector<double> analytic = to_double(g.layer);
            {
                auto hp = to_double(head.export_params());
                theta.insert(theta.end(), hp.begin(), hp.end());
                auto gh = to_double(g.head);
                analytic.insert(analytic.end(), gh.begin(), gh.end());
            }
            const auto sample_d = cast_sample<double>(sample);
            const std::size_t n_layer = layer.param_count();
            auto f = [&](std::span<const double> th) {
                SimilarityLayerT<double> ld;
                ld.mode = SimilarityMode::learned_conv;
                for (const auto& cs : layer.stack) {
                    ConvSpecT<double> sp;
                    sp.in_channels = cs.in_channels;
                    sp.out_channels = cs.out_channels;
                    sp.kernel = cs.kernel;
                    sp.stride = cs.stride;
                    sp.pad = cs.pad;
                    sp.weights.resize(cs.weights.size());
                    sp.bias.resize(cs.bias.size());
                    ld.stack.push_back(std::move(sp));
                }
                ld.import_params(th.subspan(0, n_layer));
                LinearHeadT<double> hd;
                hd.in_features = head.in_features;
                hd.classes = head.classes;
                hd.weight.resize(head.weight.size());
                hd.bias.resize(head.bias.size());
                hd.mu.assign(head.mu.begin(), head.mu.end());
                hd.sigma.assign(head.sigma.begin(), head.sigma.end());
                hd.import_params(th.subspan(n_layer));
                return two_frame_loss(sample_d, ld, hd, w, mode);
            };
            auto& target = kd ? kd_r : base_r;
            target = worst_of(
                target, grad_check(kd ? "train_loss_kd" : "train_loss_base", f,
                                   theta, analytic, epsilon));
        }
    }

    reports.push_back(conv_r);
    reports.push_back(resize_r);
    reports.push_back(sim_r);
    reports.push_back(prop_r);
    reports.push_back(tc_r);
    reports.push_back(ce_r);
    reports.push_back(kl_r);
    reports.push_back(base_r);
    reports.push_back(kd_r);
    return reports;
}

TrainResult train(std::span<const PairSample> samples, const TrainConfig& config,
                  const LossWeights& weights, const SimilarityLayer& initial_layer,
                  const LinearHead& initial_head) {
    config.validate();
    weights.validate();
    if (samples.empty()) throw ContractError("train requires at least one pair");

    TrainResult result;
    result.layer = initial_layer;
    result.head = initial_head;

    const bool learned = result.layer.mode == SimilarityMode::learned_conv;
    std::vector<float> layer_params =
        learned ? result.layer.export_params() : std::vector<float>{};
    std::vector<float> head_params = result.head.export_params();
    std::vector<float> layer_vel(layer_params.size(), 0.0f);
    std::vector<float> head_vel(head_params.size(), 0.0f);

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(config.seed, epoch));
        shuffle_rng.shuffle(order.begin(), order.end());
        double epoch_loss = 0;
        for (const std::size_t idx : order) {
            const auto g =
                two_frame_backward(samples[idx], result.layer, result.head, weights,
                                   config.mode, config.one_step, config.ignore_index);
            if (!std::isfinite(g.loss))
                throw ContractError("training loss became non-finite");
            epoch_loss += g.loss;
            if (learned) {
                sgd_step<float>(layer_params, g.layer, config.lr, config.momentum,
                                layer_vel);
                result.layer.import_params(layer_params);
            }
            if (config.one_step) {
                sgd_step<float>(head_params, g.head, config.lr, config.momentum,
                                head_vel);
                result.head.import_params(head_params);
            }
        }
        result.epoch_losses.push_back(epoch_loss /
                                      static_cast<double>(samples.size()));
    }
    return result;
}

} // namespace ssp
