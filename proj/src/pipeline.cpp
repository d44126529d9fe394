#include "ssp/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "ssp/metrics.hpp"

namespace ssp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string index_name(const char* prefix, std::size_t idx, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%04zu.%s", prefix, idx, ext);
    return buf;
}

std::string teacher_name(std::size_t pair, const char* which) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "pair_%04zu_%s.sten", pair, which);
    return buf;
}

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

} // namespace

std::optional<Homography> pair_homography(const LoadedSequence& seq,
                                          std::size_t pair_index,
                                          bool no_registration) {
    if (no_registration) return Homography::identity();
    if (!seq.manifest.homographies.empty())
        return seq.manifest.homographies.at(pair_index);
    if (!seq.flows_bwd.empty()) {
        // Correspondences sampled from the backward flow: a past pixel plus
        // its displacement is the matching current position.
        const FlowField& flow = seq.flows_bwd.at(pair_index);
        std::vector<PointPair> pts;
        constexpr std::size_t grid = 8;
        for (std::size_t gy = 0; gy < grid; ++gy)
            for (std::size_t gx = 0; gx < grid; ++gx) {
                const std::size_t x = (gx * 2 + 1) * flow.width() / (2 * grid);
                const std::size_t y = (gy * 2 + 1) * flow.height() / (2 * grid);
                const double sx = static_cast<double>(x);
                const double sy = static_cast<double>(y);
                pts.push_back({{sx, sy}, {sx + flow.u(y, x), sy + flow.v(y, x)}});
            }
        return estimate_homography_dlt(pts);
    }
    return Homography::identity();
}

Tensor surrogate_noise(std::size_t classes, std::size_t h, std::size_t w,
                       double level, std::uint64_t seed) {
    Tensor n = Tensor::chw(classes, h, w, Tag::logits);
    if (level > 0) {
        Rng rng(seed);
        for (std::size_t i = 0; i < n.size(); ++i)
            n[i] = static_cast<float>(level * rng.normal());
    }
    return n;
}

SceneConfig load_scene_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read scene config " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw DataError("malformed scene config: " + std::string(e.what()));
    }
    SceneConfig cfg;
    try {
        for (const auto& [key, value] : doc.items()) {
            if (key == "width") cfg.width = value.get<std::size_t>();
            else if (key == "height") cfg.height = value.get<std::size_t>();
            else if (key == "frames") cfg.frames = value.get<std::size_t>();
            else if (key == "classes") cfg.classes = value.get<std::size_t>();
            else if (key == "regions") cfg.regions = value.get<std::size_t>();
            else if (key == "sprites") cfg.sprites = value.get<std::size_t>();
            else if (key == "sprite_speed_min") cfg.sprite_speed_min = value.get<double>();
            else if (key == "sprite_speed_max") cfg.sprite_speed_max = value.get<double>();
            else if (key == "sprite_radius_px") cfg.sprite_radius_px = value.get<double>();
            else if (key == "altitude") cfg.altitude = value.get<double>();
            else if (key == "focal") cfg.focal = value.get<double>();
            else if (key == "base_speed") cfg.base_speed = value.get<double>();
            else if (key == "jitter") cfg.jitter = value.get<double>();
            else if (key == "max_yaw_rate") cfg.max_yaw_rate = value.get<double>();
            else if (key == "noise") cfg.noise = value.get<double>();
            else if (key == "annotate_every") cfg.annotate_every = value.get<std::size_t>();
            else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
            else throw DataError("unknown scene config key: " + key);
        }
    } catch (const json::exception& e) {
        throw DataError("malformed scene config: " + std::string(e.what()));
    }
    return cfg;
}

void run_synth(const SynthOptions& opt, std::ostream& log) {
    const SyntheticSequence seq = generate_sequence(opt.config);
    sequence_save(seq, opt.out);
    log << "synth: wrote " << seq.frames.size() << " frames ("
        << opt.config.width << "x" << opt.config.height << ", "
        << opt.config.classes << " classes, seed " << opt.config.seed << ") to "
        << opt.out.string() << "\n";
}

namespace {

struct FrameCache {
    Tensor feat;    // stride-4 features
    Tensor headin;  // standardized full-resolution head input
    Tensor noise;   // surrogate flicker
};

FrameCache make_frame_cache(const Tensor& frame, const LinearHead& head,
                            double noise_level, std::uint64_t noise_seed) {
    FrameCache c;
    c.feat = surrogate_features(frame);
    const Tensor up = bilinear_resize(c.feat, frame.height(), frame.width());
    c.headin = standardize_features(up, head);
    c.noise = surrogate_noise(head.classes, frame.height(), frame.width(),
                              noise_level, noise_seed);
    return c;
}

} // namespace

std::vector<double> run_train(const TrainOptions& opt, std::ostream& log) {
    if (opt.mode != "base" && opt.mode != "kd")
        throw ContractError("train mode must be base or kd");
    if (opt.similarity != "conv" && opt.similarity != "cosine")
        throw ContractError("similarity must be conv or cosine");

    std::vector<LoadedSequence> sequences;
    for (const auto& dir : discover_sequences(opt.data))
        sequences.push_back(sequence_load(dir));

    const std::size_t classes = sequences.front().manifest.classes.size();
    for (const auto& s : sequences)
        if (s.manifest.classes.size() != classes)
            throw DataError("sequences disagree on the class list");

    // Surrogate head: warm-fit on annotated frames and frozen by default;
    // seeded random and trained jointly in one-step mode.
    LinearHead head;
    if (opt.one_step) {
        Rng rng(mix_seed(opt.seed, 0x4ead));
        head = LinearHead::seeded(8, classes, rng);
        std::vector<Tensor> all_frames;
        for (const auto& s : sequences)
            for (const auto& f : s.frames) all_frames.push_back(f);
        set_head_stats(head, all_frames);
    } else {
        std::vector<Tensor> fit_frames;
        std::vector<LabelMap> fit_labels;
        for (const auto& s : sequences)
            for (const auto idx : s.manifest.annotated) {
                fit_frames.push_back(s.frames.at(idx));
                fit_labels.push_back(s.labels.at(idx));
            }
        HeadFitConfig fit;
        fit.seed = mix_seed(opt.seed, 0xf17);
        head = fit_linear_head(fit_frames, fit_labels, classes, fit);
    }

    const TrainMode mode =
        opt.mode == "kd" ? TrainMode::distillation : TrainMode::base;
    const fs::path teacher_root = opt.teacher.value_or(opt.data);

    std::vector<PairSample> samples;
    for (const auto& seq : sequences) {
        const std::size_t n_frames = seq.frames.size();
        if (n_frames < 2) continue;
        if (seq.flows_fwd.empty())
            throw DataError("training requires forward flows in " +
                            seq.manifest.name);
        std::vector<FrameCache> cache(n_frames);
        std::vector<bool> cached(n_frames, false);
        auto frame_cache = [&](std::size_t k) -> const FrameCache& {
            if (!cached[k]) {
                cache[k] = make_frame_cache(seq.frames[k], head, opt.noise,
                                            mix_seed(seq.manifest.seed, k));
                cached[k] = true;
            }
            return cache[k];
        };
        for (std::size_t k = 1; k < n_frames; ++k) {
            const std::size_t pair = k - 1;
            PairSample s;
            if (mode == TrainMode::base) {
                // Only pairs whose current frame is annotated are usable.
                const auto& ann = seq.manifest.annotated;
                if (std::find(ann.begin(), ann.end(), k) == ann.end()) continue;
                s.labels_q = seq.labels.at(k);
                s.has_labels = true;
            } else {
                const fs::path base =
                    teacher_root / seq.manifest.name / "teacher";
                const fs::path fq = base / teacher_name(pair, "tcq");
                const fs::path fp = base / teacher_name(pair, "tcp");
                if (!fs::exists(fq) || !fs::exists(fp))
                    throw DataError("missing teacher tensors for " +
                                    seq.manifest.name + " pair " +
                                    std::to_string(pair) +
                                    " (run distill-prep first)");
                s.teacher_cq = tensor_read(fq, Tag::logits);
                s.teacher_cp = tensor_read(fp, Tag::logits);
                s.has_teacher = true;
            }
            const FrameCache& cp = frame_cache(k - 1);
            const FrameCache& cq = frame_cache(k);
            s.feat_p = cp.feat;
            s.feat_q = cq.feat;
            s.headin_p = cp.headin;
            s.headin_q = cq.headin;
            s.noise_p = cp.noise;
            s.noise_q = cq.noise;
            const auto H = pair_homography(seq, pair, opt.no_registration);
            s.H = *H;
            s.use_registration = true;
            s.flow_pq = seq.flows_fwd.at(pair);
            auto [warped_prev, warp_valid] =
                warp_flow(seq.frames[k - 1], s.flow_pq, 0.0f);
            (void)warp_valid; // validity re-enters through the loss warp
            s.occ_weight = photometric_weight(seq.frames[k], warped_prev);
            samples.push_back(std::move(s));
        }
    }
    if (samples.empty())
        throw DataError("no usable training pairs (check annotations/teachers)");

    SimilarityLayer layer;
    if (opt.similarity == "cosine") {
        layer = SimilarityLayer::cosine();
    } else {
        Rng rng(mix_seed(opt.seed, 0x51a1));
        layer = SimilarityLayer::learned(8, rng);
    }

    TrainConfig config;
    config.lr = opt.lr;
    config.momentum = opt.momentum;
    config.epochs = opt.epochs;
    config.seed = opt.seed;
    config.mode = mode;
    config.one_step = opt.one_step;

    LossWeights weights;
    weights.lambda_base = opt.lambda;
    weights.lambda_kd = opt.lambda_kd;
    weights.tau = opt.tau;

    const TrainResult result = train(samples, config, weights, layer, head);

    Checkpoint ckpt;
    ckpt.mode = opt.mode;
    ckpt.seed = opt.seed;
    ckpt.epoch = opt.epochs;
    ckpt.one_step = opt.one_step;
    ckpt.layer = result.layer;
    ckpt.head = result.head;
    checkpoint_save(opt.out, ckpt);

    log << "train: " << samples.size() << " pairs, " << opt.epochs
        << " epochs, mode " << opt.mode << "\n";
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
        log << "  epoch " << e << " loss " << fmt6(result.epoch_losses[e]) << "\n";
    log << "train: wrote checkpoint " << opt.out.string() << "\n";
    return result.epoch_losses;
}

void run_infer(const InferOptions& opt, std::ostream& log) {
    const Checkpoint ckpt = checkpoint_load(opt.ckpt);
    for (const auto& dir : discover_sequences(opt.data)) {
        const LoadedSequence seq = sequence_load(dir);
        const std::uint64_t noise_base =
            opt.noise_seed.value_or(seq.manifest.seed);
        const fs::path out_dir = opt.out / seq.manifest.name;
        fs::create_directories(out_dir);

        PropagatorState state;
        for (std::size_t k = 0; k < seq.frames.size(); ++k) {
            const Tensor feat = surrogate_features(seq.frames[k]);
            const Tensor q = surrogate_logits(seq.frames[k], ckpt.head, opt.noise,
                                              mix_seed(noise_base, k));
            std::optional<Homography> H;
            if (k > 0) H = pair_homography(seq, k - 1, opt.no_registration);
            const Tensor out =
                video_step(state, q, feat, H, ckpt.layer, opt.alpha_zero);
            tensor_write(out_dir / index_name("logits", k, "sten"), out);
            pgm_write(out_dir / index_name("pred", k, "pgm"),
                      argmax_channels(out));
        }
        log << "infer: " << seq.manifest.name << " (" << seq.frames.size()
            << " frames) -> " << out_dir.string() << "\n";
    }
}

EvalReport run_eval(const EvalOptions& opt, std::ostream& log) {
    EvalReport report;
    double miou_sum = 0, tc_sum = 0;
    std::size_t miou_n = 0, tc_n = 0;

    for (const auto& dir : discover_sequences(opt.data)) {
        const LoadedSequence seq = sequence_load(dir);
        const fs::path pred_dir = opt.pred / seq.manifest.name;
        VideoEval ve;
        ve.name = seq.manifest.name;
        ve.pairs = seq.frames.size() - 1;

        std::vector<LabelMap> preds;
        for (std::size_t k = 0; k < seq.frames.size(); ++k) {
            const fs::path p = pred_dir / index_name("pred", k, "pgm");
            if (!fs::exists(p))
                throw DataError("missing prediction " + p.string());
            preds.push_back(pgm_read(p));
        }

        if (!seq.manifest.annotated.empty()) {
            ConfusionMatrix cm(seq.manifest.classes.size(), 255);
            for (const auto idx : seq.manifest.annotated)
                cm.accumulate(seq.labels.at(idx), preds.at(idx));
            ve.miou = cm.miou();
            ve.has_miou = true;
            miou_sum += ve.miou;
            ++miou_n;
        }
        if (!seq.flows_fwd.empty() && preds.size() >= 2) {
            ve.tc = tc_video(preds, seq.flows_fwd);
            ve.has_tc = true;
            tc_sum += ve.tc;
            ++tc_n;
        }
        report.videos.push_back(ve);
    }

    report.mean_miou = miou_n ? miou_sum / static_cast<double>(miou_n) : 0.0;
    report.mean_tc = tc_n ? tc_sum / static_cast<double>(tc_n) : 0.0;

    std::string text;
    json jvideos = json::array();
    for (const auto& v : report.videos) {
        text += "video " + v.name + ": mIoU=" +
                (v.has_miou ? fmt6(v.miou) : std::string("n/a")) +
                " TC=" + (v.has_tc ? fmt6(v.tc) : std::string("n/a")) +
                " pairs=" + std::to_string(v.pairs) + "\n";
        json jv;
        jv["name"] = v.name;
        if (v.has_miou) jv["miou"] = v.miou;
        if (v.has_tc) jv["tc"] = v.tc;
        jv["pairs"] = v.pairs;
        jvideos.push_back(jv);
    }
    text += "mean: mIoU=" + (miou_n ? fmt6(report.mean_miou) : std::string("n/a")) +
            " TC=" + (tc_n ? fmt6(report.mean_tc) : std::string("n/a")) +
            " videos=" + std::to_string(report.videos.size()) + "\n";
    report.text = text;

    json doc;
    doc["videos"] = jvideos;
    if (miou_n) doc["mean_miou"] = report.mean_miou;
    if (tc_n) doc["mean_tc"] = report.mean_tc;
    doc["count"] = report.videos.size();
    report.json_text = doc.dump(2) + "\n";

    log << report.text;
    if (opt.out) {
        std::ofstream out(*opt.out);
        if (!out) throw DataError("cannot write " + opt.out->string());
        out << report.json_text;
    }
    return report;
}

void run_distill_prep(const DistillPrepOptions& opt, std::ostream& log) {
    for (const auto& dir : discover_sequences(opt.data)) {
        const LoadedSequence seq = sequence_load(dir);
        const std::size_t classes = seq.manifest.classes.size();
        if (seq.flows_fwd.empty() || seq.flows_bwd.empty())
            throw DataError("distill-prep requires flows in both directions");
        for (std::size_t k = 0; k < seq.frames.size(); ++k)
            if (!seq.labels.count(k))
                throw DataError(
                    "distill-prep needs per-frame labels (teacher oracle); "
                    "frame " +
                    std::to_string(k) + " of " + seq.manifest.name +
                    " is unlabeled");
        const std::uint64_t base_seed = opt.seed.value_or(seq.manifest.seed);

        std::vector<Tensor> teacher;
        for (std::size_t k = 0; k < seq.frames.size(); ++k)
            teacher.push_back(make_teacher_logits(
                seq.labels.at(k), classes, opt.teacher_margin, opt.corruption,
                mix_seed(mix_seed(base_seed, 0x7ea), k)));

        const fs::path out_dir = opt.out / seq.manifest.name / "teacher";
        fs::create_directories(out_dir);
        for (std::size_t pair = 0; pair + 1 < seq.frames.size(); ++pair) {
            const FlowField& flow_pq = seq.flows_fwd.at(pair); // p -> q
            const FlowField& flow_qp = seq.flows_bwd.at(pair); // q -> p
            // Align the q->p flow onto the current grid for the pointwise
            // forward/backward check.
            auto [bwd_on_q, valid] = warp_flow(flow_qp.uv, flow_pq, 0.0f);
            (void)valid;
            const Tensor m_occ =
                occlusion_mask_fb(flow_pq, FlowField(std::move(bwd_on_q)));
            auto [tc_q, tc_p] = teacher_blend(teacher[pair + 1], teacher[pair],
                                              flow_qp, flow_pq, m_occ);
            tensor_write(out_dir / teacher_name(pair, "tcq"), tc_q);
            tensor_write(out_dir / teacher_name(pair, "tcp"), tc_p);
        }
        log << "distill-prep: " << seq.manifest.name << " -> "
            << out_dir.string() << "\n";
    }
}

std::size_t run_gradcheck(const GradcheckOptions& opt, std::ostream& log) {
    const auto reports = run_gradcheck_suite(opt.seed, opt.instances, opt.epsilon);
    std::size_t failures = 0;
    for (const auto& r : reports) {
        const bool ok = r.pass(opt.tolerance);
        if (!ok) ++failures;
        log << (ok ? "[PASS] " : "[FAIL] ") << r.name
            << " max_rel_err=" << r.max_rel_err << " (" << r.checked
            << " gradients)";
        if (!ok)
            log << " worst: analytic=" << r.analytic << " numeric=" << r.numeric;
        log << "\n";
    }
    return failures;
}

void run_bench(const BenchOptions& opt, std::ostream& log) {
    const Checkpoint ckpt = checkpoint_load(opt.ckpt);
    const auto dirs = discover_sequences(opt.data);
    const LoadedSequence seq = sequence_load(dirs.front());
    if (seq.frames.size() < 2)
        throw DataError("bench needs a sequence with at least 2 frames");

    std::vector<Tensor> feats, logits;
    std::vector<std::optional<Homography>> homs;
    for (std::size_t k = 0; k < seq.frames.size(); ++k) {
        feats.push_back(surrogate_features(seq.frames[k]));
        logits.push_back(surrogate_logits(seq.frames[k], ckpt.head, opt.noise,
                                          mix_seed(seq.manifest.seed, k)));
        homs.push_back(k == 0 ? std::nullopt
                              : pair_homography(seq, k - 1, false));
    }

    PropagatorState state;
    std::vector<double> samples_ms;
    samples_ms.reserve(opt.steps);
    const std::size_t total = opt.warmup + opt.steps;
    std::size_t k = 0;
    for (std::size_t step = 0; step < total; ++step) {
        if (k == seq.frames.size()) {
            state = PropagatorState{};
            k = 0;
        }
        const auto t0 = std::chrono::steady_clock::now();
        (void)video_step(state, logits[k], feats[k], homs[k], ckpt.layer);
        const auto t1 = std::chrono::steady_clock::now();
        if (step >= opt.warmup)
            samples_ms.push_back(
                std::chrono::duration<double, std::milli>(t1 - t0).count());
        ++k;
    }

    double mean = 0;
    for (const double s : samples_ms) mean += s;
    mean /= static_cast<double>(samples_ms.size());
    double var = 0;
    for (const double s : samples_ms) var += (s - mean) * (s - mean);
    var /= static_cast<double>(samples_ms.size());

    log << "bench: video_step over " << samples_ms.size()
        << " steps (after " << opt.warmup << " warmup): mean "
        << fmt6(mean) << " ms, stddev " << fmt6(std::sqrt(var)) << " ms, "
        << fmt6(1000.0 / mean) << " steps/s\n";
}

} // namespace ssp
