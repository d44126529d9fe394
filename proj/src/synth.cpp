#include "ssp/synth.hpp"

#include <algorithm>
#include <cmath>

#include "ssp/ops.hpp"

namespace ssp {

void SceneConfig::validate() const {
    if (classes < 2) throw ContractError("scene needs at least 2 classes");
    if (width < 32 || height < 32) throw ContractError("scene dims must be >= 32");
    if (width % 4 != 0 || height % 4 != 0)
        throw ContractError("scene dims must be divisible by 4");
    if (!(altitude > 0)) throw ContractError("altitude must be positive");
    if (frames < 1) throw ContractError("scene needs at least 1 frame");
    if (regions < 1) throw ContractError("scene needs at least 1 region");
    if (sprites > 0 &&
        2.0 * sprite_radius_px >= static_cast<double>(std::min(width, height)))
        throw ContractError("sprites larger than the frame");
    if (annotate_every < 1) throw ContractError("annotate_every must be >= 1");
}

namespace {

struct Rgb {
    double r, g, b;
};

/// Fixed class palette: a stable function of (class, C) only, so the same
/// class always renders the same color across seeds and sequences.
Rgb class_color(std::size_t cls, std::size_t classes) {
    const double hue = static_cast<double>(cls) / static_cast<double>(classes);
    const double s = 0.65, v = 0.55 + 0.35 * ((cls % 2) ? 1.0 : 0.0);
    const double h6 = hue * 6.0;
    const int sector = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

double hash01(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
    const std::uint64_t h = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(ix)),
                                     static_cast<std::uint64_t>(iy));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Continuous value noise over world coordinates: hashed lattice values with
/// smoothstep interpolation. Smoothness matters — the warp-consistency
/// oracle compares bilinear resamples of neighboring frames.
double value_noise(std::uint64_t seed, double x, double y, double scale) {
    const double fx = x / scale, fy = y / scale;
    const auto ix = static_cast<std::int64_t>(std::floor(fx));
    const auto iy = static_cast<std::int64_t>(std::floor(fy));
    const double tx = smoothstep(fx - std::floor(fx));
    const double ty = smoothstep(fy - std::floor(fy));
    const double v00 = hash01(seed, ix, iy);
    const double v10 = hash01(seed, ix + 1, iy);
    const double v01 = hash01(seed, ix, iy + 1);
    const double v11 = hash01(seed, ix + 1, iy + 1);
    return (v00 * (1 - tx) + v10 * tx) * (1 - ty) +
           (v01 * (1 - tx) + v11 * tx) * ty;
}

struct RegionSite {
    double x, y;
    std::size_t cls;
};

struct Sprite {
    Vec3 start;     // world position of the center at frame 0 (z = 0)
    Vec3 velocity;  // world units per frame (z = 0)
    double radius;  // world units
    std::size_t cls;

    Vec3 center(std::size_t frame) const {
        return start + static_cast<double>(frame) * velocity;
    }
};

struct Scene {
    SceneConfig config;
    std::vector<CameraPose> poses;
    std::vector<RegionSite> sites;
    std::vector<Sprite> sprites;
    std::uint64_t texture_seed;

    std::size_t ground_class(double x, double y) const {
        double best = std::numeric_limits<double>::infinity();
        std::size_t cls = 0;
        for (const auto& s : sites) {
            const double d = (s.x - x) * (s.x - x) + (s.y - y) * (s.y - y);
            if (d < best) {
                best = d;
                cls = s.cls;
            }
        }
        return cls;
    }

    /// Topmost sprite covering the world point at this frame, or npos.
    std::size_t sprite_at(double x, double y, std::size_t frame) const {
        for (std::size_t i = sprites.size(); i-- > 0;) {
            const Vec3 c = sprites[i].center(frame);
            const double d = (c.x - x) * (c.x - x) + (c.y - y) * (c.y - y);
            if (d <= sprites[i].radius * sprites[i].radius) return i;
        }
        return static_cast<std::size_t>(-1);
    }

    Rgb shade(std::size_t cls, double x, double y) const {
        const Rgb base = class_color(cls, config.classes);
        const double n =
            0.08 * (value_noise(texture_seed, x, y, 1.5) - 0.5) * 2.0;
        return {std::clamp(base.r + n, 0.0, 1.0), std::clamp(base.g + n, 0.0, 1.0),
                std::clamp(base.b + n, 0.0, 1.0)};
    }
};

CameraPose make_pose(const SceneConfig& cfg, const Vec3& position, double yaw) {
    CameraPose pose;
    // Downward-looking camera: x_cam sweeps with yaw, z_cam points at the
    // ground. Rows of R are the camera axes in world coordinates.
    const double c = std::cos(yaw), s = std::sin(yaw);
    pose.rotation(0, 0) = c;
    pose.rotation(0, 1) = s;
    pose.rotation(0, 2) = 0;
    pose.rotation(1, 0) = s;
    pose.rotation(1, 1) = -c;
    pose.rotation(1, 2) = 0;
    pose.rotation(2, 0) = 0;
    pose.rotation(2, 1) = 0;
    pose.rotation(2, 2) = -1;
    const Vec3 rc = pose.rotation * position;
    pose.translation = {-rc.x, -rc.y, -rc.z};
    pose.fx = cfg.focal;
    pose.fy = cfg.focal;
    pose.cx = (static_cast<double>(cfg.width) - 1.0) / 2.0;
    pose.cy = (static_cast<double>(cfg.height) - 1.0) / 2.0;
    pose.plane_normal = {0, 0, 1};
    pose.plane_distance = position.z;
    return pose;
}

} // namespace

SyntheticSequence generate_sequence(const SceneConfig& config) {
    config.validate();
    Rng rng(config.seed);

    Scene scene;
    scene.config = config;
    scene.texture_seed = mix_seed(config.seed, 0x7e57);

    // Camera trajectory: persistent drift plus per-frame jitter and yaw walk.
    const double drift_dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    double yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Vec3 position{0, 0, config.altitude};
    scene.poses.reserve(config.frames);
    scene.poses.push_back(make_pose(config, position, yaw));
    for (std::size_t k = 1; k < config.frames; ++k) {
        position.x += config.base_speed * std::cos(drift_dir) +
                      rng.uniform(-config.jitter, config.jitter);
        position.y += config.base_speed * std::sin(drift_dir) +
                      rng.uniform(-config.jitter, config.jitter);
        yaw += rng.uniform(-config.max_yaw_rate, config.max_yaw_rate);
        scene.poses.push_back(make_pose(config, position, yaw));
    }

    // Ground footprint over the whole trajectory, padded, seeds the regions.
    double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
    bool first = true;
    for (const auto& pose : scene.poses)
        for (const double px : {0.0, static_cast<double>(config.width) - 1.0})
            for (const double py : {0.0, static_cast<double>(config.height) - 1.0}) {
                const Vec3 g = pose.ground_point(px, py);
                if (first) {
                    min_x = max_x = g.x;
                    min_y = max_y = g.y;
                    first = false;
                } else {
                    min_x = std::min(min_x, g.x);
                    max_x = std::max(max_x, g.x);
                    min_y = std::min(min_y, g.y);
                    max_y = std::max(max_y, g.y);
                }
            }
    const double margin =
        2.0 + config.sprite_radius_px * config.altitude / config.focal;
    min_x -= margin;
    max_x += margin;
    min_y -= margin;
    max_y += margin;

    scene.sites.reserve(config.regions);
    for (std::size_t i = 0; i < config.regions; ++i)
        scene.sites.push_back({rng.uniform(min_x, max_x), rng.uniform(min_y, max_y),
                               rng.bounded(config.classes)});

    const double w2p = config.altitude / config.focal; // world units per pixel
    for (std::size_t i = 0; i < config.sprites; ++i) {
        Sprite s;
        const Vec3 g0 = scene.poses.front().ground_point(
            rng.uniform(0.15, 0.85) * static_cast<double>(config.width - 1),
            rng.uniform(0.15, 0.85) * static_cast<double>(config.height - 1));
        s.start = {g0.x, g0.y, 0};
        const double speed_px =
            rng.uniform(config.sprite_speed_min, config.sprite_speed_max);
        const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
        s.velocity = {speed_px * w2p * std::cos(dir), speed_px * w2p * std::sin(dir),
                      0};
        s.radius = config.sprite_radius_px * w2p;
        s.cls = rng.bounded(config.classes);
        scene.sprites.push_back(s);
    }

    SyntheticSequence seq;
    seq.config = config;
    seq.poses = scene.poses;

    for (std::size_t k = 0; k < config.frames; ++k) {
        Tensor frame = Tensor::chw(3, config.height, config.width, Tag::image);
        LabelMap labels(config.height, config.width);
        Rng noise_rng(mix_seed(config.seed, 0xf00d + k));
        for (std::size_t y = 0; y < config.height; ++y)
            for (std::size_t x = 0; x < config.width; ++x) {
                const Vec3 g = scene.poses[k].ground_point(
                    static_cast<double>(x), static_cast<double>(y));
                const std::size_t sp = scene.sprite_at(g.x, g.y, k);
                const std::size_t cls =
                    sp == static_cast<std::size_t>(-1) ? scene.ground_class(g.x, g.y)
                                                       : scene.sprites[sp].cls;
                Rgb col = scene.shade(cls, g.x, g.y);
                if (sp != static_cast<std::size_t>(-1)) {
                    // Sprites render slightly brighter than ground texture.
                    col.r = std::clamp(col.r + 0.10, 0.0, 1.0);
                    col.g = std::clamp(col.g + 0.10, 0.0, 1.0);
                    col.b = std::clamp(col.b + 0.10, 0.0, 1.0);
                }
                if (config.noise > 0) {
                    col.r = std::clamp(col.r + config.noise * noise_rng.normal(), 0.0, 1.0);
                    col.g = std::clamp(col.g + config.noise * noise_rng.normal(), 0.0, 1.0);
                    col.b = std::clamp(col.b + config.noise * noise_rng.normal(), 0.0, 1.0);
                }
                frame.at(0, y, x) = static_cast<float>(col.r);
                frame.at(1, y, x) = static_cast<float>(col.g);
                frame.at(2, y, x) = static_cast<float>(col.b);
                labels.at(y, x) = static_cast<std::int32_t>(cls);
            }
        seq.frames.push_back(std::move(frame));
        seq.labels.push_back(std::move(labels));
        if (k % config.annotate_every == 0) seq.annotated.push_back(k);
    }

    // Exact pairwise ground truth. Flows point from the grid frame to the
    // other frame: at a target pixel, the vector gives the source-frame
    // position of the scene point visible there.
    for (std::size_t k = 1; k < config.frames; ++k) {
        seq.homographies.push_back(
            pose_to_homography(scene.poses[k - 1], scene.poses[k]));

        FlowField fwd = FlowField::zeros(config.height, config.width);
        FlowField bwd = FlowField::zeros(config.height, config.width);
        for (std::size_t y = 0; y < config.height; ++y)
            for (std::size_t x = 0; x < config.width; ++x) {
                // fwd = W_{(k-1)->k}, stored on frame k's grid.
                {
                    const Vec3 g = scene.poses[k].ground_point(
                        static_cast<double>(x), static_cast<double>(y));
                    const std::size_t sp = scene.sprite_at(g.x, g.y, k);
                    const Vec3 src_world =
                        sp == static_cast<std::size_t>(-1)
                            ? g
                            : g - scene.sprites[sp].velocity;
                    const Vec2 src = scene.poses[k - 1].project(src_world);
                    fwd.u(y, x) = static_cast<float>(src.x - static_cast<double>(x));
                    fwd.v(y, x) = static_cast<float>(src.y - static_cast<double>(y));
                }
                // bwd = W_{k->(k-1)}, stored on frame k-1's grid.
                {
                    const Vec3 g = scene.poses[k - 1].ground_point(
                        static_cast<double>(x), static_cast<double>(y));
                    const std::size_t sp = scene.sprite_at(g.x, g.y, k - 1);
                    const Vec3 src_world =
                        sp == static_cast<std::size_t>(-1)
                            ? g
                            : g + scene.sprites[sp].velocity;
                    const Vec2 src = scene.poses[k].project(src_world);
                    bwd.u(y, x) = static_cast<float>(src.x - static_cast<double>(x));
                    bwd.v(y, x) = static_cast<float>(src.y - static_cast<double>(y));
                }
            }
        seq.flows_fwd.push_back(std::move(fwd));
        seq.flows_bwd.push_back(std::move(bwd));
    }
    return seq;
}

Tensor surrogate_features(const Tensor& frame) {
    if (frame.rank() != 3 || frame.channels() != 3)
        throw ContractError("surrogate_features expects a 3 x H x W image");
    if (frame.height() % 4 != 0 || frame.width() % 4 != 0)
        throw ContractError("surrogate_features needs dims divisible by 4");
    const std::size_t fh = frame.height() / 4;
    const std::size_t fw = frame.width() / 4;
    Tensor out = Tensor::chw(8, fh, fw, Tag::feature);
    for (std::size_t by = 0; by < fh; ++by)
        for (std::size_t bx = 0; bx < fw; ++bx) {
            double mean[3] = {0, 0, 0};
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t dy = 0; dy < 4; ++dy)
                    for (std::size_t dx = 0; dx < 4; ++dx)
                        mean[c] += frame.at(c, by * 4 + dy, bx * 4 + dx);
                mean[c] /= 16.0;
            }
            double var[3] = {0, 0, 0};
            for (std::size_t c = 0; c < 3; ++c) {
                for (std::size_t dy = 0; dy < 4; ++dy)
                    for (std::size_t dx = 0; dx < 4; ++dx) {
                        const double d =
                            frame.at(c, by * 4 + dy, bx * 4 + dx) - mean[c];
                        var[c] += d * d;
                    }
                var[c] /= 16.0;
            }
            // Luminance gradients from in-block forward differences.
            double lum[4][4];
            for (std::size_t dy = 0; dy < 4; ++dy)
                for (std::size_t dx = 0; dx < 4; ++dx)
                    lum[dy][dx] = (frame.at(0, by * 4 + dy, bx * 4 + dx) +
                                   frame.at(1, by * 4 + dy, bx * 4 + dx) +
                                   frame.at(2, by * 4 + dy, bx * 4 + dx)) /
                                  3.0;
            double gh = 0, gv = 0;
            for (std::size_t dy = 0; dy < 4; ++dy)
                for (std::size_t dx = 0; dx + 1 < 4; ++dx)
                    gh += std::abs(lum[dy][dx + 1] - lum[dy][dx]);
            for (std::size_t dy = 0; dy + 1 < 4; ++dy)
                for (std::size_t dx = 0; dx < 4; ++dx)
                    gv += std::abs(lum[dy + 1][dx] - lum[dy][dx]);
            gh /= 12.0;
            gv /= 12.0;

            for (std::size_t c = 0; c < 3; ++c) {
                out.at(c, by, bx) = static_cast<float>(mean[c]);
                out.at(3 + c, by, bx) = static_cast<float>(std::sqrt(var[c]));
            }
            out.at(6, by, bx) = static_cast<float>(gh);
            out.at(7, by, bx) = static_cast<float>(gv);
        }
    return out;
}

Tensor surrogate_logits(const Tensor& frame, const LinearHead& head,
                        double noise_level, std::uint64_t noise_seed) {
    const Tensor feat = surrogate_features(frame);
    const Tensor up = bilinear_resize(feat, frame.height(), frame.width());
    const Tensor std_feat = standardize_features(up, head);
    Tensor logits = head_linear(head, std_feat);
    if (noise_level > 0) {
        Rng rng(noise_seed);
        for (std::size_t i = 0; i < logits.size(); ++i)
            logits[i] += static_cast<float>(noise_level * rng.normal());
    }
    return logits;
}

void set_head_stats(LinearHead& head, std::span<const Tensor> frames) {
    if (frames.empty()) throw ContractError("head stats need at least one frame");
    const std::size_t F = head.in_features;
    std::vector<double> mu(F, 0.0), var(F, 0.0);
    std::size_t count = 0;
    std::vector<Tensor> feats;
    feats.reserve(frames.size());
    for (const auto& f : frames) {
        const Tensor s4 = surrogate_features(f);
        feats.push_back(bilinear_resize(s4, f.height(), f.width()));
    }
    for (const auto& ft : feats) {
        if (ft.channels() != F)
            throw ContractError("head stats feature channel mismatch");
        for (std::size_t c = 0; c < F; ++c)
            for (std::size_t y = 0; y < ft.height(); ++y)
                for (std::size_t x = 0; x < ft.width(); ++x) {
                    mu[c] += ft.at(c, y, x);
                    if (c == 0) ++count;
                }
    }
    for (std::size_t c = 0; c < F; ++c) mu[c] /= static_cast<double>(count);
    for (const auto& ft : feats)
        for (std::size_t c = 0; c < F; ++c)
            for (std::size_t y = 0; y < ft.height(); ++y)
                for (std::size_t x = 0; x < ft.width(); ++x) {
                    const double d = ft.at(c, y, x) - mu[c];
                    var[c] += d * d;
                }
    for (std::size_t c = 0; c < F; ++c) {
        head.mu[c] = static_cast<float>(mu[c]);
        head.sigma[c] = static_cast<float>(
            std::max(std::sqrt(var[c] / static_cast<double>(count)), 1e-3));
    }
}

LinearHead fit_linear_head(std::span<const Tensor> frames,
                           std::span<const LabelMap> labels,
                           std::size_t classes, const HeadFitConfig& config) {
    if (frames.empty() || frames.size() != labels.size())
        throw ContractError("head fit needs matching frames and labels");

    constexpr std::size_t F = 8;
    std::vector<Tensor> feats;
    feats.reserve(frames.size());
    for (const auto& f : frames) {
        const Tensor s4 = surrogate_features(f);
        feats.push_back(bilinear_resize(s4, f.height(), f.width()));
    }

    LinearHead head;
    head.in_features = F;
    head.classes = classes;
    head.weight.assign(classes * F, 0.0f);
    head.bias.assign(classes, 0.0f);
    head.mu.assign(F, 0.0f);
    head.sigma.assign(F, 1.0f);
    set_head_stats(head, frames);

    // Seeded pixel subsample.
    struct Example {
        float f[F];
        std::int32_t label;
    };
    std::vector<Example> pool;
    for (std::size_t i = 0; i < feats.size(); ++i) {
        const auto& ft = feats[i];
        for (std::size_t y = 0; y < ft.height(); ++y)
            for (std::size_t x = 0; x < ft.width(); ++x) {
                const std::int32_t lab = labels[i].at(y, x);
                if (lab < 0 || lab >= static_cast<std::int32_t>(classes)) continue;
                Example e;
                for (std::size_t c = 0; c < F; ++c)
                    e.f[c] = (ft.at(c, y, x) - head.mu[c]) / head.sigma[c];
                e.label = lab;
                pool.push_back(e);
            }
    }
    if (pool.empty()) throw ContractError("head fit found no labeled pixels");
    Rng rng(config.seed);
    rng.shuffle(pool.begin(), pool.end());
    if (pool.size() > config.sample_budget) pool.resize(config.sample_budget);

    // Full-batch multinomial logistic regression.
    std::vector<double> W(classes * F, 0.0);
    std::vector<double> B(classes, 0.0);
    std::vector<double> probs(classes);
    std::vector<double> gw(classes * F), gb(classes);
    const double inv_n = 1.0 / static_cast<double>(pool.size());
    for (std::size_t it = 0; it < config.iterations; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (const auto& e : pool) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < classes; ++c) {
                double z = B[c];
                for (std::size_t k = 0; k < F; ++k) z += W[c * F + k] * e.f[k];
                probs[c] = z;
                m = std::max(m, z);
            }
            double denom = 0;
            for (std::size_t c = 0; c < classes; ++c) {
                probs[c] = std::exp(probs[c] - m);
                denom += probs[c];
            }
            for (std::size_t c = 0; c < classes; ++c) {
                const double g =
                    probs[c] / denom -
                    (static_cast<std::int32_t>(c) == e.label ? 1.0 : 0.0);
                gb[c] += g;
                for (std::size_t k = 0; k < F; ++k) gw[c * F + k] += g * e.f[k];
            }
        }
        for (std::size_t i = 0; i < W.size(); ++i) W[i] -= config.lr * inv_n * gw[i];
        for (std::size_t c = 0; c < classes; ++c) B[c] -= config.lr * inv_n * gb[c];
    }
    for (std::size_t i = 0; i < W.size(); ++i)
        head.weight[i] = static_cast<float>(W[i]);
    for (std::size_t c = 0; c < classes; ++c)
        head.bias[c] = static_cast<float>(B[c]);
    return head;
}

Tensor make_teacher_logits(const LabelMap& labels, std::size_t classes,
                           double margin, double corruption_rate,
                           std::uint64_t seed) {
    if (!(margin > 0)) throw ContractError("teacher margin must be positive");
    if (!(corruption_rate >= 0 && corruption_rate < 1))
        throw ContractError("teacher corruption rate must be in [0, 1)");
    Tensor out = Tensor::chw(classes, labels.height, labels.width, Tag::logits);
    Rng rng(seed);
    for (std::size_t y = 0; y < labels.height; ++y)
        for (std::size_t x = 0; x < labels.width; ++x) {
            std::int32_t cls = labels.at(y, x);
            if (cls < 0 || cls >= static_cast<std::int32_t>(classes))
                throw ContractError("teacher label out of range");
            if (corruption_rate > 0 && rng.uniform() < corruption_rate) {
                // flip to a seeded-random *other* class
                const std::uint64_t off = 1 + rng.bounded(classes - 1);
                cls = static_cast<std::int32_t>(
                    (static_cast<std::uint64_t>(cls) + off) % classes);
            }
            out.at(static_cast<std::size_t>(cls), y, x) =
                static_cast<float>(margin);
        }
    return out;
}

} // namespace ssp
