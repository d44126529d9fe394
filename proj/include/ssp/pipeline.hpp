#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ssp/io.hpp"
#include "ssp/synth.hpp"
#include "ssp/training.hpp"

namespace ssp {

/// Homography for pair (k-1, k) of a loaded sequence: manifest-supplied when
/// present, otherwise estimated by DLT over correspondences sampled from the
/// supplied flows, otherwise identity. no_registration forces identity.
std::optional<Homography> pair_homography(const LoadedSequence& seq,
                                          std::size_t pair_index,
                                          bool no_registration);

/// Deterministic surrogate flicker tensor; matches the noise stream used by
/// surrogate_logits for the same seed.
Tensor surrogate_noise(std::size_t classes, std::size_t h, std::size_t w,
                       double level, std::uint64_t seed);

struct SynthOptions {
    SceneConfig config;
    std::filesystem::path out;
};

/// Scene parameters from a JSON file; unknown keys are rejected, missing
/// keys keep their defaults.
SceneConfig load_scene_config(const std::filesystem::path& path);

void run_synth(const SynthOptions& opt, std::ostream& log);

struct TrainOptions {
    std::filesystem::path data;
    std::string mode = "base"; // base | kd
    double lambda = 0.5;
    double lambda_kd = 135000.0;
    double tau = 2.0;
    bool one_step = false;
    bool no_registration = false;
    std::string similarity = "conv"; // conv | cosine
    std::uint64_t seed = 0;
    std::size_t epochs = 10;
    double lr = 0.2;
    double momentum = 0.9;
    double noise = 1.0; // surrogate flicker level during training
    std::optional<std::filesystem::path> teacher; // defaults to the data dir
    std::filesystem::path out;
};

std::vector<double> run_train(const TrainOptions& opt, std::ostream& log);

struct InferOptions {
    std::filesystem::path data;
    std::filesystem::path ckpt;
    bool no_registration = false;
    bool alpha_zero = false;
    double noise = 1.0;
    std::optional<std::uint64_t> noise_seed; // defaults to the manifest seed
    std::filesystem::path out;
};

void run_infer(const InferOptions& opt, std::ostream& log);

struct EvalOptions {
    std::filesystem::path pred;
    std::filesystem::path data;
    std::optional<std::filesystem::path> out; // JSON report
};

struct VideoEval {
    std::string name;
    bool has_miou = false;
    double miou = 0;
    bool has_tc = false;
    double tc = 0;
    std::size_t pairs = 0;
};

struct EvalReport {
    std::vector<VideoEval> videos;
    double mean_miou = 0;
    double mean_tc = 0;
    std::string text;
    std::string json_text;
};

EvalReport run_eval(const EvalOptions& opt, std::ostream& log);

struct DistillPrepOptions {
    std::filesystem::path data;
    double teacher_margin = 6.0;
    double corruption = 0.0;
    std::optional<std::uint64_t> seed; // defaults to the manifest seed
    std::filesystem::path out;
};

void run_distill_prep(const DistillPrepOptions& opt, std::ostream& log);

struct GradcheckOptions {
    std::uint64_t seed = 0;
    std::size_t instances = 20;
    double epsilon = 1e-3;
    double tolerance = 1e-3;
};

/// Prints one line per check; returns the number of failing checks.
std::size_t run_gradcheck(const GradcheckOptions& opt, std::ostream& log);

struct BenchOptions {
    std::filesystem::path data;
    std::filesystem::path ckpt;
    std::size_t steps = 1000;
    std::size_t warmup = 50;
    double noise = 1.0;
};

void run_bench(const BenchOptions& opt, std::ostream& log);

} // namespace ssp
