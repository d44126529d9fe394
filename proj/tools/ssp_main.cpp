#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ssp/pipeline.hpp"

namespace {

// Exit codes: 0 success, 1 usage error, 2 data/format error,
// 3 contract violation.
constexpr int kUsageError = 1;
constexpr int kDataError = 2;
constexpr int kContractError = 3;

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Video semantic segmentation by similarity-weighted "
                 "propagation of per-frame logits, with a synthetic-scene "
                 "oracle for desk-scale verification"};
    app.require_subcommand(1);

    // ---- synth ----
    ssp::SynthOptions synth;
    std::string synth_config_path;
    auto* synth_cmd =
        app.add_subcommand("synth", "Generate a synthetic sequence + manifest");
    synth_cmd->add_option("--config", synth_config_path,
                          "JSON file with scene parameters");
    synth_cmd->add_option("--out", synth.out, "Output sequence directory")
        ->required();
    synth_cmd->add_option("--seed", synth.config.seed, "Scene seed");
    synth_cmd->add_option("--frames", synth.config.frames, "Frame count");
    synth_cmd->add_option("--width", synth.config.width, "Frame width");
    synth_cmd->add_option("--height", synth.config.height, "Frame height");
    synth_cmd->add_option("--classes", synth.config.classes, "Class count");
    synth_cmd->add_option("--regions", synth.config.regions,
                          "Textured ground regions");
    synth_cmd->add_option("--sprites", synth.config.sprites, "Moving sprites");
    synth_cmd->add_option("--noise", synth.config.noise, "Sensor noise std");
    synth_cmd->add_option("--annotate-every", synth.config.annotate_every,
                          "Annotation stride (sparse labels)");

    // ---- train ----
    ssp::TrainOptions train;
    auto* train_cmd = app.add_subcommand("train", "Train the similarity layer");
    train_cmd->add_option("--data", train.data, "Dataset directory")->required();
    train_cmd->add_option("--mode", train.mode, "base | kd")
        ->check(CLI::IsMember({"base", "kd"}));
    train_cmd->add_option("--lambda", train.lambda, "Consistency loss weight");
    train_cmd->add_option("--lambda-kd", train.lambda_kd,
                          "Consistency weight in kd mode");
    train_cmd->add_option("--tau", train.tau, "Distillation temperature");
    train_cmd->add_flag("--one-step", train.one_step,
                        "Train the surrogate head jointly from scratch");
    train_cmd->add_flag("--no-registration", train.no_registration,
                        "Disable homography alignment");
    train_cmd->add_option("--similarity", train.similarity, "conv | cosine")
        ->check(CLI::IsMember({"conv", "cosine"}));
    train_cmd->add_option("--seed", train.seed, "Init + batch ordering seed");
    train_cmd->add_option("--epochs", train.epochs, "Training epochs");
    train_cmd->add_option("--lr", train.lr, "Learning rate");
    train_cmd->add_option("--momentum", train.momentum, "SGD momentum");
    train_cmd->add_option("--noise", train.noise, "Surrogate flicker level");
    std::string train_teacher;
    train_cmd->add_option("--teacher", train_teacher,
                          "Teacher tensor root (defaults to --data)");
    train_cmd->add_option("--out", train.out, "Checkpoint path")->required();

    // ---- infer ----
    ssp::InferOptions infer;
    std::uint64_t infer_noise_seed = 0;
    auto* infer_cmd =
        app.add_subcommand("infer", "Stream video_step over each sequence");
    infer_cmd->add_option("--data", infer.data, "Dataset directory")->required();
    infer_cmd->add_option("--ckpt", infer.ckpt, "Checkpoint path")->required();
    infer_cmd->add_flag("--no-registration", infer.no_registration,
                        "Disable homography alignment");
    infer_cmd->add_flag("--alpha-zero", infer.alpha_zero,
                        "Force alpha = 0 (reduces to the image model)");
    infer_cmd->add_option("--noise", infer.noise, "Surrogate flicker level");
    auto* infer_seed_opt = infer_cmd->add_option(
        "--noise-seed", infer_noise_seed,
        "Flicker seed (defaults to the manifest seed)");
    infer_cmd->add_option("--out", infer.out, "Prediction directory")->required();

    // ---- eval ----
    ssp::EvalOptions eval;
    std::string eval_out;
    auto* eval_cmd = app.add_subcommand(
        "eval", "mIoU on annotated frames + TC over all pairs");
    eval_cmd->add_option("--pred", eval.pred, "Prediction directory")->required();
    eval_cmd->add_option("--data", eval.data, "Dataset directory")->required();
    eval_cmd->add_option("--out", eval_out, "JSON report path");

    // ---- distill-prep ----
    ssp::DistillPrepOptions distill;
    std::uint64_t distill_seed = 0;
    auto* distill_cmd = app.add_subcommand(
        "distill-prep", "Materialize consistent teacher tensors");
    distill_cmd->add_option("--data", distill.data, "Dataset directory")
        ->required();
    distill_cmd->add_option("--teacher-margin", distill.teacher_margin,
                            "Teacher logit margin");
    distill_cmd->add_option("--corruption", distill.corruption,
                            "Teacher label corruption rate");
    auto* distill_seed_opt = distill_cmd->add_option(
        "--seed", distill_seed, "Corruption seed (defaults to manifest seed)");
    distill_cmd->add_option("--out", distill.out, "Output root")->required();

    // ---- gradcheck ----
    ssp::GradcheckOptions gradcheck;
    auto* gradcheck_cmd = app.add_subcommand(
        "gradcheck", "Finite-difference checks of every analytic gradient");
    gradcheck_cmd->add_option("--seed", gradcheck.seed, "Instance seed");
    gradcheck_cmd->add_option("--instances", gradcheck.instances,
                              "Random instances per check");
    gradcheck_cmd->add_option("--epsilon", gradcheck.epsilon, "FD step");
    gradcheck_cmd->add_option("--tolerance", gradcheck.tolerance,
                              "Relative error tolerance");

    // ---- bench ----
    ssp::BenchOptions bench;
    auto* bench_cmd =
        app.add_subcommand("bench", "Wall-clock timing of video_step");
    bench_cmd->add_option("--data", bench.data, "Dataset directory")->required();
    bench_cmd->add_option("--ckpt", bench.ckpt, "Checkpoint path")->required();
    bench_cmd->add_option("--steps", bench.steps, "Timed steps (>= 1000)");
    bench_cmd->add_option("--warmup", bench.warmup, "Warmup steps");
    bench_cmd->add_option("--noise", bench.noise, "Surrogate flicker level");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return kUsageError;
    }

    try {
        if (synth_cmd->parsed()) {
            if (!synth_config_path.empty()) {
                // File values first, explicit flags on top.
                ssp::SceneConfig file = ssp::load_scene_config(synth_config_path);
                if (!synth_cmd->count("--seed")) synth.config.seed = file.seed;
                if (!synth_cmd->count("--frames")) synth.config.frames = file.frames;
                if (!synth_cmd->count("--width")) synth.config.width = file.width;
                if (!synth_cmd->count("--height")) synth.config.height = file.height;
                if (!synth_cmd->count("--classes"))
                    synth.config.classes = file.classes;
                if (!synth_cmd->count("--regions"))
                    synth.config.regions = file.regions;
                if (!synth_cmd->count("--sprites"))
                    synth.config.sprites = file.sprites;
                if (!synth_cmd->count("--noise")) synth.config.noise = file.noise;
                if (!synth_cmd->count("--annotate-every"))
                    synth.config.annotate_every = file.annotate_every;
                synth.config.sprite_speed_min = file.sprite_speed_min;
                synth.config.sprite_speed_max = file.sprite_speed_max;
                synth.config.sprite_radius_px = file.sprite_radius_px;
                synth.config.altitude = file.altitude;
                synth.config.focal = file.focal;
                synth.config.base_speed = file.base_speed;
                synth.config.jitter = file.jitter;
                synth.config.max_yaw_rate = file.max_yaw_rate;
            }
            ssp::run_synth(synth, std::cout);
        } else if (train_cmd->parsed()) {
            if (!train_teacher.empty()) train.teacher = train_teacher;
            ssp::run_train(train, std::cout);
        } else if (infer_cmd->parsed()) {
            if (infer_seed_opt->count()) infer.noise_seed = infer_noise_seed;
            ssp::run_infer(infer, std::cout);
        } else if (eval_cmd->parsed()) {
            if (!eval_out.empty()) eval.out = eval_out;
            ssp::run_eval(eval, std::cout);
        } else if (distill_cmd->parsed()) {
            if (distill_seed_opt->count()) distill.seed = distill_seed;
            ssp::run_distill_prep(distill, std::cout);
        } else if (gradcheck_cmd->parsed()) {
            const std::size_t failures = ssp::run_gradcheck(gradcheck, std::cout);
            if (failures > 0) {
                std::cerr << "gradcheck: " << failures << " check(s) failed\n";
                return kContractError;
            }
        } else if (bench_cmd->parsed()) {
            ssp::run_bench(bench, std::cout);
        }
    } catch (const ssp::ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kContractError;
    } catch (const ssp::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kDataError;
    }
    return 0;
}
