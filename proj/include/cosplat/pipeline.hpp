#pragma once

#include "cosplat/cotrain.hpp"
#include "cosplat/error.hpp"
#include "cosplat/metrics.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cosplat {

// Every tunable of the command-line pipeline. Keys in config files and `--set` use the
// dotted names accepted by set_config_value (e.g. `fit.steps = 1000`, or `steps = 1000`
// under a `[fit]` header).
struct RunConfig {
    std::string workdir = ".";
    std::uint64_t seed = 7;

    // scenegen
    std::string preset = "street";
    int frames = 12;
    int width = 64;
    int height = 64;
    double spacing = 0.5;
    double focal_scale = 0.7;
    double depth_noise = 0.0;

    // fit
    int fit_steps = 1000;
    int init_stride = 2;
    double lambda1 = 0.05;
    double lambda2 = 0.01;
    LearningRates lr;

    // refine-train
    int refine_steps = 1500;
    int refine_batch = 4;
    int refine_crop = 32;
    double refine_lr = 1e-3;
    int schedule_steps = 200;
    int condition_channels = kDefaultConditionChannels;
    int degrade_every = 3;                // sparse frame subset used for degraded scenes
    std::vector<int> degrade_steps{50, 200};

    // sampling
    int sample_steps = 20;

    // cotrain
    int rounds = 3;
    int viewpoints = 6;
    int recon_steps = 100;
    int gen_steps = 40;
    double lateral_range = 4.0;
    double yaw_jitter = 5.0;
    int anchor_every = 2;
    bool oracle_depth = true;
    bool dump_pseudo_labels = false;

    // eval
    std::vector<double> shifts{1.0, -1.0, 2.0, -2.0, 4.0, -4.0};
    int eval_stride = 2;
    std::string eval_checkpoint = "auto";  // auto | fit | cotrain
    bool dump_frames = false;

    int tile_size = 16;

    void validate() const;
    nlohmann::json to_json() const;
};

// Applies one key=value assignment; throws InvalidArgument for unknown keys or bad values.
void set_config_value(RunConfig &cfg, const std::string &key, const std::string &value);

// TOML-style subset: `key = value` lines, `[section]` headers, `#` comments, quoted
// strings and `[a, b]` arrays.
void load_config_file(RunConfig &cfg, const std::string &path);

// Relative paths inside a workdir.
namespace paths {
inline constexpr const char *kManifest = "manifest.json";
inline constexpr const char *kScene = "scene.json";
inline constexpr const char *kTrajectory = "trajectory.json";
inline constexpr const char *kGaussians = "gaussians.fggs";
inline constexpr const char *kFitReport = "fit.json";
inline constexpr const char *kRefiner = "refiner.fgdn";
inline constexpr const char *kRefineReport = "refine_train.json";
inline constexpr const char *kCoGaussians = "gaussians_cotrain.fggs";
inline constexpr const char *kCoRefiner = "refiner_cotrain.fgdn";
inline constexpr const char *kRounds = "rounds.jsonl";
inline constexpr const char *kCoReport = "cotrain.json";
inline constexpr const char *kEvalReport = "eval.json";
inline constexpr const char *kSummary = "report.json";
} // namespace paths

// FNV-1a of a file's bytes; IoError if unreadable.
std::uint64_t file_hash(const std::string &path);

struct Dataset {
    SceneSpec scene;
    Trajectory trajectory;
    std::vector<GroundTruthFrame> frames;
    nlohmann::json manifest;
};

// Reads the manifest and every file it lists, verifying hashes. A mismatch raises IoError
// naming the file and the expected hash.
Dataset load_dataset(const std::string &workdir);

TileConfig tiles_for(const RunConfig &cfg);
NoiseSchedule schedule_for(const RunConfig &cfg);
CoTrainConfig cotrain_config(const RunConfig &cfg, const Eigen::Vector3d &background);

// Degraded-render / ground-truth pairs: renders of `fitted` at every frame, plus renders of
// scenes initialized from every `degrade_every`-th frame and optimized for each count in
// `degrade_steps`.
std::vector<TrainingPair> build_refiner_pairs(const std::vector<GroundTruthFrame> &frames,
                                              const GaussianScene *fitted, const RunConfig &cfg,
                                              const Eigen::Vector3d &background, std::uint64_t seed);

nlohmann::json cmd_scenegen(const RunConfig &cfg);
nlohmann::json cmd_fit(const RunConfig &cfg);
nlohmann::json cmd_refine_train(const RunConfig &cfg);
nlohmann::json cmd_cotrain(const RunConfig &cfg);
nlohmann::json cmd_eval(const RunConfig &cfg);
nlohmann::json cmd_report(const RunConfig &cfg);

// Exit code for an error: 2 bad arguments, 3 I/O or data failure, 4 numerical failure.
int exit_code(ErrorCode code);

} // namespace cosplat
