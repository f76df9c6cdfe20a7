#pragma once

#include "cosplat/camera.hpp"
#include "cosplat/gaussians.hpp"
#include "cosplat/rasterizer.hpp"
#include "cosplat/refiner.hpp"
#include "cosplat/scenegen.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

namespace cosplat {

struct CoTrainConfig {
    int rounds = 3;
    int step1_viewpoints_per_round = 6;
    double lateral_range = 4.0;   // meters, offsets ~ U(-range, +range)
    double yaw_jitter = 5.0;      // degrees
    double lambda1 = 0.05;        // perceptual (1 - SSIM)
    double lambda2 = 0.01;        // depth L1
    int recon_steps_per_round = 100;
    int gen_steps_per_round = 40;
    // Every n-th Step 1 update uses a recorded frame instead of a pseudo-label (0 = never).
    int anchor_every = 0;
    int gen_batch_size = 4;
    int gen_crop = 32;
    int refine_sample_steps = 20;
    std::uint64_t seed = 0;
    // Backdrop the raw render is composited over before comparing with targets.
    Eigen::Vector3d background = Eigen::Vector3d::Zero();
    LearningRates recon_lr;
    double gen_lr = 1e-3;
    TileConfig tiles;

    void validate() const;
};

struct LossBreakdown {
    double mse = 0.0;
    double perceptual = 0.0;
    double depth_l1 = 0.0;
    double total = 0.0;
};

struct ReconLoss {
    LossBreakdown breakdown;
    RenderGradients grads;  // d total / d (I_geo, D_geo, A_geo)
};

// mse over RGB + lambda1 (1 - SSIM) + lambda2 mean |D_geo - depth| over pixels where the
// target depth is finite and > 0. Without a target depth the last term is zero.
// The image terms compare composite(render, background) with the target.
ReconLoss recon_loss(const RenderOutput &render, const Image &target_image, const Image *target_depth,
                     double lambda1, double lambda2,
                     const Eigen::Vector3d &background = Eigen::Vector3d::Zero());

// Mean color of the infinite-depth pixels across frames; black if there are none.
Eigen::Vector3d estimate_background(const std::vector<GroundTruthFrame> &frames);

std::vector<CameraView> sample_offtraj_views(const Trajectory &base, int n, const CoTrainConfig &cfg,
                                             std::mt19937_64 &rng);

struct PseudoLabel {
    CameraView view;
    Image image;
    int round = 0;
    std::uint64_t refine_seed = 0;
    std::uint64_t source_render_hash = 0;
    bool has_depth = false;
};

// Frozen generator: maps a geometry condition and a seed to a refined image in [0,1].
using RefineFn = std::function<Image(const GeometryCondition &, std::uint64_t seed)>;

struct FrozenRefiner {
    RefineFn refine;
    std::function<std::uint64_t()> hash;  // checkpoint hash, audited around Step 1
};
// Optional exact depth at arbitrary views (nullopt when unavailable).
using DepthOracle = std::function<std::optional<Image>(const CameraView &)>;

FrozenRefiner make_frozen_refiner(const DenoiserParams &params, const NoiseSchedule &sched, int sample_steps);

// Fits `scene` to recorded frames with recon_loss for `steps` Adam updates, one random
// view per step. Returns the per-step total loss.
std::vector<double> fit_scene(GaussianScene &scene, AdamState &adam, const std::vector<GroundTruthFrame> &frames,
                              int steps, const LearningRates &lr, double lambda1, double lambda2,
                              const TileConfig &tiles, const Eigen::Vector3d &background, std::mt19937_64 &rng);

struct Step1Result {
    GaussianScene scene;
    std::vector<PseudoLabel> pseudo_labels;
    LossBreakdown mean_loss;
    std::uint64_t refiner_hash_before = 0;
    std::uint64_t refiner_hash_after = 0;
};

Step1Result step1_generation_guided_reconstruction(const GaussianScene &scene, AdamState &adam,
                                                   const FrozenRefiner &frozen_refiner, const Trajectory &base,
                                                   const std::vector<GroundTruthFrame> &gt,
                                                   const CoTrainConfig &cfg, int round, std::mt19937_64 &rng,
                                                   const DepthOracle &depth_oracle = {});

struct Step2Result {
    DenoiserParams params;
    std::vector<double> losses;
    std::uint64_t condition_scene_hash = 0;  // scene the conditions were rendered from
    std::uint64_t scene_hash_before = 0;
    std::uint64_t scene_hash_after = 0;
};

Step2Result step2_reconstruction_guided_generation(const GaussianScene &frozen_scene, const DenoiserParams &params,
                                                   DenoiserOptimizer &opt, const NoiseSchedule &sched,
                                                   const Trajectory &base, const std::vector<GroundTruthFrame> &gt,
                                                   const CoTrainConfig &cfg, std::mt19937_64 &rng);

// Ray-traced truth used for per-round PSNR: oracle frames at lateral shifts of the base views.
struct ShiftEvalSet {
    std::vector<double> shifts;
    std::vector<std::vector<GroundTruthFrame>> frames;  // per shift

    static ShiftEvalSet build(const SceneSpec &scene, const Trajectory &base, std::span<const double> shifts,
                              int stride);
    // Mean PSNR of composited renders over all frames at shifts with |shift| == magnitude.
    double mean_psnr(const GaussianScene &scene, double magnitude, const TileConfig &tiles,
                     const Eigen::Vector3d &background) const;
};

struct RoundReport {
    int round = 0;
    double psnr_0m = 0.0;
    double psnr_1m = 0.0;
    double psnr_2m = 0.0;
    LossBreakdown recon;
    double gen_loss = 0.0;
    std::uint64_t refiner_hash_step1 = 0;
    std::uint64_t scene_hash_step2 = 0;
    std::size_t pseudo_labels = 0;
};

nlohmann::json to_json(const RoundReport &r);

struct CoTrainResult {
    GaussianScene scene;
    DenoiserParams refiner;
    std::vector<RoundReport> reports;
    std::vector<PseudoLabel> last_pseudo_labels;
};

// Alternates Step 1 (refiner frozen) and Step 2 (scene frozen) for cfg.rounds rounds.
// Throws NumericalError if either freezing contract is violated.
CoTrainResult run_cotraining(const GaussianScene &scene, const DenoiserParams &refiner, const NoiseSchedule &sched,
                             const Trajectory &base, const std::vector<GroundTruthFrame> &gt,
                             const CoTrainConfig &cfg, const ShiftEvalSet *eval = nullptr,
                             const DepthOracle &depth_oracle = {});

} // namespace cosplat
