#include "cosplat/cotrain.hpp"

#include "cosplat/error.hpp"
#include "cosplat/hash.hpp"
#include "cosplat/metrics.hpp"

#include <cmath>

namespace cosplat {

void CoTrainConfig::validate() const {
    if (rounds < 0 || step1_viewpoints_per_round < 1 || recon_steps_per_round < 0 || gen_steps_per_round < 0)
        throw Error(ErrorCode::InvalidArgument, "co-training counts out of range");
    if (lambda1 < 0 || lambda2 < 0) throw Error(ErrorCode::InvalidArgument, "loss weights must be >= 0");
    if (lateral_range < 0 || yaw_jitter < 0) throw Error(ErrorCode::InvalidArgument, "sampling ranges must be >= 0");
}

ReconLoss recon_loss(const RenderOutput &render, const Image &target_image, const Image *target_depth,
                     double lambda1, double lambda2, const Eigen::Vector3d &background) {
    require_same_shape(render.color, target_image, "recon_loss image");
    if (target_depth) require_same_shape(render.depth, *target_depth, "recon_loss depth");
    const int h = render.color.height, w = render.color.width;

    ReconLoss out;
    out.grads = RenderGradients::zeros(h, w);
    const Image shown = composite(render, background);

    const Eigen::ArrayXd diff = shown.data - target_image.data;
    out.breakdown.mse = diff.square().mean();
    Eigen::ArrayXd g_image = (2.0 / double(diff.size())) * diff;

    if (lambda1 != 0.0) {
        const SsimGradient s = ssim_with_gradient(shown, target_image);
        out.breakdown.perceptual = 1.0 - s.value;
        g_image -= lambda1 * s.grad.data;
    } else {
        out.breakdown.perceptual = 1.0 - ssim(shown, target_image);
    }

    if (target_depth) {
        Eigen::Index valid = 0;
        double sum = 0.0;
        for (Eigen::Index i = 0; i < render.depth.size(); ++i) {
            const double t = target_depth->data[i];
            if (std::isfinite(t) && t > 0) {
                ++valid;
                sum += std::abs(render.depth.data[i] - t);
            }
        }
        if (valid > 0) {
            out.breakdown.depth_l1 = sum / double(valid);
            for (Eigen::Index i = 0; i < render.depth.size(); ++i) {
                const double t = target_depth->data[i];
                if (!(std::isfinite(t) && t > 0)) continue;
                const double d = render.depth.data[i] - t;
                out.grads.depth.data[i] = lambda2 * double((d > 0) - (d < 0)) / double(valid);
            }
        }
    }
    out.breakdown.total = out.breakdown.mse + lambda1 * out.breakdown.perceptual + lambda2 * out.breakdown.depth_l1;

    out.grads.color.data = g_image;
    for (int c = 0; c < 3; ++c) out.grads.alpha.plane(0) -= background[c] * out.grads.color.plane(c);
    return out;
}

Eigen::Vector3d estimate_background(const std::vector<GroundTruthFrame> &frames) {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    double n = 0;
    for (const auto &f : frames)
        for (int y = 0; y < f.depth.height; ++y)
            for (int x = 0; x < f.depth.width; ++x) {
                const double d = f.depth(0, y, x);
                if (std::isfinite(d) && d > 0) continue;
                sum += Eigen::Vector3d(f.image(0, y, x), f.image(1, y, x), f.image(2, y, x));
                n += 1;
            }
    return n > 0 ? Eigen::Vector3d(sum / n) : Eigen::Vector3d::Zero();
}

std::vector<CameraView> sample_offtraj_views(const Trajectory &base, int n, const CoTrainConfig &cfg,
                                             std::mt19937_64 &rng) {
    if (base.empty()) throw Error(ErrorCode::EmptyTrajectory, "sample_offtraj_views");
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "n must be >= 1");
    std::uniform_int_distribution<std::size_t> pick(0, base.size() - 1);
    std::uniform_real_distribution<double> offset(-cfg.lateral_range, cfg.lateral_range);
    std::uniform_real_distribution<double> yaw(-cfg.yaw_jitter, cfg.yaw_jitter);
    std::vector<CameraView> views;
    views.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) {
        CameraView v = base.views[pick(rng)];
        const double tau = offset(rng);
        const double deg = yaw(rng);
        v.pose = lateral_shift(v.pose, tau);
        if (deg != 0.0) v.pose = yaw_rotate(v.pose, deg);
        views.push_back(v);
    }
    return views;
}

FrozenRefiner make_frozen_refiner(const DenoiserParams &params, const NoiseSchedule &sched, int sample_steps) {
    return {[&params, &sched, sample_steps](const GeometryCondition &cond, std::uint64_t seed) {
                return refine(cond, params, sched, sample_steps, seed);
            },
            [&params] { return params.hash(); }};
}

namespace {

LossBreakdown &operator+=(LossBreakdown &a, const LossBreakdown &b) {
    a.mse += b.mse;
    a.perceptual += b.perceptual;
    a.depth_l1 += b.depth_l1;
    a.total += b.total;
    return a;
}

LossBreakdown scaled(LossBreakdown a, double s) {
    a.mse *= s;
    a.perceptual *= s;
    a.depth_l1 *= s;
    a.total *= s;
    return a;
}

LossBreakdown descend(GaussianScene &scene, AdamState &adam, const CameraView &view, const Image &target,
                      const Image *depth, double lambda1, double lambda2, const LearningRates &lr,
                      const TileConfig &tiles, const Eigen::Vector3d &background) {
    const RenderOutput render = rasterize(scene, view, tiles);
    const ReconLoss loss = recon_loss(render, target, depth, lambda1, depth ? lambda2 : 0.0, background);
    if (!std::isfinite(loss.breakdown.total)) throw Error(ErrorCode::NumericalError, "non-finite recon loss");
    const ParamGradients g = rasterize_backward(scene, view, tiles, loss.grads);
    scene = apply_gradients(scene, g, adam, lr);
    return loss.breakdown;
}

} // namespace

std::vector<double> fit_scene(GaussianScene &scene, AdamState &adam, const std::vector<GroundTruthFrame> &frames,
                              int steps, const LearningRates &lr, double lambda1, double lambda2,
                              const TileConfig &tiles, const Eigen::Vector3d &background, std::mt19937_64 &rng) {
    if (frames.empty()) throw Error(ErrorCode::InvalidArgument, "fit_scene needs frames");
    std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
    std::vector<double> curve;
    curve.reserve(std::size_t(std::max(steps, 0)));
    for (int s = 0; s < steps; ++s) {
        const auto &f = frames[pick(rng)];
        curve.push_back(descend(scene, adam, f.view, f.image, &f.depth, lambda1, lambda2, lr, tiles, background).total);
    }
    return curve;
}

Step1Result step1_generation_guided_reconstruction(const GaussianScene &scene, AdamState &adam,
                                                   const FrozenRefiner &frozen_refiner, const Trajectory &base,
                                                   const std::vector<GroundTruthFrame> &gt, const CoTrainConfig &cfg,
                                                   int round, std::mt19937_64 &rng, const DepthOracle &depth_oracle) {
    Step1Result out;
    out.scene = scene;
    out.refiner_hash_before = frozen_refiner.hash();

    const auto views = sample_offtraj_views(base, cfg.step1_viewpoints_per_round, cfg, rng);
    std::vector<std::optional<Image>> depths;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const RenderOutput render = rasterize(scene, views[i], cfg.tiles);
        PseudoLabel label;
        label.view = views[i];
        label.round = round;
        label.refine_seed = derive_seed(cfg.seed, "pseudo-label/" + std::to_string(round) + "/" + std::to_string(i));
        label.source_render_hash = render_hash(render);
        label.image = frozen_refiner.refine(render, label.refine_seed);
        depths.push_back(depth_oracle ? depth_oracle(views[i]) : std::nullopt);
        label.has_depth = depths.back().has_value();
        out.pseudo_labels.push_back(std::move(label));
    }

    std::uniform_int_distribution<std::size_t> pick_gt(0, gt.empty() ? 0 : gt.size() - 1);
    int pseudo_steps = 0;
    for (int s = 0; s < cfg.recon_steps_per_round; ++s) {
        if (cfg.anchor_every > 0 && !gt.empty() && (s + 1) % cfg.anchor_every == 0) {
            const auto &f = gt[pick_gt(rng)];
            descend(out.scene, adam, f.view, f.image, &f.depth, cfg.lambda1, cfg.lambda2, cfg.recon_lr, cfg.tiles,
                    cfg.background);
            continue;
        }
        const std::size_t k = std::size_t(s) % out.pseudo_labels.size();
        const auto &label = out.pseudo_labels[k];
        const Image *depth = depths[k] ? &*depths[k] : nullptr;
        out.mean_loss += descend(out.scene, adam, label.view, label.image, depth, cfg.lambda1, cfg.lambda2,
                                 cfg.recon_lr, cfg.tiles, cfg.background);
        ++pseudo_steps;
    }
    if (pseudo_steps > 0) out.mean_loss = scaled(out.mean_loss, 1.0 / pseudo_steps);
    out.refiner_hash_after = frozen_refiner.hash();
    return out;
}

Step2Result step2_reconstruction_guided_generation(const GaussianScene &frozen_scene, const DenoiserParams &params,
                                                   DenoiserOptimizer &opt, const NoiseSchedule &sched,
                                                   const Trajectory &base, const std::vector<GroundTruthFrame> &gt,
                                                   const CoTrainConfig &cfg, std::mt19937_64 &rng) {
    if (gt.size() != base.size()) throw Error(ErrorCode::LengthMismatch, "ground truth does not match trajectory");
    Step2Result out{params, {}, 0, scene_hash(frozen_scene), 0};
    if (cfg.gen_steps_per_round > 0) {
        out.condition_scene_hash = scene_hash(frozen_scene);
        std::vector<TrainingPair> pairs;
        pairs.reserve(base.size());
        for (std::size_t i = 0; i < base.size(); ++i)
            pairs.push_back({rasterize(frozen_scene, base.views[i], cfg.tiles), gt[i].image});
        RefinerTrainConfig tc;
        tc.steps = cfg.gen_steps_per_round;
        tc.batch_size = cfg.gen_batch_size;
        tc.crop = cfg.gen_crop;
        tc.lr = cfg.gen_lr;
        tc.seed = rng();
        out.losses = train_refiner(pairs, out.params, sched, opt, tc);
    }
    out.scene_hash_after = scene_hash(frozen_scene);
    return out;
}

ShiftEvalSet ShiftEvalSet::build(const SceneSpec &scene, const Trajectory &base, std::span<const double> shifts,
                                 int stride) {
    ShiftEvalSet set;
    set.shifts.assign(shifts.begin(), shifts.end());
    for (const auto &traj : build_eval_trajectories(base, shifts, stride)) set.frames.push_back(render_dataset(scene, traj));
    return set;
}

double ShiftEvalSet::mean_psnr(const GaussianScene &scene, double magnitude, const TileConfig &tiles,
                               const Eigen::Vector3d &background) const {
    double sum = 0.0;
    int n = 0;
    for (std::size_t s = 0; s < shifts.size(); ++s) {
        if (std::abs(std::abs(shifts[s]) - magnitude) > 1e-12) continue;
        for (const auto &f : frames[s]) {
            sum += psnr(composite(rasterize(scene, f.view, tiles), background), f.image);
            ++n;
        }
    }
    return n > 0 ? sum / n : std::nan("");
}

nlohmann::json to_json(const RoundReport &r) {
    return {{"round", r.round},
            {"psnr_0m", metric_value(r.psnr_0m)},
            {"psnr_1m", metric_value(r.psnr_1m)},
            {"psnr_2m", metric_value(r.psnr_2m)},
            {"recon_loss",
             {{"mse", r.recon.mse}, {"perceptual", r.recon.perceptual}, {"depth", r.recon.depth_l1},
              {"total", r.recon.total}}},
            {"gen_loss", r.gen_loss},
            {"refiner_hash_step1", hex64(r.refiner_hash_step1)},
            {"scene_hash_step2", hex64(r.scene_hash_step2)},
            {"pseudo_labels", r.pseudo_labels}};
}

CoTrainResult run_cotraining(const GaussianScene &scene, const DenoiserParams &refiner, const NoiseSchedule &sched,
                             const Trajectory &base, const std::vector<GroundTruthFrame> &gt,
                             const CoTrainConfig &cfg, const ShiftEvalSet *eval, const DepthOracle &depth_oracle) {
    cfg.validate();
    CoTrainResult out{scene, refiner, {}, {}};
    std::mt19937_64 rng(cfg.seed);
    AdamState adam;
    DenoiserOptimizer opt;
    opt.lr = cfg.gen_lr;

    for (int round = 0; round < cfg.rounds; ++round) {
        RoundReport report;
        report.round = round;

        // Step 1: refiner frozen, scene mutable.
        const FrozenRefiner frozen = make_frozen_refiner(out.refiner, sched, cfg.refine_sample_steps);
        Step1Result s1 = step1_generation_guided_reconstruction(out.scene, adam, frozen, base, gt, cfg, round, rng,
                                                                depth_oracle);
        if (s1.refiner_hash_before != s1.refiner_hash_after)
            throw Error(ErrorCode::NumericalError, "refiner changed during Step 1");
        out.scene = std::move(s1.scene);
        report.recon = s1.mean_loss;
        report.refiner_hash_step1 = s1.refiner_hash_before;
        report.pseudo_labels = s1.pseudo_labels.size();
        out.last_pseudo_labels = std::move(s1.pseudo_labels);

        // Step 2: scene frozen, refiner mutable; conditions come from the scene Step 1 produced.
        Step2Result s2 = step2_reconstruction_guided_generation(out.scene, out.refiner, opt, sched, base, gt, cfg, rng);
        if (s2.scene_hash_before != s2.scene_hash_after)
            throw Error(ErrorCode::NumericalError, "scene changed during Step 2");
        out.refiner = std::move(s2.params);
        report.scene_hash_step2 = s2.scene_hash_before;
        if (!s2.losses.empty()) {
            double sum = 0.0;
            for (double l : s2.losses) sum += l;
            report.gen_loss = sum / double(s2.losses.size());
        }

        if (eval) {
            report.psnr_0m = eval->mean_psnr(out.scene, 0.0, cfg.tiles, cfg.background);
            report.psnr_1m = eval->mean_psnr(out.scene, 1.0, cfg.tiles, cfg.background);
            report.psnr_2m = eval->mean_psnr(out.scene, 2.0, cfg.tiles, cfg.background);
        } else {
            report.psnr_0m = report.psnr_1m = report.psnr_2m = std::nan("");
        }
        out.reports.push_back(report);
    }
    return out;
}

} // namespace cosplat
