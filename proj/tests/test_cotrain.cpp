#include "cosplat/cotrain.hpp"
#include "cosplat/error.hpp"
#include "cosplat/metrics.hpp"

#include "oracle.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace cosplat;

namespace {

struct SmallStreet {
    SceneSpec spec;
    Trajectory traj;
    std::vector<GroundTruthFrame> frames;
    GaussianScene scene;

    explicit SmallStreet(int size = 24, int count = 4) {
        spec = generate_scene(3, "street");
        traj = make_drive_trajectory(count, Intrinsics::centered(size, size));
        frames = render_dataset(spec, traj);
        scene = unproject_init(frames, 3);
    }
};

const SmallStreet &street() {
    static const SmallStreet s;
    return s;
}

CoTrainConfig quick_config() {
    CoTrainConfig cfg;
    cfg.step1_viewpoints_per_round = 2;
    cfg.recon_steps_per_round = 3;
    cfg.gen_steps_per_round = 2;
    cfg.gen_crop = 0;
    cfg.gen_batch_size = 2;
    cfg.refine_sample_steps = 2;
    cfg.seed = 11;
    return cfg;
}

FrozenRefiner identity_refiner() {
    return {[](const GeometryCondition &c, std::uint64_t) { return c.color; }, [] { return std::uint64_t(42); }};
}

double max_param_change(const GaussianScene &a, const GaussianScene &b) {
    return (a.params() - b.params()).cwiseAbs().maxCoeff();
}

RenderOutput random_render(std::mt19937_64 &rng, int h, int w) {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    RenderOutput r{Image(3, h, w), Image(1, h, w), Image(1, h, w)};
    for (Eigen::Index i = 0; i < r.alpha.size(); ++i) {
        r.alpha.data[i] = u(rng);
        r.depth.data[i] = 10.0 * u(rng);
    }
    for (int c = 0; c < 3; ++c) r.color.plane(c) = r.alpha.plane(0) * u(rng);
    return r;
}

} // namespace

TEST(ReconLoss, IdenticalIsZero) {
    std::mt19937_64 rng(1);
    const RenderOutput r = random_render(rng, 16, 16);
    const ReconLoss l = recon_loss(r, r.color, &r.depth, 0.05, 0.01);
    EXPECT_EQ(l.breakdown.mse, 0.0);
    EXPECT_NEAR(l.breakdown.perceptual, 0.0, 1e-12);
    EXPECT_EQ(l.breakdown.depth_l1, 0.0);
    EXPECT_NEAR(l.breakdown.total, 0.0, 1e-12);
}

TEST(ReconLoss, ConstantOffsetAndDecomposition) {
    std::mt19937_64 rng(2);
    const RenderOutput r = random_render(rng, 16, 16);
    Image target = r.color;
    target.data += 0.1;
    Image depth = r.depth;
    depth.data += 0.5;
    const LossBreakdown b = recon_loss(r, target, &depth, 0.05, 0.01).breakdown;
    EXPECT_NEAR(b.mse, 0.01, 1e-12);
    EXPECT_NEAR(b.depth_l1, 0.5, 1e-12);
    EXPECT_NEAR(b.total, b.mse + 0.05 * b.perceptual + 0.01 * b.depth_l1, 1e-9);
    EXPECT_NEAR(b.perceptual, 1.0 - ssim(r.color, target), 1e-12);
}

TEST(ReconLoss, DepthMaskAndMissingDepth) {
    std::mt19937_64 rng(3);
    const RenderOutput r = random_render(rng, 12, 12);
    Image depth = r.depth;
    depth.data += 1.0;
    for (int i = 0; i < 40; ++i) depth.data[i] = kInf;
    for (int i = 40; i < 50; ++i) depth.data[i] = 0.0;
    const ReconLoss l = recon_loss(r, r.color, &depth, 0.05, 0.01);
    EXPECT_NEAR(l.breakdown.depth_l1, 1.0, 1e-12);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(l.grads.depth.data[i], 0.0);
    const ReconLoss none = recon_loss(r, r.color, nullptr, 0.05, 0.01);
    EXPECT_EQ(none.breakdown.depth_l1, 0.0);
    EXPECT_EQ(none.grads.depth.data.abs().maxCoeff(), 0.0);
    depth.data.setConstant(kInf);
    EXPECT_EQ(recon_loss(r, r.color, &depth, 0.05, 0.01).breakdown.depth_l1, 0.0);
}

TEST(ReconLoss, ShapeMismatch) {
    std::mt19937_64 rng(4);
    const RenderOutput r = random_render(rng, 12, 12);
    try {
        recon_loss(r, Image(3, 12, 13), nullptr, 0.05, 0.01);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

TEST(ReconLoss, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(5);
    const RenderOutput r = random_render(rng, 13, 12);
    const RenderOutput t = random_render(rng, 13, 12);
    const Eigen::Vector3d bg(0.3, 0.5, 0.7);
    const ReconLoss l = recon_loss(r, t.color, &t.depth, 0.05, 0.01, bg);
    const auto check = [&](Image RenderOutput::*field, const Image &analytic) {
        const auto f = [&](const Eigen::VectorXd &x) {
            RenderOutput p = r;
            (p.*field).data = x.array();
            return recon_loss(p, t.color, &t.depth, 0.05, 0.01, bg).breakdown.total;
        };
        const Eigen::VectorXd numeric = oracle::finite_difference(f, (r.*field).data.matrix(), 1e-6);
        return oracle::compare_gradients(analytic.data.matrix(), numeric);
    };
    const auto color = check(&RenderOutput::color, l.grads.color);
    const auto alpha = check(&RenderOutput::alpha, l.grads.alpha);
    const auto depth = check(&RenderOutput::depth, l.grads.depth);
    EXPECT_EQ(color.passed, color.considered);
    EXPECT_EQ(alpha.passed, alpha.considered);
    EXPECT_EQ(depth.passed, depth.considered);
    EXPECT_GT(alpha.considered, 0);
}

TEST(EstimateBackground, MeanOfSkyPixels) {
    GroundTruthFrame f{Image(3, 2, 2), Image(1, 2, 2, 1.0), {}};
    f.image.plane(0) << 0.2, 0.4, 0.9, 0.9;
    f.image.plane(1).setConstant(0.5);
    f.image.plane(2) << 0.1, 0.3, 0.0, 0.0;
    f.depth(0, 0, 0) = kInf;
    f.depth(0, 0, 1) = kInf;
    const Eigen::Vector3d bg = estimate_background({f});
    EXPECT_NEAR(bg[0], 0.3, 1e-12);
    EXPECT_NEAR(bg[1], 0.5, 1e-12);
    EXPECT_NEAR(bg[2], 0.2, 1e-12);
    f.depth.data.setConstant(2.0);
    EXPECT_EQ(estimate_background({f}), Eigen::Vector3d::Zero());
}

TEST(SampleOfftrajViews, ZeroRangeCoincidesWithBase) {
    const auto &s = street();
    CoTrainConfig cfg;
    cfg.lateral_range = 0.0;
    cfg.yaw_jitter = 0.0;
    std::mt19937_64 rng(6);
    for (const auto &v : sample_offtraj_views(s.traj, 20, cfg, rng)) {
        const bool found = std::any_of(s.traj.views.begin(), s.traj.views.end(), [&](const CameraView &b) {
            return (b.pose.translation - v.pose.translation).norm() < 1e-12 &&
                   b.pose.rotation.coeffs().isApprox(v.pose.rotation.coeffs(), 1e-12);
        });
        EXPECT_TRUE(found);
    }
}

TEST(SampleOfftrajViews, CoverageAndDeterminism) {
    const auto &s = street();
    CoTrainConfig cfg;
    std::mt19937_64 rng(7), rng2(7);
    const auto views = sample_offtraj_views(s.traj, 100, cfg, rng);
    ASSERT_EQ(views.size(), 100u);
    std::vector<double> offsets;
    for (const auto &v : views) {
        // Drive runs along +y at x = 0; the lateral offset is the x coordinate.
        offsets.push_back(v.pose.translation.x());
        EXPECT_LE(std::abs(v.pose.translation.x()), 4.0 + 1e-12);
        EXPECT_NEAR(v.pose.translation.z(), 1.5, 1e-12);
    }
    const auto [lo, hi] = std::minmax_element(offsets.begin(), offsets.end());
    EXPECT_GE(*hi - *lo, 0.9 * 8.0);
    const auto again = sample_offtraj_views(s.traj, 100, cfg, rng2);
    for (std::size_t i = 0; i < views.size(); ++i) {
        EXPECT_EQ(views[i].pose.translation, again[i].pose.translation);
        EXPECT_EQ(views[i].pose.rotation.coeffs(), again[i].pose.rotation.coeffs());
    }
    EXPECT_THROW(sample_offtraj_views(s.traj, 0, cfg, rng), Error);
    EXPECT_THROW(sample_offtraj_views(Trajectory{}, 3, cfg, rng), Error);
}

TEST(Step1, IdentityRefinerIsAFixedPoint) {
    const auto &s = street();
    CoTrainConfig cfg = quick_config();
    cfg.recon_steps_per_round = 5;
    AdamState adam;
    std::mt19937_64 rng(8);
    const Step1Result r = step1_generation_guided_reconstruction(s.scene, adam, identity_refiner(), s.traj, s.frames,
                                                                 cfg, 0, rng);
    EXPECT_LE(max_param_change(r.scene, s.scene), 1e-6);
    EXPECT_EQ(r.pseudo_labels.size(), std::size_t(cfg.step1_viewpoints_per_round));
    EXPECT_EQ(r.refiner_hash_before, 42u);
    EXPECT_EQ(r.refiner_hash_after, 42u);
    EXPECT_NEAR(r.mean_loss.total, 0.0, 1e-9);
}

TEST(Step1, PseudoLabelsComeFromCurrentRenders) {
    const auto &s = street();
    CoTrainConfig cfg = quick_config();
    cfg.step1_viewpoints_per_round = 3;
    AdamState adam;
    std::mt19937_64 rng(9);
    int calls = 0;
    FrozenRefiner blur{[&](const GeometryCondition &c, std::uint64_t) {
                           ++calls;
                           Image out = c.color;
                           out.data = 0.5 * out.data + 0.25;
                           return out;
                       },
                       [] { return std::uint64_t(7); }};
    const DepthOracle depth = [&](const CameraView &v) -> std::optional<Image> { return raytrace(s.spec, v).depth; };
    const Step1Result r =
        step1_generation_guided_reconstruction(s.scene, adam, blur, s.traj, s.frames, cfg, 2, rng, depth);
    EXPECT_EQ(calls, 3);
    ASSERT_EQ(r.pseudo_labels.size(), 3u);
    for (const auto &p : r.pseudo_labels) {
        EXPECT_EQ(p.round, 2);
        EXPECT_TRUE(p.has_depth);
        EXPECT_EQ(p.source_render_hash, render_hash(rasterize(s.scene, p.view, cfg.tiles)));
    }
    EXPECT_GT(max_param_change(r.scene, s.scene), 0.0);
    EXPECT_NEAR(r.mean_loss.total,
                r.mean_loss.mse + cfg.lambda1 * r.mean_loss.perceptual + cfg.lambda2 * r.mean_loss.depth_l1, 1e-9);
}

TEST(Step1, RecordsRefinerHashAroundTheStep) {
    const auto &s = street();
    std::uint64_t counter = 0;
    FrozenRefiner drifting{identity_refiner().refine, [&] { return counter++; }};
    AdamState adam;
    std::mt19937_64 rng(10);
    const Step1Result r =
        step1_generation_guided_reconstruction(s.scene, adam, drifting, s.traj, s.frames, quick_config(), 0, rng);
    EXPECT_NE(r.refiner_hash_before, r.refiner_hash_after);
}

TEST(Step2, ZeroStepsLeavesRefinerUnchanged) {
    const auto &s = street();
    CoTrainConfig cfg = quick_config();
    cfg.gen_steps_per_round = 0;
    const DenoiserParams p = DenoiserParams::random(12);
    DenoiserOptimizer opt;
    std::mt19937_64 rng(13);
    const NoiseSchedule sched = NoiseSchedule::cosine(200);
    const Step2Result r = step2_reconstruction_guided_generation(s.scene, p, opt, sched, s.traj, s.frames, cfg, rng);
    EXPECT_EQ(r.params.weights, p.weights);
    EXPECT_TRUE(r.losses.empty());
}

TEST(Step2, ConditionsAreRendersOfTheFrozenScene) {
    const auto &s = street();
    const DenoiserParams p = DenoiserParams::random(14);
    DenoiserOptimizer opt;
    std::mt19937_64 rng(15);
    const NoiseSchedule sched = NoiseSchedule::cosine(200);
    const CoTrainConfig cfg = quick_config();
    const Step2Result r = step2_reconstruction_guided_generation(s.scene, p, opt, sched, s.traj, s.frames, cfg, rng);
    EXPECT_EQ(r.condition_scene_hash, scene_hash(s.scene));
    EXPECT_EQ(r.scene_hash_before, r.scene_hash_after);
    EXPECT_EQ(r.scene_hash_before, scene_hash(s.scene));
    ASSERT_EQ(r.losses.size(), std::size_t(cfg.gen_steps_per_round));
    for (double l : r.losses) EXPECT_TRUE(std::isfinite(l));
    EXPECT_NE(r.params.weights, p.weights);

    std::vector<GroundTruthFrame> short_gt(s.frames.begin(), s.frames.end() - 1);
    try {
        step2_reconstruction_guided_generation(s.scene, p, opt, sched, s.traj, short_gt, cfg, rng);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
    }
}

TEST(RunCotraining, ZeroRoundsReturnsInputs) {
    const auto &s = street();
    CoTrainConfig cfg = quick_config();
    cfg.rounds = 0;
    const DenoiserParams p = DenoiserParams::random(16);
    const CoTrainResult r = run_cotraining(s.scene, p, NoiseSchedule::cosine(200), s.traj, s.frames, cfg);
    EXPECT_EQ(scene_hash(r.scene), scene_hash(s.scene));
    EXPECT_EQ(r.refiner.hash(), p.hash());
    EXPECT_TRUE(r.reports.empty());
}

TEST(RunCotraining, ReportsAndDeterminism) {
    const auto &s = street();
    CoTrainConfig cfg = quick_config();
    cfg.rounds = 2;
    const DenoiserParams p = DenoiserParams::random(17);
    const NoiseSchedule sched = NoiseSchedule::cosine(200);
    const std::vector<double> shifts = {0.0, 1.0, -1.0, 2.0, -2.0};
    const ShiftEvalSet eval = ShiftEvalSet::build(s.spec, s.traj, shifts, 2);
    const CoTrainResult a = run_cotraining(s.scene, p, sched, s.traj, s.frames, cfg, &eval);
    const CoTrainResult b = run_cotraining(s.scene, p, sched, s.traj, s.frames, cfg, &eval);
    ASSERT_EQ(a.reports.size(), 2u);
    for (std::size_t i = 0; i < a.reports.size(); ++i) {
        const auto &r = a.reports[i];
        EXPECT_EQ(r.round, int(i));
        EXPECT_EQ(r.pseudo_labels, std::size_t(cfg.step1_viewpoints_per_round));
        EXPECT_TRUE(std::isfinite(r.psnr_0m));
        EXPECT_TRUE(std::isfinite(r.psnr_2m));
        EXPECT_NEAR(r.recon.total, r.recon.mse + cfg.lambda1 * r.recon.perceptual + cfg.lambda2 * r.recon.depth_l1,
                    1e-9);
        EXPECT_EQ(to_json(r).dump(), to_json(b.reports[i]).dump());
        const auto j = to_json(r);
        for (const char *key : {"round", "psnr_0m", "psnr_1m", "psnr_2m", "recon_loss", "gen_loss"})
            EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_EQ(scene_hash(a.scene), scene_hash(b.scene));
    EXPECT_EQ(a.refiner.hash(), b.refiner.hash());
    // Round 1's Step 2 saw the scene that left round 1's Step 1, not the input scene.
    EXPECT_NE(a.reports[1].scene_hash_step2, scene_hash(s.scene));
    EXPECT_EQ(a.reports[1].scene_hash_step2, scene_hash(a.scene));
}

TEST(ShiftEvalSet, PsnrOfPerfectMatchIsInfiniteOnlyForTruth) {
    const auto &s = street();
    const std::vector<double> shifts = {0.0, 2.0, -2.0};
    const ShiftEvalSet eval = ShiftEvalSet::build(s.spec, s.traj, shifts, 2);
    ASSERT_EQ(eval.frames.size(), 3u);
    EXPECT_EQ(eval.frames[0].size(), 2u);
    const double p = eval.mean_psnr(s.scene, 2.0, {}, estimate_background(s.frames));
    EXPECT_TRUE(std::isfinite(p));
    EXPECT_GT(p, 5.0);
}

TEST(CoTrainConfig, Validation) {
    CoTrainConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    cfg.rounds = -1;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.step1_viewpoints_per_round = 0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg = {};
    cfg.lambda1 = -0.1;
    EXPECT_THROW(cfg.validate(), Error);
}
