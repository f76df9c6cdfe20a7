#include "cosplat/error.hpp"
#include "cosplat/scenegen.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>

using namespace cosplat;

namespace {

CameraView view_at(const Eigen::Vector3d &eye, const Eigen::Vector3d &target, int size = 32) {
    return {Intrinsics::centered(size, size), look_at(eye, target)};
}

SceneSpec plane_only() {
    SceneSpec s;
    Primitive p;
    p.shape = Shape::Plane;
    p.size = {1000, 1000, 1};
    p.albedo = {0.5, 0.5, 0.5};
    s.primitives.push_back(p);
    return s;
}

SceneSpec single_sphere(const Eigen::Vector3d &center, double radius) {
    SceneSpec s;
    Primitive p;
    p.shape = Shape::Sphere;
    p.size = Eigen::Vector3d::Constant(radius);
    p.pose.translation = center;
    p.albedo = {0.8, 0.2, 0.1};
    s.primitives.push_back(p);
    return s;
}

int count_shape(const SceneSpec &s, Shape shape) {
    int n = 0;
    for (const auto &p : s.primitives) n += p.shape == shape;
    return n;
}

} // namespace

TEST(GenerateScene, DeterministicForSeedAndPreset) {
    for (const char *preset : {"street", "corridor", "open"}) {
        const auto a = to_json(generate_scene(7, preset)).dump();
        const auto b = to_json(generate_scene(7, preset)).dump();
        EXPECT_EQ(a, b) << preset;
        EXPECT_NE(a, to_json(generate_scene(8, preset)).dump()) << preset;
    }
}

TEST(GenerateScene, StreetCompositionBounds) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const SceneSpec s = generate_scene(seed, "street");
        EXPECT_GE(s.primitives.size(), 7u);
        EXPECT_LE(s.primitives.size(), 19u);
        EXPECT_EQ(count_shape(s, Shape::Plane), 1);
        const int boxes = count_shape(s, Shape::Box), poles = count_shape(s, Shape::Cylinder);
        EXPECT_GE(boxes, 4);
        EXPECT_LE(boxes, 12);
        EXPECT_GE(poles, 2);
        EXPECT_LE(poles, 6);
        EXPECT_NO_THROW(s.validate());
    }
}

TEST(GenerateScene, OpenIsOnePlanePlusSpheres) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const SceneSpec s = generate_scene(seed, "open");
        EXPECT_EQ(count_shape(s, Shape::Plane), 1);
        EXPECT_EQ(count_shape(s, Shape::Sphere), int(s.primitives.size()) - 1);
        EXPECT_GE(s.primitives.size(), 2u);
    }
}

TEST(GenerateScene, UnknownPreset) {
    try {
        generate_scene(1, "desert");
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownPreset);
    }
}

TEST(Raytrace, PlaneFromAboveMatchesClosedForm) {
    // Camera 3 m above the plane, looking straight down (slightly tilted so look_at is defined).
    const double height = 3.0;
    const CameraView view = view_at({0, 0, height}, {0, 0.3, 0});
    const auto f = raytrace(plane_only(), view);
    const Eigen::Vector3d fwd = view.pose.forward();
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const auto &k = view.intrinsics;
            const Eigen::Vector3d cam((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
            const Eigen::Vector3d dir = (view.pose.rotation * cam).normalized();
            ASSERT_LT(dir.z(), 0.0);
            const double range = height / -dir.z();  // height / cos(angle to the vertical)
            EXPECT_NEAR(f.depth(0, y, x), range * dir.dot(fwd), 1e-9);
            // The stored view-space depth times the ray length per unit depth recovers the range.
            EXPECT_NEAR(f.depth(0, y, x) * cam.norm(), range, 1e-9);
        }
}

TEST(Raytrace, MissGivesBackgroundAndInfiniteDepth) {
    const SceneSpec s = single_sphere({0, 5, 0}, 1.0);
    const auto f = raytrace(s, view_at({0, 0, 0}, {0, -1, 0}));
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            EXPECT_TRUE(std::isinf(f.depth(0, y, x)));
            for (int c = 0; c < 3; ++c) EXPECT_EQ(f.image(c, y, x), s.background_color[c]);
        }
}

TEST(Raytrace, SphereOnAxisCentralDepth) {
    const SceneSpec s = single_sphere({0, 5, 0}, 1.0);
    const auto f = raytrace(s, view_at({0, 0, 0}, {0, 1, 0}));
    EXPECT_NEAR(f.depth(0, 16, 16), 4.0, 1e-12);
}

TEST(Raytrace, DeterministicAndDepthConsistentWithImage) {
    const SceneSpec s = generate_scene(3, "street");
    const CameraView v = view_at({0, 0, 1.5}, {0, 10, 1.5}, 48);
    const auto a = raytrace(s, v);
    const auto b = raytrace(s, v);
    EXPECT_EQ(content_hash(a.image), content_hash(b.image));
    EXPECT_EQ(content_hash(a.depth), content_hash(b.depth));
    int sky = 0;
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
            const double d = a.depth(0, y, x);
            if (std::isinf(d)) {
                ++sky;
                for (int c = 0; c < 3; ++c) EXPECT_EQ(a.image(c, y, x), s.background_color[c]);
            } else {
                EXPECT_GT(d, 0.0);
                for (int c = 0; c < 3; ++c) {
                    EXPECT_GE(a.image(c, y, x), 0.0);
                    EXPECT_LE(a.image(c, y, x), 1.0);
                }
            }
        }
    EXPECT_GT(sky, 0);
    EXPECT_LT(sky, 48 * 48);
}

TEST(Raytrace, MovingBackIncreasesOnAxisDepth) {
    const SceneSpec s = single_sphere({0, 10, 1}, 1.5);
    for (double d : {0.5, 1.0, 3.25}) {
        const auto near = raytrace(s, view_at({0, 0, 1}, {0, 1, 1}));
        const auto far = raytrace(s, view_at({0, -d, 1}, {0, 1, 1}));
        EXPECT_NEAR(far.depth(0, 16, 16) - near.depth(0, 16, 16), d, 1e-6);
    }
}

TEST(Raytrace, BoxAndCylinderFaces) {
    SceneSpec s;
    Primitive box;
    box.shape = Shape::Box;
    box.size = {1, 1, 1};
    box.pose.translation = {0, 6, 0};
    s.primitives.push_back(box);
    EXPECT_NEAR(raytrace(s, view_at({0, 0, 0}, {0, 1, 0})).depth(0, 16, 16), 5.0, 1e-12);

    SceneSpec c;
    Primitive cyl;
    cyl.shape = Shape::Cylinder;
    cyl.size = {0.5, 0.5, 2.0};
    cyl.pose.translation = {0, 4, 0};
    c.primitives.push_back(cyl);
    EXPECT_NEAR(raytrace(c, view_at({0, 0, 0}, {0, 1, 0})).depth(0, 16, 16), 3.5, 1e-12);
    // Looking down the axis hits the cap.
    EXPECT_NEAR(raytrace(c, view_at({0, 4, 5}, {0, 4.0001, 0})).depth(0, 16, 16), 3.0, 1e-6);
}

TEST(Raytrace, LambertShadingOfLitPlane) {
    const auto f = raytrace(plane_only(), view_at({0, 0, 2}, {0, 3, 0}));
    const double expected = 0.5 * (kAmbient + kDiffuse * light_direction().z());
    EXPECT_NEAR(f.image(0, 20, 16), expected, 1e-12);
}

TEST(RenderDataset, OneFramePerViewInOrder) {
    const SceneSpec s = generate_scene(1, "street");
    const Trajectory t = make_drive_trajectory(6, Intrinsics::centered(32, 32));
    const auto frames = render_dataset(s, t);
    ASSERT_EQ(frames.size(), 6u);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        EXPECT_EQ(frames[i].view.pose.translation, t.views[i].pose.translation);
        EXPECT_EQ(content_hash(frames[i].image), content_hash(raytrace(s, t.views[i]).image));
    }
    EXPECT_THROW(render_dataset(s, Trajectory{}), Error);
}

TEST(RenderDataset, ShiftedThenRenderedEqualsRenderedAtShiftedPose) {
    const SceneSpec s = generate_scene(2, "street");
    const Trajectory t = make_drive_trajectory(4, Intrinsics::centered(32, 32));
    const double shift[] = {2.0};
    const auto shifted = build_eval_trajectories(t, shift, 1)[0];
    const auto frames = render_dataset(s, shifted);
    for (std::size_t i = 0; i < t.size(); ++i) {
        CameraView v = t.views[i];
        v.pose = lateral_shift(v.pose, 2.0);
        EXPECT_EQ(content_hash(frames[i].image), content_hash(raytrace(s, v).image));
    }
}

TEST(Raytrace, DepthNoiseIsSeededAndLeavesSkyAlone) {
    const SceneSpec s = generate_scene(4, "street");
    const CameraView v = view_at({0, 0, 1.5}, {0, 10, 1.5});
    const auto clean = raytrace(s, v);
    const auto a = raytrace(s, v, {0.1, 5});
    const auto b = raytrace(s, v, {0.1, 5});
    EXPECT_EQ(content_hash(a.depth), content_hash(b.depth));
    EXPECT_NE(content_hash(a.depth), content_hash(clean.depth));
    for (Eigen::Index i = 0; i < a.depth.size(); ++i)
        if (std::isinf(clean.depth.data[i])) EXPECT_TRUE(std::isinf(a.depth.data[i]));
}

TEST(SceneJson, RoundTrip) {
    const SceneSpec s = generate_scene(9, "street");
    const std::string path = ::testing::TempDir() + "scene_rt.json";
    save_scene(path, s);
    EXPECT_EQ(to_json(load_scene(path)).dump(), to_json(s).dump());
    std::remove(path.c_str());
}

TEST(DriveTrajectory, MovesForwardAtFixedHeight) {
    const Trajectory t = make_drive_trajectory(5, Intrinsics::centered(32, 32), 0.5);
    ASSERT_EQ(t.size(), 5u);
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(t.frames[i], int(i));
        EXPECT_NEAR(t.views[i].pose.translation.y(), 0.5 * double(i), 1e-12);
        EXPECT_NEAR(t.views[i].pose.translation.z(), 1.5, 1e-12);
    }
}
