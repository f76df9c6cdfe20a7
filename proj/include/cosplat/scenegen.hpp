#pragma once

#include "cosplat/camera.hpp"
#include "cosplat/image.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cosplat {

enum class Shape { Plane, Box, Cylinder, Sphere };

const char *to_string(Shape s);
Shape shape_from_string(std::string_view s);

// Size semantics, all in local coordinates of `pose`:
//   Plane:    half extents (x, y) of a square in the local xy plane; normal +z; size.z unused
//   Box:      half extents along x, y, z
//   Cylinder: radius in size.x, half height along local z in size.z
//   Sphere:   radius in size.x
struct Primitive {
    Shape shape = Shape::Sphere;
    Pose pose;
    Eigen::Vector3d size = Eigen::Vector3d::Ones();
    Eigen::Vector3d albedo = Eigen::Vector3d::Constant(0.5);
};

struct SceneSpec {
    std::uint64_t seed = 0;
    std::vector<Primitive> primitives;
    Eigen::Vector3d background_color{0.55, 0.70, 0.90};

    void validate() const;
};

struct GroundTruthFrame {
    Image image;  // 3 x H x W, linear [0,1]
    Image depth;  // 1 x H x W, view-space z; +inf where the ray escapes
    CameraView view;
};

struct RaytraceOptions {
    // Additive N(0, sigma) corruption of finite depths, emulating a depth estimator.
    double depth_noise_sigma = 0.0;
    std::uint64_t noise_seed = 0;
};

// Presets: "street", "corridor", "open". Deterministic in (seed, preset).
SceneSpec generate_scene(std::uint64_t seed, std::string_view preset);

GroundTruthFrame raytrace(const SceneSpec &scene, const CameraView &view, const RaytraceOptions &opts = {});

std::vector<GroundTruthFrame> render_dataset(const SceneSpec &scene, const Trajectory &traj,
                                             const RaytraceOptions &opts = {});

// Forward drive along world +y at camera height 1.5 m, `spacing` meters between frames.
Trajectory make_drive_trajectory(int frames, const Intrinsics &intrinsics, double spacing = 0.5);

// Shading constants of the reference renderer.
Eigen::Vector3d light_direction();
inline constexpr double kAmbient = 0.35;
inline constexpr double kDiffuse = 0.65;

nlohmann::json to_json(const SceneSpec &scene);
SceneSpec scene_from_json(const nlohmann::json &j);
void save_scene(const std::string &path, const SceneSpec &scene);
SceneSpec load_scene(const std::string &path);

} // namespace cosplat
