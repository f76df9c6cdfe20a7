#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <json.hpp>

#include <span>
#include <string>
#include <vector>

namespace cosplat {

inline constexpr double kDefaultNearClip = 0.01;

// Pinhole intrinsics in pixels. Pixel (i, j) has its center at coordinate (i, j).
struct Intrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.5;
    double cy = 0.5;
    int width = 1;
    int height = 1;

    void validate() const;

    // fx = fy = focal_scale * width, principal point at the image center.
    static Intrinsics centered(int width, int height, double focal_scale = 0.7);
};

// Camera-to-world transform. Camera frame: +x right, +y down, +z forward.
struct Pose {
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Matrix3d camera_to_world() const { return rotation.toRotationMatrix(); }
    Eigen::Vector3d right() const { return rotation * Eigen::Vector3d::UnitX(); }
    Eigen::Vector3d forward() const { return rotation * Eigen::Vector3d::UnitZ(); }

    void validate() const;
};

struct CameraView {
    Intrinsics intrinsics;
    Pose pose;
};

struct Trajectory {
    std::vector<CameraView> views;
    std::vector<int> frames;  // strictly increasing frame indices, one per view

    std::size_t size() const { return views.size(); }
    bool empty() const { return views.empty(); }
    void validate() const;
};

struct Projection {
    Eigen::Vector2d pixel;
    double view_depth;
};

template <typename Derived>
Eigen::Vector3d world_to_view(const Eigen::MatrixBase<Derived> &point, const Pose &pose) {
    return pose.rotation.conjugate() * (Eigen::Vector3d(point) - pose.translation);
}

// Throws BehindCamera when the view-space depth is <= near_clip.
Projection project(const Eigen::Vector3d &point, const CameraView &view, double near_clip = kDefaultNearClip);

// World point at view-space depth `view_depth` along the pixel's ray.
Eigen::Vector3d unproject(const Eigen::Vector2d &pixel, double view_depth, const CameraView &view);

// Unit world-space direction of the ray through a pixel.
Eigen::Vector3d pixel_ray(const Eigen::Vector2d &pixel, const CameraView &view);

// Moves the camera center by tau_shift meters along its right axis; rotation untouched.
Pose lateral_shift(const Pose &pose, double tau_shift);

// Rotates the camera about the world up axis (+z) through its own center.
Pose yaw_rotate(const Pose &pose, double degrees);

// Camera at `eye` looking at `target`, with world +z as the up reference.
Pose look_at(const Eigen::Vector3d &eye, const Eigen::Vector3d &target);

std::span<const double> default_eval_shifts();

// One trajectory per shift, each holding every `stride`-th view of `base` shifted laterally.
std::vector<Trajectory> build_eval_trajectories(const Trajectory &base,
                                                std::span<const double> shifts = default_eval_shifts(),
                                                int stride = 2);

nlohmann::json to_json(const Trajectory &traj);
Trajectory trajectory_from_json(const nlohmann::json &j);
void save_trajectory(const std::string &path, const Trajectory &traj);
Trajectory load_trajectory(const std::string &path);

} // namespace cosplat
