#include "cosplat/camera.hpp"

#include "cosplat/error.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

namespace cosplat {

void Intrinsics::validate() const {
    if (!(fx > 0 && fy > 0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
    if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
    if (!(cx > 0 && cx < width && cy > 0 && cy < height))
        throw Error(ErrorCode::InvalidArgument, "principal point outside image");
}

Intrinsics Intrinsics::centered(int width, int height, double focal_scale) {
    Intrinsics k;
    k.fx = k.fy = focal_scale * width;
    k.cx = width / 2.0;
    k.cy = height / 2.0;
    k.width = width;
    k.height = height;
    return k;
}

void Pose::validate() const {
    if (std::abs(rotation.norm() - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "pose rotation not unit");
    if (!translation.allFinite()) throw Error(ErrorCode::InvalidArgument, "pose translation not finite");
}

void Trajectory::validate() const {
    if (views.empty()) throw Error(ErrorCode::EmptyTrajectory, "trajectory has no views");
    if (frames.size() != views.size()) throw Error(ErrorCode::LengthMismatch, "frames/views size mismatch");
    for (std::size_t i = 1; i < frames.size(); ++i)
        if (frames[i] <= frames[i - 1]) throw Error(ErrorCode::InvalidArgument, "frame indices not increasing");
}

Projection project(const Eigen::Vector3d &point, const CameraView &view, double near_clip) {
    const Eigen::Vector3d p = world_to_view(point, view.pose);
    if (p.z() <= near_clip) throw Error(ErrorCode::BehindCamera, "point at view depth " + std::to_string(p.z()));
    const auto &k = view.intrinsics;
    return {Eigen::Vector2d(k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy), p.z()};
}

Eigen::Vector3d unproject(const Eigen::Vector2d &pixel, double view_depth, const CameraView &view) {
    const auto &k = view.intrinsics;
    const Eigen::Vector3d p((pixel.x() - k.cx) / k.fx * view_depth, (pixel.y() - k.cy) / k.fy * view_depth,
                            view_depth);
    return view.pose.rotation * p + view.pose.translation;
}

Eigen::Vector3d pixel_ray(const Eigen::Vector2d &pixel, const CameraView &view) {
    const auto &k = view.intrinsics;
    const Eigen::Vector3d d((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
    return (view.pose.rotation * d).normalized();
}

Pose lateral_shift(const Pose &pose, double tau_shift) {
    Pose out = pose;
    out.translation += tau_shift * pose.right();
    return out;
}

Pose yaw_rotate(const Pose &pose, double degrees) {
    Pose out = pose;
    const double rad = degrees * std::numbers::pi / 180.0;
    out.rotation = (Eigen::AngleAxisd(rad, Eigen::Vector3d::UnitZ()) * pose.rotation).normalized();
    return out;
}

Pose look_at(const Eigen::Vector3d &eye, const Eigen::Vector3d &target) {
    const Eigen::Vector3d fwd = (target - eye).normalized();
    Eigen::Vector3d right = fwd.cross(Eigen::Vector3d::UnitZ());
    if (right.norm() < 1e-9) right = Eigen::Vector3d::UnitX();
    right.normalize();
    const Eigen::Vector3d down = fwd.cross(right);
    Eigen::Matrix3d r;
    r.col(0) = right;
    r.col(1) = down;
    r.col(2) = fwd;
    Pose pose;
    pose.rotation = Eigen::Quaterniond(r).normalized();
    pose.translation = eye;
    return pose;
}

std::span<const double> default_eval_shifts() {
    static constexpr std::array<double, 6> shifts{1.0, -1.0, 2.0, -2.0, 4.0, -4.0};
    return shifts;
}

std::vector<Trajectory> build_eval_trajectories(const Trajectory &base, std::span<const double> shifts,
                                                int stride) {
    if (base.empty()) throw Error(ErrorCode::EmptyTrajectory, "cannot build evaluation trajectories");
    if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
    std::vector<Trajectory> out;
    out.reserve(shifts.size());
    for (double tau : shifts) {
        Trajectory t;
        for (std::size_t i = 0; i < base.size(); i += std::size_t(stride)) {
            CameraView v = base.views[i];
            v.pose = lateral_shift(v.pose, tau);
            t.views.push_back(v);
            t.frames.push_back(base.frames[i]);
        }
        out.push_back(std::move(t));
    }
    return out;
}

nlohmann::json to_json(const Trajectory &traj) {
    nlohmann::json views = nlohmann::json::array();
    for (std::size_t i = 0; i < traj.size(); ++i) {
        const auto &v = traj.views[i];
        const auto &k = v.intrinsics;
        const auto &q = v.pose.rotation;
        const auto &t = v.pose.translation;
        views.push_back({{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width},
                         {"height", k.height}, {"qw", q.w()}, {"qx", q.x()}, {"qy", q.y()}, {"qz", q.z()},
                         {"tx", t.x()}, {"ty", t.y()}, {"tz", t.z()}, {"frame", traj.frames[i]}});
    }
    return {{"views", views}};
}

Trajectory trajectory_from_json(const nlohmann::json &j) {
    Trajectory traj;
    try {
        for (const auto &v : j.at("views")) {
            CameraView view;
            auto &k = view.intrinsics;
            k.fx = v.at("fx");
            k.fy = v.at("fy");
            k.cx = v.at("cx");
            k.cy = v.at("cy");
            k.width = v.at("width");
            k.height = v.at("height");
            view.pose.rotation = Eigen::Quaterniond(v.at("qw"), v.at("qx"), v.at("qy"), v.at("qz"));
            view.pose.translation = Eigen::Vector3d(v.at("tx").get<double>(), v.at("ty").get<double>(), v.at("tz").get<double>());
            k.validate();
            view.pose.validate();
            traj.views.push_back(view);
            traj.frames.push_back(v.at("frame"));
        }
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::IoError, std::string("malformed trajectory: ") + e.what());
    }
    traj.validate();
    return traj;
}

void save_trajectory(const std::string &path, const Trajectory &traj) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorCode::IoError, "cannot open for writing: " + path);
    f << to_json(traj).dump(2) << "\n";
}

Trajectory load_trajectory(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::IoError, "cannot open for reading: " + path);
    try {
        return trajectory_from_json(nlohmann::json::parse(f));
    } catch (const nlohmann::json::parse_error &e) {
        throw Error(ErrorCode::IoError, path + ": " + e.what());
    }
}

} // namespace cosplat
