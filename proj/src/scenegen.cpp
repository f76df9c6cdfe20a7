#include "cosplat/scenegen.hpp"

#include "cosplat/error.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>

namespace cosplat {

namespace {

Eigen::Vector3d vec3(const nlohmann::json &a) {
    return {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()};
}


constexpr double kHitEpsilon = 1e-9;
constexpr double kNoHit = std::numeric_limits<double>::infinity();

struct Hit {
    double t = kNoHit;
    Eigen::Vector3d normal_local;
};

void keep_nearer(Hit &best, double t, const Eigen::Vector3d &n) {
    if (t > kHitEpsilon && t < best.t) {
        best.t = t;
        best.normal_local = n;
    }
}

Hit intersect_plane(const Eigen::Vector3d &o, const Eigen::Vector3d &d, const Eigen::Vector3d &size) {
    Hit h;
    if (std::abs(d.z()) < 1e-15) return h;
    const double t = -o.z() / d.z();
    const Eigen::Vector3d p = o + t * d;
    if (std::abs(p.x()) <= size.x() && std::abs(p.y()) <= size.y())
        keep_nearer(h, t, Eigen::Vector3d(0, 0, d.z() < 0 ? 1.0 : -1.0));
    return h;
}

Hit intersect_box(const Eigen::Vector3d &o, const Eigen::Vector3d &d, const Eigen::Vector3d &half) {
    double t_near = -kNoHit, t_far = kNoHit;
    int axis_near = 0;
    double sign_near = 1.0;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (std::abs(o[a]) > half[a]) return {};
            continue;
        }
        double t0 = (-half[a] - o[a]) / d[a];
        double t1 = (half[a] - o[a]) / d[a];
        double s = -1.0;  // face normal of the entering plane
        if (t0 > t1) {
            std::swap(t0, t1);
            s = 1.0;
        }
        if (t0 > t_near) {
            t_near = t0;
            axis_near = a;
            sign_near = s;
        }
        t_far = std::min(t_far, t1);
    }
    Hit h;
    if (t_near <= t_far) {
        Eigen::Vector3d n = Eigen::Vector3d::Zero();
        n[axis_near] = sign_near;
        keep_nearer(h, t_near, n);
    }
    return h;
}

Hit intersect_cylinder(const Eigen::Vector3d &o, const Eigen::Vector3d &d, const Eigen::Vector3d &size) {
    const double r = size.x(), hh = size.z();
    Hit h;
    const double a = d.x() * d.x() + d.y() * d.y();
    if (a > 1e-15) {
        const double b = 2.0 * (o.x() * d.x() + o.y() * d.y());
        const double c = o.x() * o.x() + o.y() * o.y() - r * r;
        const double disc = b * b - 4 * a * c;
        if (disc >= 0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
                const Eigen::Vector3d p = o + t * d;
                if (std::abs(p.z()) <= hh) {
                    keep_nearer(h, t, Eigen::Vector3d(p.x(), p.y(), 0).normalized());
                    break;
                }
            }
        }
    }
    if (std::abs(d.z()) > 1e-15) {
        for (double zc : {-hh, hh}) {
            const double t = (zc - o.z()) / d.z();
            const Eigen::Vector3d p = o + t * d;
            if (p.x() * p.x() + p.y() * p.y() <= r * r) keep_nearer(h, t, Eigen::Vector3d(0, 0, zc > 0 ? 1 : -1));
        }
    }
    return h;
}

Hit intersect_sphere(const Eigen::Vector3d &o, const Eigen::Vector3d &d, const Eigen::Vector3d &size) {
    const double r = size.x();
    const double b = o.dot(d);
    const double c = o.squaredNorm() - r * r;
    const double disc = b * b - c;
    Hit h;
    if (disc < 0) return h;
    const double sq = std::sqrt(disc);
    for (double t : {-b - sq, -b + sq}) {
        if (t > kHitEpsilon) {
            keep_nearer(h, t, (o + t * d) / r);
            break;
        }
    }
    return h;
}

Hit intersect(const Primitive &prim, const Eigen::Vector3d &origin, const Eigen::Vector3d &dir) {
    const Eigen::Quaterniond inv = prim.pose.rotation.conjugate();
    const Eigen::Vector3d o = inv * (origin - prim.pose.translation);
    const Eigen::Vector3d d = inv * dir;
    switch (prim.shape) {
    case Shape::Plane: return intersect_plane(o, d, prim.size);
    case Shape::Box: return intersect_box(o, d, prim.size);
    case Shape::Cylinder: return intersect_cylinder(o, d, prim.size);
    case Shape::Sphere: return intersect_sphere(o, d, prim.size);
    }
    return {};
}

Eigen::Vector3d random_albedo(std::mt19937_64 &rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    const double r = u(rng), g = u(rng), b = u(rng);
    return {r, g, b};
}

Primitive ground_plane(std::mt19937_64 &rng) {
    Primitive p;
    p.shape = Shape::Plane;
    p.size = {200.0, 200.0, 1.0};
    const double grey = std::uniform_real_distribution<double>(0.35, 0.5)(rng);
    p.albedo = Eigen::Vector3d(grey, grey, grey * 0.95);
    return p;
}

Primitive box_at(const Eigen::Vector3d &center, const Eigen::Vector3d &half, const Eigen::Vector3d &albedo) {
    Primitive p;
    p.shape = Shape::Box;
    p.pose.translation = center;
    p.size = half;
    p.albedo = albedo;
    return p;
}

SceneSpec street(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto count = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

    SceneSpec s;
    s.seed = seed;
    s.primitives.push_back(ground_plane(rng));

    const int buildings = count(4, 12);
    for (int i = 0; i < buildings; ++i) {
        const double side = (i % 2 == 0) ? 1.0 : -1.0;
        const Eigen::Vector3d half(uni(1.5, 3.0), uni(2.0, 5.0), uni(2.0, 6.0));
        const double x = side * (uni(6.5, 9.0) + half.x());
        const double y = uni(-4.0, 40.0);
        s.primitives.push_back(box_at({x, y, half.z()}, half, random_albedo(rng, 0.2, 0.9)));
    }

    const int poles = count(2, 6);
    for (int i = 0; i < poles; ++i) {
        const double side = (i % 2 == 0) ? 1.0 : -1.0;
        Primitive p;
        p.shape = Shape::Cylinder;
        const double half_height = uni(2.0, 3.0);
        p.size = {uni(0.1, 0.15), uni(0.1, 0.15), half_height};
        p.size.y() = p.size.x();
        p.pose.translation = {side * uni(2.5, 3.2), uni(2.0, 30.0), half_height};
        p.albedo = random_albedo(rng, 0.05, 0.35);
        s.primitives.push_back(p);
    }
    return s;
}

SceneSpec corridor(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    SceneSpec s;
    s.seed = seed;
    s.primitives.push_back(ground_plane(rng));
    const double width = uni(5.0, 7.0);
    for (double side : {-1.0, 1.0})
        s.primitives.push_back(
            box_at({side * (width + 0.5), 20.0, 2.0}, {0.5, 30.0, 2.0}, random_albedo(rng, 0.4, 0.9)));
    const int obstacles = std::uniform_int_distribution<int>(2, 6)(rng);
    for (int i = 0; i < obstacles; ++i) {
        const Eigen::Vector3d half(uni(0.3, 0.8), uni(0.3, 0.8), uni(0.3, 1.0));
        const double x = (i % 2 == 0 ? 1.0 : -1.0) * uni(2.5, width - 1.0);
        s.primitives.push_back(box_at({x, uni(3.0, 30.0), half.z()}, half, random_albedo(rng, 0.2, 0.9)));
    }
    return s;
}

SceneSpec open_field(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    SceneSpec s;
    s.seed = seed;
    s.primitives.push_back(ground_plane(rng));
    const int spheres = std::uniform_int_distribution<int>(3, 8)(rng);
    for (int i = 0; i < spheres; ++i) {
        Primitive p;
        p.shape = Shape::Sphere;
        const double r = uni(0.5, 2.0);
        p.size = Eigen::Vector3d::Constant(r);
        p.pose.translation = {(i % 2 == 0 ? 1.0 : -1.0) * uni(4.5, 12.0), uni(5.0, 40.0), r};
        p.albedo = random_albedo(rng, 0.2, 0.9);
        s.primitives.push_back(p);
    }
    return s;
}

} // namespace

const char *to_string(Shape s) {
    switch (s) {
    case Shape::Plane: return "plane";
    case Shape::Box: return "box";
    case Shape::Cylinder: return "cylinder";
    case Shape::Sphere: return "sphere";
    }
    return "?";
}

Shape shape_from_string(std::string_view s) {
    if (s == "plane") return Shape::Plane;
    if (s == "box") return Shape::Box;
    if (s == "cylinder") return Shape::Cylinder;
    if (s == "sphere") return Shape::Sphere;
    throw Error(ErrorCode::InvalidArgument, "unknown shape: " + std::string(s));
}

void SceneSpec::validate() const {
    if (primitives.empty()) throw Error(ErrorCode::InvalidArgument, "scene has no primitives");
    for (const auto &p : primitives) {
        if ((p.size.array() <= 0).any()) throw Error(ErrorCode::InvalidArgument, "primitive size must be > 0");
        if ((p.albedo.array() < 0).any() || (p.albedo.array() > 1).any())
            throw Error(ErrorCode::InvalidArgument, "albedo outside [0,1]");
    }
    if ((background_color.array() < 0).any() || (background_color.array() > 1).any())
        throw Error(ErrorCode::InvalidArgument, "background outside [0,1]");
}

Eigen::Vector3d light_direction() { return Eigen::Vector3d(0.3, -0.4, 0.87).normalized(); }

SceneSpec generate_scene(std::uint64_t seed, std::string_view preset) {
    if (preset == "street") return street(seed);
    if (preset == "corridor") return corridor(seed);
    if (preset == "open") return open_field(seed);
    throw Error(ErrorCode::UnknownPreset, std::string(preset));
}

GroundTruthFrame raytrace(const SceneSpec &scene, const CameraView &view, const RaytraceOptions &opts) {
    const auto &k = view.intrinsics;
    GroundTruthFrame f;
    f.view = view;
    f.image = Image(3, k.height, k.width);
    f.depth = Image(1, k.height, k.width);
    const Eigen::Vector3d light = light_direction();
    const Eigen::Vector3d forward = view.pose.forward();
    const Eigen::Vector3d origin = view.pose.translation;

#pragma omp parallel for schedule(static)
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            const Eigen::Vector3d dir = pixel_ray(Eigen::Vector2d(x, y), view);
            Hit best;
            const Primitive *hit_prim = nullptr;
            for (const auto &prim : scene.primitives) {
                const Hit h = intersect(prim, origin, dir);
                if (h.t < best.t) {
                    best = h;
                    hit_prim = &prim;
                }
            }
            if (!hit_prim) {
                for (int c = 0; c < 3; ++c) f.image(c, y, x) = scene.background_color[c];
                f.depth(0, y, x) = kNoHit;
                continue;
            }
            const Eigen::Vector3d n = hit_prim->pose.rotation * best.normal_local;
            const double shade = kAmbient + kDiffuse * std::max(0.0, n.dot(light));
            for (int c = 0; c < 3; ++c) f.image(c, y, x) = hit_prim->albedo[c] * shade;
            f.depth(0, y, x) = best.t * dir.dot(forward);
        }
    }

    if (opts.depth_noise_sigma > 0) {
        std::mt19937_64 rng(opts.noise_seed);
        std::normal_distribution<double> noise(0.0, opts.depth_noise_sigma);
        for (Eigen::Index i = 0; i < f.depth.size(); ++i) {
            double &d = f.depth.data[i];
            if (std::isfinite(d)) d = std::max(d + noise(rng), 1e-3);
        }
    }
    return f;
}

std::vector<GroundTruthFrame> render_dataset(const SceneSpec &scene, const Trajectory &traj,
                                             const RaytraceOptions &opts) {
    if (traj.empty()) throw Error(ErrorCode::EmptyTrajectory, "render_dataset");
    std::vector<GroundTruthFrame> out;
    out.reserve(traj.size());
    for (std::size_t i = 0; i < traj.size(); ++i) {
        RaytraceOptions o = opts;
        o.noise_seed = opts.noise_seed + i;
        out.push_back(raytrace(scene, traj.views[i], o));
    }
    return out;
}

Trajectory make_drive_trajectory(int frames, const Intrinsics &intrinsics, double spacing) {
    Trajectory t;
    for (int i = 0; i < frames; ++i) {
        const Eigen::Vector3d eye(0.0, i * spacing, 1.5);
        t.views.push_back({intrinsics, look_at(eye, eye + Eigen::Vector3d(0.0, 1.0, 0.0))});
        t.frames.push_back(i);
    }
    return t;
}

nlohmann::json to_json(const SceneSpec &scene) {
    nlohmann::json prims = nlohmann::json::array();
    for (const auto &p : scene.primitives) {
        const auto &q = p.pose.rotation;
        const auto &t = p.pose.translation;
        prims.push_back({{"shape", to_string(p.shape)},
                         {"pose", {{"qw", q.w()}, {"qx", q.x()}, {"qy", q.y()}, {"qz", q.z()},
                                   {"tx", t.x()}, {"ty", t.y()}, {"tz", t.z()}}},
                         {"size", {p.size.x(), p.size.y(), p.size.z()}},
                         {"albedo", {p.albedo.x(), p.albedo.y(), p.albedo.z()}}});
    }
    const auto &bg = scene.background_color;
    return {{"seed", scene.seed}, {"primitives", prims}, {"background_color", {bg.x(), bg.y(), bg.z()}}};
}

SceneSpec scene_from_json(const nlohmann::json &j) {
    SceneSpec s;
    try {
        s.seed = j.at("seed");
        for (const auto &p : j.at("primitives")) {
            Primitive prim;
            prim.shape = shape_from_string(p.at("shape").get<std::string>());
            const auto &pose = p.at("pose");
            prim.pose.rotation = Eigen::Quaterniond(pose.at("qw"), pose.at("qx"), pose.at("qy"), pose.at("qz"));
            prim.pose.translation = Eigen::Vector3d(pose.at("tx").get<double>(), pose.at("ty").get<double>(), pose.at("tz").get<double>());
            prim.size = vec3(p.at("size"));
            prim.albedo = vec3(p.at("albedo"));
            s.primitives.push_back(prim);
        }
        const auto &bg = j.at("background_color");
        s.background_color = vec3(bg);
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::IoError, std::string("malformed scene: ") + e.what());
    }
    s.validate();
    return s;
}

void save_scene(const std::string &path, const SceneSpec &scene) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorCode::IoError, "cannot open for writing: " + path);
    f << to_json(scene).dump(2) << "\n";
}

SceneSpec load_scene(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::IoError, "cannot open for reading: " + path);
    try {
        return scene_from_json(nlohmann::json::parse(f));
    } catch (const nlohmann::json::parse_error &e) {
        throw Error(ErrorCode::IoError, path + ": " + e.what());
    }
}

} // namespace cosplat
