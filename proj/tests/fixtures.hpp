#pragma once

#include "cosplat/camera.hpp"
#include "cosplat/gaussians.hpp"

#include <cmath>
#include <random>

namespace fixtures {

inline cosplat::CameraView forward_view(int width, int height) {
    return {cosplat::Intrinsics::centered(width, height), cosplat::look_at({0, 0, 1.5}, {0, 10, 1.5})};
}

struct RandomSceneOptions {
    int count = 100;
    double min_depth = 2.0;
    double max_depth = 12.0;
    double min_log_scale = std::log(0.03);
    double max_log_scale = std::log(0.6);
    double opacity_logit_range = 4.0;
};

// Gaussians scattered inside the view frustum of `view`.
inline cosplat::GaussianScene random_scene(std::mt19937_64 &rng, const cosplat::CameraView &view,
                                           const RandomSceneOptions &opt = {}) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto &k = view.intrinsics;
    cosplat::GaussianScene scene;
    for (int i = 0; i < opt.count; ++i) {
        cosplat::Gaussian3D g;
        const double depth = opt.min_depth + (opt.max_depth - opt.min_depth) * u(rng);
        const Eigen::Vector2d pixel(-0.2 * k.width + 1.4 * k.width * u(rng), -0.2 * k.height + 1.4 * k.height * u(rng));
        g.position = cosplat::unproject(pixel, depth, view);
        g.opacity_logit = opt.opacity_logit_range * (2.0 * u(rng) - 1.0);
        for (int a = 0; a < 3; ++a)
            g.log_scale[a] = opt.min_log_scale + (opt.max_log_scale - opt.min_log_scale) * u(rng);
        g.rotation = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
        g.color_logit = {2 * n(rng), 2 * n(rng), 2 * n(rng)};
        scene.gaussians.push_back(g);
    }
    return scene;
}

} // namespace fixtures
