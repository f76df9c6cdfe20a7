// Forward/backward throughput of the tiled rasterizer on a random scene.
#include "cosplat/rasterizer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <random>

using namespace cosplat;

int main(int argc, char **argv) {
    CLI::App app{"rasterizer throughput"};
    int count = 5000, width = 256, height = 144, reps = 20;
    std::uint64_t seed = 1;
    app.add_option("--gaussians", count);
    app.add_option("--width", width);
    app.add_option("--height", height);
    app.add_option("--reps", reps);
    app.add_option("--seed", seed);
    CLI11_PARSE(app, argc, argv);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    GaussianScene scene;
    for (int i = 0; i < count; ++i) {
        Gaussian3D g;
        g.position = {6.0 * u(rng), 4.0 + 12.0 * (u(rng) + 1.0), 1.5 + 2.0 * u(rng)};
        g.opacity_logit = u(rng);
        g.log_scale = Eigen::Vector3d::Constant(std::log(0.08)) + 0.5 * Eigen::Vector3d(u(rng), u(rng), u(rng));
        g.rotation = Eigen::Quaterniond(1.0, u(rng), u(rng), u(rng)).normalized();
        g.color_logit = {u(rng), u(rng), u(rng)};
        scene.gaussians.push_back(g);
    }
    const CameraView view{Intrinsics::centered(width, height), look_at({0, 0, 1.5}, {0, 1, 1.5})};
    const TileConfig tiles;

    using clock = std::chrono::steady_clock;
    RenderOutput out;
    auto t0 = clock::now();
    for (int r = 0; r < reps; ++r) out = rasterize(scene, view, tiles);
    auto t1 = clock::now();
    RenderGradients up = RenderGradients::zeros(height, width);
    up.color.data.setConstant(1.0);
    for (int r = 0; r < reps; ++r) rasterize_backward(scene, view, tiles, up);
    auto t2 = clock::now();

    const double fwd = std::chrono::duration<double>(t1 - t0).count() / reps;
    const double bwd = std::chrono::duration<double>(t2 - t1).count() / reps;
    std::printf("gaussians=%d resolution=%dx%d forward_ms=%.2f backward_ms=%.2f fps=%.1f mean_alpha=%.3f\n", count,
                width, height, 1e3 * fwd, 1e3 * bwd, 1.0 / fwd, out.alpha.data.mean());
    return 0;
}
