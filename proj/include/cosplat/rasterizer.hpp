#pragma once

#include "cosplat/camera.hpp"
#include "cosplat/gaussians.hpp"
#include "cosplat/image.hpp"

#include <vector>

namespace cosplat {

// Added to every projected covariance; keeps footprints at least ~half a pixel wide.
inline constexpr double kLowPassFloor = 0.3;
inline constexpr double kMaxSplatAlpha = 0.99;
inline constexpr double kMinSplatAlpha = 1.0 / 255.0;
inline constexpr double kTerminationTransmittance = 1e-4;

struct TileConfig {
    int tile_size = 16;
    double sigma_cutoff = 3.0;
    double near_clip = kDefaultNearClip;
    // D_geo divided by A_geo where A_geo > 0.
    bool normalize_depth = false;
    // Stop compositing a pixel once transmittance drops below kTerminationTransmittance.
    // Forward-only; rasterize_backward ignores it.
    bool early_termination = false;

    void validate() const;
};

struct SplatProjection {
    Eigen::Vector2d mean2d;
    Eigen::Matrix2d cov2d;   // includes the low-pass floor
    Eigen::Matrix2d conic;   // cov2d^-1
    double view_depth = 0.0;
    double opacity = 0.0;
    Eigen::Vector3d color;
    int source_index = 0;
    // Inclusive pixel bounds of the sigma_cutoff ellipse, clipped to the image.
    int x_min = 0, x_max = -1, y_min = 0, y_max = -1;
};

// Screen-space opacity of a splat at a pixel, zero outside the sigma_cutoff
// ellipse and below kMinSplatAlpha, clamped to kMaxSplatAlpha.
double splat_alpha(const SplatProjection &s, const Eigen::Vector2d &pixel, double sigma_cutoff);

// The geometry condition: color, composited depth, accumulated opacity.
struct RenderOutput {
    Image color;  // 3 x H x W
    Image depth;  // 1 x H x W
    Image alpha;  // 1 x H x W
};
using GeometryCondition = RenderOutput;

// I_geo + (1 - A_geo) * background: the raw render laid over a flat backdrop.
Image composite(const RenderOutput &render, const Eigen::Vector3d &background);

// Content hash over color, depth and opacity.
std::uint64_t render_hash(const RenderOutput &r);

// dL/dI, dL/dD, dL/dA for rasterize_backward.
struct RenderGradients {
    Image color;
    Image depth;
    Image alpha;

    static RenderGradients zeros(int height, int width);
};

// Visible splats in front-to-back order (view depth, then source index).
// Splats whose ellipse misses the image are dropped along with those behind the near plane.
std::vector<SplatProjection> project_splats(const GaussianScene &scene, const CameraView &view,
                                            const TileConfig &cfg = {});

RenderOutput rasterize(const GaussianScene &scene, const CameraView &view, const TileConfig &cfg = {});

ParamGradients rasterize_backward(const GaussianScene &scene, const CameraView &view, const TileConfig &cfg,
                                  const RenderGradients &loss_grads);

} // namespace cosplat
