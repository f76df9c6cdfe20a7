#include "cosplat/rasterizer.hpp"

#include "cosplat/error.hpp"
#include "cosplat/hash.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>

namespace cosplat {

void TileConfig::validate() const {
    if (tile_size != 8 && tile_size != 16 && tile_size != 32)
        throw Error(ErrorCode::InvalidArgument, "tile_size must be 8, 16 or 32");
    if (!(sigma_cutoff > 0)) throw Error(ErrorCode::InvalidArgument, "sigma_cutoff must be > 0");
}

std::uint64_t render_hash(const RenderOutput &r) {
    std::uint64_t h = content_hash(r.color);
    h ^= splitmix64(content_hash(r.depth));
    return h ^ splitmix64(content_hash(r.alpha) + 1);
}

Image composite(const RenderOutput &render, const Eigen::Vector3d &background) {
    Image out = render.color;
    for (int c = 0; c < 3; ++c)
        out.plane(c) += (1.0 - render.alpha.plane(0)) * background[c];
    return out;
}

RenderGradients RenderGradients::zeros(int height, int width) {
    return {Image(3, height, width), Image(1, height, width), Image(1, height, width)};
}

double splat_alpha(const SplatProjection &s, const Eigen::Vector2d &pixel, double sigma_cutoff) {
    const Eigen::Vector2d d = pixel - s.mean2d;
    const double maha = d.dot(s.conic * d);
    if (maha > sigma_cutoff * sigma_cutoff) return 0.0;
    const double a = s.opacity * std::exp(-0.5 * maha);
    if (a < kMinSplatAlpha) return 0.0;
    return std::min(a, kMaxSplatAlpha);
}

namespace {

// Intermediate quantities of the EWA projection, shared by forward and backward.
struct ProjectionTerms {
    Eigen::Vector3d view_point;        // t = W (p - C)
    Eigen::Matrix<double, 2, 3> jacobian;
    Eigen::Matrix<double, 2, 3> jw;    // J W
    Eigen::Matrix3d sigma;             // world covariance
};

ProjectionTerms projection_terms(const Gaussian3D &g, const Eigen::Matrix3d &world_to_view,
                                 const Eigen::Vector3d &center, const Intrinsics &k) {
    ProjectionTerms p;
    p.view_point = world_to_view * (g.position - center);
    const double x = p.view_point.x(), y = p.view_point.y(), z = p.view_point.z();
    p.jacobian << k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z);
    p.jw = p.jacobian * world_to_view;
    p.sigma = covariance(g);
    return p;
}

std::optional<SplatProjection> project_one(const Gaussian3D &g, int index, const Eigen::Matrix3d &world_to_view,
                                           const Eigen::Vector3d &center, const Intrinsics &k,
                                           const TileConfig &cfg) {
    const Eigen::Vector3d t = world_to_view * (g.position - center);
    if (t.z() <= cfg.near_clip) return std::nullopt;
    const ProjectionTerms p = projection_terms(g, world_to_view, center, k);

    SplatProjection s;
    s.source_index = index;
    s.view_depth = t.z();
    s.mean2d = {k.fx * t.x() / t.z() + k.cx, k.fy * t.y() / t.z() + k.cy};
    Eigen::Matrix2d cov = p.jw * p.sigma * p.jw.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov.diagonal().array() += kLowPassFloor;
    s.cov2d = cov;
    const double det = cov.determinant();
    s.conic << cov(1, 1) / det, -cov(0, 1) / det, -cov(1, 0) / det, cov(0, 0) / det;
    s.opacity = g.opacity();
    s.color = g.color();

    // Exact bounding box of the cutoff ellipse plus a hair of slack for round-off.
    const double rx = cfg.sigma_cutoff * std::sqrt(cov(0, 0)) + 1e-6;
    const double ry = cfg.sigma_cutoff * std::sqrt(cov(1, 1)) + 1e-6;
    if (!std::isfinite(rx) || !std::isfinite(ry) || !s.mean2d.allFinite()) return std::nullopt;
    s.x_min = std::max(0, int(std::ceil(s.mean2d.x() - rx)));
    s.x_max = std::min(k.width - 1, int(std::floor(s.mean2d.x() + rx)));
    s.y_min = std::max(0, int(std::ceil(s.mean2d.y() - ry)));
    s.y_max = std::min(k.height - 1, int(std::floor(s.mean2d.y() + ry)));
    if (s.x_min > s.x_max || s.y_min > s.y_max) return std::nullopt;
    return s;
}

struct TileGrid {
    int tiles_x = 0;
    int tiles_y = 0;
    int tile_size = 16;
    std::vector<std::vector<int>> lists;  // per tile: indices into the sorted splat list

    int count() const { return tiles_x * tiles_y; }
};

TileGrid bin_splats(const std::vector<SplatProjection> &splats, const Intrinsics &k, int tile_size) {
    TileGrid grid;
    grid.tile_size = tile_size;
    grid.tiles_x = (k.width + tile_size - 1) / tile_size;
    grid.tiles_y = (k.height + tile_size - 1) / tile_size;
    grid.lists.resize(std::size_t(grid.count()));
    for (std::size_t i = 0; i < splats.size(); ++i) {
        const auto &s = splats[i];
        for (int ty = s.y_min / tile_size; ty <= s.y_max / tile_size; ++ty)
            for (int tx = s.x_min / tile_size; tx <= s.x_max / tile_size; ++tx)
                grid.lists[std::size_t(ty * grid.tiles_x + tx)].push_back(int(i));
    }
    return grid;
}

bool covers(const SplatProjection &s, int x, int y) {
    return x >= s.x_min && x <= s.x_max && y >= s.y_min && y <= s.y_max;
}

// Accumulated partials of one splat within one tile, in screen-space terms.
struct ScreenGrad {
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d conic = Eigen::Matrix2d::Zero();  // full-matrix convention
    double opacity = 0.0;
    Eigen::Vector3d color = Eigen::Vector3d::Zero();
    double depth = 0.0;

    ScreenGrad &operator+=(const ScreenGrad &o) {
        mean += o.mean;
        conic += o.conic;
        opacity += o.opacity;
        color += o.color;
        depth += o.depth;
        return *this;
    }
};

struct Contribution {
    int slot;        // position in the tile list
    double alpha;
    double transmittance;  // before this splat
    bool clamped;
    Eigen::Vector2d offset;  // pixel - mean
};

// dR/dq for q = (w, x, y, z) unit, matching Eigen's toRotationMatrix.
std::array<Eigen::Matrix3d, 4> rotation_partials(const Eigen::Quaterniond &q) {
    const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
    std::array<Eigen::Matrix3d, 4> d;
    d[0] << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
    d[1] << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
    d[2] << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
    d[3] << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
    return d;
}

ParamVector chain_to_params(const Gaussian3D &g, const SplatProjection &s, const ScreenGrad &sg,
                            const Eigen::Matrix3d &world_to_view, const Eigen::Vector3d &center,
                            const Intrinsics &k) {
    const ProjectionTerms p = projection_terms(g, world_to_view, center, k);
    const double x = p.view_point.x(), y = p.view_point.y(), z = p.view_point.z();

    // conic = cov2d^-1, cov2d = (J W) Sigma (J W)^T + floor.
    const Eigen::Matrix2d g_cov2d = -s.conic * sg.conic * s.conic;
    const Eigen::Matrix<double, 2, 3> g_jw = 2.0 * g_cov2d * p.jw * p.sigma;
    const Eigen::Matrix3d g_sigma = p.jw.transpose() * g_cov2d * p.jw;
    const Eigen::Matrix<double, 2, 3> g_j = g_jw * world_to_view.transpose();

    Eigen::Vector3d g_t = p.jacobian.transpose() * sg.mean;
    g_t.z() += sg.depth;
    const double z2 = z * z, z3 = z2 * z;
    g_t.z() += g_j(0, 0) * (-k.fx / z2);
    g_t.x() += g_j(0, 2) * (-k.fx / z2);
    g_t.z() += g_j(0, 2) * (2.0 * k.fx * x / z3);
    g_t.z() += g_j(1, 1) * (-k.fy / z2);
    g_t.y() += g_j(1, 2) * (-k.fy / z2);
    g_t.z() += g_j(1, 2) * (2.0 * k.fy * y / z3);

    ParamVector out;
    out.segment<3>(param::kPosition) = world_to_view.transpose() * g_t;

    const double alpha = s.opacity;
    out[param::kOpacity] = sg.opacity * alpha * (1.0 - alpha);

    // Sigma = M M^T with M = R S.
    const double qn = g.rotation.norm();
    const Eigen::Quaterniond qhat = g.rotation.normalized();
    const Eigen::Matrix3d r = qhat.toRotationMatrix();
    const Eigen::Vector3d scale = g.scale();
    const Eigen::Matrix3d m = r * scale.asDiagonal();
    const Eigen::Matrix3d g_m = 2.0 * g_sigma * m;
    for (int a = 0; a < 3; ++a) out[param::kScale + a] = g_m.col(a).dot(r.col(a)) * scale[a];
    const Eigen::Matrix3d g_r = g_m * scale.asDiagonal();
    const auto partials = rotation_partials(qhat);
    Eigen::Vector4d g_qhat;
    for (int i = 0; i < 4; ++i) g_qhat[i] = (g_r.array() * partials[std::size_t(i)].array()).sum();
    const Eigen::Vector4d qv(qhat.w(), qhat.x(), qhat.y(), qhat.z());
    out.segment<4>(param::kRotation) = (g_qhat - qv * qv.dot(g_qhat)) / qn;

    const Eigen::Vector3d c = s.color;
    out.segment<3>(param::kColor) = sg.color.cwiseProduct(c.cwiseProduct(Eigen::Vector3d::Ones() - c));
    return out;
}

void check_view(const CameraView &view) {
    view.intrinsics.validate();
    view.pose.validate();
}

} // namespace

std::vector<SplatProjection> project_splats(const GaussianScene &scene, const CameraView &view,
                                            const TileConfig &cfg) {
    check_view(view);
    const Eigen::Matrix3d w = view.pose.camera_to_world().transpose();
    const Eigen::Vector3d c = view.pose.translation;
    std::vector<std::optional<SplatProjection>> tmp(scene.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(scene.size()); ++i)
        tmp[std::size_t(i)] = project_one(scene.gaussians[std::size_t(i)], int(i), w, c, view.intrinsics, cfg);

    std::vector<SplatProjection> out;
    out.reserve(scene.size());
    for (auto &s : tmp)
        if (s) out.push_back(*s);
    std::sort(out.begin(), out.end(), [](const SplatProjection &a, const SplatProjection &b) {
        return a.view_depth < b.view_depth || (a.view_depth == b.view_depth && a.source_index < b.source_index);
    });
    return out;
}

RenderOutput rasterize(const GaussianScene &scene, const CameraView &view, const TileConfig &cfg) {
    cfg.validate();
    const auto splats = project_splats(scene, view, cfg);
    const auto &k = view.intrinsics;
    const TileGrid grid = bin_splats(splats, k, cfg.tile_size);

    RenderOutput out{Image(3, k.height, k.width), Image(1, k.height, k.width), Image(1, k.height, k.width)};
#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < grid.count(); ++tile) {
        const auto &list = grid.lists[std::size_t(tile)];
        const int x0 = (tile % grid.tiles_x) * grid.tile_size;
        const int y0 = (tile / grid.tiles_x) * grid.tile_size;
        for (int y = y0; y < std::min(y0 + grid.tile_size, k.height); ++y) {
            for (int x = x0; x < std::min(x0 + grid.tile_size, k.width); ++x) {
                const Eigen::Vector2d px(x, y);
                double trans = 1.0, depth = 0.0, acc = 0.0;
                Eigen::Vector3d color = Eigen::Vector3d::Zero();
                for (int idx : list) {
                    const auto &s = splats[std::size_t(idx)];
                    if (!covers(s, x, y)) continue;
                    const double a = splat_alpha(s, px, cfg.sigma_cutoff);
                    if (a == 0.0) continue;
                    const double w = a * trans;
                    color += w * s.color;
                    depth += w * s.view_depth;
                    acc += w;
                    trans *= 1.0 - a;
                    if (cfg.early_termination && trans < kTerminationTransmittance) break;
                }
                for (int c = 0; c < 3; ++c) out.color(c, y, x) = color[c];
                out.depth(0, y, x) = cfg.normalize_depth ? (acc > 0 ? depth / acc : 0.0) : depth;
                out.alpha(0, y, x) = acc;
            }
        }
    }
    return out;
}

ParamGradients rasterize_backward(const GaussianScene &scene, const CameraView &view, const TileConfig &cfg,
                                  const RenderGradients &loss_grads) {
    cfg.validate();
    const auto &k = view.intrinsics;
    if (loss_grads.color.channels != 3 || loss_grads.color.height != k.height || loss_grads.color.width != k.width ||
        loss_grads.depth.channels != 1 || loss_grads.depth.height != k.height || loss_grads.depth.width != k.width ||
        loss_grads.alpha.channels != 1 || loss_grads.alpha.height != k.height || loss_grads.alpha.width != k.width)
        throw Error(ErrorCode::ShapeMismatch, "loss gradients do not match the render size");

    const auto splats = project_splats(scene, view, cfg);
    const TileGrid grid = bin_splats(splats, k, cfg.tile_size);
    std::vector<std::vector<ScreenGrad>> tile_grads(std::size_t(grid.count()));

#pragma omp parallel for schedule(dynamic)
    for (int tile = 0; tile < grid.count(); ++tile) {
        const auto &list = grid.lists[std::size_t(tile)];
        auto &acc_grads = tile_grads[std::size_t(tile)];
        acc_grads.assign(list.size(), ScreenGrad{});
        if (list.empty()) continue;
        const int x0 = (tile % grid.tiles_x) * grid.tile_size;
        const int y0 = (tile / grid.tiles_x) * grid.tile_size;
        std::vector<Contribution> contribs;
        contribs.reserve(list.size());
        for (int y = y0; y < std::min(y0 + grid.tile_size, k.height); ++y) {
            for (int x = x0; x < std::min(x0 + grid.tile_size, k.width); ++x) {
                const Eigen::Vector2d px(x, y);
                contribs.clear();
                double trans = 1.0, depth = 0.0, acc = 0.0;
                for (int slot = 0; slot < int(list.size()); ++slot) {
                    const auto &s = splats[std::size_t(list[std::size_t(slot)])];
                    if (!covers(s, x, y)) continue;
                    const double a = splat_alpha(s, px, cfg.sigma_cutoff);
                    if (a == 0.0) continue;
                    const double raw = s.opacity * std::exp(-0.5 * (px - s.mean2d).dot(s.conic * (px - s.mean2d)));
                    contribs.push_back({slot, a, trans, raw > kMaxSplatAlpha, px - s.mean2d});
                    depth += a * trans * s.view_depth;
                    acc += a * trans;
                    trans *= 1.0 - a;
                }
                if (contribs.empty()) continue;

                const Eigen::Vector3d g_color(loss_grads.color(0, y, x), loss_grads.color(1, y, x),
                                              loss_grads.color(2, y, x));
                double g_depth = loss_grads.depth(0, y, x);
                double g_alpha = loss_grads.alpha(0, y, x);
                if (cfg.normalize_depth) {
                    if (acc > 0) {
                        g_alpha -= g_depth * depth / (acc * acc);
                        g_depth /= acc;
                    } else {
                        g_depth = 0.0;
                    }
                }
                if (g_color.isZero() && g_depth == 0.0 && g_alpha == 0.0) continue;

                Eigen::Vector3d suffix_color = Eigen::Vector3d::Zero();
                double suffix_depth = 0.0, suffix_alpha = 0.0;
                for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                    const auto &s = splats[std::size_t(list[std::size_t(it->slot)])];
                    auto &sg = acc_grads[std::size_t(it->slot)];
                    const double a = it->alpha, t = it->transmittance, w = a * t;
                    sg.color += w * g_color;
                    sg.depth += w * g_depth;
                    const double g_a = t * (g_color.dot(s.color) + g_depth * s.view_depth + g_alpha) -
                                       (g_color.dot(suffix_color) + g_depth * suffix_depth + g_alpha * suffix_alpha) /
                                           (1.0 - a);
                    suffix_color += w * s.color;
                    suffix_depth += w * s.view_depth;
                    suffix_alpha += w;
                    if (it->clamped) continue;
                    // a = opacity * exp(power), power = -1/2 d^T conic d, d = pixel - mean.
                    sg.opacity += g_a * a / s.opacity;
                    const double g_power = g_a * a;
                    const Eigen::Vector2d &d = it->offset;
                    sg.mean += g_power * (s.conic * d);
                    sg.conic += (-0.5 * g_power) * (d * d.transpose());
                }
            }
        }
    }

    std::vector<ScreenGrad> per_splat(splats.size());
    for (int tile = 0; tile < grid.count(); ++tile) {
        const auto &list = grid.lists[std::size_t(tile)];
        for (std::size_t slot = 0; slot < list.size(); ++slot)
            per_splat[std::size_t(list[slot])] += tile_grads[std::size_t(tile)][slot];
    }

    ParamGradients grads(scene.size());
    const Eigen::Matrix3d w = view.pose.camera_to_world().transpose();
    const Eigen::Vector3d c = view.pose.translation;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < std::ptrdiff_t(splats.size()); ++i) {
        const auto &s = splats[std::size_t(i)];
        grads.values.col(s.source_index) =
            chain_to_params(scene.gaussians[std::size_t(s.source_index)], s, per_splat[std::size_t(i)], w, c, k);
    }
    return grads;
}

} // namespace cosplat
