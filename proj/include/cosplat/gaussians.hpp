#pragma once

#include "cosplat/scenegen.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <string>
#include <vector>

namespace cosplat {

inline constexpr int kNumParams = 14;
inline constexpr double kMinScale = 1e-4;
inline constexpr double kMaxScale = 1e3;

// Raw-parameter offsets inside a 14-vector. Order: position, opacity logit,
// log scale, rotation (w, x, y, z), color logits.
namespace param {
inline constexpr int kPosition = 0;
inline constexpr int kOpacity = 3;
inline constexpr int kScale = 4;
inline constexpr int kRotation = 7;
inline constexpr int kColor = 11;
} // namespace param

using ParamVector = Eigen::Matrix<double, kNumParams, 1>;
using ParamMatrix = Eigen::Matrix<double, kNumParams, Eigen::Dynamic>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

struct Gaussian3D {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    double opacity_logit = 0.0;
    Eigen::Vector3d log_scale = Eigen::Vector3d::Zero();
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Eigen::Vector3d color_logit = Eigen::Vector3d::Zero();

    double opacity() const { return sigmoid(opacity_logit); }
    Eigen::Vector3d scale() const { return log_scale.array().exp(); }
    Eigen::Vector3d color() const { return color_logit.unaryExpr([](double v) { return sigmoid(v); }); }

    ParamVector to_params() const;
    static Gaussian3D from_params(const ParamVector &p);
};

struct GaussianScene {
    std::vector<Gaussian3D> gaussians;

    std::size_t size() const { return gaussians.size(); }
    void validate() const;

    ParamMatrix params() const;
    static GaussianScene from_params(const ParamMatrix &p);
};

// Per-Gaussian partials of a scalar loss with respect to the 14 raw parameters.
struct ParamGradients {
    ParamMatrix values;

    ParamGradients() = default;
    explicit ParamGradients(std::size_t k) : values(ParamMatrix::Zero(kNumParams, Eigen::Index(k))) {}
    std::size_t size() const { return std::size_t(values.cols()); }
};

// Rotation matrix of a (not necessarily unit) quaternion after normalization.
Eigen::Matrix3d rotation_matrix(const Eigen::Quaterniond &q);

// Sigma = R diag(scale^2) R^T.
Eigen::Matrix3d covariance(const Gaussian3D &g);

// One Gaussian per sampled finite-depth pixel (every `stride`-th row and column).
GaussianScene unproject_init(const std::vector<GroundTruthFrame> &frames, int stride);

struct LearningRates {
    double position = 1.6e-3;
    double opacity = 5e-2;
    double scale = 5e-3;
    double rotation = 1e-3;
    double color = 2.5e-2;
};

struct AdamState {
    ParamMatrix m;
    ParamMatrix v;
    long step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One Adam step; renormalizes touched quaternions and clamps scales into [kMinScale, kMaxScale].
GaussianScene apply_gradients(const GaussianScene &scene, const ParamGradients &grads, AdamState &state,
                              const LearningRates &lr = {});

// FGGS checkpoint: "FGGS", u32 version=1, u32 K, then K x 14 little-endian f32.
void save_checkpoint(const std::string &path, const GaussianScene &scene);
GaussianScene load_checkpoint(const std::string &path);

// Hash of the f32-serialized parameters (what a checkpoint would contain).
std::uint64_t scene_hash(const GaussianScene &scene);

} // namespace cosplat
