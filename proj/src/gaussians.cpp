#include "cosplat/gaussians.hpp"

#include "cosplat/error.hpp"
#include "cosplat/hash.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cosplat {

ParamVector Gaussian3D::to_params() const {
    ParamVector p;
    p.segment<3>(param::kPosition) = position;
    p[param::kOpacity] = opacity_logit;
    p.segment<3>(param::kScale) = log_scale;
    p.segment<4>(param::kRotation) << rotation.w(), rotation.x(), rotation.y(), rotation.z();
    p.segment<3>(param::kColor) = color_logit;
    return p;
}

Gaussian3D Gaussian3D::from_params(const ParamVector &p) {
    Gaussian3D g;
    g.position = p.segment<3>(param::kPosition);
    g.opacity_logit = p[param::kOpacity];
    g.log_scale = p.segment<3>(param::kScale);
    const auto q = p.segment<4>(param::kRotation);
    g.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
    g.color_logit = p.segment<3>(param::kColor);
    return g;
}

void GaussianScene::validate() const {
    if (gaussians.empty()) throw Error(ErrorCode::InvalidArgument, "scene has no Gaussians");
    for (const auto &g : gaussians)
        if (!g.to_params().allFinite()) throw Error(ErrorCode::NumericalError, "non-finite Gaussian parameter");
}

ParamMatrix GaussianScene::params() const {
    ParamMatrix m(kNumParams, Eigen::Index(gaussians.size()));
    for (std::size_t i = 0; i < gaussians.size(); ++i) m.col(Eigen::Index(i)) = gaussians[i].to_params();
    return m;
}

GaussianScene GaussianScene::from_params(const ParamMatrix &p) {
    GaussianScene s;
    s.gaussians.reserve(std::size_t(p.cols()));
    for (Eigen::Index i = 0; i < p.cols(); ++i) s.gaussians.push_back(Gaussian3D::from_params(p.col(i)));
    return s;
}

Eigen::Matrix3d rotation_matrix(const Eigen::Quaterniond &q) { return q.normalized().toRotationMatrix(); }

Eigen::Matrix3d covariance(const Gaussian3D &g) {
    const Eigen::Matrix3d m = rotation_matrix(g.rotation) * (2.0 * g.log_scale).array().exp().matrix().asDiagonal();
    // R S^2 R^T, symmetrized so round-off cannot break symmetry.
    const Eigen::Matrix3d sigma = m * rotation_matrix(g.rotation).transpose();
    return 0.5 * (sigma + sigma.transpose());
}

GaussianScene unproject_init(const std::vector<GroundTruthFrame> &frames, int stride) {
    if (frames.empty()) throw Error(ErrorCode::InvalidArgument, "unproject_init needs at least one frame");
    if (stride < 1) throw Error(ErrorCode::InvalidArgument, "stride must be >= 1");
    GaussianScene scene;
    for (const auto &f : frames) {
        const double fx = f.view.intrinsics.fx;
        for (int y = 0; y < f.depth.height; y += stride) {
            for (int x = 0; x < f.depth.width; x += stride) {
                const double d = f.depth(0, y, x);
                if (!std::isfinite(d) || d <= 0) continue;
                Gaussian3D g;
                g.position = unproject(Eigen::Vector2d(x, y), d, f.view);
                g.opacity_logit = 0.0;
                g.log_scale.setConstant(std::log(std::clamp(d * stride / fx, kMinScale, kMaxScale)));
                for (int c = 0; c < 3; ++c) g.color_logit[c] = logit(std::clamp(f.image(c, y, x), 1e-3, 1.0 - 1e-3));
                scene.gaussians.push_back(g);
            }
        }
    }
    if (scene.gaussians.empty()) throw Error(ErrorCode::NoValidPixels, "every sampled pixel has infinite depth");
    return scene;
}

GaussianScene apply_gradients(const GaussianScene &scene, const ParamGradients &grads, AdamState &state,
                              const LearningRates &lr) {
    const auto k = Eigen::Index(scene.size());
    if (Eigen::Index(grads.size()) != k)
        throw Error(ErrorCode::ShapeMismatch, "gradient count " + std::to_string(grads.size()) + " vs scene " +
                                                  std::to_string(k));
    if (state.m.cols() == 0 && state.step == 0) {
        state.m = ParamMatrix::Zero(kNumParams, k);
        state.v = ParamMatrix::Zero(kNumParams, k);
    }
    if (state.m.cols() != k) throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match scene");

    ParamMatrix p = scene.params();
    state.step += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, double(state.step));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, double(state.step));

    Eigen::Matrix<double, kNumParams, 1> rates;
    rates.segment<3>(param::kPosition).setConstant(lr.position);
    rates[param::kOpacity] = lr.opacity;
    rates.segment<3>(param::kScale).setConstant(lr.scale);
    rates.segment<4>(param::kRotation).setConstant(lr.rotation);
    rates.segment<3>(param::kColor).setConstant(lr.color);

    const auto &g = grads.values;
    state.m = kAdamBeta1 * state.m + (1.0 - kAdamBeta1) * g;
    state.v = kAdamBeta2 * state.v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
    const ParamMatrix step = rates.asDiagonal() *
                             ((state.m / bc1).array() / ((state.v / bc2).array().sqrt() + kAdamEps)).matrix();
    p -= step;

    const double lo = std::log(kMinScale), hi = std::log(kMaxScale);
    for (Eigen::Index i = 0; i < k; ++i) {
        auto q = p.col(i).segment<4>(param::kRotation);
        if (step.col(i).segment<4>(param::kRotation).cwiseAbs().maxCoeff() > 0) {
            const double n = q.norm();
            if (n > 1e-12 && std::isfinite(n))
                q /= n;
            else
                q << 1, 0, 0, 0;
        }
        p.col(i).segment<3>(param::kScale) = p.col(i).segment<3>(param::kScale).cwiseMax(lo).cwiseMin(hi);
    }
    return GaussianScene::from_params(p);
}

namespace {

std::vector<float> serialize(const GaussianScene &scene) {
    std::vector<float> out;
    out.reserve(scene.size() * kNumParams);
    for (const auto &g : scene.gaussians) {
        const ParamVector p = g.to_params();
        for (int i = 0; i < kNumParams; ++i) out.push_back(static_cast<float>(p[i]));
    }
    return out;
}

void put_u32(std::ostream &os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char *>(b), 4);
}

std::uint32_t get_u32(std::istream &is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char *>(b), 4)) throw Error(ErrorCode::IoError, "truncated checkpoint");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

} // namespace

void save_checkpoint(const std::string &path, const GaussianScene &scene) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot open for writing: " + path);
    f.write("FGGS", 4);
    put_u32(f, 1);
    put_u32(f, std::uint32_t(scene.size()));
    for (float v : serialize(scene)) put_u32(f, std::bit_cast<std::uint32_t>(v));
    if (!f) throw Error(ErrorCode::IoError, "write failed: " + path);
}

GaussianScene load_checkpoint(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot open for reading: " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "FGGS", 4) != 0)
        throw Error(ErrorCode::IoError, "bad FGGS magic: " + path);
    if (get_u32(f) != 1) throw Error(ErrorCode::IoError, "unsupported FGGS version: " + path);
    const std::uint32_t k = get_u32(f);
    ParamMatrix p(kNumParams, Eigen::Index(k));
    for (std::uint32_t i = 0; i < k; ++i)
        for (int j = 0; j < kNumParams; ++j) p(j, Eigen::Index(i)) = std::bit_cast<float>(get_u32(f));
    return GaussianScene::from_params(p);
}

std::uint64_t scene_hash(const GaussianScene &scene) {
    const auto bytes = serialize(scene);
    return fnv1a(bytes.data(), bytes.size() * sizeof(float));
}

} // namespace cosplat
