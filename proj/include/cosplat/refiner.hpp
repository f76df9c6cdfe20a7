#pragma once

#include "cosplat/image.hpp"
#include "cosplat/rasterizer.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cosplat {

// Variance-preserving schedule: alpha_t = cos(theta_max * t / steps), sigma_t = sin(...),
// with theta_max chosen so alpha_steps == alpha_min (kept non-zero so the sampler can
// divide by it).
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> alpha;  // steps + 1 entries
    std::vector<double> sigma;

    static NoiseSchedule cosine(int steps = 200, double alpha_min = 1e-4);
    void check_timestep(int t) const;
};

inline constexpr int kConditionInputChannels = 5;  // RGB, inverse depth, opacity
inline constexpr int kDefaultConditionChannels = 8;
inline constexpr int kDenoiserWidth = 32;

// Flat weight vector for the condition encoder (2 convs, 5 -> 16 -> C_c) and the
// denoiser (4 convs, C_c + 3 + 1 -> 32 -> 32 -> 32 -> 3), all 3x3 with zero padding.
// Each layer stores an out x (in * 9) row-major kernel matrix followed by its bias.
class DenoiserParams {
public:
    static constexpr int kEncoderLayers = 2;
    static constexpr int kLayers = 6;

    struct LayerShape {
        int in;
        int out;
        Eigen::Index offset;  // of the kernel; bias follows at offset + out * in * 9
    };

    explicit DenoiserParams(int condition_channels = kDefaultConditionChannels);

    // He-style init for hidden layers, zero output layer.
    static DenoiserParams random(std::uint64_t seed, int condition_channels = kDefaultConditionChannels);

    int condition_channels() const { return condition_channels_; }
    const LayerShape &layer(int i) const { return layers_[std::size_t(i)]; }
    std::uint32_t architecture_hash() const;
    std::uint64_t hash() const;

    Eigen::VectorXd weights;

private:
    int condition_channels_;
    std::vector<LayerShape> layers_;
};

// [RGB, 1 / (1 + D), A] stacked into 5 channels.
Image condition_input(const GeometryCondition &cond);

// The identity "image encoder": [0,1] -> [-1,1] and back.
Image image_to_latent(const Image &rgb);
Image latent_to_image(const Image &z);

Image encode_condition(const GeometryCondition &cond, const DenoiserParams &params);

// z_t = alpha_t z_v + sigma_t eps.
Image add_noise(const Image &z_v, int t, const Image &eps, const NoiseSchedule &sched);

// sigma_t z_t + alpha_t f_theta([z_t, z_c, t / T]) -> predicted noise, 3 x h x w.
Image predict_noise(const Image &z_t, const Image &z_c, int t, const DenoiserParams &params,
                    const NoiseSchedule &sched);

// Vector-Jacobian products: d <upstream, output> / d weights, as a full-length weight vector.
// predict_noise_vjp runs the encoder too, so it covers every learnable weight.
Eigen::VectorXd encode_condition_vjp(const GeometryCondition &cond, const DenoiserParams &params,
                                     const Image &upstream);
Eigen::VectorXd predict_noise_vjp(const Image &z_t, const GeometryCondition &cond, int t,
                                  const DenoiserParams &params, const NoiseSchedule &sched,
                                  const Image &upstream);

struct TrainingPair {
    GeometryCondition condition;
    Image reference;  // ground-truth RGB in [0,1]
};

struct DenoiserOptimizer {
    double lr = 1e-3;
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;
};

// Mean over batch and elements of (eps - f_theta(z_t, z_c))^2, t ~ U{1..T}, eps ~ N(0, 1);
// one Adam update. Returns the loss evaluated before the update.
double train_step(std::span<const TrainingPair> batch, DenoiserParams &params, const NoiseSchedule &sched,
                  DenoiserOptimizer &opt, std::mt19937_64 &rng);

// Deterministic (eta = 0) update from timestep t to s < t. The clean estimate is clipped to [-1, 1].
Image ddim_step(const Image &z_t, const Image &eps_hat, int t, int s, const NoiseSchedule &sched);

// Reverse process from pure noise over `sample_steps` uniformly spaced timesteps.
Image refine(const GeometryCondition &cond, const DenoiserParams &params, const NoiseSchedule &sched,
             int sample_steps, std::uint64_t seed);

struct RefinerTrainConfig {
    int steps = 1500;
    int batch_size = 4;
    int crop = 32;  // random square crops; 0 trains on full frames
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

// Stage-one loop over a fixed pair set. Returns the per-step loss curve.
std::vector<double> train_refiner(std::span<const TrainingPair> pairs, DenoiserParams &params,
                                  const NoiseSchedule &sched, DenoiserOptimizer &opt,
                                  const RefinerTrainConfig &cfg);

// FGDN checkpoint: "FGDN", u32 version=1, u32 architecture hash, then little-endian f32
// weights in declaration order. The condition width is recovered from the hash.
void save_denoiser(const std::string &path, const DenoiserParams &params);
DenoiserParams load_denoiser(const std::string &path);

} // namespace cosplat
