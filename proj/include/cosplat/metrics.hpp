#pragma once

#include "cosplat/image.hpp"

#include <json.hpp>

#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace cosplat {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// 10 log10(1 / MSE); +inf when the images are identical.
double psnr(const Image &a, const Image &b);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
    // Compare Rec.601 luma instead of averaging per-channel SSIM.
    bool luma = false;
};

// Mean local SSIM over all valid window positions, averaged over channels.
double ssim(const Image &a, const Image &b, const SsimOptions &opts = {});

// SSIM together with d SSIM / d a (same shape as a). Per-channel mode only.
struct SsimGradient {
    double value;
    Image grad;
};
SsimGradient ssim_with_gradient(const Image &a, const Image &b, const SsimOptions &opts = {});

struct FrameMetric {
    int index;
    double psnr;
    double ssim;
    std::optional<double> depth_mae;
};

struct MetricReport {
    double shift_m = 0.0;
    std::vector<FrameMetric> frames;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    double p10_psnr = 0.0;
    double p50_psnr = 0.0;
    double p90_psnr = 0.0;
    std::optional<double> mean_depth_mae;
};

// One frame of an evaluation, tagged with where it belongs in the protocol.
struct EvalFrame {
    double shift_m;
    int frame_index;
    const Image *image;
};

// Per-shift reports in the order of `shifts`. Method and oracle lists must pair up
// one-to-one on (shift, frame index); any misalignment throws LengthMismatch.
std::vector<MetricReport> evaluate_protocol(std::span<const EvalFrame> method_frames,
                                            std::span<const EvalFrame> oracle_frames,
                                            std::span<const double> shifts);

// `+inf` is written as the string "inf". FID/FVD fields are reserved and left null.
nlohmann::json to_json(const MetricReport &r);
nlohmann::json to_json(const std::vector<MetricReport> &reports);
nlohmann::json metric_value(double v);

} // namespace cosplat
