#include "cosplat/metrics.hpp"

#include "cosplat/error.hpp"

#include <algorithm>
#include <cmath>

namespace cosplat {

double psnr(const Image &a, const Image &b) {
    require_same_shape(a, b, "psnr");
    const double mse = (a.data - b.data).square().mean();
    if (mse == 0.0) return kInf;
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

Eigen::VectorXd gaussian_window(int size, double sigma) {
    Eigen::VectorXd g(size);
    const double c = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i) g[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    return g / g.sum();
}

// Correlation with the separable window at every position where it fits entirely.
RowArray valid_filter(const RowArray &img, const Eigen::VectorXd &g) {
    const int n = int(g.size());
    const Eigen::Index h = img.rows() - n + 1, w = img.cols() - n + 1;
    RowArray rows = RowArray::Zero(img.rows(), w);
    for (int k = 0; k < n; ++k) rows += g[k] * img.middleCols(k, w);
    RowArray out = RowArray::Zero(h, w);
    for (int k = 0; k < n; ++k) out += g[k] * rows.middleRows(k, h);
    return out;
}

// Adjoint of valid_filter: scatters a window-position map back onto the full grid.
RowArray full_scatter(const RowArray &map, const Eigen::VectorXd &g, Eigen::Index height, Eigen::Index width) {
    const int n = int(g.size());
    RowArray rows = RowArray::Zero(height, map.cols());
    for (int k = 0; k < n; ++k) rows.middleRows(k, map.rows()) += g[k] * map;
    RowArray out = RowArray::Zero(height, width);
    for (int k = 0; k < n; ++k) out.middleCols(k, map.cols()) += g[k] * rows;
    return out;
}

struct PlaneSsim {
    double mean;
    RowArray grad;
};

PlaneSsim plane_ssim(const RowArray &x, const RowArray &y, const Eigen::VectorXd &g, const SsimOptions &o,
                     bool want_grad) {
    const double c1 = (o.k1 * o.data_range) * (o.k1 * o.data_range);
    const double c2 = (o.k2 * o.data_range) * (o.k2 * o.data_range);
    const RowArray mx = valid_filter(x, g);
    const RowArray my = valid_filter(y, g);
    const RowArray sxx = valid_filter(x * x, g) - mx * mx;
    const RowArray syy = valid_filter(y * y, g) - my * my;
    const RowArray sxy = valid_filter(x * y, g) - mx * my;
    const RowArray a1 = 2 * mx * my + c1;
    const RowArray a2 = 2 * sxy + c2;
    const RowArray b1 = mx * mx + my * my + c1;
    const RowArray b2 = sxx + syy + c2;
    const RowArray s = (a1 * a2) / (b1 * b2);
    PlaneSsim out{s.mean(), {}};
    if (!want_grad) return out;

    const double n = double(s.size());
    const RowArray d_mu = (2 * my * a2) / (b1 * b2) - s * 2 * mx / b1;
    const RowArray d_sxx = -s / b2;
    const RowArray d_sxy = 2 * a1 / (b1 * b2);
    const RowArray alpha = (d_mu - 2 * mx * d_sxx - my * d_sxy) / n;
    const RowArray beta = 2 * d_sxx / n;
    const RowArray gamma = d_sxy / n;
    out.grad = full_scatter(alpha, g, x.rows(), x.cols()) + x * full_scatter(beta, g, x.rows(), x.cols()) +
               y * full_scatter(gamma, g, x.rows(), x.cols());
    return out;
}

void check_ssim_inputs(const Image &a, const Image &b, const SsimOptions &o) {
    require_same_shape(a, b, "ssim");
    if (a.height < o.window || a.width < o.window)
        throw Error(ErrorCode::ImageTooSmall, std::to_string(a.height) + "x" + std::to_string(a.width) +
                                                  " is smaller than the " + std::to_string(o.window) + " px window");
}

RowArray luma(const Image &img) {
    if (img.channels != 3) return img.plane(0);
    return 0.299 * img.plane(0) + 0.587 * img.plane(1) + 0.114 * img.plane(2);
}

} // namespace

double ssim(const Image &a, const Image &b, const SsimOptions &opts) {
    check_ssim_inputs(a, b, opts);
    const Eigen::VectorXd g = gaussian_window(opts.window, opts.sigma);
    if (opts.luma) return plane_ssim(luma(a), luma(b), g, opts, false).mean;
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) total += plane_ssim(a.plane(c), b.plane(c), g, opts, false).mean;
    return total / a.channels;
}

SsimGradient ssim_with_gradient(const Image &a, const Image &b, const SsimOptions &opts) {
    check_ssim_inputs(a, b, opts);
    if (opts.luma) throw Error(ErrorCode::InvalidArgument, "ssim gradient is per-channel only");
    const Eigen::VectorXd g = gaussian_window(opts.window, opts.sigma);
    SsimGradient out{0.0, Image(a.channels, a.height, a.width)};
    for (int c = 0; c < a.channels; ++c) {
        const PlaneSsim p = plane_ssim(a.plane(c), b.plane(c), g, opts, true);
        out.value += p.mean / a.channels;
        out.grad.plane(c) = p.grad / a.channels;
    }
    return out;
}

namespace {

double nearest_rank(std::vector<double> v, double pct) {
    std::sort(v.begin(), v.end());
    const auto rank = std::size_t(std::ceil(pct / 100.0 * double(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

} // namespace

std::vector<MetricReport> evaluate_protocol(std::span<const EvalFrame> method_frames,
                                            std::span<const EvalFrame> oracle_frames,
                                            std::span<const double> shifts) {
    if (method_frames.size() != oracle_frames.size())
        throw Error(ErrorCode::LengthMismatch, std::to_string(method_frames.size()) + " method frames vs " +
                                                   std::to_string(oracle_frames.size()) + " oracle frames");
    for (std::size_t i = 0; i < method_frames.size(); ++i) {
        const auto &m = method_frames[i];
        const auto &o = oracle_frames[i];
        if (m.shift_m != o.shift_m || m.frame_index != o.frame_index)
            throw Error(ErrorCode::LengthMismatch, "frame pairing misaligned at position " + std::to_string(i));
    }

    std::vector<MetricReport> reports;
    for (double shift : shifts) {
        MetricReport r;
        r.shift_m = shift;
        std::vector<double> ps;
        double ssim_sum = 0.0;
        for (std::size_t i = 0; i < method_frames.size(); ++i) {
            if (method_frames[i].shift_m != shift) continue;
            FrameMetric fm{method_frames[i].frame_index, psnr(*method_frames[i].image, *oracle_frames[i].image),
                           ssim(*method_frames[i].image, *oracle_frames[i].image), std::nullopt};
            ps.push_back(fm.psnr);
            ssim_sum += fm.ssim;
            r.frames.push_back(fm);
        }
        if (!ps.empty()) {
            double sum = 0.0;
            for (double p : ps) sum += p;
            r.mean_psnr = sum / double(ps.size());
            r.mean_ssim = ssim_sum / double(ps.size());
            r.p10_psnr = nearest_rank(ps, 10);
            r.p50_psnr = nearest_rank(ps, 50);
            r.p90_psnr = nearest_rank(ps, 90);
        }
        reports.push_back(std::move(r));
    }
    return reports;
}

nlohmann::json metric_value(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

nlohmann::json to_json(const MetricReport &r) {
    nlohmann::json frames = nlohmann::json::array();
    for (const auto &f : r.frames) {
        nlohmann::json row = {{"idx", f.index}, {"psnr", metric_value(f.psnr)}, {"ssim", f.ssim}};
        if (f.depth_mae) row["depth_mae"] = *f.depth_mae;
        frames.push_back(row);
    }
    nlohmann::json j = {{"shift_m", r.shift_m},
                        {"frames", frames},
                        {"mean", {{"psnr", metric_value(r.mean_psnr)}, {"ssim", r.mean_ssim}}},
                        {"percentiles",
                         {{"p10_psnr", metric_value(r.p10_psnr)},
                          {"p50_psnr", metric_value(r.p50_psnr)},
                          {"p90_psnr", metric_value(r.p90_psnr)}}},
                        {"count", r.frames.size()},
                        {"fid", nullptr},
                        {"fvd", nullptr}};
    if (r.mean_depth_mae) j["mean"]["depth_mae"] = *r.mean_depth_mae;
    return j;
}

nlohmann::json to_json(const std::vector<MetricReport> &reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto &r : reports) arr.push_back(to_json(r));
    return arr;
}

} // namespace cosplat
