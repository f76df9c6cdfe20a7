#include "cosplat/refiner.hpp"

#include "cosplat/error.hpp"
#include "cosplat/hash.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace cosplat {

NoiseSchedule NoiseSchedule::cosine(int steps, double alpha_min) {
    if (steps < 1) throw Error(ErrorCode::InvalidArgument, "schedule needs at least one step");
    NoiseSchedule s;
    s.steps = steps;
    const double theta_max = std::acos(alpha_min);
    for (int t = 0; t <= steps; ++t) {
        const double theta = theta_max * double(t) / double(steps);
        s.alpha.push_back(std::cos(theta));
        s.sigma.push_back(std::sin(theta));
    }
    s.alpha[0] = 1.0;
    s.sigma[0] = 0.0;
    return s;
}

void NoiseSchedule::check_timestep(int t) const {
    if (t < 0 || t > steps)
        throw Error(ErrorCode::TimestepOutOfRange, std::to_string(t) + " not in [0, " + std::to_string(steps) + "]");
}

DenoiserParams::DenoiserParams(int condition_channels) : condition_channels_(condition_channels) {
    if (condition_channels < 1) throw Error(ErrorCode::InvalidArgument, "condition channels must be >= 1");
    const int shapes[kLayers][2] = {{kConditionInputChannels, 16},
                                    {16, condition_channels},
                                    {condition_channels + 3 + 1, kDenoiserWidth},
                                    {kDenoiserWidth, kDenoiserWidth},
                                    {kDenoiserWidth, kDenoiserWidth},
                                    {kDenoiserWidth, 3}};
    Eigen::Index offset = 0;
    for (const auto &s : shapes) {
        layers_.push_back({s[0], s[1], offset});
        offset += Eigen::Index(s[1]) * s[0] * 9 + s[1];
    }
    weights = Eigen::VectorXd::Zero(offset);
}

DenoiserParams DenoiserParams::random(std::uint64_t seed, int condition_channels) {
    DenoiserParams p(condition_channels);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int l = 0; l < kLayers - 1; ++l) {
        const auto &s = p.layer(l);
        const Eigen::Index fan_in = Eigen::Index(s.in) * 9;
        const double gain = (l == kEncoderLayers - 1) ? 1.0 : 2.0;
        const double std_dev = std::sqrt(gain / double(fan_in));
        for (Eigen::Index i = 0; i < fan_in * s.out; ++i) p.weights[s.offset + i] = std_dev * normal(rng);
    }
    return p;
}

std::uint32_t DenoiserParams::architecture_hash() const {
    std::uint64_t h = fnv1a("conv3x3-silu-v1");
    for (const auto &l : layers_) {
        const int shape[2] = {l.in, l.out};
        h = fnv1a(shape, sizeof shape, h);
    }
    return std::uint32_t(h ^ (h >> 32));
}

std::uint64_t DenoiserParams::hash() const {
    std::vector<float> f(std::size_t(weights.size()));
    for (Eigen::Index i = 0; i < weights.size(); ++i) f[std::size_t(i)] = static_cast<float>(weights[i]);
    return fnv1a(f.data(), f.size() * sizeof(float), architecture_hash());
}

namespace {

using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Activations are channels x (h * w) matrices.
struct Tensor {
    Matrix data;
    int height = 0;
    int width = 0;
};

Tensor from_image(const Image &img) {
    Tensor t;
    t.height = img.height;
    t.width = img.width;
    t.data = Eigen::Map<const RowMatrix>(img.data.data(), img.channels, img.pixels());
    return t;
}

Image to_image(const Tensor &t) {
    Image img(int(t.data.rows()), t.height, t.width);
    Eigen::Map<RowMatrix>(img.data.data(), t.data.rows(), t.data.cols()) = t.data;
    return img;
}

Matrix im2col(const Tensor &in) {
    const int c_in = int(in.data.rows()), h = in.height, w = in.width;
    Matrix cols = Matrix::Zero(Eigen::Index(c_in) * 9, Eigen::Index(h) * w);
    for (int c = 0; c < c_in; ++c)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const Eigen::Index row = Eigen::Index(c) * 9 + ky * 3 + kx;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    for (int x = 0; x < w; ++x) {
                        const int sx = x + kx - 1;
                        if (sx < 0 || sx >= w) continue;
                        cols(row, Eigen::Index(y) * w + x) = in.data(c, Eigen::Index(sy) * w + sx);
                    }
                }
            }
    return cols;
}

Matrix col2im(const Matrix &cols, int c_in, int h, int w) {
    Matrix out = Matrix::Zero(c_in, Eigen::Index(h) * w);
    for (int c = 0; c < c_in; ++c)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const Eigen::Index row = Eigen::Index(c) * 9 + ky * 3 + kx;
                for (int y = 0; y < h; ++y) {
                    const int sy = y + ky - 1;
                    if (sy < 0 || sy >= h) continue;
                    for (int x = 0; x < w; ++x) {
                        const int sx = x + kx - 1;
                        if (sx < 0 || sx >= w) continue;
                        out(c, Eigen::Index(sy) * w + sx) += cols(row, Eigen::Index(y) * w + x);
                    }
                }
            }
    return out;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix silu(const Matrix &x) {
    return x.unaryExpr([](double v) { return v * sigm(v); });
}

Matrix silu_grad(const Matrix &x) {
    return x.unaryExpr([](double v) {
        const double s = sigm(v);
        return s * (1.0 + v * (1.0 - s));
    });
}

struct LayerCache {
    Matrix cols;
    Matrix pre;  // pre-activation output
};

class ConvRunner {
public:
    explicit ConvRunner(const DenoiserParams &p) : p_(p) {}

    Eigen::Map<const RowMatrix> kernel(int l) const {
        const auto &s = p_.layer(l);
        return {p_.weights.data() + s.offset, s.out, Eigen::Index(s.in) * 9};
    }
    Eigen::Map<const Eigen::VectorXd> bias(int l) const {
        const auto &s = p_.layer(l);
        return {p_.weights.data() + s.offset + Eigen::Index(s.out) * s.in * 9, s.out};
    }

    // Runs layers [first, last]; SiLU after every layer except the last one of the range.
    Tensor forward(Tensor x, int first, int last, std::vector<LayerCache> *caches) const {
        for (int l = first; l <= last; ++l) {
            LayerCache c;
            c.cols = im2col(x);
            c.pre = kernel(l) * c.cols;
            c.pre.colwise() += bias(l);
            x.data = (l == last) ? c.pre : silu(c.pre);
            if (caches) caches->push_back(std::move(c));
        }
        return x;
    }

    // Backprop through layers [first, last] given d loss / d output; returns d loss / d input.
    Matrix backward(Matrix g, int first, int last, const std::vector<LayerCache> &caches, int h, int w,
                    Eigen::VectorXd &grad) const {
        for (int l = last; l >= first; --l) {
            const auto &c = caches[std::size_t(l - first)];
            if (l != last) g = g.cwiseProduct(silu_grad(c.pre));
            const auto &s = p_.layer(l);
            Eigen::Map<RowMatrix>(grad.data() + s.offset, s.out, Eigen::Index(s.in) * 9).noalias() +=
                g * c.cols.transpose();
            grad.segment(s.offset + Eigen::Index(s.out) * s.in * 9, s.out) += g.rowwise().sum();
            const Matrix g_cols = kernel(l).transpose() * g;
            g = col2im(g_cols, s.in, h, w);
        }
        return g;
    }

private:
    const DenoiserParams &p_;
};

constexpr int kEncFirst = 0;
constexpr int kEncLast = DenoiserParams::kEncoderLayers - 1;
constexpr int kDenFirst = DenoiserParams::kEncoderLayers;
constexpr int kDenLast = DenoiserParams::kLayers - 1;

Tensor denoiser_input(const Image &z_t, const Tensor &z_c, int t, const NoiseSchedule &sched) {
    if (z_t.height != z_c.height || z_t.width != z_c.width)
        throw Error(ErrorCode::ShapeMismatch, "noise latent and condition latent sizes differ");
    if (z_t.channels != 3) throw Error(ErrorCode::ShapeMismatch, "noise latent must have 3 channels");
    Tensor in;
    in.height = z_t.height;
    in.width = z_t.width;
    in.data.resize(3 + z_c.data.rows() + 1, z_t.pixels());
    in.data.topRows(3) = Eigen::Map<const RowMatrix>(z_t.data.data(), 3, z_t.pixels());
    in.data.middleRows(3, z_c.data.rows()) = z_c.data;
    in.data.bottomRows(1).setConstant(double(t) / double(sched.steps));
    return in;
}

struct ForwardPass {
    std::vector<LayerCache> encoder;
    std::vector<LayerCache> denoiser;
    Tensor prediction;
    double output_scale = 1.0;
};

// eps_hat = sigma_t z_t + alpha_t f (velocity parameterization), so the clean estimate
// alpha_t z_t - sigma_t f never divides a network error by a small alpha_t.
Tensor noise_from_velocity(const Image &z_t, Tensor v, int t, const NoiseSchedule &sched) {
    v.data = sched.alpha[std::size_t(t)] * v.data + sched.sigma[std::size_t(t)] * from_image(z_t).data;
    return v;
}

ForwardPass full_forward(const Image &z_t, const GeometryCondition &cond, int t, const DenoiserParams &params,
                         const NoiseSchedule &sched) {
    ConvRunner run(params);
    ForwardPass f;
    const Tensor z_c = run.forward(from_image(condition_input(cond)), kEncFirst, kEncLast, &f.encoder);
    f.prediction = noise_from_velocity(
        z_t, run.forward(denoiser_input(z_t, z_c, t, sched), kDenFirst, kDenLast, &f.denoiser), t, sched);
    f.output_scale = sched.alpha[std::size_t(t)];
    return f;
}

Eigen::VectorXd full_backward(const ForwardPass &f, const DenoiserParams &params, const Matrix &g_out) {
    ConvRunner run(params);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.weights.size());
    const int h = f.prediction.height, w = f.prediction.width;
    const Matrix g_in = run.backward(f.output_scale * g_out, kDenFirst, kDenLast, f.denoiser, h, w, grad);
    const Matrix g_zc = g_in.middleRows(3, params.condition_channels());
    run.backward(g_zc, kEncFirst, kEncLast, f.encoder, h, w, grad);
    return grad;
}

Image standard_normal(int c, int h, int w, std::mt19937_64 &rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Image img(c, h, w);
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data[i] = normal(rng);
    return img;
}

void put_u32(std::ostream &os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char *>(b), 4);
}

std::uint32_t get_u32(std::istream &is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char *>(b), 4)) throw Error(ErrorCode::IoError, "truncated FGDN checkpoint");
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

} // namespace

Image condition_input(const GeometryCondition &cond) {
    if (cond.color.channels != 3 || cond.depth.channels != 1 || cond.alpha.channels != 1)
        throw Error(ErrorCode::ShapeMismatch, "geometry condition must be RGB + depth + opacity");
    Image inv_depth = cond.depth;
    inv_depth.data = 1.0 / (1.0 + cond.depth.data.max(0.0));
    return concat_channels({&cond.color, &inv_depth, &cond.alpha});
}

Image image_to_latent(const Image &rgb) {
    Image z = rgb;
    z.data = 2.0 * rgb.data - 1.0;
    return z;
}

Image latent_to_image(const Image &z) {
    Image img = z;
    img.data = (0.5 * (z.data + 1.0)).max(0.0).min(1.0);
    return img;
}

Image encode_condition(const GeometryCondition &cond, const DenoiserParams &params) {
    ConvRunner run(params);
    return to_image(run.forward(from_image(condition_input(cond)), kEncFirst, kEncLast, nullptr));
}

Image add_noise(const Image &z_v, int t, const Image &eps, const NoiseSchedule &sched) {
    sched.check_timestep(t);
    require_same_shape(z_v, eps, "add_noise");
    Image z = z_v;
    z.data = sched.alpha[std::size_t(t)] * z_v.data + sched.sigma[std::size_t(t)] * eps.data;
    return z;
}

Image predict_noise(const Image &z_t, const Image &z_c, int t, const DenoiserParams &params,
                    const NoiseSchedule &sched) {
    sched.check_timestep(t);
    if (z_c.channels != params.condition_channels())
        throw Error(ErrorCode::ShapeMismatch, "condition latent channel count does not match parameters");
    ConvRunner run(params);
    return to_image(noise_from_velocity(
        z_t, run.forward(denoiser_input(z_t, from_image(z_c), t, sched), kDenFirst, kDenLast, nullptr), t, sched));
}

Eigen::VectorXd encode_condition_vjp(const GeometryCondition &cond, const DenoiserParams &params,
                                     const Image &upstream) {
    ConvRunner run(params);
    std::vector<LayerCache> caches;
    const Tensor z_c = run.forward(from_image(condition_input(cond)), kEncFirst, kEncLast, &caches);
    if (upstream.channels != z_c.data.rows() || upstream.height != z_c.height || upstream.width != z_c.width)
        throw Error(ErrorCode::ShapeMismatch, "upstream gradient does not match condition latent");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.weights.size());
    run.backward(from_image(upstream).data, kEncFirst, kEncLast, caches, z_c.height, z_c.width, grad);
    return grad;
}

Eigen::VectorXd predict_noise_vjp(const Image &z_t, const GeometryCondition &cond, int t,
                                  const DenoiserParams &params, const NoiseSchedule &sched,
                                  const Image &upstream) {
    sched.check_timestep(t);
    require_same_shape(z_t, upstream, "predict_noise_vjp");
    const ForwardPass f = full_forward(z_t, cond, t, params, sched);
    return full_backward(f, params, from_image(upstream).data);
}

double train_step(std::span<const TrainingPair> batch, DenoiserParams &params, const NoiseSchedule &sched,
                  DenoiserOptimizer &opt, std::mt19937_64 &rng) {
    if (batch.empty()) throw Error(ErrorCode::InvalidArgument, "empty training batch");
    const auto n = std::ptrdiff_t(batch.size());

    // Draw all randomness up front so the result does not depend on thread scheduling.
    std::vector<int> steps(batch.size());
    std::vector<Image> noise(batch.size());
    std::uniform_int_distribution<int> pick_t(1, sched.steps);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        steps[i] = pick_t(rng);
        noise[i] = standard_normal(3, batch[i].reference.height, batch[i].reference.width, rng);
    }

    std::vector<Eigen::VectorXd> grads(batch.size());
    std::vector<double> losses(batch.size());
    double elements = 0.0;
    for (const auto &b : batch) elements += double(b.reference.size());

#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto &pair = batch[std::size_t(i)];
        const Image z_v = image_to_latent(pair.reference);
        const Image z_t = add_noise(z_v, steps[std::size_t(i)], noise[std::size_t(i)], sched);
        const ForwardPass f = full_forward(z_t, pair.condition, steps[std::size_t(i)], params, sched);
        const Matrix eps = from_image(noise[std::size_t(i)]).data;
        // Weight 1 / alpha_t^2 turns the noise error into the velocity error.
        const double weight = 1.0 / (f.output_scale * f.output_scale);
        const Matrix residual = f.prediction.data - eps;
        losses[std::size_t(i)] = weight * residual.squaredNorm();
        grads[std::size_t(i)] = full_backward(f, params, (2.0 * weight / elements) * residual);
    }

    double loss = 0.0;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.weights.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        loss += losses[i];
        grad += grads[i];
    }
    loss /= elements;
    if (!std::isfinite(loss) || !grad.allFinite()) throw Error(ErrorCode::NumericalError, "non-finite denoiser loss");

    if (opt.m.size() != params.weights.size()) {
        opt.m = Eigen::VectorXd::Zero(params.weights.size());
        opt.v = Eigen::VectorXd::Zero(params.weights.size());
        opt.step = 0;
    }
    opt.step += 1;
    const double bc1 = 1.0 - std::pow(0.9, double(opt.step));
    const double bc2 = 1.0 - std::pow(0.999, double(opt.step));
    opt.m = 0.9 * opt.m + 0.1 * grad;
    opt.v = 0.999 * opt.v + 0.001 * grad.cwiseProduct(grad);
    params.weights.array() -= opt.lr * (opt.m.array() / bc1) / ((opt.v.array() / bc2).sqrt() + 1e-8);
    return loss;
}

Image ddim_step(const Image &z_t, const Image &eps_hat, int t, int s, const NoiseSchedule &sched) {
    sched.check_timestep(t);
    sched.check_timestep(s);
    require_same_shape(z_t, eps_hat, "ddim_step");
    const double a_t = sched.alpha[std::size_t(t)], s_t = sched.sigma[std::size_t(t)];
    const double a_s = sched.alpha[std::size_t(s)], s_s = sched.sigma[std::size_t(s)];
    Image out = z_t;
    const Eigen::ArrayXd x0 = ((z_t.data - s_t * eps_hat.data) / a_t).max(-1.0).min(1.0);
    out.data = a_s * x0 + s_s * eps_hat.data;
    return out;
}

Image refine(const GeometryCondition &cond, const DenoiserParams &params, const NoiseSchedule &sched,
             int sample_steps, std::uint64_t seed) {
    if (sample_steps < 1 || sample_steps > sched.steps)
        throw Error(ErrorCode::InvalidArgument, "sample_steps must be in [1, " + std::to_string(sched.steps) + "]");
    const Image z_c = encode_condition(cond, params);
    std::mt19937_64 rng(seed);
    Image z = standard_normal(3, cond.color.height, cond.color.width, rng);
    for (int i = sample_steps; i >= 1; --i) {
        const int t = int(std::lround(double(i) * sched.steps / sample_steps));
        const int s = int(std::lround(double(i - 1) * sched.steps / sample_steps));
        const Image eps_hat = predict_noise(z, z_c, t, params, sched);
        z = ddim_step(z, eps_hat, t, s, sched);
    }
    return latent_to_image(z);
}

std::vector<double> train_refiner(std::span<const TrainingPair> pairs, DenoiserParams &params,
                                  const NoiseSchedule &sched, DenoiserOptimizer &opt,
                                  const RefinerTrainConfig &cfg) {
    if (pairs.empty()) throw Error(ErrorCode::InvalidArgument, "no training pairs");
    opt.lr = cfg.lr;
    std::mt19937_64 rng(cfg.seed);
    std::vector<double> curve;
    curve.reserve(std::size_t(cfg.steps));
    std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<TrainingPair> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const auto &p = pairs[pick(rng)];
            const int h = p.reference.height, w = p.reference.width;
            if (cfg.crop <= 0 || cfg.crop >= h || cfg.crop >= w) {
                batch.push_back(p);
                continue;
            }
            const int y0 = std::uniform_int_distribution<int>(0, h - cfg.crop)(rng);
            const int x0 = std::uniform_int_distribution<int>(0, w - cfg.crop)(rng);
            const int c = cfg.crop;
            batch.push_back({{crop(p.condition.color, y0, x0, c, c), crop(p.condition.depth, y0, x0, c, c),
                              crop(p.condition.alpha, y0, x0, c, c)},
                             crop(p.reference, y0, x0, c, c)});
        }
        curve.push_back(train_step(batch, params, sched, opt, rng));
    }
    return curve;
}

void save_denoiser(const std::string &path, const DenoiserParams &params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot open for writing: " + path);
    f.write("FGDN", 4);
    put_u32(f, 1);
    put_u32(f, params.architecture_hash());
    for (Eigen::Index i = 0; i < params.weights.size(); ++i)
        put_u32(f, std::bit_cast<std::uint32_t>(static_cast<float>(params.weights[i])));
    if (!f) throw Error(ErrorCode::IoError, "write failed: " + path);
}

DenoiserParams load_denoiser(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot open for reading: " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "FGDN", 4) != 0)
        throw Error(ErrorCode::IoError, "bad FGDN magic: " + path);
    if (get_u32(f) != 1) throw Error(ErrorCode::IoError, "unsupported FGDN version: " + path);
    const std::uint32_t arch = get_u32(f);
    for (int c = 1; c <= 64; ++c) {
        DenoiserParams p(c);
        if (p.architecture_hash() != arch) continue;
        for (Eigen::Index i = 0; i < p.weights.size(); ++i) p.weights[i] = std::bit_cast<float>(get_u32(f));
        return p;
    }
    throw Error(ErrorCode::IoError, "unknown denoiser architecture in " + path);
}

} // namespace cosplat
