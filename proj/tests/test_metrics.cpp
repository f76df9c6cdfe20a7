#include "cosplat/error.hpp"
#include "cosplat/metrics.hpp"

#include "oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace cosplat;

namespace {

Image random_image(std::mt19937_64 &rng, int c, int h, int w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(c, h, w);
    for (Eigen::Index i = 0; i < img.size(); ++i) img.data[i] = u(rng);
    return img;
}

double naive_psnr(const Image &a, const Image &b) {
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < a.channels; ++c)
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) {
                const double d = a(c, y, x) - b(c, y, x);
                sum += d * d;
                ++n;
            }
    return -10.0 * std::log10(sum / n);
}

// Window-by-window SSIM with an 11x11 Gaussian, sigma 1.5.
double naive_ssim(const Image &a, const Image &b) {
    const int r = 5;
    double w[11][11], wsum = 0.0;
    for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) wsum += (w[i + r][j + r] = std::exp(-(i * i + j * j) / (2 * 1.5 * 1.5)));
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        double plane = 0.0;
        int count = 0;
        for (int y = r; y < a.height - r; ++y)
            for (int x = r; x < a.width - r; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int i = -r; i <= r; ++i)
                    for (int j = -r; j <= r; ++j) {
                        const double k = w[i + r][j + r] / wsum;
                        const double p = a(c, y + i, x + j), q = b(c, y + i, x + j);
                        mx += k * p;
                        my += k * q;
                        sxx += k * p * p;
                        syy += k * q * q;
                        sxy += k * p * q;
                    }
                sxx -= mx * mx;
                syy -= my * my;
                sxy -= mx * my;
                plane += (2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
                ++count;
            }
        total += plane / count;
    }
    return total / a.channels;
}

} // namespace

TEST(Psnr, IdenticalIsInfinite) {
    std::mt19937_64 rng(1);
    const Image a = random_image(rng, 3, 16, 16);
    EXPECT_EQ(psnr(a, a), kInf);
}

TEST(Psnr, UniformDifference) {
    Image a(3, 8, 8, 0.5), b(3, 8, 8, 0.6);
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
}

TEST(Psnr, MatchesNaiveSumAndIsSymmetric) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 10; ++i) {
        const Image a = random_image(rng, 3, 17, 23), b = random_image(rng, 3, 17, 23);
        EXPECT_NEAR(psnr(a, b), naive_psnr(a, b), 1e-9);
        EXPECT_EQ(psnr(a, b), psnr(b, a));
    }
}

TEST(Psnr, ShapeMismatch) {
    try {
        psnr(Image(3, 8, 8), Image(3, 8, 9));
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
}

TEST(Ssim, IdenticalIsOne) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 5; ++i) {
        const Image a = random_image(rng, 3, 20, 20);
        EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
    }
}

TEST(Ssim, NegativeIsLow) {
    std::mt19937_64 rng(4);
    const Image a = random_image(rng, 3, 24, 24);
    Image neg = a;
    neg.data = 1.0 - a.data;
    EXPECT_LT(ssim(a, neg), 0.5);
}

TEST(Ssim, ConstantImagesClosedForm) {
    const double c1 = 0.01 * 0.01;
    for (auto [v1, v2] : {std::pair{0.2, 0.7}, std::pair{0.5, 0.5}, std::pair{0.0, 1.0}}) {
        const double expected = (2 * v1 * v2 + c1) / (v1 * v1 + v2 * v2 + c1);
        EXPECT_NEAR(ssim(Image(3, 12, 12, v1), Image(3, 12, 12, v2)), expected, 1e-6);
    }
}

TEST(Ssim, MatchesWindowByWindowOracle) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 3; ++i) {
        const Image a = random_image(rng, 3, 19, 25);
        Image b = a;
        std::normal_distribution<double> n(0.0, 0.1 * (i + 1));
        for (Eigen::Index k = 0; k < b.size(); ++k) b.data[k] += n(rng);
        EXPECT_NEAR(ssim(a, b), naive_ssim(a, b), 1e-9);
        const double s = ssim(a, b);
        EXPECT_GE(s, -1.0);
        EXPECT_LE(s, 1.0);
    }
}

TEST(Ssim, TranslationWithIdenticalCropIsUnchanged) {
    std::mt19937_64 rng(6);
    const Image a = random_image(rng, 3, 30, 30), b = random_image(rng, 3, 30, 30);
    const double base = ssim(crop(a, 2, 3, 20, 20), crop(b, 2, 3, 20, 20));
    // Same content placed at another offset of a larger canvas.
    Image a2(3, 40, 40), b2(3, 40, 40);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 20; ++x) {
                a2(c, y + 11, x + 7) = a(c, y + 2, x + 3);
                b2(c, y + 11, x + 7) = b(c, y + 2, x + 3);
            }
    EXPECT_NEAR(ssim(crop(a2, 11, 7, 20, 20), crop(b2, 11, 7, 20, 20)), base, 1e-9);
}

TEST(Ssim, TooSmall) {
    try {
        ssim(Image(3, 10, 30), Image(3, 10, 30));
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::ImageTooSmall);
    }
}

TEST(Ssim, LumaOptionOnGrayImagesMatchesPerChannel) {
    std::mt19937_64 rng(7);
    const Image g1 = random_image(rng, 1, 16, 16), g2 = random_image(rng, 1, 16, 16);
    Image a(3, 16, 16), b(3, 16, 16);
    for (int c = 0; c < 3; ++c) {
        a.plane(c) = g1.plane(0);
        b.plane(c) = g2.plane(0);
    }
    SsimOptions luma;
    luma.luma = true;
    EXPECT_NEAR(ssim(a, b, luma), ssim(a, b), 1e-9);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    const Image a = random_image(rng, 2, 13, 14), b = random_image(rng, 2, 13, 14);
    const SsimGradient g = ssim_with_gradient(a, b);
    EXPECT_NEAR(g.value, ssim(a, b), 1e-12);
    const auto f = [&](const Eigen::VectorXd &x) {
        Image p = a;
        p.data = x.array();
        return ssim(p, b);
    };
    const Eigen::VectorXd numeric = oracle::finite_difference(f, a.data.matrix(), 1e-5);
    const auto agreement = oracle::compare_gradients(g.grad.data.matrix(), numeric, 1e-4, 1e-8);
    EXPECT_EQ(agreement.passed, agreement.considered);
}

TEST(EvaluateProtocol, MethodEqualsOracle) {
    std::mt19937_64 rng(9);
    std::vector<Image> imgs;
    for (int i = 0; i < 6; ++i) imgs.push_back(random_image(rng, 3, 16, 16));
    std::vector<EvalFrame> frames;
    const std::vector<double> shifts = {1.0, -1.0};
    for (int i = 0; i < 6; ++i) frames.push_back({shifts[i % 2], 2 * (i / 2), &imgs[i]});
    const auto reports = evaluate_protocol(frames, frames, shifts);
    ASSERT_EQ(reports.size(), 2u);
    EXPECT_EQ(reports[0].shift_m, 1.0);
    EXPECT_EQ(reports[1].shift_m, -1.0);
    for (const auto &r : reports) {
        EXPECT_EQ(r.frames.size(), 3u);
        EXPECT_EQ(r.mean_psnr, kInf);
        EXPECT_NEAR(r.mean_ssim, 1.0, 1e-9);
    }
    const auto j = to_json(reports);
    EXPECT_EQ(j[0]["mean"]["psnr"], "inf");
    EXPECT_TRUE(j[0]["fid"].is_null());
}

TEST(EvaluateProtocol, FiveFramesOneShift) {
    std::mt19937_64 rng(10);
    std::vector<Image> m, o;
    std::vector<EvalFrame> mf, of;
    for (int i = 0; i < 5; ++i) {
        m.push_back(random_image(rng, 3, 12, 12));
        o.push_back(random_image(rng, 3, 12, 12));
    }
    for (int i = 0; i < 5; ++i) {
        mf.push_back({2.0, 2 * i, &m[i]});
        of.push_back({2.0, 2 * i, &o[i]});
    }
    const std::vector<double> shifts = {2.0};
    const auto r = evaluate_protocol(mf, of, shifts);
    ASSERT_EQ(r.size(), 1u);
    ASSERT_EQ(r[0].frames.size(), 5u);
    double mean = 0.0;
    std::vector<double> ps;
    for (int i = 0; i < 5; ++i) {
        EXPECT_NEAR(r[0].frames[i].psnr, naive_psnr(m[i], o[i]), 1e-9);
        mean += r[0].frames[i].psnr / 5;
        ps.push_back(r[0].frames[i].psnr);
    }
    std::sort(ps.begin(), ps.end());
    EXPECT_NEAR(r[0].mean_psnr, mean, 1e-9);
    EXPECT_EQ(r[0].p10_psnr, ps[0]);
    EXPECT_EQ(r[0].p50_psnr, ps[2]);
    EXPECT_EQ(r[0].p90_psnr, ps[4]);
    EXPECT_EQ(to_json(r[0])["count"], 5);
}

TEST(EvaluateProtocol, MisalignedPairingRejected) {
    Image img(3, 12, 12, 0.5);
    std::vector<EvalFrame> m = {{1.0, 0, &img}, {1.0, 2, &img}};
    std::vector<EvalFrame> o = {{1.0, 2, &img}, {1.0, 0, &img}};
    const std::vector<double> shifts = {1.0};
    try {
        evaluate_protocol(m, o, shifts);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
    }
    o.pop_back();
    EXPECT_THROW(evaluate_protocol(m, o, shifts), Error);
}
