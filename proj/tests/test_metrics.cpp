#include "dcnet/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace dcnet;

namespace {

HsiCube random_cube(int h, int w, int b, std::uint64_t seed, double lo = 0.05, double hi = 0.95) {
    Rng rng(seed);
    HsiCube c(h, w, b);
    for (double& v : c.data) v = rng.uniform(lo, hi);
    return c;
}

// Independent scalar recomputations of each index, written against the cube
// layout directly.
double psnr_oracle(const HsiCube& gt, const HsiCube& est) {
    double acc = 0.0;
    for (int b = 0; b < gt.bands; ++b) {
        double mse = 0.0;
        for (int y = 0; y < gt.height; ++y)
            for (int x = 0; x < gt.width; ++x) {
                const double d = gt.at(y, x, b) - est.at(y, x, b);
                mse += d * d;
            }
        mse /= static_cast<double>(gt.pixels());
        acc += std::min(mse > 0 ? 10.0 * std::log10(1.0 / mse) : 99.0, 99.0);
    }
    return acc / gt.bands;
}

double ergas_oracle(const HsiCube& gt, const HsiCube& est, double r) {
    double acc = 0.0;
    for (int b = 0; b < gt.bands; ++b) {
        double mse = 0.0, mu = 0.0;
        for (int y = 0; y < gt.height; ++y)
            for (int x = 0; x < gt.width; ++x) {
                const double d = gt.at(y, x, b) - est.at(y, x, b);
                mse += d * d;
                mu += gt.at(y, x, b);
            }
        mse /= static_cast<double>(gt.pixels());
        mu /= static_cast<double>(gt.pixels());
        acc += mse / (mu * mu);
    }
    return 100.0 / r * std::sqrt(acc / gt.bands);
}

double uiqi_oracle(const HsiCube& gt, const HsiCube& est) {
    double band_acc = 0.0;
    for (int b = 0; b < gt.bands; ++b) {
        double acc = 0.0;
        int count = 0;
        for (int y = 0; y + 8 <= gt.height; ++y)
            for (int x = 0; x + 8 <= gt.width; ++x) {
                std::vector<double> xs, ys;
                for (int u = 0; u < 8; ++u)
                    for (int v = 0; v < 8; ++v) {
                        xs.push_back(gt.at(y + u, x + v, b));
                        ys.push_back(est.at(y + u, x + v, b));
                    }
                double mx = 0, my = 0;
                for (std::size_t i = 0; i < xs.size(); ++i) {
                    mx += xs[i];
                    my += ys[i];
                }
                mx /= 64;
                my /= 64;
                double vx = 0, vy = 0, cov = 0;
                for (std::size_t i = 0; i < xs.size(); ++i) {
                    vx += (xs[i] - mx) * (xs[i] - mx);
                    vy += (ys[i] - my) * (ys[i] - my);
                    cov += (xs[i] - mx) * (ys[i] - my);
                }
                vx /= 63;
                vy /= 63;
                cov /= 63;
                const double den = (vx + vy) * (mx * mx + my * my);
                if (den == 0) continue;
                acc += 4 * cov * mx * my / den;
                ++count;
            }
        band_acc += acc / count;
    }
    return band_acc / gt.bands;
}

double ssim_oracle(const HsiCube& gt, const HsiCube& est) {
    // rebuild the Gaussian window independently
    std::vector<double> w(121);
    double ws = 0;
    for (int u = 0; u < 11; ++u)
        for (int v = 0; v < 11; ++v) {
            w[u * 11 + v] = std::exp(-((u - 5.0) * (u - 5.0) + (v - 5.0) * (v - 5.0)) / 4.5);
            ws += w[u * 11 + v];
        }
    for (double& x : w) x /= ws;
    const double c1 = 1e-4, c2 = 9e-4;
    double band_acc = 0.0;
    for (int b = 0; b < gt.bands; ++b) {
        double acc = 0.0;
        int count = 0;
        for (int y = 0; y + 11 <= gt.height; ++y)
            for (int x = 0; x + 11 <= gt.width; ++x) {
                double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
                for (int u = 0; u < 11; ++u)
                    for (int v = 0; v < 11; ++v) {
                        const double a = gt.at(y + u, x + v, b);
                        const double e = est.at(y + u, x + v, b);
                        mx += w[u * 11 + v] * a;
                        my += w[u * 11 + v] * e;
                        xx += w[u * 11 + v] * a * a;
                        yy += w[u * 11 + v] * e * e;
                        xy += w[u * 11 + v] * a * e;
                    }
                const double vx = xx - mx * mx, vy = yy - my * my, cov = xy - mx * my;
                acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        band_acc += acc / count;
    }
    return band_acc / gt.bands;
}

}  // namespace

TEST(Psnr, IdenticalInputsHitCap) {
    HsiCube c = random_cube(12, 12, 3, 1);
    EXPECT_DOUBLE_EQ(psnr(c, c), 99.0);
}

TEST(Psnr, ConstantErrorClosedForm) {
    HsiCube gt = random_cube(12, 12, 3, 2, 0.2, 0.8);
    HsiCube est = gt;
    for (double& v : est.data) v += 0.1;
    EXPECT_NEAR(psnr(gt, est), 20.0, 1e-6);
}

TEST(Psnr, MatchesLoopOracle) {
    HsiCube gt = random_cube(16, 16, 4, 3);
    HsiCube est = random_cube(16, 16, 4, 4);
    EXPECT_NEAR(psnr(gt, est), psnr_oracle(gt, est), 1e-9);
}

TEST(Psnr, ShapeMismatch) {
    EXPECT_THROW(psnr(random_cube(8, 8, 2, 5), random_cube(8, 8, 3, 6)), DimensionError);
}

TEST(Sam, ClosedFormAngles) {
    HsiCube a(1, 1, 2), b(1, 1, 2);
    a.at(0, 0, 0) = 1;
    a.at(0, 0, 1) = 0;
    b.at(0, 0, 0) = 1;
    b.at(0, 0, 1) = 0;
    EXPECT_NEAR(sam(a, b), 0.0, 1e-12);

    b.at(0, 0, 0) = 0;
    b.at(0, 0, 1) = 1;
    EXPECT_NEAR(sam(a, b), 90.0, 1e-9);

    a.at(0, 0, 0) = 1;
    a.at(0, 0, 1) = 1;
    b.at(0, 0, 0) = 1;
    b.at(0, 0, 1) = 0;
    EXPECT_NEAR(sam(a, b), 45.0, 1e-9);
}

TEST(Sam, SkipsZeroNormPixels) {
    HsiCube a(1, 2, 2), b(1, 2, 2);
    a.at(0, 0, 0) = 1;  // pixel 0: [1, 1] vs [1, 0] -> 45 degrees
    a.at(0, 0, 1) = 1;
    b.at(0, 0, 0) = 1;
    // pixel 1 of a is exactly zero: skipped
    b.at(0, 1, 0) = 0.5;
    std::int64_t skipped = 0;
    EXPECT_NEAR(sam(a, b, &skipped), 45.0, 1e-9);
    EXPECT_EQ(skipped, 1);
}

TEST(Ergas, IdenticalInputsAreZero) {
    HsiCube c = random_cube(8, 8, 3, 7);
    EXPECT_DOUBLE_EQ(ergas(c, c, 4.0), 0.0);
}

TEST(Ergas, SingleBandClosedForm) {
    // RMSE equal to the band mean at ratio 4 gives exactly 100/4 = 25
    HsiCube gt(4, 4, 1), est(4, 4, 1);
    for (double& v : gt.data) v = 0.5;
    for (double& v : est.data) v = 1.0;  // error 0.5 = mean
    EXPECT_NEAR(ergas(gt, est, 4.0), 25.0, 1e-9);
}

TEST(Ergas, MatchesLoopOracle) {
    HsiCube gt = random_cube(12, 12, 5, 8);
    HsiCube est = random_cube(12, 12, 5, 9);
    EXPECT_NEAR(ergas(gt, est, 8.0), ergas_oracle(gt, est, 8.0), 1e-9);
}

TEST(Ergas, ZeroMeanBandNamesBand) {
    HsiCube gt(4, 4, 2), est = random_cube(4, 4, 2, 10);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) gt.at(y, x, 0) = 0.5;  // band 1 stays zero
    try {
        ergas(gt, est, 2.0);
        FAIL() << "expected DomainError";
    } catch (const DomainError& e) {
        EXPECT_NE(std::string(e.what()).find("band 1"), std::string::npos);
    }
}

TEST(Ergas, ErrorScalingIsExactlyLinear) {
    HsiCube gt = random_cube(8, 8, 3, 11);
    HsiCube est1 = gt, est2 = gt;
    Rng rng(12);
    for (std::size_t i = 0; i < gt.data.size(); ++i) {
        const double e = rng.uniform(-0.05, 0.05);
        est1.data[i] += e;
        est2.data[i] += 2.0 * e;
    }
    EXPECT_NEAR(ergas(gt, est2, 4.0), 2.0 * ergas(gt, est1, 4.0), 1e-9);
    auto r1 = rmse_per_band(gt, est1);
    auto r2 = rmse_per_band(gt, est2);
    for (std::size_t b = 0; b < r1.size(); ++b) EXPECT_NEAR(r2[b], 2.0 * r1[b], 1e-12);
}

TEST(Ssim, IdenticalNonConstantImagesGiveOne) {
    HsiCube c = random_cube(16, 16, 2, 13);
    EXPECT_NEAR(ssim(c, c), 1.0, 1e-9);
}

TEST(Ssim, AnticorrelationLowersScore) {
    HsiCube gt = random_cube(16, 16, 1, 14);
    HsiCube est = gt;
    for (double& v : est.data) v = 1.0 - v;
    EXPECT_LT(ssim(gt, est), 1.0);
}

TEST(Ssim, MatchesLoopOracle) {
    HsiCube gt = random_cube(16, 16, 2, 15);
    HsiCube est = random_cube(16, 16, 2, 16);
    EXPECT_NEAR(ssim(gt, est), ssim_oracle(gt, est), 1e-7);
}

TEST(Ssim, TooSmallImageRejected) {
    HsiCube c = random_cube(8, 8, 1, 17);
    EXPECT_THROW(ssim(c, c), DimensionError);
}

TEST(Uiqi, IdenticalNonConstantImagesGiveOne) {
    HsiCube c = random_cube(12, 12, 2, 18);
    EXPECT_NEAR(uiqi(c, c), 1.0, 1e-9);
}

TEST(Uiqi, LinearDistortionLowersScore) {
    HsiCube gt = random_cube(12, 12, 1, 19);
    HsiCube est = gt;
    for (double& v : est.data) v = 0.5 * v + 0.2;
    EXPECT_LT(uiqi(gt, est), 1.0);
}

TEST(Uiqi, MatchesLoopOracle) {
    HsiCube gt = random_cube(12, 12, 3, 20);
    HsiCube est = random_cube(12, 12, 3, 21);
    EXPECT_NEAR(uiqi(gt, est), uiqi_oracle(gt, est), 1e-9);
}

TEST(RmsePerBand, IdenticalAndSingleBandError) {
    HsiCube gt = random_cube(8, 8, 3, 22);
    auto zero = rmse_per_band(gt, gt);
    for (double v : zero) EXPECT_DOUBLE_EQ(v, 0.0);

    HsiCube est = gt;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) est.at(y, x, 0) += 0.2;
    auto r = rmse_per_band(gt, est);
    EXPECT_NEAR(r[0], 0.2, 1e-12);
    EXPECT_DOUBLE_EQ(r[1], 0.0);
    EXPECT_DOUBLE_EQ(r[2], 0.0);
}

TEST(Symmetry, SamSsimUiqiSymmetricErgasNot) {
    HsiCube a = random_cube(16, 16, 3, 23, 0.3, 0.9);
    HsiCube b = random_cube(16, 16, 3, 24, 0.05, 0.4);  // different scale from a
    EXPECT_NEAR(sam(a, b), sam(b, a), 1e-12);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    EXPECT_NEAR(uiqi(a, b), uiqi(b, a), 1e-12);
    // gt defines the band means, so swapping arguments changes ERGAS
    EXPECT_NE(ergas(a, b, 4.0), ergas(b, a, 4.0));
    // PSNR uses a fixed peak of 1.0, which makes it symmetric by design
    EXPECT_NEAR(psnr(a, b), psnr(b, a), 1e-12);
}

TEST(Monotonicity, NoiseDegradesEveryIndexInItsDirection) {
    HsiCube gt = random_cube(16, 16, 3, 25, 0.2, 0.8);
    double last_psnr = 1e9, last_ssim = 2.0, last_sam = -1.0, last_ergas = -1.0;
    int level = 0;
    for (double sigma : {0.01, 0.03, 0.09}) {
        HsiCube est = gt;
        Rng rng(100 + static_cast<std::uint64_t>(level++));
        for (double& v : est.data) v += sigma * rng.normal();
        const double p = psnr(gt, est), s = ssim(gt, est);
        const double a = sam(gt, est), e = ergas(gt, est, 4.0);
        EXPECT_LT(p, last_psnr);
        EXPECT_LT(s, last_ssim);
        EXPECT_GT(a, last_sam);
        EXPECT_GT(e, last_ergas);
        last_psnr = p;
        last_ssim = s;
        last_sam = a;
        last_ergas = e;
    }
}

TEST(Evaluate, IdenticalInputsMatchIdealRow) {
    HsiCube c = random_cube(16, 16, 3, 26);
    MetricsReport r = evaluate(c, c, 8.0);
    EXPECT_DOUBLE_EQ(r.psnr, 99.0);
    EXPECT_NEAR(r.sam, 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(r.ergas, 0.0);
    EXPECT_NEAR(r.ssim, 1.0, 1e-9);
    EXPECT_NEAR(r.uiqi, 1.0, 1e-9);
    EXPECT_EQ(r.rmse_per_band.size(), 3u);
    EXPECT_DOUBLE_EQ(r.ratio, 8.0);
}
