#pragma once

// Full-reference quality indices for (ground truth, estimate) cube pairs.
// The ground truth argument defines peaks and band means, so PSNR and ERGAS
// are deliberately not symmetric under argument swap.

#include <cmath>
#include <string>
#include <vector>

#include "dcnet/cube.hpp"
#include "dcnet/common.hpp"

namespace dcnet {

constexpr double kPsnrCap = 99.0;

struct MetricsReport {
    double psnr = 0.0;   // dB, higher better, capped at 99
    double sam = 0.0;    // degrees, 0 ideal
    double ergas = 0.0;  // dimensionless, 0 ideal
    double ssim = 0.0;   // [-1, 1], 1 ideal
    double uiqi = 0.0;   // [-1, 1], 1 ideal
    std::vector<double> rmse_per_band;
    double ratio = 1.0;       // the r used by ERGAS
    std::int64_t sam_skipped = 0;  // pixels with near-zero spectral norm
};

namespace detail {
inline void require_same_cube(const char* op, const HsiCube& a, const HsiCube& b) {
    if (a.height != b.height || a.width != b.width || a.bands != b.bands)
        throw DimensionError(std::string(op) + ": cube " + str(a.height) + "x" + str(a.width) +
                             "x" + str(a.bands) + " vs " + str(b.height) + "x" + str(b.width) +
                             "x" + str(b.bands));
}

inline double band_mse(const HsiCube& gt, const HsiCube& est, int b) {
    double acc = 0.0;
    const std::int64_t n = gt.pixels();
    for (std::int64_t p = 0; p < n; ++p) {
        const double d = gt.data[static_cast<std::size_t>(p) * gt.bands + b] -
                         est.data[static_cast<std::size_t>(p) * gt.bands + b];
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}
}  // namespace detail

inline std::vector<double> rmse_per_band(const HsiCube& gt, const HsiCube& est) {
    detail::require_same_cube("rmse_per_band", gt, est);
    std::vector<double> out(static_cast<std::size_t>(gt.bands));
    for (int b = 0; b < gt.bands; ++b) out[static_cast<std::size_t>(b)] =
        std::sqrt(detail::band_mse(gt, est, b));
    return out;
}

/// Mean over bands of 10 log10(1 / MSE_b), peak fixed at 1.0; per-band values
/// capped at 99 dB so identical inputs report exactly 99.
inline double psnr(const HsiCube& gt, const HsiCube& est) {
    detail::require_same_cube("psnr", gt, est);
    double acc = 0.0;
    for (int b = 0; b < gt.bands; ++b) {
        const double mse = detail::band_mse(gt, est, b);
        const double v = mse > 0.0 ? 10.0 * std::log10(1.0 / mse) : kPsnrCap;
        acc += std::min(v, kPsnrCap);
    }
    return acc / static_cast<double>(gt.bands);
}

/// Mean spectral angle in degrees; pixels with either norm below 1e-12 are
/// skipped (count available through the full report).
inline double sam(const HsiCube& gt, const HsiCube& est, std::int64_t* skipped = nullptr) {
    detail::require_same_cube("sam", gt, est);
    const std::int64_t n = gt.pixels();
    double acc = 0.0;
    std::int64_t used = 0, skip = 0;
    for (std::int64_t p = 0; p < n; ++p) {
        const double* a = gt.data.data() + static_cast<std::size_t>(p) * gt.bands;
        const double* b = est.data.data() + static_cast<std::size_t>(p) * gt.bands;
        double na = 0.0, nb = 0.0;
        for (int c = 0; c < gt.bands; ++c) {
            na += a[c] * a[c];
            nb += b[c] * b[c];
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        if (na < 1e-12 || nb < 1e-12) {
            ++skip;
            continue;
        }
        // chord-angle identity 2 asin(|u - v| / 2): same angle as the
        // arccos of the normalized dot product, exact at 0
        double chord = 0.0;
        for (int c = 0; c < gt.bands; ++c) {
            const double d = a[c] / na - b[c] / nb;
            chord += d * d;
        }
        const double half = std::min(std::sqrt(chord) / 2.0, 1.0);
        acc += 2.0 * std::asin(half);
        ++used;
    }
    if (skipped) *skipped = skip;
    if (used == 0) return 0.0;
    return acc / static_cast<double>(used) * (180.0 / 3.14159265358979323846);
}

inline double ergas(const HsiCube& gt, const HsiCube& est, double ratio) {
    detail::require_same_cube("ergas", gt, est);
    if (ratio < 1.0) throw ContractError("ergas: ratio must be >= 1");
    const std::int64_t n = gt.pixels();
    double acc = 0.0;
    for (int b = 0; b < gt.bands; ++b) {
        double mu = 0.0;
        for (std::int64_t p = 0; p < n; ++p)
            mu += gt.data[static_cast<std::size_t>(p) * gt.bands + b];
        mu /= static_cast<double>(n);
        if (std::abs(mu) < 1e-12)
            throw DomainError("ergas: ground-truth band " + str(b) + " has zero mean");
        const double rmse = std::sqrt(detail::band_mse(gt, est, b));
        acc += (rmse / mu) * (rmse / mu);
    }
    return (100.0 / ratio) * std::sqrt(acc / static_cast<double>(gt.bands));
}

namespace detail {
inline std::vector<double> gaussian_window_11(double sigma) {
    std::vector<double> w(121);
    double s = 0.0;
    for (int u = 0; u < 11; ++u)
        for (int v = 0; v < 11; ++v) {
            const double du = u - 5.0, dv = v - 5.0;
            w[static_cast<std::size_t>(u) * 11 + v] =
                std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
            s += w[static_cast<std::size_t>(u) * 11 + v];
        }
    for (double& x : w) x /= s;
    return w;
}
}  // namespace detail

/// Standard SSIM: 11x11 Gaussian window (sigma 1.5), K = (0.01, 0.03),
/// dynamic range 1.0, valid positions only, mean over bands.
inline double ssim(const HsiCube& gt, const HsiCube& est) {
    detail::require_same_cube("ssim", gt, est);
    if (gt.height < 11 || gt.width < 11)
        throw DimensionError("ssim: image must be at least 11x11, got " + str(gt.height) + "x" +
                             str(gt.width));
    static const std::vector<double> win = detail::gaussian_window_11(1.5);
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double band_acc = 0.0;
    for (int b = 0; b < gt.bands; ++b) {
        double acc = 0.0;
        std::int64_t count = 0;
        for (int y = 0; y + 11 <= gt.height; ++y)
            for (int x = 0; x + 11 <= gt.width; ++x) {
                double mx = 0.0, my = 0.0;
                for (int u = 0; u < 11; ++u)
                    for (int v = 0; v < 11; ++v) {
                        const double w = win[static_cast<std::size_t>(u) * 11 + v];
                        mx += w * gt.at(y + u, x + v, b);
                        my += w * est.at(y + u, x + v, b);
                    }
                double vx = 0.0, vy = 0.0, cov = 0.0;
                for (int u = 0; u < 11; ++u)
                    for (int v = 0; v < 11; ++v) {
                        const double w = win[static_cast<std::size_t>(u) * 11 + v];
                        const double dx = gt.at(y + u, x + v, b) - mx;
                        const double dy = est.at(y + u, x + v, b) - my;
                        vx += w * dx * dx;
                        vy += w * dy * dy;
                        cov += w * dx * dy;
                    }
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                       ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        band_acc += acc / static_cast<double>(count);
    }
    return band_acc / static_cast<double>(gt.bands);
}

/// Universal image quality index: sliding 8x8 windows (step 1), windows with
/// zero denominator skipped, mean over windows then bands.
inline double uiqi(const HsiCube& gt, const HsiCube& est) {
    detail::require_same_cube("uiqi", gt, est);
    const int win = 8;
    if (gt.height < win || gt.width < win)
        throw DimensionError("uiqi: image must be at least 8x8, got " + str(gt.height) + "x" +
                             str(gt.width));
    const double nw = static_cast<double>(win) * win;
    double band_acc = 0.0;
    for (int b = 0; b < gt.bands; ++b) {
        double acc = 0.0;
        std::int64_t count = 0;
        for (int y = 0; y + win <= gt.height; ++y)
            for (int x = 0; x + win <= gt.width; ++x) {
                double mx = 0.0, my = 0.0;
                for (int u = 0; u < win; ++u)
                    for (int v = 0; v < win; ++v) {
                        mx += gt.at(y + u, x + v, b);
                        my += est.at(y + u, x + v, b);
                    }
                mx /= nw;
                my /= nw;
                double vx = 0.0, vy = 0.0, cov = 0.0;
                for (int u = 0; u < win; ++u)
                    for (int v = 0; v < win; ++v) {
                        const double dx = gt.at(y + u, x + v, b) - mx;
                        const double dy = est.at(y + u, x + v, b) - my;
                        vx += dx * dx;
                        vy += dy * dy;
                        cov += dx * dy;
                    }
                vx /= nw - 1.0;
                vy /= nw - 1.0;
                cov /= nw - 1.0;
                const double denom = (vx + vy) * (mx * mx + my * my);
                if (denom == 0.0) continue;
                acc += 4.0 * cov * mx * my / denom;
                ++count;
            }
        if (count > 0) band_acc += acc / static_cast<double>(count);
    }
    return band_acc / static_cast<double>(gt.bands);
}

inline MetricsReport evaluate(const HsiCube& gt, const HsiCube& est, double ratio) {
    MetricsReport r;
    r.psnr = psnr(gt, est);
    r.sam = sam(gt, est, &r.sam_skipped);
    r.ergas = ergas(gt, est, ratio);
    r.ssim = ssim(gt, est);
    r.uiqi = uiqi(gt, est);
    r.rmse_per_band = rmse_per_band(gt, est);
    r.ratio = ratio;
    return r;
}

}  // namespace dcnet
