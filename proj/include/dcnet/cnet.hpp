#pragma once

// Coupled spectral-unmixing autoencoder. Encoders map the transformed
// observations to abundance maps; the decoders are pure 1x1 linear
// convolutions whose weights read directly as endmember matrices, kept
// nonnegative by projection after every optimizer step. The sensor
// operators are learned as absolute-value-normalized kernels, so every step
// sees valid convex weights.

#include "dcnet/cube.hpp"
#include "dcnet/nn.hpp"

namespace dcnet {

enum class UnmixStream { lr, hr };
enum class DecodeStream { hs, ms };

struct CnetParams {
    Conv2d enc_lr1, enc_lr2, enc_lr3;
    Conv2d enc_hr1, enc_hr2, enc_hr3;
    Conv2d dec_hs;     // 1x1 n -> L, no bias: the HS endmembers S
    Conv2d dec_ms;     // 1x1 n -> l, no bias: the MS endmembers S-tilde
    Param srf_theta;   // l x L, used through |theta| row normalization
    Param psf_theta;   // r x r, used through |theta| normalization
    int n = 32;
    int hs_bands = 0, ms_bands = 0, ratio = 1;
    bool anc = true;   // clamp01 heads; relu heads when off

    CnetParams() = default;

    CnetParams(int hs, int ms, int r, Rng& rng, int endmembers = 32, bool anc_on = true)
        : enc_lr1("cnet.el1", hs, 64, 3, rng),
          enc_lr2("cnet.el2", 64, 64, 3, rng),
          enc_lr3("cnet.el3", 64, endmembers, 1, rng),
          enc_hr1("cnet.eh1", ms, 64, 3, rng),
          enc_hr2("cnet.eh2", 64, 64, 3, rng),
          enc_hr3("cnet.eh3", 64, endmembers, 1, rng),
          dec_hs("cnet.dhs", endmembers, hs, 1, rng, 1, /*bias=*/false, Constraint::nonnegative),
          dec_ms("cnet.dms", endmembers, ms, 1, rng, 1, /*bias=*/false, Constraint::nonnegative),
          srf_theta("cnet.srf", Tensor::full({ms, hs}, 1.0)),
          psf_theta("cnet.psf", Tensor::full({r, r}, 1.0)),
          n(endmembers), hs_bands(hs), ms_bands(ms), ratio(r) {
        anc = anc_on;
        // decoders start nonnegative so the constraint holds from step zero
        dec_hs.w.project();
        dec_ms.w.project();
    }

    void collect(std::vector<Param*>& out) {
        for (Conv2d* c : {&enc_lr1, &enc_lr2, &enc_lr3, &enc_hr1, &enc_hr2, &enc_hr3, &dec_hs,
                          &dec_ms})
            c->collect(out);
        out.push_back(&srf_theta);
        out.push_back(&psf_theta);
    }
};

/// Abundance map in [0, 1] (clamp01 head) with spatial size preserved.
inline Tensor unmix(Tape& tape, const Tensor& img, UnmixStream stream, const CnetParams& p) {
    const bool lr = stream == UnmixStream::lr;
    const int want = lr ? p.hs_bands : p.ms_bands;
    if (img.shape.size() != 3 || img.shape[0] != want)
        throw DimensionError("unmix: expected " + str(want) + "-channel input, got " +
                             shape_str(img.shape));
    const Conv2d& c1 = lr ? p.enc_lr1 : p.enc_hr1;
    const Conv2d& c2 = lr ? p.enc_lr2 : p.enc_hr2;
    const Conv2d& c3 = lr ? p.enc_lr3 : p.enc_hr3;
    Tensor h = activation(c1.forward(tape, img), Act::relu);
    h = activation(c2.forward(tape, h), Act::relu);
    h = c3.forward(tape, h);
    return activation(h, p.anc ? Act::clamp01 : Act::relu);
}

/// Linear 1x1 decode: no bias, no activation, weights read as endmembers.
inline Tensor decode(Tape& tape, const Tensor& abund, DecodeStream stream, const CnetParams& p) {
    if (abund.shape.size() != 3 || abund.shape[0] != p.n)
        throw DimensionError("decode: expected " + str(p.n) + "-channel abundances, got " +
                             shape_str(abund.shape));
    const Conv2d& dec = stream == DecodeStream::hs ? p.dec_hs : p.dec_ms;
    return dec.forward(tape, abund);
}

/// Fused estimate: high-resolution abundances through the HS endmembers.
inline Tensor fuse(Tape& tape, const Tensor& ybar, const CnetParams& p) {
    return decode(tape, unmix(tape, ybar, UnmixStream::hr, p), DecodeStream::hs, p);
}

/// Learned spectral response |theta| rows normalized to sum 1, applied as a
/// 1x1 convolution along the band axis.
inline Tensor apply_learned_srf(Tape& tape, const Tensor& zhat, const CnetParams& p,
                                bool frozen = false) {
    Tensor theta = frozen ? p.srf_theta.value : p.srf_theta.attach(tape);
    Tensor rows = normalize_rows(activation(theta, Act::abs), 1e-8);
    Tensor kernel = reshape(rows, {p.ms_bands, p.hs_bands, 1, 1});
    return conv2d(zhat, kernel, 1, 0);
}

/// Learned blur-downsample: |theta| normalized to sum 1, one shared r x r
/// kernel at stride r over every band.
inline Tensor apply_learned_psf(Tape& tape, const Tensor& zhat, const CnetParams& p,
                                bool frozen = false) {
    Tensor theta = frozen ? p.psf_theta.value : p.psf_theta.attach(tape);
    const int r = p.ratio;
    Tensor flat = reshape(theta, {1, r * r});
    Tensor kernel = reshape(normalize_rows(activation(flat, Act::abs), 1e-8), {r, r});
    return conv2d_per_band(zhat, kernel, r);
}

/// The learned SRF as a plain row-normalized matrix (for export/diagnosis).
inline Tensor learned_srf_matrix(const CnetParams& p) {
    return normalize_rows(activation(p.srf_theta.value, Act::abs), 1e-8);
}

inline Tensor learned_psf_kernel(const CnetParams& p) {
    const int r = p.ratio;
    Tensor flat = reshape(p.psf_theta.value, {1, r * r});
    return reshape(normalize_rows(activation(flat, Act::abs), 1e-8), {r, r});
}

/// Sum of six mean-l1 terms: both autoencoder reconstructions, both cycle
/// closures of the fused estimate, and both transformed-image anchors.
inline Tensor reconstruction_loss(const Tensor& xhat, const Tensor& x, const Tensor& yhat,
                                  const Tensor& y, const Tensor& xcyc, const Tensor& ycyc,
                                  const Tensor& xbar, const Tensor& ybar) {
    auto check = [](const char* term, const Tensor& a, const Tensor& b) {
        if (a.shape != b.shape)
            throw DimensionError(std::string("reconstruction_loss: ") + term + " shapes " +
                                 shape_str(a.shape) + " vs " + shape_str(b.shape));
    };
    check("xhat-x", xhat, x);
    check("yhat-y", yhat, y);
    check("xcyc-x", xcyc, x);
    check("ycyc-y", ycyc, y);
    check("xbar-x", xbar, x);
    check("ybar-y", ybar, y);
    Tensor loss = add(l1_loss(xhat, x), l1_loss(yhat, y));
    loss = add(loss, add(l1_loss(xcyc, x), l1_loss(ycyc, y)));
    return add(loss, add(l1_loss(xbar, x), l1_loss(ybar, y)));
}

/// Mean deviation of abundance column sums from one, both streams.
inline Tensor asc_loss(const Tensor& abund_hr, const Tensor& abund_lr) {
    auto column_sum_penalty = [](const Tensor& a) {
        if (a.shape.size() != 3)
            throw DimensionError("asc_loss: expected n x H x W abundances, got " +
                                 shape_str(a.shape));
        const int n = a.shape[0];
        Tensor ones_kernel = Tensor::full({1, n, 1, 1}, 1.0);
        Tensor sums = conv2d(a, ones_kernel, 1, 0);  // 1 x H x W
        return l1_loss(sums, Tensor::full(sums.shape, 1.0));
    };
    return add(column_sum_penalty(abund_hr), column_sum_penalty(abund_lr));
}

/// Read-only snapshot of the factors: decoder weights as endmember matrices
/// plus the given abundance maps.
struct UnmixingFactors {
    Tensor endmembers_hs;  // L x n
    Tensor endmembers_ms;  // l x n
    Tensor abundances_hr;  // n x HW
    Tensor abundances_lr;  // n x hw
};

inline UnmixingFactors extract_factors(const CnetParams& p, const Tensor& abund_hr,
                                       const Tensor& abund_lr) {
    UnmixingFactors f;
    f.endmembers_hs = reshape(p.dec_hs.w.value, {p.hs_bands, p.n}).detached();
    f.endmembers_ms = reshape(p.dec_ms.w.value, {p.ms_bands, p.n}).detached();
    if (abund_hr.shape.size() == 3)
        f.abundances_hr =
            reshape(abund_hr, {abund_hr.shape[0], abund_hr.shape[1] * abund_hr.shape[2]})
                .detached();
    else
        f.abundances_hr = abund_hr.detached();
    if (abund_lr.shape.size() == 3)
        f.abundances_lr =
            reshape(abund_lr, {abund_lr.shape[0], abund_lr.shape[1] * abund_lr.shape[2]})
                .detached();
    else
        f.abundances_lr = abund_lr.detached();
    return f;
}

}  // namespace dcnet
