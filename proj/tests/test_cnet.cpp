#include "dcnet/cnet.hpp"

#include <gtest/gtest.h>

using namespace dcnet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

CnetParams small_params(std::uint64_t seed, int hs = 31, int ms = 3, int r = 8, int n = 32,
                        bool anc = true) {
    Rng rng = substream(seed, "init");
    return CnetParams(hs, ms, r, rng, n, anc);
}

}  // namespace

TEST(Unmix, ShapeContract) {
    CnetParams p = small_params(0);
    Rng rng(1);
    Tape tape;
    Tensor abund = unmix(tape, random_tensor({31, 8, 8}, rng), UnmixStream::lr, p);
    EXPECT_EQ(abund.shape, (Shape{32, 8, 8}));
}

TEST(Unmix, ClampContractOverRandomInputs) {
    CnetParams p = small_params(2, 6, 2, 2, 8);
    Rng rng(3);
    Tape tape;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor abund = unmix(tape, random_tensor({2, 4, 4}, rng, -1.0, 2.0), UnmixStream::hr, p);
        for (double v : abund.values()) {
            ASSERT_GE(v, 0.0);
            ASSERT_LE(v, 1.0);
        }
    }
}

TEST(Unmix, ChannelMismatch) {
    CnetParams p = small_params(4);
    Tape tape;
    EXPECT_THROW(unmix(tape, Tensor::zeros({7, 4, 4}), UnmixStream::lr, p), DimensionError);
}

TEST(Unmix, GradientThroughMean) {
    CnetParams p = small_params(5, 4, 2, 2, 6);
    Rng rng(6);
    // probe away from the clamp kinks by evaluating the relu-headed variant
    CnetParams q = small_params(5, 4, 2, 2, 6, /*anc=*/false);
    Tensor img = random_tensor({4, 6, 6}, rng, 0.1, 0.9);
    double err = grad_check(
        [&](const Tensor& t) {
            Tape& tape = *t.tape;
            return mean(unmix(tape, t, UnmixStream::lr, q));
        },
        img, 1e-5);
    EXPECT_LT(err, 1e-4);
    (void)p;
}

TEST(Decode, OneHotAbundanceExtractsEndmemberColumn) {
    CnetParams p = small_params(7, 6, 2, 2, 4);
    Tensor abund = Tensor::zeros({4, 1, 1});
    std::vector<double> a = abund.values();
    a[2] = 1.0;  // select endmember 2
    abund = Tensor({4, 1, 1}, std::move(a));
    Tape tape;
    Tensor spectrum = decode(tape, abund, DecodeStream::hs, p);
    const auto& kernel = p.dec_hs.w.value.values();  // [6 x 4 x 1 x 1]
    for (int b = 0; b < 6; ++b)
        EXPECT_DOUBLE_EQ(spectrum.values()[static_cast<std::size_t>(b)],
                         kernel[static_cast<std::size_t>(b) * 4 + 2]);
}

TEST(Decode, ZeroGivesZeroNoBias) {
    CnetParams p = small_params(8, 6, 2, 2, 4);
    Tape tape;
    Tensor out = decode(tape, Tensor::zeros({4, 3, 3}), DecodeStream::ms, p);
    for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Decode, EqualsExplicitMatmul) {
    CnetParams p = small_params(9, 6, 2, 2, 4);
    Rng rng(10);
    Tensor abund = random_tensor({4, 5, 5}, rng);
    Tape tape;
    Tensor out = decode(tape, abund, DecodeStream::hs, p);

    Tensor s = reshape(p.dec_hs.w.value, {6, 4});
    Tensor flat = reshape(abund, {4, 25});
    Tensor mm = matmul(s, flat);
    for (std::size_t i = 0; i < out.values().size(); ++i)
        ASSERT_NEAR(out.values()[i], mm.values()[i], 1e-12);
}

TEST(Decode, LinearityInAbundances) {
    CnetParams p = small_params(11, 6, 2, 2, 4);
    Rng rng(12);
    Tensor a1 = random_tensor({4, 3, 3}, rng);
    Tensor a2 = random_tensor({4, 3, 3}, rng);
    const double alpha = 0.3;
    Tape tape;
    Tensor mix = add(scale(a1, alpha), scale(a2, 1.0 - alpha));
    Tensor lhs = decode(tape, mix, DecodeStream::hs, p);
    Tensor rhs = add(scale(decode(tape, a1, DecodeStream::hs, p), alpha),
                     scale(decode(tape, a2, DecodeStream::hs, p), 1.0 - alpha));
    for (std::size_t i = 0; i < lhs.values().size(); ++i)
        ASSERT_NEAR(lhs.values()[i], rhs.values()[i], 1e-12);
}

TEST(Fuse, ShapeAndNonnegativity) {
    CnetParams p = small_params(13, 31, 3, 8, 32);
    Rng rng(14);
    Tape tape;
    Tensor zhat = fuse(tape, random_tensor({3, 64, 64}, rng), p);
    EXPECT_EQ(zhat.shape, (Shape{31, 64, 64}));
    double mn = 1e9;
    for (double v : zhat.values()) mn = std::min(mn, v);
    EXPECT_GE(mn, 0.0);
}

TEST(Fuse, PlantedFactorsReproduceTruth) {
    SynthScene scene = synth_scene(15, 16, 16, 12, 4, 8);
    CnetParams p = small_params(16, 12, 3, 4, 4);
    // decoder := true endmembers
    p.dec_hs.w.value = reshape(scene.endmembers, {12, 4, 1, 1}).detached();

    Tensor abund = reshape(scene.abundances, {4, 16, 16}).detached();
    Tape tape;
    Tensor zhat = decode(tape, abund, DecodeStream::hs, p);
    Tensor truth = tensor_from_cube(scene.truth);
    for (std::size_t i = 0; i < zhat.values().size(); ++i)
        ASSERT_NEAR(zhat.values()[i], truth.values()[i], 1e-10);
}

TEST(LearnedSrf, OneHotThetaSelectsBand) {
    CnetParams p = small_params(17, 4, 2, 2, 4);
    std::vector<double> theta(8, 0.0);
    theta[0 * 4 + 3] = 5.0;  // output band 0 <- input band 3
    theta[1 * 4 + 1] = 2.0;  // output band 1 <- input band 1
    p.srf_theta.value = Tensor({2, 4}, std::move(theta));
    Rng rng(18);
    Tensor z = random_tensor({4, 3, 3}, rng);
    Tape tape;
    Tensor y = apply_learned_srf(tape, z, p);
    const std::int64_t plane = 9;
    for (std::int64_t i = 0; i < plane; ++i) {
        EXPECT_NEAR(y.values()[static_cast<std::size_t>(i)],
                    z.values()[static_cast<std::size_t>(3 * plane + i)], 1e-7);
        EXPECT_NEAR(y.values()[static_cast<std::size_t>(plane + i)],
                    z.values()[static_cast<std::size_t>(plane + i)], 1e-7);
    }
}

TEST(LearnedSrf, ConstantThetaAveragesBands) {
    CnetParams p = small_params(19, 4, 1, 2, 4);
    Rng rng(20);
    Tensor z = random_tensor({4, 2, 2}, rng);
    Tape tape;
    Tensor y = apply_learned_srf(tape, z, p);  // theta starts flat
    for (int i = 0; i < 4; ++i) {
        double m = 0.0;
        for (int b = 0; b < 4; ++b) m += z.values()[static_cast<std::size_t>(b * 4 + i)];
        m /= 4.0;
        EXPECT_NEAR(y.values()[static_cast<std::size_t>(i)], m, 1e-7);
    }
}

TEST(LearnedSrf, GradientInTheta) {
    CnetParams p = small_params(21, 5, 2, 2, 4);
    Rng rng(22);
    Tensor z = random_tensor({5, 4, 4}, rng);
    Tensor theta0 = random_tensor({2, 5}, rng, 0.2, 2.0);
    double err = grad_check(
        [&](const Tensor& th) {
            Tensor rows = normalize_rows(activation(th, Act::abs), 1e-8);
            Tensor kernel = reshape(rows, {2, 5, 1, 1});
            return mean(conv2d(z, kernel, 1, 0));
        },
        theta0, 1e-5);
    EXPECT_LT(err, 1e-4);
}

TEST(LearnedPsf, ConstantThetaIsBoxAverage) {
    CnetParams p = small_params(23, 3, 2, 2, 4);
    Rng rng(24);
    HsiCube cube(4, 4, 3);
    for (double& v : cube.data) v = rng.uniform(0.0, 1.0);
    Tensor z = tensor_from_cube(cube);
    Tape tape;
    Tensor x = apply_learned_psf(tape, z, p);  // flat theta = box
    HsiCube want = spatial_degrade(cube, box_psf(2));
    Tensor want_t = tensor_from_cube(want);
    for (std::size_t i = 0; i < x.values().size(); ++i)
        ASSERT_NEAR(x.values()[i], want_t.values()[i], 1e-7);
}

TEST(LearnedPsf, OneHotThetaSubsamples) {
    CnetParams p = small_params(25, 2, 1, 2, 2);
    std::vector<double> theta(4, 0.0);
    theta[3] = 7.0;  // tap (1,1)
    p.psf_theta.value = Tensor({2, 2}, std::move(theta));
    Rng rng(26);
    Tensor z = random_tensor({2, 4, 4}, rng);
    Tape tape;
    Tensor x = apply_learned_psf(tape, z, p);
    EXPECT_EQ(x.shape, (Shape{2, 2, 2}));
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                ASSERT_NEAR(x.values()[static_cast<std::size_t>((c * 2 + i) * 2 + j)],
                            z.values()[static_cast<std::size_t>((c * 4 + 2 * i + 1) * 4 +
                                                                (2 * j + 1))],
                            1e-7);
}

TEST(LearnedPsf, GradientInTheta) {
    Rng rng(27);
    Tensor z = random_tensor({2, 8, 8}, rng);
    Tensor theta0 = random_tensor({4, 4}, rng, 0.2, 2.0);
    double err = grad_check(
        [&](const Tensor& th) {
            Tensor flat = reshape(th, {1, 16});
            Tensor kernel = reshape(normalize_rows(activation(flat, Act::abs), 1e-8), {4, 4});
            return mean(conv2d_per_band(z, kernel, 4));
        },
        theta0, 1e-5);
    EXPECT_LT(err, 1e-4);
}

TEST(ReconstructionLoss, PerfectReconstructionIsZero) {
    Rng rng(28);
    Tensor x = random_tensor({3, 4, 4}, rng);
    Tensor y = random_tensor({2, 8, 8}, rng);
    EXPECT_DOUBLE_EQ(reconstruction_loss(x, x, y, y, x, y, x, y).scalar(), 0.0);
}

TEST(ReconstructionLoss, SingleOffTermContributesItsMean) {
    Rng rng(29);
    Tensor x = random_tensor({3, 4, 4}, rng);
    Tensor y = random_tensor({2, 8, 8}, rng);
    std::vector<double> off = x.values();
    for (double& v : off) v += 0.1;
    Tensor xoff(x.shape, std::move(off));
    EXPECT_NEAR(reconstruction_loss(xoff, x, y, y, x, y, x, y).scalar(), 0.1, 1e-12);
}

TEST(ReconstructionLoss, MatchesLoopOracle) {
    Rng rng(30);
    Tensor x = random_tensor({3, 4, 4}, rng), xh = random_tensor({3, 4, 4}, rng);
    Tensor xc = random_tensor({3, 4, 4}, rng), xb = random_tensor({3, 4, 4}, rng);
    Tensor y = random_tensor({2, 8, 8}, rng), yh = random_tensor({2, 8, 8}, rng);
    Tensor yc = random_tensor({2, 8, 8}, rng), yb = random_tensor({2, 8, 8}, rng);

    auto mean_abs = [](const Tensor& a, const Tensor& b) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.values().size(); ++i)
            acc += std::abs(a.values()[i] - b.values()[i]);
        return acc / static_cast<double>(a.values().size());
    };
    const double want = mean_abs(xh, x) + mean_abs(yh, y) + mean_abs(xc, x) + mean_abs(yc, y) +
                        mean_abs(xb, x) + mean_abs(yb, y);
    EXPECT_NEAR(reconstruction_loss(xh, x, yh, y, xc, yc, xb, yb).scalar(), want, 1e-12);
}

TEST(ReconstructionLoss, NamesOffendingTerm) {
    Rng rng(31);
    Tensor x = random_tensor({3, 4, 4}, rng);
    Tensor y = random_tensor({2, 8, 8}, rng);
    Tensor bad = random_tensor({2, 4, 4}, rng);
    try {
        reconstruction_loss(x, x, y, y, bad, y, x, y);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("xcyc-x"), std::string::npos);
    }
}

TEST(AscLoss, ExactSimplexIsZero) {
    SynthScene scene = synth_scene(32, 8, 8, 6, 3, 4);
    Tensor a = reshape(scene.abundances, {3, 8, 8}).detached();
    SynthScene lr = synth_scene(33, 4, 4, 6, 3, 2);
    Tensor at = reshape(lr.abundances, {3, 4, 4}).detached();
    EXPECT_NEAR(asc_loss(a, at).scalar(), 0.0, 1e-12);
}

TEST(AscLoss, HandValueSinglePixel) {
    Tensor a({2, 1, 1}, {0.5, 0.3});   // column sum 0.8 -> deviation 0.2
    Tensor at({2, 1, 1}, {0.4, 0.6});  // perfect
    EXPECT_NEAR(asc_loss(a, at).scalar(), 0.2, 1e-12);
}

TEST(AscLoss, MatchesLoopOracle) {
    Rng rng(34);
    Tensor a = random_tensor({5, 4, 4}, rng);
    Tensor at = random_tensor({5, 2, 2}, rng);
    auto oracle = [](const Tensor& t) {
        const int n = t.shape[0];
        const std::int64_t plane = static_cast<std::int64_t>(t.shape[1]) * t.shape[2];
        double acc = 0.0;
        for (std::int64_t p = 0; p < plane; ++p) {
            double s = 0.0;
            for (int k = 0; k < n; ++k)
                s += t.values()[static_cast<std::size_t>(k * plane + p)];
            acc += std::abs(1.0 - s);
        }
        return acc / static_cast<double>(plane);
    };
    EXPECT_NEAR(asc_loss(a, at).scalar(), oracle(a) + oracle(at), 1e-12);
}

TEST(ExtractFactors, ShapesAndNonnegativityAndConsistency) {
    CnetParams p = small_params(35);
    p.dec_hs.w.project();
    Rng rng(36);
    Tensor abund_hr = random_tensor({32, 8, 8}, rng);
    Tensor abund_lr = random_tensor({32, 2, 2}, rng);
    UnmixingFactors f = extract_factors(p, abund_hr, abund_lr);
    EXPECT_EQ(f.endmembers_hs.shape, (Shape{31, 32}));
    EXPECT_EQ(f.endmembers_ms.shape, (Shape{3, 32}));
    EXPECT_EQ(f.abundances_hr.shape, (Shape{32, 64}));
    double mn = 1e9;
    for (double v : f.endmembers_hs.values()) mn = std::min(mn, v);
    EXPECT_GE(mn, 0.0);

    // decode recomputed from the extracted matrix equals the network decode
    Tape tape;
    Tensor net = decode(tape, abund_hr, DecodeStream::hs, p);
    Tensor mm = matmul(f.endmembers_hs, f.abundances_hr);
    for (std::size_t i = 0; i < net.values().size(); ++i)
        ASSERT_NEAR(net.values()[i], mm.values()[i], 1e-12);
}

TEST(PlantedFactors, AllSixTermsVanishOnNoiselessPair) {
    SynthScene scene = synth_scene(37, 16, 16, 12, 4, 8);
    const double inf = std::numeric_limits<double>::infinity();
    Srf srf = synthetic_gaussian_srf(3, 12);
    Psf psf = box_psf(4);
    ScenePair pair = simulate_pair(scene.truth, srf, psf, inf, inf, 0);

    CnetParams p = small_params(38, 12, 3, 4, 4);
    p.dec_hs.w.value = reshape(scene.endmembers, {12, 4, 1, 1}).detached();
    // true MS endmembers: spectrally degraded HS endmembers
    {
        std::vector<double> sm(static_cast<std::size_t>(3) * 4, 0.0);
        const auto& s = scene.endmembers.values();
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 4; ++k) {
                double acc = 0.0;
                for (int b = 0; b < 12; ++b)
                    acc += srf.at(j, b) * s[static_cast<std::size_t>(b) * 4 + k];
                sm[static_cast<std::size_t>(j) * 4 + k] = acc;
            }
        p.dec_ms.w.value = Tensor({3, 4, 1, 1}, std::move(sm));
    }
    // plant the true operators through the absolute-value normalization
    {
        std::vector<double> theta(srf.weights);
        for (double& v : theta) v *= 1e6;
        p.srf_theta.value = Tensor({3, 12}, std::move(theta));
        p.psf_theta.value = Tensor::full({4, 4}, 1e6);
    }

    // oracle abundances instead of the encoders
    Tensor abund_hr = reshape(scene.abundances, {4, 16, 16}).detached();
    HsiCube abund_lr_cube = spatial_degrade(cube_from_tensor(abund_hr), psf);
    Tensor abund_lr = tensor_from_cube(abund_lr_cube);

    Tape tape;
    Tensor x = tensor_from_cube(pair.lrhs);
    Tensor y = tensor_from_cube(pair.hrms);
    Tensor xhat = decode(tape, abund_lr, DecodeStream::hs, p);
    Tensor yhat = decode(tape, abund_hr, DecodeStream::ms, p);
    Tensor zhat = decode(tape, abund_hr, DecodeStream::hs, p);
    Tensor ycyc = apply_learned_srf(tape, zhat, p);
    Tensor xcyc = apply_learned_psf(tape, zhat, p);

    for (const Tensor* term : {&xhat, &xcyc})
        for (std::size_t i = 0; i < x.values().size(); ++i)
            ASSERT_NEAR(term->values()[i], x.values()[i], 1e-9);
    EXPECT_LT(l1_loss(xhat, x).scalar(), 1e-10);
    EXPECT_LT(l1_loss(yhat, y).scalar(), 1e-10);
    EXPECT_LT(l1_loss(xcyc, x).scalar(), 1e-10);
    EXPECT_LT(l1_loss(ycyc, y).scalar(), 1e-10);
    EXPECT_LT(reconstruction_loss(xhat, x, yhat, y, xcyc, ycyc, x, y).scalar(), 1e-10);
}
