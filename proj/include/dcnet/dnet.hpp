#pragma once

// Decoupled subnetwork: embeds each observation into common and
// sensor-specific codes, recombines them across sensors, and scores common
// codes with a domain discriminator. The specific encoders consume the
// resampled counterparts so the recombination shapes line up by
// construction: gen_x runs at low resolution, gen_y at high resolution.

#include "dcnet/cube.hpp"
#include "dcnet/nn.hpp"

namespace dcnet {

enum class DnetEncoder { common_x, common_y, specific_x, specific_y };
enum class DnetGenerator { gen_x, gen_y };
enum class AdvRole { discriminator, encoder };

constexpr double kProbClamp = 1e-7;

struct DnetParams {
    Conv2d enc_common_x1, enc_common_x2;
    Conv2d enc_common_y1, enc_common_y2;
    Conv2d enc_specific_x1, enc_specific_x2;
    Conv2d enc_specific_y1, enc_specific_y2;
    Conv2d gen_x1, gen_x2;
    Conv2d gen_y1, gen_y2;
    Conv2d disc_conv;
    Dense disc_fc;
    int c_code = 16;
    int hs_bands = 0, ms_bands = 0;

    DnetParams() = default;

    /// hs_bands = L (LrHS channel count), ms_bands = l (HrMS channel count).
    DnetParams(int hs, int ms, Rng& rng, int code = 16)
        : enc_common_x1("dnet.ecx1", hs, 32, 3, rng),
          enc_common_x2("dnet.ecx2", 32, code, 3, rng),
          enc_common_y1("dnet.ecy1", ms, 32, 3, rng),
          enc_common_y2("dnet.ecy2", 32, code, 3, rng),
          enc_specific_x1("dnet.esx1", hs, 32, 3, rng),
          enc_specific_x2("dnet.esx2", 32, code, 3, rng),
          enc_specific_y1("dnet.esy1", ms, 32, 3, rng),
          enc_specific_y2("dnet.esy2", 32, code, 3, rng),
          gen_x1("dnet.gx1", 2 * code, 32, 3, rng),
          gen_x2("dnet.gx2", 32, hs, 1, rng),
          gen_y1("dnet.gy1", 2 * code, 32, 3, rng),
          gen_y2("dnet.gy2", 32, ms, 1, rng),
          disc_conv("dnet.d1", code, code, 3, rng, /*stride=*/2),
          disc_fc("dnet.dfc", code, 1, rng),
          c_code(code), hs_bands(hs), ms_bands(ms) {}

    void collect_encoders_generators(std::vector<Param*>& out) {
        for (Conv2d* c : {&enc_common_x1, &enc_common_x2, &enc_common_y1, &enc_common_y2,
                          &enc_specific_x1, &enc_specific_x2, &enc_specific_y1, &enc_specific_y2,
                          &gen_x1, &gen_x2, &gen_y1, &gen_y2})
            c->collect(out);
    }

    void collect_discriminator(std::vector<Param*>& out) {
        disc_conv.collect(out);
        disc_fc.collect(out);
    }
};

inline Tensor encode(Tape& tape, const Tensor& img, DnetEncoder which, const DnetParams& p) {
    const Conv2d* first = nullptr;
    const Conv2d* second = nullptr;
    int want = 0;
    switch (which) {
        case DnetEncoder::common_x:
            first = &p.enc_common_x1;
            second = &p.enc_common_x2;
            want = p.hs_bands;
            break;
        case DnetEncoder::common_y:
            first = &p.enc_common_y1;
            second = &p.enc_common_y2;
            want = p.ms_bands;
            break;
        case DnetEncoder::specific_x:
            first = &p.enc_specific_x1;
            second = &p.enc_specific_x2;
            want = p.hs_bands;
            break;
        case DnetEncoder::specific_y:
            first = &p.enc_specific_y1;
            second = &p.enc_specific_y2;
            want = p.ms_bands;
            break;
    }
    if (img.shape.size() != 3 || img.shape[0] != want)
        throw DimensionError("encode: expected " + str(want) + "-channel input, got " +
                             shape_str(img.shape));
    return second->forward(tape, activation(first->forward(tape, img), Act::relu));
}

/// Channel-concatenate a common code with the other sensor's specific code
/// and decode through the generator stack.
inline Tensor recombine(Tape& tape, const Tensor& common, const Tensor& specific_other,
                        DnetGenerator which, const DnetParams& p) {
    if (common.shape.size() != 3 || specific_other.shape.size() != 3 ||
        common.shape[1] != specific_other.shape[1] || common.shape[2] != specific_other.shape[2])
        throw DimensionError("recombine: spatial dims " + shape_str(common.shape) + " vs " +
                             shape_str(specific_other.shape) + " must agree");
    Tensor cat = concat_channels(common, specific_other);
    const Conv2d& g1 = which == DnetGenerator::gen_x ? p.gen_x1 : p.gen_y1;
    const Conv2d& g2 = which == DnetGenerator::gen_x ? p.gen_x2 : p.gen_y2;
    return g2.forward(tape, activation(g1.forward(tape, cat), Act::relu));
}

/// Probability in (0, 1) that a code map came from the HS stream:
/// conv stride-2, relu, global average pool, fc, sigmoid.
inline Tensor discriminate(Tape& tape, const Tensor& code, const DnetParams& p,
                           bool frozen = false) {
    if (code.shape.size() != 3 || code.shape[0] != p.c_code)
        throw DimensionError("discriminate: expected " + str(p.c_code) + "-channel code, got " +
                             shape_str(code.shape));
    Tensor h = activation(p.disc_conv.forward(tape, code, frozen), Act::relu);
    Tensor pooled = pool_avg(h, h.shape[1], h.shape[1]);  // global
    Tensor flat = reshape(pooled, {p.c_code});
    return activation(p.disc_fc.forward(tape, flat, frozen), Act::sigmoid);
}

/// Domain-confusion GAN loss on common codes. The discriminator role sees
/// detached codes and trains its own stack; the encoder role runs a frozen
/// discriminator and receives flipped labels. Probabilities are clamped to
/// [1e-7, 1-1e-7] before the log so the loss stays finite.
inline Tensor adversarial_loss(Tape& tape, const Tensor& code_x, const Tensor& code_y_down,
                               const DnetParams& p, AdvRole role) {
    if (code_x.shape != code_y_down.shape)
        throw DimensionError("adversarial_loss: code shapes " + shape_str(code_x.shape) +
                             " and " + shape_str(code_y_down.shape) + " must match");
    const bool disc_role = role == AdvRole::discriminator;
    Tensor px = discriminate(tape, disc_role ? code_x.detached() : code_x, p, !disc_role);
    Tensor py =
        discriminate(tape, disc_role ? code_y_down.detached() : code_y_down, p, !disc_role);
    px = clamp_range(px, kProbClamp, 1.0 - kProbClamp);
    py = clamp_range(py, kProbClamp, 1.0 - kProbClamp);
    const Tensor one = Tensor::full({1}, 1.0);
    Tensor term_x, term_y;
    if (disc_role) {
        term_x = activation(px, Act::log);             // log D(x)
        term_y = activation(sub(one, py), Act::log);   // log(1 - D(y))
    } else {
        term_x = activation(sub(one, px), Act::log);   // log(1 - D(x))
        term_y = activation(py, Act::log);             // log D(y)
    }
    return scale(add(term_x, term_y), -0.5);
}

/// The loss exactly as commonly printed with both log terms sharing one
/// argument; exposed for comparison runs only.
inline Tensor adversarial_loss_literal(Tape& tape, const Tensor& code_x,
                                       const Tensor& code_y_down, const DnetParams& p) {
    Tensor px = clamp_range(discriminate(tape, code_x, p), kProbClamp, 1.0 - kProbClamp);
    Tensor py = clamp_range(discriminate(tape, code_y_down, p), kProbClamp, 1.0 - kProbClamp);
    const Tensor one = Tensor::full({1}, 1.0);
    Tensor ex = scale(add(activation(px, Act::log), activation(sub(one, px), Act::log)), 0.5);
    Tensor ey = scale(add(activation(py, Act::log), activation(sub(one, py), Act::log)), 0.5);
    return add(ex, ey);
}

/// Transformed pair (X-bar, Y-bar) plus the common codes the adversarial
/// loss needs.
struct DnetForward {
    Tensor xbar;         // L x h x w
    Tensor ybar;         // l x H x W
    Tensor code_x;       // c x h x w (common code of X)
    Tensor code_y_down;  // c x h x w (common code of Y, area-pooled down)
};

inline DnetForward dnet_forward(Tape& tape, const Tensor& x, const Tensor& y,
                                const Tensor& x_up, const Tensor& y_down, int ratio,
                                const DnetParams& p) {
    DnetForward out;
    out.code_x = encode(tape, x, DnetEncoder::common_x, p);
    Tensor code_y = encode(tape, y, DnetEncoder::common_y, p);
    Tensor spec_x = encode(tape, x_up, DnetEncoder::specific_x, p);
    Tensor spec_y = encode(tape, y_down, DnetEncoder::specific_y, p);
    out.xbar = recombine(tape, out.code_x, spec_y, DnetGenerator::gen_x, p);
    out.ybar = recombine(tape, code_y, spec_x, DnetGenerator::gen_y, p);
    out.code_y_down = ratio > 1 ? pool_avg(code_y, ratio, ratio) : code_y;
    return out;
}

}  // namespace dcnet
