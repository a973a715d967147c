#pragma once

// End-to-end optimization: composes the overall loss over the three
// subnetworks, runs Adam with a linear-decay schedule and early stopping,
// and drives the ablation and grid-search protocols.

#include <optional>
#include <tuple>

#include "dcnet/cnet.hpp"
#include "dcnet/cube.hpp"
#include "dcnet/dnet.hpp"
#include "dcnet/metrics.hpp"
#include "dcnet/snet.hpp"

namespace dcnet {

struct LossWeights {
    double alpha = 0.01;  // adversarial
    double beta = 0.1;    // abundance sum-to-one
    double gamma = 0.01;  // self-supervised alignment
};

enum class CycleTarget { observation, reconstruction };

struct TrainConfig {
    double lr0 = 0.005;
    int epochs = 2000;  // desk-scale default
    int batch = 1;
    int patience = 200;
    std::uint64_t seed = 0;
    int eval_every = 50;
    bool use_dnet = true;
    bool use_snet = true;
    bool use_anc = true;
    bool use_asc = true;
    // paper-gap switches
    bool adv_literal = false;
    CycleTarget cycle_target = CycleTarget::observation;
    bool tie_endmembers = false;
    double temperature = 1.0;
    // architecture
    int endmembers = 32;
    int groups = 8;
    int code_channels = 16;
    int embed_dim = 64;
};

struct EpochLoss {
    double rec = 0.0, adv = 0.0, asc = 0.0, self = 0.0, total = 0.0, lr = 0.0;
};

struct TrainState {
    int epoch = 0;  // completed epochs
    std::vector<EpochLoss> history;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Loss composition and optimization primitives
// ---------------------------------------------------------------------------

struct LossParts {
    Tensor rec;  // always present
    std::optional<Tensor> adv, asc, self;
};

inline Tensor total_loss(const LossParts& parts, const LossWeights& w) {
    if (w.alpha < 0.0 || w.beta < 0.0 || w.gamma < 0.0)
        throw ContractError("total_loss: weights must be nonnegative");
    Tensor loss = parts.rec;
    if (parts.adv && w.alpha > 0.0) loss = add(loss, scale(*parts.adv, w.alpha));
    if (parts.asc && w.beta > 0.0) loss = add(loss, scale(*parts.asc, w.beta));
    if (parts.self && w.gamma > 0.0) loss = add(loss, scale(*parts.self, w.gamma));
    return loss;
}

/// Bias-corrected Adam with per-Param constraint projection after the update.
struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long t = 0;

    void step(const std::vector<Param*>& params, double lr) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (Param* p : params) {
            const auto& g = p->grad.values();
            for (double gv : g)
                if (!std::isfinite(gv))
                    throw NumericError("adam_step: non-finite gradient for param " + p->name);
            std::vector<double> v = p->value.values();
            for (std::size_t i = 0; i < v.size(); ++i) {
                p->m1[i] = beta1 * p->m1[i] + (1.0 - beta1) * g[i];
                p->m2[i] = beta2 * p->m2[i] + (1.0 - beta2) * g[i] * g[i];
                const double mhat = p->m1[i] / bc1;
                const double vhat = p->m2[i] / bc2;
                v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
            p->value = Tensor(p->value.shape, std::move(v));
            p->project();
        }
    }
};

inline void adam_step(Adam& state, const std::vector<Param*>& params, double lr) {
    state.step(params, lr);
}

/// Linear decay from lr0 to the lr0/100 floor.
inline double lr_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch > cfg.epochs) throw ContractError("lr_schedule: epoch out of range");
    const double lr =
        cfg.lr0 * (1.0 - static_cast<double>(epoch) / static_cast<double>(std::max(cfg.epochs, 1)));
    return std::max(lr, cfg.lr0 / 100.0);
}

// ---------------------------------------------------------------------------
// Model aggregate
// ---------------------------------------------------------------------------

struct DcnetModel {
    DnetParams dnet;
    CnetParams cnet;
    SnetParams snet;
    int hs_bands = 0, ms_bands = 0, ratio = 1, hr_spatial = 0;

    std::vector<Param*> main_params(const TrainConfig& cfg) {
        std::vector<Param*> out;
        if (cfg.use_dnet) dnet.collect_encoders_generators(out);
        cnet.collect(out);
        if (cfg.use_snet) snet.collect(out);
        return out;
    }

    std::vector<Param*> disc_params() {
        std::vector<Param*> out;
        dnet.collect_discriminator(out);
        return out;
    }
};

/// Kaiming-initialized model for a scene geometry; every draw comes from the
/// "init" substream of the seed.
inline DcnetModel init_params(int hs_bands, int ms_bands, int ratio, int hr_spatial,
                              const TrainConfig& cfg) {
    if (hr_spatial % ratio != 0)
        throw DimensionError("init_params: ratio " + str(ratio) + " does not divide extent " +
                             str(hr_spatial));
    Rng rng = substream(cfg.seed, "init");
    DcnetModel m;
    m.dnet = DnetParams(hs_bands, ms_bands, rng, cfg.code_channels);
    m.cnet = CnetParams(hs_bands, ms_bands, ratio, rng, cfg.endmembers, cfg.use_anc);
    m.snet = SnetParams(cfg.endmembers, cfg.groups, hr_spatial, hr_spatial / ratio, rng,
                        cfg.embed_dim);
    m.hs_bands = hs_bands;
    m.ms_bands = ms_bands;
    m.ratio = ratio;
    m.hr_spatial = hr_spatial;
    return m;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
    DcnetModel model;
    HsiCube fused;
    TrainState state;
};

namespace detail {

struct ForwardOutputs {
    LossParts parts;
    Tensor code_x, code_y_down;  // present when the decoupled net ran
    Tensor zhat;
    Tensor abund_hr, abund_lr;
    bool has_codes = false;
};

inline ForwardOutputs model_forward(Tape& tape, DcnetModel& model, const Tensor& x,
                                    const Tensor& y, const Tensor& x_up, const Tensor& y_down,
                                    const TrainConfig& cfg, const LossWeights& w) {
    ForwardOutputs out;
    Tensor xbar = x, ybar = y;
    if (cfg.use_dnet) {
        DnetForward fwd = dnet_forward(tape, x, y, x_up, y_down, model.ratio, model.dnet);
        xbar = fwd.xbar;
        ybar = fwd.ybar;
        out.code_x = fwd.code_x;
        out.code_y_down = fwd.code_y_down;
        out.has_codes = true;
    }

    out.abund_lr = unmix(tape, xbar, UnmixStream::lr, model.cnet);
    Tensor xhat = decode(tape, out.abund_lr, DecodeStream::hs, model.cnet);
    out.abund_hr = unmix(tape, ybar, UnmixStream::hr, model.cnet);

    Tensor yhat;
    if (cfg.tie_endmembers) {
        // MS endmembers derived from the HS decoder through the learned SRF
        Tensor s_hs = reshape(model.cnet.dec_hs.w.attach(tape),
                              {model.hs_bands, model.cnet.n});
        Tensor srf_rows = normalize_rows(
            activation(model.cnet.srf_theta.attach(tape), Act::abs), 1e-8);
        Tensor s_ms = matmul(srf_rows, s_hs);
        Tensor kernel = reshape(s_ms, {model.ms_bands, model.cnet.n, 1, 1});
        yhat = conv2d(out.abund_hr, kernel, 1, 0);
    } else {
        yhat = decode(tape, out.abund_hr, DecodeStream::ms, model.cnet);
    }

    out.zhat = decode(tape, out.abund_hr, DecodeStream::hs, model.cnet);
    Tensor ycyc = apply_learned_srf(tape, out.zhat, model.cnet);
    Tensor xcyc = apply_learned_psf(tape, out.zhat, model.cnet);

    if (cfg.cycle_target == CycleTarget::observation) {
        out.parts.rec = reconstruction_loss(xhat, x, yhat, y, xcyc, ycyc, xbar, ybar);
    } else {
        Tensor base = add(add(l1_loss(xhat, x), l1_loss(yhat, y)),
                          add(l1_loss(xbar, x), l1_loss(ybar, y)));
        out.parts.rec = add(base, add(l1_loss(xcyc, xhat), l1_loss(ycyc, yhat)));
    }

    if (cfg.use_dnet && w.alpha > 0.0) {
        out.parts.adv = cfg.adv_literal
                            ? adversarial_loss_literal(tape, out.code_x, out.code_y_down,
                                                       model.dnet)
                            : adversarial_loss(tape, out.code_x, out.code_y_down, model.dnet,
                                               AdvRole::encoder);
    }
    if (cfg.use_asc && w.beta > 0.0) out.parts.asc = asc_loss(out.abund_hr, out.abund_lr);
    if (cfg.use_snet && w.gamma > 0.0) {
        auto groups_hr = group_abundances(out.abund_hr, model.snet.scheme);
        auto groups_lr = group_abundances(out.abund_lr, model.snet.scheme);
        std::vector<Tensor> z_hr, z_lr;
        z_hr.reserve(groups_hr.size());
        z_lr.reserve(groups_lr.size());
        for (const Tensor& g : groups_hr)
            z_hr.push_back(embed_group(tape, g, UnmixStream::hr, model.snet));
        for (const Tensor& g : groups_lr)
            z_lr.push_back(embed_group(tape, g, UnmixStream::lr, model.snet));
        out.parts.self = infonce_loss(z_hr, z_lr, cfg.temperature);
    }
    return out;
}

}  // namespace detail

/// Full optimization on one scene pair. Returns the trained model, the fused
/// estimate, and the loss history.
inline TrainResult train(const ScenePair& pair, const TrainConfig& cfg, const LossWeights& w) {
    if (pair.hrms.height != pair.lrhs.height * pair.ratio ||
        pair.hrms.width != pair.lrhs.width * pair.ratio)
        throw DimensionError("train: pair extents inconsistent with ratio " + str(pair.ratio));
    if (pair.hrms.height != pair.hrms.width)
        throw DimensionError("train: square scenes expected, got " + str(pair.hrms.height) + "x" +
                             str(pair.hrms.width));

    TrainResult result;
    result.model = init_params(pair.lrhs.bands, pair.hrms.bands, pair.ratio, pair.hrms.height,
                               cfg);
    result.state.seed = cfg.seed;
    DcnetModel& model = result.model;

    const Tensor x = tensor_from_cube(pair.lrhs);
    const Tensor y = tensor_from_cube(pair.hrms);
    const Tensor x_up = tensor_from_cube(resample(pair.lrhs, Resample::up_bilinear, pair.ratio));
    const Tensor y_down = tensor_from_cube(resample(pair.hrms, Resample::down_area, pair.ratio));

    Adam opt_main, opt_disc;
    const std::vector<Param*> main_params = model.main_params(cfg);
    const std::vector<Param*> disc_params = model.disc_params();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg);
        EpochLoss entry;
        entry.lr = lr;
        try {
            Tape tape;
            detail::ForwardOutputs fwd =
                detail::model_forward(tape, model, x, y, x_up, y_down, cfg, w);
            Tensor loss = total_loss(fwd.parts, w);
            tape.backward(loss);
            for (Param* p : main_params) p->pull_grad(tape);

            entry.rec = fwd.parts.rec.scalar();
            entry.adv = fwd.parts.adv ? fwd.parts.adv->scalar() : 0.0;
            entry.asc = fwd.parts.asc ? fwd.parts.asc->scalar() : 0.0;
            entry.self = fwd.parts.self ? fwd.parts.self->scalar() : 0.0;
            entry.total = loss.scalar();

            // discriminator sees detached codes on its own tape, then the
            // main step runs
            if (cfg.use_dnet && w.alpha > 0.0 && fwd.has_codes) {
                Tape dtape;
                Tensor dloss = cfg.adv_literal
                                   ? scale(adversarial_loss_literal(dtape,
                                                                    fwd.code_x.detached(),
                                                                    fwd.code_y_down.detached(),
                                                                    model.dnet),
                                           -1.0)
                                   : adversarial_loss(dtape, fwd.code_x, fwd.code_y_down,
                                                      model.dnet, AdvRole::discriminator);
                dtape.backward(dloss);
                for (Param* p : disc_params) p->pull_grad(dtape);
                opt_disc.step(disc_params, lr);
            }
            opt_main.step(main_params, lr);
        } catch (const NumericError& e) {
            throw NumericError("train: aborted at epoch " + str(epoch) + ": " + e.what());
        }

        result.state.history.push_back(entry);
        result.state.epoch = epoch + 1;

        // validation = total loss on the pair itself (self-supervised)
        if (entry.total < result.state.best_val) {
            result.state.best_val = entry.total;
            result.state.best_epoch = epoch;
        } else if (epoch - result.state.best_epoch >= cfg.patience) {
            break;
        }
    }

    // final fusion with the trained weights
    Tape tape;
    detail::ForwardOutputs fwd = detail::model_forward(tape, model, x, y, x_up, y_down, cfg, w);
    result.fused = cube_from_tensor(fwd.zhat.detached());
    return result;
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

struct GridPoint {
    LossWeights weights;
    double mean_psnr = 0.0;
    double mean_sam = 0.0;
};

/// Exhaustive product evaluation at a quarter of the configured epochs; best
/// by mean PSNR, ties by lower SAM, then lexicographically smallest weights.
inline LossWeights grid_search(const std::vector<ScenePair>& pairs,
                               const std::vector<double>& alphas,
                               const std::vector<double>& betas,
                               const std::vector<double>& gammas, const TrainConfig& cfg,
                               std::vector<GridPoint>* table = nullptr) {
    if (pairs.empty() || alphas.empty() || betas.empty() || gammas.empty())
        throw ContractError("grid_search: empty grid or pair list");
    for (const ScenePair& p : pairs)
        if (!p.truth) throw ContractError("grid_search: every pair needs ground truth");

    TrainConfig reduced = cfg;
    reduced.epochs = std::max(1, cfg.epochs / 4);

    std::optional<GridPoint> best;
    for (double a : alphas)
        for (double b : betas)
            for (double g : gammas) {
                GridPoint point;
                point.weights = LossWeights{a, b, g};
                for (const ScenePair& pair : pairs) {
                    TrainResult r = train(pair, reduced, point.weights);
                    point.mean_psnr += psnr(*pair.truth, r.fused);
                    point.mean_sam += sam(*pair.truth, r.fused);
                }
                point.mean_psnr /= static_cast<double>(pairs.size());
                point.mean_sam /= static_cast<double>(pairs.size());
                if (table) table->push_back(point);
                const bool better =
                    !best || point.mean_psnr > best->mean_psnr ||
                    (point.mean_psnr == best->mean_psnr &&
                     (point.mean_sam < best->mean_sam ||
                      (point.mean_sam == best->mean_sam &&
                       std::tie(a, b, g) < std::tie(best->weights.alpha, best->weights.beta,
                                                    best->weights.gamma))));
                if (better) best = point;
            }
    return best->weights;
}

struct AblationRow {
    std::string name;
    double psnr = 0.0;
    double sam = 0.0;
};

/// The five-configuration ablation protocol, shared seed, fixed row order.
inline std::vector<AblationRow> ablate(const ScenePair& pair, const TrainConfig& cfg,
                                       const LossWeights& w = LossWeights{}) {
    if (!pair.truth) throw ContractError("ablate: pair needs ground truth");

    struct Setup {
        const char* name;
        bool anc, asc, dnet, snet;
    };
    const Setup setups[5] = {
        {"C-Net", false, false, false, false},
        {"C-Net+ANC", true, false, false, false},
        {"C-Net+ANC+ASC", true, true, false, false},
        {"DC-Net", true, true, true, false},
        {"DC-Net-S", true, true, true, true},
    };

    std::vector<AblationRow> rows;
    for (const Setup& s : setups) {
        TrainConfig c = cfg;
        c.use_anc = s.anc;
        c.use_asc = s.asc;
        c.use_dnet = s.dnet;
        c.use_snet = s.snet;
        LossWeights lw = w;
        if (!s.asc) lw.beta = 0.0;
        if (!s.dnet) lw.alpha = 0.0;
        if (!s.snet) lw.gamma = 0.0;
        TrainResult r = train(pair, c, lw);
        rows.push_back({s.name, psnr(*pair.truth, r.fused), sam(*pair.truth, r.fused)});
    }
    return rows;
}

}  // namespace dcnet
