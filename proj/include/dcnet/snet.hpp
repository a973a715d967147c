#pragma once

// Self-supervised alignment of the two abundance stacks: contiguous channel
// groups, a two-stream [conv-relu-pool]x2 + fc encoder per resolution, and
// an InfoNCE objective where group p of one stream is the positive for
// group p of the other.

#include <fstream>

#include "dcnet/cnet.hpp"
#include "dcnet/cube.hpp"
#include "dcnet/nn.hpp"

namespace dcnet {

struct GroupingScheme {
    int n = 0;  // channels
    int m = 0;  // groups, divides n
    GroupingScheme() = default;
    GroupingScheme(int channels, int groups) : n(channels), m(groups) {
        if (groups < 1 || channels < 1 || channels % groups != 0)
            throw ContractError("GroupingScheme: group count " + str(groups) +
                                " must divide channel count " + str(channels));
    }
    int group_size() const { return n / m; }
    int group_of(int channel) const { return channel / group_size(); }
};

/// Contiguous channel partition; concatenating the groups in order
/// reproduces the input exactly.
inline std::vector<Tensor> group_abundances(const Tensor& abund, const GroupingScheme& scheme) {
    if (abund.shape.size() != 3 || abund.shape[0] != scheme.n)
        throw ContractError("group_abundances: expected " + str(scheme.n) +
                            " channels, got " + shape_str(abund.shape));
    const int gs = scheme.group_size();
    const int H = abund.shape[1], W = abund.shape[2];
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    std::vector<Tensor> groups;
    groups.reserve(static_cast<std::size_t>(scheme.m));
    const auto& v = abund.values();
    for (int g = 0; g < scheme.m; ++g) {
        std::vector<double> slice(v.begin() + static_cast<std::int64_t>(g) * gs * plane,
                                  v.begin() + static_cast<std::int64_t>(g + 1) * gs * plane);
        Tensor t({gs, H, W}, std::move(slice));
        if (abund.attached()) {
            t.tape = abund.tape;
            t.node = abund.tape->emplace(
                "group_slice", {abund.node}, t.shape,
                [abund, g, gs, plane](Tape& tp, const Tensor& grad) {
                    std::vector<double> full(abund.values().size(), 0.0);
                    std::copy(grad.values().begin(), grad.values().end(),
                              full.begin() + static_cast<std::int64_t>(g) * gs * plane);
                    tp.accumulate(abund.node, Tensor(abund.shape, std::move(full)));
                });
        }
        groups.push_back(std::move(t));
    }
    return groups;
}

namespace detail {
/// Two pooling factors that reduce `spatial` to a 4x4 grid, the first as
/// large as possible (never above 4).
inline std::pair<int, int> pooling_plan(int spatial) {
    if (spatial % 4 != 0)
        throw DimensionError("pooling_plan: spatial extent " + str(spatial) +
                             " must be divisible by 4");
    const int total = spatial / 4;
    for (int p1 = std::min(4, total); p1 >= 1; --p1)
        if (total % p1 == 0) return {p1, total / p1};
    return {1, total};
}
}  // namespace detail

struct SnetStream {
    Conv2d conv1, conv2;
    Dense fc;
    int pool1 = 1, pool2 = 1;
    int spatial = 0;

    SnetStream() = default;
    SnetStream(std::string name, int in_ch, int spatial_, int embed_dim, Rng& rng)
        : conv1(name + ".c1", in_ch, 16, 3, rng),
          conv2(name + ".c2", 16, 16, 3, rng),
          fc(name + ".fc", 16 * 16, embed_dim, rng),
          spatial(spatial_) {
        auto plan = detail::pooling_plan(spatial_);
        pool1 = plan.first;
        pool2 = plan.second;
    }

    void collect(std::vector<Param*>& out) {
        conv1.collect(out);
        conv2.collect(out);
        fc.collect(out);
    }
};

struct SnetParams {
    SnetStream hr, lr;
    GroupingScheme scheme;
    int embed_dim = 64;

    SnetParams() = default;

    /// hr_spatial / lr_spatial are the square extents of the two abundance
    /// stacks; the pooling plans land both on a 4x4 grid before the fc.
    SnetParams(int n, int m, int hr_spatial, int lr_spatial, Rng& rng, int d = 64)
        : hr("snet.hr", n / m, hr_spatial, d, rng),
          lr("snet.lr", n / m, lr_spatial, d, rng),
          scheme(n, m), embed_dim(d) {}

    void collect(std::vector<Param*>& out) {
        hr.collect(out);
        lr.collect(out);
    }
};

/// L2-normalized d-vector for one channel group.
inline Tensor embed_group(Tape& tape, const Tensor& group, UnmixStream stream,
                          const SnetParams& p) {
    const SnetStream& s = stream == UnmixStream::hr ? p.hr : p.lr;
    if (group.shape.size() != 3 || group.shape[1] != s.spatial || group.shape[2] != s.spatial)
        throw DimensionError("embed_group: group " + shape_str(group.shape) +
                             " does not match the stream's " + str(s.spatial) + "x" +
                             str(s.spatial) + " pooling plan");
    Tensor h = activation(s.conv1.forward(tape, group), Act::relu);
    h = pool_avg(h, s.pool1, s.pool1);
    h = activation(s.conv2.forward(tape, h), Act::relu);
    h = pool_avg(h, s.pool2, s.pool2);
    Tensor flat = reshape(h, {h.shape[0] * h.shape[1] * h.shape[2]});
    return l2_normalize(s.fc.forward(tape, flat));
}

/// InfoNCE over two aligned lists of unit vectors: anchors from the HR
/// stream, positives at the matching index in the LR stream, the rest of
/// the LR list as negatives.
inline Tensor infonce_loss(const std::vector<Tensor>& z_hr, const std::vector<Tensor>& z_lr,
                           double temperature = 1.0) {
    if (z_hr.size() != z_lr.size() || z_hr.empty())
        throw ContractError("infonce_loss: need equally sized nonempty lists, got " +
                            str(z_hr.size()) + " and " + str(z_lr.size()));
    if (temperature <= 0.0) throw ContractError("infonce_loss: temperature must be positive");
    Tensor zh = stack_rows(z_hr);
    Tensor zl = stack_rows(z_lr);
    const int m = zh.shape[0], d = zh.shape[1];
    if (zl.shape != zh.shape)
        throw DimensionError("infonce_loss: embedding dims disagree: " + shape_str(zh.shape) +
                             " vs " + shape_str(zl.shape));

    const auto& hv = zh.values();
    const auto& lv = zl.values();
    // logits s_pq = <z_hr[p], z_lr[q]> / tau, row-shifted for stability
    std::vector<double> logits(static_cast<std::size_t>(m) * m);
    for (int pr = 0; pr < m; ++pr)
        for (int q = 0; q < m; ++q) {
            double dot = 0.0;
            for (int i = 0; i < d; ++i)
                dot += hv[static_cast<std::size_t>(pr) * d + i] *
                       lv[static_cast<std::size_t>(q) * d + i];
            logits[static_cast<std::size_t>(pr) * m + q] = dot / temperature;
        }
    std::vector<double> softmax(static_cast<std::size_t>(m) * m);
    double loss = 0.0;
    for (int pr = 0; pr < m; ++pr) {
        const double* row = logits.data() + static_cast<std::size_t>(pr) * m;
        double mx = row[0];
        for (int q = 1; q < m; ++q) mx = std::max(mx, row[q]);
        double denom = 0.0;
        for (int q = 0; q < m; ++q) denom += std::exp(row[q] - mx);
        for (int q = 0; q < m; ++q)
            softmax[static_cast<std::size_t>(pr) * m + q] = std::exp(row[q] - mx) / denom;
        loss += (mx + std::log(denom)) - row[pr];
    }
    loss /= static_cast<double>(m);

    return detail::make_result(
        "infonce", {1}, {loss}, {&zh, &zl},
        [zh, zl, softmax, m, d, temperature](Tape& tp, const Tensor& g) {
            // dL/ds_pq = (P_pq - delta_pq) / m, then chain through the dots
            const double go = g.scalar() / (static_cast<double>(m) * temperature);
            const auto& hv2 = zh.values();
            const auto& lv2 = zl.values();
            std::vector<double> gh(hv2.size(), 0.0), gl(lv2.size(), 0.0);
            for (int pr = 0; pr < m; ++pr)
                for (int q = 0; q < m; ++q) {
                    const double w =
                        go * (softmax[static_cast<std::size_t>(pr) * m + q] - (pr == q ? 1.0 : 0.0));
                    if (w == 0.0) continue;
                    for (int i = 0; i < d; ++i) {
                        gh[static_cast<std::size_t>(pr) * d + i] +=
                            w * lv2[static_cast<std::size_t>(q) * d + i];
                        gl[static_cast<std::size_t>(q) * d + i] +=
                            w * hv2[static_cast<std::size_t>(pr) * d + i];
                    }
                }
            if (zh.attached()) tp.accumulate(zh.node, Tensor(zh.shape, std::move(gh)));
            if (zl.attached()) tp.accumulate(zl.node, Tensor(zl.shape, std::move(gl)));
        });
}

/// Group-level consistency diagnostic: correlation matrix between group-mean
/// maps of the spatially degraded HR abundances and the LR abundances, plus
/// the fraction of rows whose best match sits on the diagonal.
struct AlignmentReport {
    int m = 0;
    std::vector<double> similarity;  // m x m, row-major
    double permutation_score = 0.0;
};

inline AlignmentReport alignment_report(const Tensor& abund_hr, const Tensor& abund_lr,
                                        const GroupingScheme& scheme, const Psf& psf) {
    if (abund_hr.shape.size() != 3 || abund_lr.shape.size() != 3)
        throw ContractError("alignment_report: expected n x H x W stacks");
    HsiCube hr_cube = cube_from_tensor(abund_hr.detached());
    HsiCube degraded = spatial_degrade(hr_cube, psf);
    const int h = degraded.height, w = degraded.width;
    if (abund_lr.shape[1] != h || abund_lr.shape[2] != w)
        throw DimensionError("alignment_report: degraded HR stack is " + str(h) + "x" + str(w) +
                             ", LR stack is " + shape_str(abund_lr.shape));

    const int gs = scheme.group_size();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    auto group_mean_maps = [&](const std::vector<double>& chw, int channels) {
        std::vector<std::vector<double>> maps(static_cast<std::size_t>(scheme.m));
        for (int g = 0; g < scheme.m; ++g) {
            auto& map = maps[static_cast<std::size_t>(g)];
            map.assign(static_cast<std::size_t>(plane), 0.0);
            for (int c = g * gs; c < (g + 1) * gs; ++c)
                for (std::int64_t i = 0; i < plane; ++i)
                    map[static_cast<std::size_t>(i)] +=
                        chw[static_cast<std::size_t>(c) * plane + i];
            for (double& v : map) v /= gs;
        }
        (void)channels;
        return maps;
    };

    Tensor degraded_t = tensor_from_cube(degraded);
    auto hr_maps = group_mean_maps(degraded_t.values(), scheme.n);
    auto lr_maps = group_mean_maps(abund_lr.values(), scheme.n);

    auto correlation = [plane](const std::vector<double>& a, const std::vector<double>& b) {
        double ma = 0.0, mb = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) {
            ma += a[static_cast<std::size_t>(i)];
            mb += b[static_cast<std::size_t>(i)];
        }
        ma /= static_cast<double>(plane);
        mb /= static_cast<double>(plane);
        double va = 0.0, vb = 0.0, cov = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) {
            const double da = a[static_cast<std::size_t>(i)] - ma;
            const double db = b[static_cast<std::size_t>(i)] - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
        }
        const double denom = std::sqrt(va * vb);
        return denom > 1e-15 ? cov / denom : 0.0;
    };

    AlignmentReport report;
    report.m = scheme.m;
    report.similarity.resize(static_cast<std::size_t>(scheme.m) * scheme.m);
    int diagonal_hits = 0;
    for (int p = 0; p < scheme.m; ++p) {
        int argmax = 0;
        double best = -2.0;
        for (int q = 0; q < scheme.m; ++q) {
            const double c = correlation(hr_maps[static_cast<std::size_t>(p)],
                                         lr_maps[static_cast<std::size_t>(q)]);
            report.similarity[static_cast<std::size_t>(p) * scheme.m + q] = c;
            if (c > best) {
                best = c;
                argmax = q;
            }
        }
        if (argmax == p) ++diagonal_hits;
    }
    report.permutation_score = static_cast<double>(diagonal_hits) / scheme.m;
    return report;
}

inline void write_alignment_csv(const std::string& path, const AlignmentReport& report) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("write_alignment_csv: cannot open " + path);
    f.precision(10);
    for (int p = 0; p < report.m; ++p) {
        for (int q = 0; q < report.m; ++q) {
            if (q) f << ',';
            f << report.similarity[static_cast<std::size_t>(p) * report.m + q];
        }
        f << '\n';
    }
    f << "score," << report.permutation_score << '\n';
}

}  // namespace dcnet
