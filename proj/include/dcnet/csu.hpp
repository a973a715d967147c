#pragma once

// Network-free coupled spectral unmixing by alternating projected gradient
// descent with known SRF/PSF. Serves as a correctness oracle and classical
// baseline for the learned pipeline: it shares no code with the network
// stack and minimizes a squared-Frobenius objective instead of the network
// losses.

#include <Eigen/Dense>
#include <numeric>

#ifndef DCNET_CSU_INNER_STEPS
#define DCNET_CSU_INNER_STEPS 20
#endif

#include "dcnet/cube.hpp"
#include "dcnet/metrics.hpp"

namespace dcnet {

/// Euclidean projection onto {x >= 0, sum x = 1} by sort-and-threshold.
inline std::vector<double> project_simplex(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) throw ContractError("project_simplex: non-finite entry");
    std::vector<double> u = v;
    std::sort(u.begin(), u.end(), std::greater<double>());
    double csum = 0.0, tau = 0.0;
    int k = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        csum += u[i];
        const double t = (csum - 1.0) / static_cast<double>(i + 1);
        if (u[i] - t > 0.0) {
            k = static_cast<int>(i + 1);
            tau = t;
        }
    }
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - tau, 0.0);
    (void)k;
    return out;
}

struct CsuState {
    Tensor endmembers;  // L x n, nonnegative
    Tensor abundances;  // n x HW, columns on the simplex
    std::vector<double> objective;  // per outer iteration, non-increasing
    HsiCube fused;      // fold(S A), H x W x L
};

namespace detail {

using Eigen::MatrixXd;

/// Right-multiplication by the blur-downsample matrix: each row of a
/// [k x HW] map becomes the PSF-weighted average per r x r tile.
inline MatrixXd apply_R(const MatrixXd& m, int H, int W, const Psf& psf) {
    const int r = psf.stride;
    const int h = H / r, w = W / r;
    MatrixXd out = MatrixXd::Zero(m.rows(), static_cast<Eigen::Index>(h) * w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const Eigen::Index lr = static_cast<Eigen::Index>(i) * w + j;
            for (int u = 0; u < r; ++u)
                for (int v = 0; v < r; ++v) {
                    const Eigen::Index hr =
                        static_cast<Eigen::Index>(i * r + u) * W + (j * r + v);
                    out.col(lr) += psf.at(u, v) * m.col(hr);
                }
        }
    return out;
}

/// Adjoint of apply_R: spread each low-resolution column back over its tile.
inline MatrixXd apply_Rt(const MatrixXd& m, int H, int W, const Psf& psf) {
    const int r = psf.stride;
    const int h = H / r, w = W / r;
    MatrixXd out = MatrixXd::Zero(m.rows(), static_cast<Eigen::Index>(H) * W);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const Eigen::Index lr = static_cast<Eigen::Index>(i) * w + j;
            for (int u = 0; u < r; ++u)
                for (int v = 0; v < r; ++v) {
                    const Eigen::Index hr =
                        static_cast<Eigen::Index>(i * r + u) * W + (j * r + v);
                    out.col(hr) = psf.at(u, v) * m.col(lr);
                }
        }
    return out;
}

inline MatrixXd srf_matrix(const Srf& srf) {
    MatrixXd H(srf.rows, srf.cols);
    for (int r = 0; r < srf.rows; ++r)
        for (int c = 0; c < srf.cols; ++c) H(r, c) = srf.at(r, c);
    return H;
}

}  // namespace detail

/// Alternating projected minimization of
///   ||X - S (A R)||_F^2 + ||Y - (H S) A||_F^2
/// over S >= 0 and simplex-constrained A, with known H and R.
inline CsuState csu_solve(const HsiCube& lrhs, const HsiCube& hrms, const Srf& srf,
                          const Psf& psf, int n, int iters, std::uint64_t seed) {
    using Eigen::MatrixXd;
    const int L = lrhs.bands, l = hrms.bands;
    const int H = hrms.height, W = hrms.width;
    const int r = psf.stride;
    if (H != lrhs.height * r || W != lrhs.width * r)
        throw DimensionError("csu_solve: pair extents inconsistent with ratio " + str(r));
    if (srf.cols != L || srf.rows != l)
        throw DimensionError("csu_solve: srf is " + str(srf.rows) + "x" + str(srf.cols) +
                             ", need " + str(l) + "x" + str(L));
    const std::int64_t hw = lrhs.pixels(), HW = hrms.pixels();
    if (n < 1 || n > hw)
        throw ContractError("csu_solve: endmember count " + str(n) +
                            " must be in [1, lrhs pixel count " + str(hw) + "]");
    if (iters < 0) throw ContractError("csu_solve: negative iteration count");

    const Eigen::Map<const MatrixXd> X(lrhs.data.data(), L, hw);
    const Eigen::Map<const MatrixXd> Y(hrms.data.data(), l, HW);
    const MatrixXd Hm = detail::srf_matrix(srf);

    // init: endmembers from n distinct observed spectra picked by
    // farthest-point sampling (first = farthest from the mean spectrum),
    // which lands on near-pure pixels when the scene contains them
    std::vector<int> chosen;
    {
        const Eigen::VectorXd mean_spec = X.rowwise().mean();
        int first = 0;
        double best = -1.0;
        for (std::int64_t p = 0; p < hw; ++p) {
            const double d = (X.col(p) - mean_spec).squaredNorm();
            if (d > best) {
                best = d;
                first = static_cast<int>(p);
            }
        }
        chosen.push_back(first);
        while (static_cast<int>(chosen.size()) < n) {
            int next = -1;
            double far = -1.0;
            for (std::int64_t p = 0; p < hw; ++p) {
                double near = std::numeric_limits<double>::infinity();
                bool taken = false;
                for (int c : chosen) {
                    if (c == p) {
                        taken = true;
                        break;
                    }
                    near = std::min(near, (X.col(p) - X.col(c)).squaredNorm());
                }
                if (!taken && near > far) {
                    far = near;
                    next = static_cast<int>(p);
                }
            }
            chosen.push_back(next);
        }
    }
    MatrixXd S(L, n);
    for (int k = 0; k < n; ++k) S.col(k) = X.col(chosen[static_cast<std::size_t>(k)]);
    MatrixXd A = MatrixXd::Constant(n, HW, 1.0 / n);

    auto objective = [&](const MatrixXd& Sm, const MatrixXd& Am) {
        const MatrixXd At = detail::apply_R(Am, H, W, psf);
        return (X - Sm * At).squaredNorm() + (Y - (Hm * Sm) * Am).squaredNorm();
    };

    auto project_columns = [&](MatrixXd& Am) {
        std::vector<double> col(static_cast<std::size_t>(n));
        for (Eigen::Index p = 0; p < Am.cols(); ++p) {
            for (int k = 0; k < n; ++k) col[static_cast<std::size_t>(k)] = Am(k, p);
            std::vector<double> proj = project_simplex(col);
            for (int k = 0; k < n; ++k) Am(k, p) = proj[static_cast<std::size_t>(k)];
        }
    };

    // spectral-norm estimate of V -> StS V R Rt + G V by power iteration
    auto lipschitz_A = [&](const MatrixXd& Sm) {
        const MatrixXd StS = Sm.transpose() * Sm;
        const MatrixXd HS = Hm * Sm;
        const MatrixXd G = HS.transpose() * HS;
        Rng prng = substream(seed, "csu-power-a");
        MatrixXd V(n, HW);
        for (int k = 0; k < n; ++k)
            for (std::int64_t p = 0; p < HW; ++p) V(k, p) = prng.normal();
        double lambda = 1.0;
        for (int it = 0; it < 10; ++it) {
            V /= std::max(V.norm(), 1e-300);
            const MatrixXd MV =
                StS * detail::apply_Rt(detail::apply_R(V, H, W, psf), H, W, psf) + G * V;
            lambda = MV.norm();
            V = MV;
        }
        return std::max(lambda, 1e-12);
    };

    auto lipschitz_S = [&](const MatrixXd& Am) {
        const MatrixXd At = detail::apply_R(Am, H, W, psf);
        const MatrixXd AtAt = At * At.transpose();
        const MatrixXd AAt = Am * Am.transpose();
        const MatrixXd HtH = Hm.transpose() * Hm;
        Rng prng = substream(seed, "csu-power-s");
        MatrixXd U(L, n);
        for (int b = 0; b < L; ++b)
            for (int k = 0; k < n; ++k) U(b, k) = prng.normal();
        double lambda = 1.0;
        for (int it = 0; it < 10; ++it) {
            U /= std::max(U.norm(), 1e-300);
            const MatrixXd MU = U * AtAt + HtH * U * AAt;
            lambda = MU.norm();
            U = MU;
        }
        return std::max(lambda, 1e-12);
    };

    CsuState state;
    double obj = objective(S, A);
    const int inner_steps = DCNET_CSU_INNER_STEPS;
    for (int it = 0; it < iters; ++it) {
        // A-block: accelerated 1/L projected-gradient passes. Extrapolated
        // steps are accepted only when the objective does not increase;
        // otherwise the momentum restarts and a plain safeguarded step runs.
        {
            const MatrixXd HS = Hm * S;
            const double base_step = 1.0 / (2.0 * lipschitz_A(S));
            MatrixXd A_prev = A;
            double tk = 1.0;
            auto grad_at = [&](const MatrixXd& V) {
                const MatrixXd At = detail::apply_R(V, H, W, psf);
                return MatrixXd(
                    2.0 * (detail::apply_Rt(S.transpose() * (S * At - X), H, W, psf) +
                           HS.transpose() * (HS * V - Y)));
            };
            for (int inner = 0; inner < inner_steps; ++inner) {
                const double tk1 = (1.0 + std::sqrt(1.0 + 4.0 * tk * tk)) / 2.0;
                const double omega = (tk - 1.0) / tk1;
                MatrixXd V = A + omega * (A - A_prev);
                MatrixXd cand = V - base_step * grad_at(V);
                project_columns(cand);
                double cand_obj = objective(S, cand);
                if (cand_obj <= obj) {
                    A_prev = A;
                    A = std::move(cand);
                    obj = cand_obj;
                    tk = tk1;
                    continue;
                }
                tk = 1.0;
                A_prev = A;
                const MatrixXd grad = grad_at(A);
                double step = base_step;
                for (int halve = 0; halve <= 20; ++halve) {
                    MatrixXd c2 = A - step * grad;
                    project_columns(c2);
                    cand_obj = objective(S, c2);
                    if (cand_obj <= obj) {
                        A = std::move(c2);
                        obj = cand_obj;
                        break;
                    }
                    step *= 0.5;
                }
            }
        }
        // S-block: same scheme with clipping at zero
        {
            const double base_step = 1.0 / (2.0 * lipschitz_S(A));
            const MatrixXd At = detail::apply_R(A, H, W, psf);
            MatrixXd S_prev = S;
            double tk = 1.0;
            auto grad_at = [&](const MatrixXd& U) {
                return MatrixXd(2.0 * ((U * At - X) * At.transpose() +
                                       Hm.transpose() * ((Hm * U) * A - Y) * A.transpose()));
            };
            for (int inner = 0; inner < inner_steps; ++inner) {
                const double tk1 = (1.0 + std::sqrt(1.0 + 4.0 * tk * tk)) / 2.0;
                const double omega = (tk - 1.0) / tk1;
                const MatrixXd U = S + omega * (S - S_prev);
                MatrixXd cand = (U - base_step * grad_at(U)).cwiseMax(0.0);
                double cand_obj = objective(cand, A);
                if (cand_obj <= obj) {
                    S_prev = S;
                    S = std::move(cand);
                    obj = cand_obj;
                    tk = tk1;
                    continue;
                }
                tk = 1.0;
                S_prev = S;
                const MatrixXd grad = grad_at(S);
                double step = base_step;
                for (int halve = 0; halve <= 20; ++halve) {
                    MatrixXd c2 = (S - step * grad).cwiseMax(0.0);
                    cand_obj = objective(c2, A);
                    if (cand_obj <= obj) {
                        S = std::move(c2);
                        obj = cand_obj;
                        break;
                    }
                    step *= 0.5;
                }
            }
        }
        state.objective.push_back(obj);
    }

    // Eigen matrices are column-major; repack row-major for the tensor views
    {
        std::vector<double> s_rm(static_cast<std::size_t>(L) * n);
        for (int b = 0; b < L; ++b)
            for (int k = 0; k < n; ++k) s_rm[static_cast<std::size_t>(b) * n + k] = S(b, k);
        state.endmembers = Tensor({L, n}, std::move(s_rm));
        std::vector<double> a_rm(static_cast<std::size_t>(n) * HW);
        for (int k = 0; k < n; ++k)
            for (std::int64_t p = 0; p < HW; ++p)
                a_rm[static_cast<std::size_t>(k) * HW + p] = A(k, p);
        state.abundances = Tensor({n, static_cast<int>(HW)}, std::move(a_rm));
    }

    const MatrixXd Z = S * A;
    state.fused = HsiCube(H, W, L);
    for (std::int64_t p = 0; p < HW; ++p)
        for (int b = 0; b < L; ++b)
            state.fused.data[static_cast<std::size_t>(p) * L + b] = Z(b, p);
    return state;
}

/// Side-by-side scoring of the oracle and network estimates: each against the
/// truth, plus the network scored against the oracle (their mutual row).
struct ComparisonRow {
    std::string name;
    MetricsReport report;
};

inline std::vector<ComparisonRow> compare_to_network(const HsiCube& oracle_z,
                                                     const HsiCube& network_z,
                                                     const HsiCube& truth, double ratio) {
    std::vector<ComparisonRow> rows;
    rows.push_back({"oracle_vs_truth", evaluate(truth, oracle_z, ratio)});
    rows.push_back({"network_vs_truth", evaluate(truth, network_z, ratio)});
    rows.push_back({"network_vs_oracle", evaluate(oracle_z, network_z, ratio)});
    return rows;
}

}  // namespace dcnet
