#pragma once

// Hyperspectral data model: cube container, bit-exact HSC1 file I/O, sensor
// degradation operators, resampling, noise, and a synthetic scene generator
// that satisfies the linear mixing model exactly.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dcnet/common.hpp"
#include "dcnet/tensor.hpp"

namespace dcnet {

/// height x width x bands raster, band-interleaved-by-pixel so per-pixel
/// spectra are contiguous. Values are nominally in [0, 1].
struct HsiCube {
    int height = 0, width = 0, bands = 0;
    std::vector<double> data;  // ((y * width + x) * bands + b)

    HsiCube() = default;
    HsiCube(int h, int w, int b)
        : height(h), width(w), bands(b),
          data(static_cast<std::size_t>(h) * w * b, 0.0) {
        if (h <= 0 || w <= 0 || b <= 0) throw ContractError("HsiCube: extents must be positive");
    }

    double& at(int y, int x, int b) {
        return data[(static_cast<std::size_t>(y) * width + x) * bands + b];
    }
    double at(int y, int x, int b) const {
        return data[(static_cast<std::size_t>(y) * width + x) * bands + b];
    }
    std::int64_t pixels() const { return static_cast<std::int64_t>(height) * width; }
};

/// Cube as a [bands x height x width] tensor (detached).
inline Tensor tensor_from_cube(const HsiCube& c) {
    std::vector<double> v(c.data.size());
    const std::int64_t plane = c.pixels();
    for (std::int64_t p = 0; p < plane; ++p)
        for (int b = 0; b < c.bands; ++b)
            v[static_cast<std::size_t>(b) * plane + p] = c.data[p * c.bands + b];
    return Tensor({c.bands, c.height, c.width}, std::move(v));
}

inline HsiCube cube_from_tensor(const Tensor& t) {
    if (t.shape.size() != 3)
        throw DimensionError("cube_from_tensor: expected CxHxW, got " + shape_str(t.shape));
    HsiCube c(t.shape[1], t.shape[2], t.shape[0]);
    const auto& v = t.values();
    const std::int64_t plane = c.pixels();
    for (std::int64_t p = 0; p < plane; ++p)
        for (int b = 0; b < c.bands; ++b)
            c.data[p * c.bands + b] = v[static_cast<std::size_t>(b) * plane + p];
    return c;
}

// ---------------------------------------------------------------------------
// HSC1 cube file format
//
//   bytes 0-7   ASCII magic "HSCUBE1\n"
//   then        ASCII header "h=<int> w=<int> b=<int> dtype=f32\n"
//   then        h*w*b little-endian IEEE-754 float32, pixel-major (BIP)
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kCubeMagic[8] = {'H', 'S', 'C', 'U', 'B', 'E', '1', '\n'};

inline void put_f32_le(std::string& out, float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    out.push_back(static_cast<char>(u & 0xFF));
    out.push_back(static_cast<char>((u >> 8) & 0xFF));
    out.push_back(static_cast<char>((u >> 16) & 0xFF));
    out.push_back(static_cast<char>((u >> 24) & 0xFF));
}

inline float get_f32_le(const unsigned char* p) {
    std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}
}  // namespace detail

inline void save_cube(const std::string& path, const HsiCube& cube) {
    if (cube.data.size() != static_cast<std::size_t>(cube.pixels()) * cube.bands)
        throw ContractError("save_cube: cube data length does not match extents");
    std::string out(detail::kCubeMagic, 8);
    out += "h=" + str(cube.height) + " w=" + str(cube.width) + " b=" + str(cube.bands) +
           " dtype=f32\n";
    out.reserve(out.size() + cube.data.size() * 4);
    for (double d : cube.data) detail::put_f32_le(out, static_cast<float>(d));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("save_cube: cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("save_cube: short write to " + path);
}

inline HsiCube load_cube(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_cube: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (bytes.size() < 8 || std::memcmp(bytes.data(), detail::kCubeMagic, 8) != 0)
        throw FormatError(path + ": bad magic at byte offset 0");
    const std::size_t header_end = bytes.find('\n', 8);
    if (header_end == std::string::npos)
        throw FormatError(path + ": unterminated header at byte offset 8");
    const std::string header = bytes.substr(8, header_end - 8);
    int h = 0, w = 0, b = 0;
    char dtype[8] = {0};
    if (std::sscanf(header.c_str(), "h=%d w=%d b=%d dtype=%7s", &h, &w, &b, dtype) != 4 ||
        std::string(dtype) != "f32" || h <= 0 || w <= 0 || b <= 0)
        throw FormatError(path + ": malformed header at byte offset 8: '" + header + "'");

    const std::size_t payload_at = header_end + 1;
    const std::size_t expect = static_cast<std::size_t>(h) * w * b * 4;
    if (bytes.size() - payload_at != expect)
        throw FormatError(path + ": payload length " + str(bytes.size() - payload_at) + " != " +
                          str(expect) + " at byte offset " + str(payload_at));

    HsiCube cube(h, w, b);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data()) + payload_at;
    for (std::size_t i = 0; i < cube.data.size(); ++i)
        cube.data[i] = static_cast<double>(detail::get_f32_le(p + i * 4));
    return cube;
}

// ---------------------------------------------------------------------------
// Spectral response
// ---------------------------------------------------------------------------

/// l x L nonnegative matrix with rows normalized to sum 1 at construction.
struct Srf {
    int rows = 0, cols = 0;
    std::vector<double> weights;    // row-major
    std::vector<double> band_grid;  // wavelength index per input band

    double at(int r, int c) const { return weights[static_cast<std::size_t>(r) * cols + c]; }
};

inline Srf make_srf(int rows, int cols, std::vector<double> raw) {
    if (rows <= 0 || cols <= 0 ||
        raw.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
        throw ContractError("make_srf: bad extents");
    for (int r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < cols; ++c) {
            double v = raw[static_cast<std::size_t>(r) * cols + c];
            if (!(v >= 0.0)) throw FormatError("srf: negative entry in row " + str(r));
            s += v;
        }
        if (s <= 0.0) throw FormatError("srf: all-zero row " + str(r));
        for (int c = 0; c < cols; ++c) raw[static_cast<std::size_t>(r) * cols + c] /= s;
    }
    Srf srf;
    srf.rows = rows;
    srf.cols = cols;
    srf.weights = std::move(raw);
    srf.band_grid.resize(static_cast<std::size_t>(cols));
    for (int c = 0; c < cols; ++c) srf.band_grid[static_cast<std::size_t>(c)] = c;
    return srf;
}

/// CSV loader: l rows of L comma-separated nonnegative decimals, '#' comments.
inline Srf load_srf(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("load_srf: cannot open " + path);
    std::vector<double> raw;
    int cols = -1, rows = 0, line_no = 0;
    std::string line;
    while (std::getline(f, line)) {
        ++line_no;
        std::size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line[start] == '#') continue;
        std::vector<double> vals;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            std::string cell = line.substr(pos, comma == std::string::npos ? comma : comma - pos);
            try {
                std::size_t used = 0;
                double v = std::stod(cell, &used);
                while (used < cell.size() &&
                       (cell[used] == ' ' || cell[used] == '\t' || cell[used] == '\r'))
                    ++used;
                if (used != cell.size()) throw std::invalid_argument(cell);
                vals.push_back(v);
            } catch (const std::exception&) {
                throw FormatError(path + ": row " + str(rows) + " (line " + str(line_no) +
                                  "): bad number '" + cell + "'");
            }
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cols < 0) cols = static_cast<int>(vals.size());
        if (static_cast<int>(vals.size()) != cols)
            throw FormatError(path + ": ragged row " + str(rows) + " (line " + str(line_no) +
                              "): got " + str(vals.size()) + " columns, expected " + str(cols));
        raw.insert(raw.end(), vals.begin(), vals.end());
        ++rows;
    }
    if (rows == 0) throw FormatError(path + ": no data rows");
    try {
        return make_srf(rows, cols, std::move(raw));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

inline void save_srf(const std::string& path, const Srf& srf) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("save_srf: cannot open " + path + " for writing");
    f.precision(17);
    for (int r = 0; r < srf.rows; ++r) {
        for (int c = 0; c < srf.cols; ++c) {
            if (c) f << ',';
            f << srf.at(r, c);
        }
        f << '\n';
    }
    if (!f) throw IoError("save_srf: short write to " + path);
}

/// Bundled synthetic SRF: l Gaussian bandpass rows over L input bands.
inline Srf synthetic_gaussian_srf(int out_bands, int in_bands, double sigma_bands = 0.0) {
    if (out_bands <= 0 || in_bands <= 0 || out_bands > in_bands)
        throw ContractError("synthetic_gaussian_srf: need 0 < l <= L");
    if (sigma_bands <= 0.0) sigma_bands = static_cast<double>(in_bands) / (2.0 * out_bands);
    std::vector<double> raw(static_cast<std::size_t>(out_bands) * in_bands);
    for (int j = 0; j < out_bands; ++j) {
        const double center = (j + 0.5) * static_cast<double>(in_bands) / out_bands - 0.5;
        for (int c = 0; c < in_bands; ++c) {
            const double d = (c - center) / sigma_bands;
            raw[static_cast<std::size_t>(j) * in_bands + c] = std::exp(-0.5 * d * d);
        }
    }
    return make_srf(out_bands, in_bands, std::move(raw));
}

// ---------------------------------------------------------------------------
// Point spread
// ---------------------------------------------------------------------------

/// k x k nonnegative kernel summing to 1, applied at stride r. k == r so
/// windows tile the grid exactly.
struct Psf {
    int size = 0, stride = 0;
    std::vector<double> kernel;

    double at(int u, int v) const { return kernel[static_cast<std::size_t>(u) * size + v]; }
};

inline Psf make_psf(int stride, std::vector<double> kernel) {
    if (stride < 1) throw ContractError("make_psf: stride must be >= 1");
    if (kernel.size() != static_cast<std::size_t>(stride) * stride)
        throw ContractError("make_psf: kernel must be stride x stride");
    double s = 0.0;
    for (double v : kernel) {
        if (!(v >= 0.0)) throw ContractError("make_psf: negative kernel weight");
        s += v;
    }
    if (s <= 0.0) throw ContractError("make_psf: zero kernel");
    for (double& v : kernel) v /= s;
    Psf p;
    p.size = stride;
    p.stride = stride;
    p.kernel = std::move(kernel);
    return p;
}

inline Psf box_psf(int stride) {
    return make_psf(stride, std::vector<double>(static_cast<std::size_t>(stride) * stride, 1.0));
}

/// Truncated Gaussian (sigma = r/2.355) renormalized over an r x r support.
inline Psf gaussian_psf(int stride) {
    const double sigma = stride / 2.355;
    const double center = (stride - 1) / 2.0;
    std::vector<double> k(static_cast<std::size_t>(stride) * stride);
    for (int u = 0; u < stride; ++u)
        for (int v = 0; v < stride; ++v) {
            const double du = (u - center) / sigma, dv = (v - center) / sigma;
            k[static_cast<std::size_t>(u) * stride + v] = std::exp(-0.5 * (du * du + dv * dv));
        }
    return make_psf(stride, std::move(k));
}

// ---------------------------------------------------------------------------
// Degradation operators
// ---------------------------------------------------------------------------

/// Y = H Z per pixel: a 1x1 convolution along the spectral axis.
inline HsiCube spectral_degrade(const HsiCube& cube, const Srf& srf) {
    if (srf.cols != cube.bands)
        throw DimensionError("spectral_degrade: srf has " + str(srf.cols) + " input bands, cube " +
                             str(cube.bands));
    HsiCube out(cube.height, cube.width, srf.rows);
    const std::int64_t n = cube.pixels();
    for (std::int64_t p = 0; p < n; ++p) {
        const double* spec = cube.data.data() + p * cube.bands;
        double* dst = out.data.data() + p * srf.rows;
        for (int j = 0; j < srf.rows; ++j) {
            const double* row = srf.weights.data() + static_cast<std::size_t>(j) * srf.cols;
            double acc = 0.0;
            for (int c = 0; c < cube.bands; ++c) acc += row[c] * spec[c];
            dst[j] = acc;
        }
    }
    return out;
}

/// X = Z R per band: strided convolution with the PSF kernel, no padding.
inline HsiCube spatial_degrade(const HsiCube& cube, const Psf& psf) {
    const int r = psf.stride;
    if (cube.height % r != 0 || cube.width % r != 0)
        throw DimensionError("spatial_degrade: ratio " + str(r) + " does not divide " +
                             str(cube.height) + "x" + str(cube.width) + "; crop the cube first");
    HsiCube out(cube.height / r, cube.width / r, cube.bands);
    for (int i = 0; i < out.height; ++i)
        for (int j = 0; j < out.width; ++j)
            for (int b = 0; b < cube.bands; ++b) {
                double acc = 0.0;
                for (int u = 0; u < psf.size; ++u)
                    for (int v = 0; v < psf.size; ++v)
                        acc += psf.at(u, v) * cube.at(i * r + u, j * r + v, b);
                out.at(i, j, b) = acc;
            }
    return out;
}

/// Zero-mean Gaussian noise at the requested cube-level SNR. +inf leaves the
/// cube untouched. Output is intentionally not clipped to [0, 1].
inline HsiCube add_noise(const HsiCube& cube, double snr_db, std::uint64_t seed) {
    if (std::isnan(snr_db)) throw ContractError("add_noise: snr_db is NaN");
    if (std::isinf(snr_db) && snr_db > 0) return cube;
    double power = 0.0;
    for (double v : cube.data) power += v * v;
    power /= static_cast<double>(cube.data.size());
    const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
    Rng rng = substream(seed, "noise");
    HsiCube out = cube;
    for (double& v : out.data) v += sigma * rng.normal();
    return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

enum class Resample { up_bilinear, down_area };

inline HsiCube resample(const HsiCube& cube, Resample direction, int ratio) {
    if (ratio < 1) throw ContractError("resample: ratio must be >= 1");
    if (ratio == 1) return cube;
    if (direction == Resample::down_area) return spatial_degrade(cube, box_psf(ratio));

    // corner-aligned bilinear upsampling
    const int H = cube.height, W = cube.width;
    const int Ho = H * ratio, Wo = W * ratio;
    HsiCube out(Ho, Wo, cube.bands);
    const double sy = Ho > 1 ? static_cast<double>(H - 1) / (Ho - 1) : 0.0;
    const double sx = Wo > 1 ? static_cast<double>(W - 1) / (Wo - 1) : 0.0;
    for (int i = 0; i < Ho; ++i) {
        const double fy = i * sy;
        const int y0 = std::min(static_cast<int>(fy), H - 1);
        const int y1 = std::min(y0 + 1, H - 1);
        const double wy = fy - y0;
        for (int j = 0; j < Wo; ++j) {
            const double fx = j * sx;
            const int x0 = std::min(static_cast<int>(fx), W - 1);
            const int x1 = std::min(x0 + 1, W - 1);
            const double wx = fx - x0;
            for (int b = 0; b < cube.bands; ++b) {
                const double top = (1.0 - wx) * cube.at(y0, x0, b) + wx * cube.at(y0, x1, b);
                const double bot = (1.0 - wx) * cube.at(y1, x0, b) + wx * cube.at(y1, x1, b);
                out.at(i, j, b) = (1.0 - wy) * top + wy * bot;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scene simulation
// ---------------------------------------------------------------------------

/// The observed pair plus everything needed to score an estimate against it.
struct ScenePair {
    HsiCube lrhs;  // h x w x L
    HsiCube hrms;  // H x W x l
    std::optional<HsiCube> truth;
    std::optional<Srf> true_srf;
    std::optional<Psf> true_psf;
    std::optional<Tensor> true_endmembers;  // L x n
    std::optional<Tensor> true_abundances;  // n x (H*W)
    std::uint64_t seed = 0;
    int ratio = 1;
};

inline ScenePair simulate_pair(const HsiCube& truth, const Srf& srf, const Psf& psf,
                               double snr_hs, double snr_ms, std::uint64_t seed) {
    if (srf.cols != truth.bands)
        throw DimensionError("simulate_pair: srf expects " + str(srf.cols) + " bands, truth has " +
                             str(truth.bands));
    ScenePair pair;
    pair.lrhs = add_noise(spatial_degrade(truth, psf), snr_hs,
                          substream(seed, "noise-hs").raw());
    pair.hrms = add_noise(spectral_degrade(truth, srf), snr_ms,
                          substream(seed, "noise-ms").raw());
    pair.truth = truth;
    pair.true_srf = srf;
    pair.true_psf = psf;
    pair.seed = seed;
    pair.ratio = psf.stride;
    return pair;
}

struct SynthScene {
    HsiCube truth;      // H x W x L, equals fold(S A) exactly
    Tensor endmembers;  // L x n, columns in [0.05, 1]
    Tensor abundances;  // n x (H*W), columns on the simplex
};

namespace detail {
/// 3x3 box blur with clamp-to-edge padding, applied in place.
inline void box_blur_inplace(std::vector<double>& field, int H, int W, int passes) {
    std::vector<double> tmp(field.size());
    for (int pass = 0; pass < passes; ++pass) {
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = std::clamp(y + dy, 0, H - 1);
                        const int xx = std::clamp(x + dx, 0, W - 1);
                        acc += field[static_cast<std::size_t>(yy) * W + xx];
                    }
                tmp[static_cast<std::size_t>(y) * W + x] = acc / 9.0;
            }
        field.swap(tmp);
    }
}
}  // namespace detail

/// Ground truth that satisfies the linear mixing model by construction:
/// smooth positive spectra, softmax abundance fields (ANC and ASC exact).
inline SynthScene synth_scene(std::uint64_t seed, int H, int W, int L, int n, int smoothness) {
    if (n > L) throw ContractError("synth_scene: endmember count " + str(n) + " exceeds bands " +
                                   str(L));
    if (H < 4 || W < 4) throw ContractError("synth_scene: scene must be at least 4x4");
    if (n < 1 || smoothness < 0) throw ContractError("synth_scene: bad arguments");

    // endmembers: sums of random Gaussian bumps over the band axis, mapped
    // into [0.05, 1] so every spectrum is strictly positive
    Rng srng = substream(seed, "endmembers");
    std::vector<double> S(static_cast<std::size_t>(L) * n);
    for (int k = 0; k < n; ++k) {
        std::vector<double> spec(static_cast<std::size_t>(L), 0.0);
        const int bumps = 2 + srng.below(3);
        for (int q = 0; q < bumps; ++q) {
            const double center = srng.uniform(0.0, L - 1.0);
            const double width = srng.uniform(L / 12.0, L / 3.0);
            const double height = srng.uniform(0.2, 1.0);
            for (int b = 0; b < L; ++b) {
                const double d = (b - center) / width;
                spec[static_cast<std::size_t>(b)] += height * std::exp(-0.5 * d * d);
            }
        }
        double lo = spec[0], hi = spec[0];
        for (double v : spec) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
        const double peak = srng.uniform(0.6, 1.0);
        for (int b = 0; b < L; ++b)
            S[static_cast<std::size_t>(b) * n + k] =
                0.05 + (peak - 0.05) * (spec[static_cast<std::size_t>(b)] - lo) / span;
    }

    // abundances: standardized blurred Gaussian fields through a sharpened
    // softmax, so large regions are near-pure
    Rng arng = substream(seed, "abundances");
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    std::vector<std::vector<double>> fields(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        auto& f = fields[static_cast<std::size_t>(k)];
        f.resize(static_cast<std::size_t>(hw));
        for (double& v : f) v = arng.normal();
        detail::box_blur_inplace(f, H, W, smoothness);
        double m = 0.0, sq = 0.0;
        for (double v : f) m += v;
        m /= static_cast<double>(hw);
        for (double v : f) sq += (v - m) * (v - m);
        const double sd = std::sqrt(sq / static_cast<double>(hw));
        const double gain = 8.0 / (sd > 1e-12 ? sd : 1.0);
        for (double& v : f) v = (v - m) * gain;
    }
    // sharpened softmax with a small floor cut: entries below 1% become exact
    // zeros (renormalized), so interiors of blobs are exactly pure
    std::vector<double> A(static_cast<std::size_t>(n) * hw);
    for (std::int64_t p = 0; p < hw; ++p) {
        double mx = fields[0][static_cast<std::size_t>(p)];
        for (int k = 1; k < n; ++k)
            mx = std::max(mx, fields[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)]);
        double denom = 0.0;
        std::vector<double> a(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
            a[static_cast<std::size_t>(k)] =
                std::exp(fields[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)] - mx);
            denom += a[static_cast<std::size_t>(k)];
        }
        double kept = 0.0;
        for (int k = 0; k < n; ++k) {
            double& v = a[static_cast<std::size_t>(k)];
            v /= denom;
            if (v < 0.01) v = 0.0;
            kept += v;
        }
        for (int k = 0; k < n; ++k)
            A[static_cast<std::size_t>(k) * hw + p] = a[static_cast<std::size_t>(k)] / kept;
    }

    // plant one pure patch per material so every endmember appears unmixed
    // somewhere in the scene (the classical pure-pixel condition)
    {
        const int patch = std::max(4, std::min(H, W) / 4);
        std::vector<char> stamped(static_cast<std::size_t>(hw), 0);
        for (int k = 0; k < n; ++k) {
            const auto& f = fields[static_cast<std::size_t>(k)];
            double best = -std::numeric_limits<double>::infinity();
            int by = 0, bx = 0;
            for (int y = 0; y + patch <= H; ++y)
                for (int x = 0; x + patch <= W; ++x) {
                    const std::int64_t p = static_cast<std::int64_t>(y) * W + x;
                    if (stamped[static_cast<std::size_t>(p)]) continue;
                    if (f[static_cast<std::size_t>(p)] > best) {
                        best = f[static_cast<std::size_t>(p)];
                        by = y;
                        bx = x;
                    }
                }
            for (int y = by; y < by + patch; ++y)
                for (int x = bx; x < bx + patch; ++x) {
                    const std::int64_t p = static_cast<std::int64_t>(y) * W + x;
                    stamped[static_cast<std::size_t>(p)] = 1;
                    for (int k2 = 0; k2 < n; ++k2)
                        A[static_cast<std::size_t>(k2) * hw + p] = k2 == k ? 1.0 : 0.0;
                }
        }
    }

    SynthScene scene;
    scene.truth = HsiCube(H, W, L);
    for (std::int64_t p = 0; p < hw; ++p)
        for (int b = 0; b < L; ++b) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k)
                acc += S[static_cast<std::size_t>(b) * n + k] *
                       A[static_cast<std::size_t>(k) * hw + p];
            scene.truth.data[static_cast<std::size_t>(p) * L + b] = acc;
        }
    scene.endmembers = Tensor({L, n}, std::move(S));
    scene.abundances = Tensor({n, static_cast<int>(hw)}, std::move(A));
    return scene;
}

}  // namespace dcnet
