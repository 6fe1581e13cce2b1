// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Classical volume processing shared by QC and prep: Otsu thresholding,
// gradient magnitude, connected components, and binary morphology.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "gbmbench/tensor.hpp"
#include "gbmbench/volume.hpp"

namespace gbmbench {

/// Otsu's threshold over a 256-bin histogram: maximizes between-class
/// variance. Returns the threshold value in intensity units; voxels strictly
/// above it are foreground. For a constant input, returns that constant
/// (yielding an empty foreground).
inline double otsu_threshold(const Tensor& data) {
    const int64_t n = data.numel();
    if (n == 0) return 0.0;
    float lo = data.data()[0], hi = data.data()[0];
    for (int64_t i = 0; i < n; ++i) {
        lo = std::min(lo, data.data()[i]);
        hi = std::max(hi, data.data()[i]);
    }
    if (hi <= lo) return static_cast<double>(lo);

    constexpr int kBins = 256;
    std::array<int64_t, kBins> hist{};
    const double scale = kBins / (static_cast<double>(hi) - static_cast<double>(lo));
    for (int64_t i = 0; i < n; ++i) {
        int b = static_cast<int>((static_cast<double>(data.data()[i]) - lo) * scale);
        b = std::min(kBins - 1, std::max(0, b));
        ++hist[static_cast<size_t>(b)];
    }

    double total_mean = 0.0;
    for (int b = 0; b < kBins; ++b) total_mean += b * static_cast<double>(hist[static_cast<size_t>(b)]);
    total_mean /= static_cast<double>(n);

    double w0 = 0.0, sum0 = 0.0, best_var = -1.0;
    int best_bin = 0;
    for (int b = 0; b < kBins - 1; ++b) {
        w0 += static_cast<double>(hist[static_cast<size_t>(b)]);
        if (w0 <= 0.0) continue;
        const double w1 = static_cast<double>(n) - w0;
        if (w1 <= 0.0) break;
        sum0 += b * static_cast<double>(hist[static_cast<size_t>(b)]);
        const double mu0 = sum0 / w0;
        const double mu1 = (total_mean * static_cast<double>(n) - sum0) / w1;
        const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_bin = b;
        }
    }
    // Threshold at the upper edge of the chosen bin.
    return static_cast<double>(lo) + (best_bin + 1) / scale;
}

/// Foreground mask: voxels strictly above the threshold.
inline std::vector<uint8_t> mask_above(const Tensor& data, double thr) {
    std::vector<uint8_t> m(static_cast<size_t>(data.numel()));
    for (int64_t i = 0; i < data.numel(); ++i)
        m[static_cast<size_t>(i)] = static_cast<double>(data.data()[i]) > thr ? 1 : 0;
    return m;
}

/// Mean and population standard deviation over masked voxels (double accum).
inline std::pair<double, double> masked_stats(const Tensor& data,
                                              const std::vector<uint8_t>& mask) {
    double sum = 0.0, count = 0.0;
    for (int64_t i = 0; i < data.numel(); ++i)
        if (mask[static_cast<size_t>(i)]) {
            sum += static_cast<double>(data.data()[i]);
            count += 1.0;
        }
    if (count == 0.0) return {0.0, 0.0};
    const double mean = sum / count;
    double ss = 0.0;
    for (int64_t i = 0; i < data.numel(); ++i)
        if (mask[static_cast<size_t>(i)]) {
            const double d = static_cast<double>(data.data()[i]) - mean;
            ss += d * d;
        }
    return {mean, std::sqrt(ss / count)};
}

/// Gradient magnitude via central differences (one-sided at borders), in
/// voxel units. Shape [nz, ny, nx] matching the input.
inline Tensor gradient_magnitude(const Tensor& data) {
    const auto& s = data.shape();
    const int64_t nz = s[0], ny = s[1], nx = s[2];
    Tensor g(s);
    auto at = [&](int64_t z, int64_t y, int64_t x) -> double {
        return static_cast<double>(data.data()[(z * ny + y) * nx + x]);
    };
    for (int64_t z = 0; z < nz; ++z)
        for (int64_t y = 0; y < ny; ++y)
            for (int64_t x = 0; x < nx; ++x) {
                const double gx = (at(z, y, std::min(x + 1, nx - 1)) -
                                   at(z, y, std::max(x - 1, int64_t{0}))) /
                                  static_cast<double>(std::min(x + 1, nx - 1) -
                                                      std::max(x - 1, int64_t{0}));
                const double gy = (at(z, std::min(y + 1, ny - 1), x) -
                                   at(z, std::max(y - 1, int64_t{0}), x)) /
                                  static_cast<double>(std::min(y + 1, ny - 1) -
                                                      std::max(y - 1, int64_t{0}));
                const double gz = (at(std::min(z + 1, nz - 1), y, x) -
                                   at(std::max(z - 1, int64_t{0}), y, x)) /
                                  static_cast<double>(std::min(z + 1, nz - 1) -
                                                      std::max(z - 1, int64_t{0}));
                g.data()[(z * ny + y) * nx + x] = static_cast<float>(
                    std::sqrt(gx * gx + gy * gy + gz * gz));
            }
    return g;
}

/// Keeps only the largest 6-connected component of a binary mask.
inline std::vector<uint8_t> largest_component(const std::vector<uint8_t>& mask, int64_t nz,
                                              int64_t ny, int64_t nx) {
    std::vector<int32_t> label(mask.size(), 0);
    int32_t next = 0;
    int64_t best_size = 0;
    int32_t best_label = 0;
    std::deque<int64_t> queue;
    const int64_t dz[6] = {1, -1, 0, 0, 0, 0};
    const int64_t dy[6] = {0, 0, 1, -1, 0, 0};
    const int64_t dx[6] = {0, 0, 0, 0, 1, -1};
    for (int64_t start = 0; start < static_cast<int64_t>(mask.size()); ++start) {
        if (!mask[static_cast<size_t>(start)] || label[static_cast<size_t>(start)]) continue;
        ++next;
        int64_t size = 0;
        queue.push_back(start);
        label[static_cast<size_t>(start)] = next;
        while (!queue.empty()) {
            const int64_t i = queue.front();
            queue.pop_front();
            ++size;
            const int64_t z = i / (ny * nx), y = (i / nx) % ny, x = i % nx;
            for (int k = 0; k < 6; ++k) {
                const int64_t zz = z + dz[k], yy = y + dy[k], xx = x + dx[k];
                if (zz < 0 || zz >= nz || yy < 0 || yy >= ny || xx < 0 || xx >= nx) continue;
                const int64_t j = (zz * ny + yy) * nx + xx;
                if (mask[static_cast<size_t>(j)] && !label[static_cast<size_t>(j)]) {
                    label[static_cast<size_t>(j)] = next;
                    queue.push_back(j);
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best_label = next;
        }
    }
    std::vector<uint8_t> out(mask.size(), 0);
    if (best_label)
        for (size_t i = 0; i < mask.size(); ++i)
            out[i] = label[i] == best_label ? 1 : 0;
    return out;
}

namespace imgproc_detail {

/// Voxel offsets of a Euclidean ball of the given radius.
inline std::vector<std::array<int64_t, 3>> ball_offsets(int radius) {
    std::vector<std::array<int64_t, 3>> off;
    for (int64_t z = -radius; z <= radius; ++z)
        for (int64_t y = -radius; y <= radius; ++y)
            for (int64_t x = -radius; x <= radius; ++x)
                if (z * z + y * y + x * x <= static_cast<int64_t>(radius) * radius)
                    off.push_back({z, y, x});
    return off;
}

inline std::vector<uint8_t> morph(const std::vector<uint8_t>& mask, int64_t nz, int64_t ny,
                                  int64_t nx, int radius, bool dilate) {
    const auto off = ball_offsets(radius);
    std::vector<uint8_t> out(mask.size());
    for (int64_t z = 0; z < nz; ++z)
        for (int64_t y = 0; y < ny; ++y)
            for (int64_t x = 0; x < nx; ++x) {
                bool hit = !dilate;
                for (const auto& o : off) {
                    const int64_t zz = z + o[0], yy = y + o[1], xx = x + o[2];
                    // Outside the grid counts as background.
                    const bool v = zz >= 0 && zz < nz && yy >= 0 && yy < ny && xx >= 0 &&
                                   xx < nx && mask[static_cast<size_t>((zz * ny + yy) * nx + xx)];
                    if (dilate && v) {
                        hit = true;
                        break;
                    }
                    if (!dilate && !v) {
                        hit = false;
                        break;
                    }
                }
                out[static_cast<size_t>((z * ny + y) * nx + x)] = hit ? 1 : 0;
            }
    return out;
}

}  // namespace imgproc_detail

inline std::vector<uint8_t> binary_dilate(const std::vector<uint8_t>& mask, int64_t nz,
                                          int64_t ny, int64_t nx, int radius) {
    return imgproc_detail::morph(mask, nz, ny, nx, radius, true);
}

inline std::vector<uint8_t> binary_erode(const std::vector<uint8_t>& mask, int64_t nz, int64_t ny,
                                         int64_t nx, int radius) {
    return imgproc_detail::morph(mask, nz, ny, nx, radius, false);
}

/// Morphological closing (dilate then erode) with a Euclidean ball.
inline std::vector<uint8_t> binary_close(const std::vector<uint8_t>& mask, int64_t nz, int64_t ny,
                                         int64_t nx, int radius) {
    return binary_erode(binary_dilate(mask, nz, ny, nx, radius), nz, ny, nx, radius);
}

/// Separable box blur of the given half-width (radius), zero-phase, with
/// edge clamping by renormalization. Used by tests to degrade sharpness.
inline Tensor box_blur(const Tensor& data, int radius) {
    const auto& s = data.shape();
    const int64_t n[3] = {s[0], s[1], s[2]};
    Tensor cur = data, nxt(s);
    for (int axis = 0; axis < 3; ++axis) {
        const int64_t nz = n[0], ny = n[1], nx = n[2];
        for (int64_t z = 0; z < nz; ++z)
            for (int64_t y = 0; y < ny; ++y)
                for (int64_t x = 0; x < nx; ++x) {
                    int64_t c[3] = {z, y, x};
                    double acc = 0.0;
                    int cnt = 0;
                    for (int64_t d = -radius; d <= radius; ++d) {
                        int64_t q[3] = {c[0], c[1], c[2]};
                        q[axis] += d;
                        if (q[axis] < 0 || q[axis] >= n[axis]) continue;
                        acc += static_cast<double>(cur.data()[(q[0] * ny + q[1]) * nx + q[2]]);
                        ++cnt;
                    }
                    nxt.data()[(z * ny + y) * nx + x] = static_cast<float>(acc / cnt);
                }
        std::swap(cur, nxt);
    }
    return cur;
}

}  // namespace gbmbench
