// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Geometry-threshold quality control, clarity-score ranking, per-series CSV
// audit logging, and mid-plane slice previews.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gbmbench/cohort.hpp"
#include "gbmbench/csv.hpp"
#include "gbmbench/draw.hpp"
#include "gbmbench/imgproc.hpp"
#include "gbmbench/nifti.hpp"
#include "gbmbench/volume.hpp"

namespace gbmbench {

struct GeometryThresholds {
    double max_inplane_spacing = 2.0;   // mm
    double max_slice_thickness = 6.5;   // mm
    double max_anisotropy_ratio = 6.0;  // max spacing / min spacing
    int64_t min_slices = 20;
};

struct QCVerdict {
    SeriesMeta series;
    bool geometry_pass = false;
    std::vector<std::string> reject_reasons;       // nonempty iff !geometry_pass
    std::optional<double> clarity_score;           // defined only when geometry_pass
    bool selected = false;
};

namespace qc_detail {

inline std::string fmt2(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace qc_detail

inline double anisotropy_ratio(const std::array<double, 3>& spacing) {
    const double mx = std::max({spacing[0], spacing[1], spacing[2]});
    const double mn = std::min({spacing[0], spacing[1], spacing[2]});
    return mn > 0.0 ? mx / mn : std::numeric_limits<double>::infinity();
}

/// Pure metadata predicate: fails iff any threshold is violated, one
/// human-readable reason per violated threshold. Never loads voxels.
inline QCVerdict check_geometry(const SeriesMeta& meta, const GeometryThresholds& thr) {
    QCVerdict v;
    v.series = meta;
    const double inplane = std::max(meta.voxel_spacing[0], meta.voxel_spacing[1]);
    if (inplane > thr.max_inplane_spacing)
        v.reject_reasons.push_back("inplane spacing " + qc_detail::fmt2(inplane) + " mm > max " +
                                   qc_detail::fmt2(thr.max_inplane_spacing) + " mm");
    if (meta.slice_thickness > thr.max_slice_thickness)
        v.reject_reasons.push_back("slice thickness " + qc_detail::fmt2(meta.slice_thickness) +
                                   " mm > max " + qc_detail::fmt2(thr.max_slice_thickness) +
                                   " mm");
    const double aniso = anisotropy_ratio(meta.voxel_spacing);
    if (aniso > thr.max_anisotropy_ratio)
        v.reject_reasons.push_back("anisotropy ratio " + qc_detail::fmt2(aniso) + " > max " +
                                   qc_detail::fmt2(thr.max_anisotropy_ratio));
    const int64_t n_slices = meta.dims[2];
    if (n_slices < thr.min_slices)
        v.reject_reasons.push_back("slices " + std::to_string(n_slices) + " < min " +
                                   std::to_string(thr.min_slices));
    v.geometry_pass = v.reject_reasons.empty();
    return v;
}

/// Sharpness proxy: mean gradient magnitude of the z-score-normalized volume
/// over the Otsu foreground mask, computed end-to-end in double precision.
/// Invariant under multiplication by a positive constant; 0 by convention for
/// degenerate (constant or empty-foreground) volumes.
inline double clarity_score(const Volume& vol) {
    const Tensor& d = vol.data;
    const double thr = otsu_threshold(d);
    const std::vector<uint8_t> mask = mask_above(d, thr);
    const auto [mean, sd] = masked_stats(d, mask);
    (void)mean;
    if (sd <= 0.0) return 0.0;

    const int64_t nz = vol.nz(), ny = vol.ny(), nx = vol.nx();
    auto at = [&](int64_t z, int64_t y, int64_t x) -> double {
        return static_cast<double>(d.data()[(z * ny + y) * nx + x]);
    };
    double sum = 0.0;
    int64_t count = 0;
    for (int64_t z = 0; z < nz; ++z)
        for (int64_t y = 0; y < ny; ++y)
            for (int64_t x = 0; x < nx; ++x) {
                if (!mask[static_cast<size_t>((z * ny + y) * nx + x)]) continue;
                const int64_t xl = std::max(x - 1, int64_t{0}), xh = std::min(x + 1, nx - 1);
                const int64_t yl = std::max(y - 1, int64_t{0}), yh = std::min(y + 1, ny - 1);
                const int64_t zl = std::max(z - 1, int64_t{0}), zh = std::min(z + 1, nz - 1);
                const double gx = (at(z, y, xh) - at(z, y, xl)) / static_cast<double>(xh - xl);
                const double gy = (at(z, yh, x) - at(z, yl, x)) / static_cast<double>(yh - yl);
                const double gz = (at(zh, y, x) - at(zl, y, x)) / static_cast<double>(zh - zl);
                sum += std::sqrt(gx * gx + gy * gy + gz * gz);
                ++count;
            }
    if (count == 0) return 0.0;
    // Gradient of (v - mean)/sd equals gradient of v divided by sd.
    return sum / (static_cast<double>(count) * sd);
}

/// Marks exactly one passing candidate selected: highest clarity score, ties
/// broken by lexicographically smallest series_id. No passing candidate ->
/// nothing selected. Returns the selected index if any.
inline std::optional<size_t> select_best_series(std::vector<QCVerdict>& candidates) {
    std::optional<size_t> best;
    for (size_t i = 0; i < candidates.size(); ++i) {
        candidates[i].selected = false;
        const auto& c = candidates[i];
        if (!c.geometry_pass || !c.clarity_score) continue;
        if (!best) {
            best = i;
            continue;
        }
        const auto& b = candidates[*best];
        const double cs = *c.clarity_score, bs = *b.clarity_score;
        if (cs > bs || (cs == bs && c.series.series_id < b.series.series_id)) best = i;
    }
    if (best) candidates[*best].selected = true;
    return best;
}

/// Montage of the three mid-planes (axial, coronal, sagittal center slices),
/// window-leveled to the volume's intensity range.
inline void emit_preview(const Volume& vol, const fs::path& out) {
    const int64_t nz = vol.nz(), ny = vol.ny(), nx = vol.nx();
    float lo = vol.data.data()[0], hi = vol.data.data()[0];
    for (int64_t i = 0; i < vol.data.numel(); ++i) {
        lo = std::min(lo, vol.data.data()[i]);
        hi = std::max(hi, vol.data.data()[i]);
    }
    const int64_t gap = 2;
    // Panels: axial ny x nx, coronal nz x nx, sagittal nz x ny.
    const int64_t h = std::max(ny, nz);
    const int64_t w = nx + gap + nx + gap + ny;
    Canvas canvas(w, h, {0, 0, 0});
    const int64_t zc = nz / 2, yc = ny / 2, xc = nx / 2;
    auto put = [&](int64_t ox, int64_t px_w, int64_t px_h, auto&& value) {
        for (int64_t r = 0; r < px_h; ++r)
            for (int64_t c = 0; c < px_w; ++c) {
                const uint8_t g = gray_of(value(r, c), lo, hi);
                canvas.set(ox + c, r, {g, g, g});
            }
    };
    const auto& d = vol;
    put(0, nx, ny, [&](int64_t r, int64_t c) { return d.data.data()[(zc * ny + r) * nx + c]; });
    put(nx + gap, nx, nz,
        [&](int64_t r, int64_t c) { return d.data.data()[(r * ny + yc) * nx + c]; });
    put(nx + gap + nx + gap, ny, nz,
        [&](int64_t r, int64_t c) { return d.data.data()[(r * ny + c) * nx + xc]; });
    canvas.save(out);
}

struct QCResult {
    std::vector<QCVerdict> verdicts;  // manifest series order
    SeriesSelection selection;        // (patient, timepoint) -> winning series_id
    std::vector<std::pair<std::string, int64_t>> excluded;  // nothing passed here
};

/// Full QC pass over a manifest: metadata-only geometry checks first, voxel
/// loading and clarity scoring only for geometry-passing candidates, then
/// per-(patient, timepoint) selection. Writes `<out>/qc.csv` (byte
/// deterministic, manifest order) and previews for passing series at
/// `<out>/previews/<patient>_<timepoint>_<series>.png`.
inline QCResult run_qc(const CohortManifest& manifest, const GeometryThresholds& thr,
                       const fs::path& out, bool previews = true) {
    QCResult res;
    res.verdicts.reserve(manifest.series.size());
    if (previews) ensure_dir(out / "previews");

    // Group indices per (patient, timepoint); manifest order is already sorted.
    std::map<std::pair<std::string, int64_t>, std::vector<size_t>> groups;
    for (size_t i = 0; i < manifest.series.size(); ++i) {
        const auto& s = manifest.series[i];
        res.verdicts.push_back(check_geometry(s, thr));
        groups[{s.patient_id, s.timepoint}].push_back(i);
    }

    for (auto& [key, idxs] : groups) {
        std::vector<QCVerdict> cands;
        for (size_t i : idxs) {
            QCVerdict& v = res.verdicts[i];
            if (v.geometry_pass) {
                const Volume vol = read_nifti(v.series.file_ref);
                v.clarity_score = clarity_score(vol);
                if (previews) {
                    const fs::path p = out / "previews" /
                                       (v.series.patient_id + "_" +
                                        std::to_string(v.series.timepoint) + "_" +
                                        v.series.series_id + ".png");
                    emit_preview(vol, p);
                }
            }
            cands.push_back(v);
        }
        const std::optional<size_t> pick = select_best_series(cands);
        for (size_t k = 0; k < idxs.size(); ++k) res.verdicts[idxs[k]] = cands[k];
        if (pick) {
            res.selection[key] = cands[*pick].series.series_id;
        } else {
            res.excluded.push_back(key);
        }
    }

    CsvTable t;
    t.header = {"patient_id",   "timepoint",        "series_id",    "spacing_x",
                "spacing_y",    "spacing_z",        "slice_thickness", "anisotropy_ratio",
                "n_slices",     "geometry_pass",    "reject_reasons",  "clarity_score",
                "selected"};
    for (const auto& v : res.verdicts) {
        const auto& s = v.series;
        std::string reasons;
        for (size_t i = 0; i < v.reject_reasons.size(); ++i) {
            if (i) reasons += ';';
            reasons += v.reject_reasons[i];
        }
        t.rows.push_back({s.patient_id, std::to_string(s.timepoint), s.series_id,
                          qc_detail::fmt_g(s.voxel_spacing[0]), qc_detail::fmt_g(s.voxel_spacing[1]),
                          qc_detail::fmt_g(s.voxel_spacing[2]), qc_detail::fmt_g(s.slice_thickness),
                          qc_detail::fmt_g(anisotropy_ratio(s.voxel_spacing)),
                          std::to_string(s.dims[2]), v.geometry_pass ? "true" : "false", reasons,
                          v.clarity_score ? qc_detail::fmt_g(*v.clarity_score) : "",
                          v.selected ? "true" : "false"});
    }
    ensure_dir(out);
    write_csv(out / "qc.csv", t);
    return res;
}

}  // namespace gbmbench
