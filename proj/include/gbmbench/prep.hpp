// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Volume standardization: resample to a cubic grid, skull-strip, rigidly
// register to an atlas, z-score normalize within the brain mask — applied in
// exactly that order.
#pragma once

#include <unistd.h>

#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gbmbench/cohort.hpp"
#include "gbmbench/csv.hpp"
#include "gbmbench/imgproc.hpp"
#include "gbmbench/nifti.hpp"
#include "gbmbench/volume.hpp"

namespace gbmbench {

struct EmptyMask : Error {
    using Error::Error;
};

struct ZeroVariance : Error {
    using Error::Error;
};

struct PluginFailure : Error {
    using Error::Error;
};

enum class Interp { TRILINEAR, NEAREST };
enum class RegBackend { IDENTITY, PLUGIN };

struct PrepConfig {
    int64_t target_dim = 128;  // cubic target grid
    Interp interpolation = Interp::TRILINEAR;
    RegBackend registration_backend = RegBackend::IDENTITY;
    std::string atlas_path;      // required for PLUGIN
    std::string plugin_command;  // template with {moving} {fixed} {out_transform}

    void validate() const {
        if (target_dim < 8) throw Error("prep: target_dim must be >= 8");
        if (registration_backend == RegBackend::PLUGIN && plugin_command.empty())
            throw Error("prep: PLUGIN backend requires plugin_command");
    }
};

namespace prep_detail {

/// Corner-anchored index mapping: output index j on an n_out grid lands at
/// input index j * (n_in - 1) / (n_out - 1), so grid corners coincide and a
/// linear field is reproduced exactly. Single-voxel outputs sample the center.
inline double src_index(int64_t j, int64_t n_out, int64_t n_in) {
    if (n_out <= 1) return (static_cast<double>(n_in) - 1.0) / 2.0;
    return static_cast<double>(j) * (static_cast<double>(n_in) - 1.0) /
           (static_cast<double>(n_out) - 1.0);
}

inline double sample_trilinear(const Tensor& d, int64_t nz, int64_t ny, int64_t nx, double z,
                               double y, double x) {
    const auto clamp = [](double v, int64_t n) {
        return std::min(static_cast<double>(n - 1), std::max(0.0, v));
    };
    z = clamp(z, nz);
    y = clamp(y, ny);
    x = clamp(x, nx);
    const int64_t z0 = static_cast<int64_t>(z), y0 = static_cast<int64_t>(y),
                  x0 = static_cast<int64_t>(x);
    const int64_t z1 = std::min(z0 + 1, nz - 1), y1 = std::min(y0 + 1, ny - 1),
                  x1 = std::min(x0 + 1, nx - 1);
    const double fz = z - static_cast<double>(z0), fy = y - static_cast<double>(y0),
                 fx = x - static_cast<double>(x0);
    auto at = [&](int64_t zz, int64_t yy, int64_t xx) {
        return static_cast<double>(d.data()[(zz * ny + yy) * nx + xx]);
    };
    const double c00 = at(z0, y0, x0) * (1 - fx) + at(z0, y0, x1) * fx;
    const double c01 = at(z0, y1, x0) * (1 - fx) + at(z0, y1, x1) * fx;
    const double c10 = at(z1, y0, x0) * (1 - fx) + at(z1, y0, x1) * fx;
    const double c11 = at(z1, y1, x0) * (1 - fx) + at(z1, y1, x1) * fx;
    const double c0 = c00 * (1 - fy) + c01 * fy;
    const double c1 = c10 * (1 - fy) + c11 * fy;
    return c0 * (1 - fz) + c1 * fz;
}

inline uint8_t sample_nearest_mask(const std::vector<uint8_t>& m, int64_t nz, int64_t ny,
                                   int64_t nx, double z, double y, double x) {
    const auto idx = [](double v, int64_t n) {
        const int64_t i = static_cast<int64_t>(std::llround(v));
        return std::min(n - 1, std::max(int64_t{0}, i));
    };
    return m[static_cast<size_t>((idx(z, nz) * ny + idx(y, ny)) * nx + idx(x, nx))];
}

}  // namespace prep_detail

/// Resamples to the cubic target grid. The world-space field of view is
/// preserved: spacing is rescaled by n_in / n_out per axis. Image data uses
/// the configured interpolation (trilinear default); a mask, when present,
/// always resamples nearest-neighbor.
inline Volume resample(const Volume& v, const PrepConfig& cfg) {
    cfg.validate();
    const int64_t N = cfg.target_dim;
    const int64_t nz = v.nz(), ny = v.ny(), nx = v.nx();
    if (nz == N && ny == N && nx == N) {
        // Same grid: identity (the corner-anchored mapping is exact there
        // anyway, this just avoids needless arithmetic).
        return v;
    }
    Volume out = Volume::zeros(N, N, N);
    out.origin = v.origin;
    out.spacing = {v.spacing[0] * static_cast<double>(nx) / static_cast<double>(N),
                   v.spacing[1] * static_cast<double>(ny) / static_cast<double>(N),
                   v.spacing[2] * static_cast<double>(nz) / static_cast<double>(N)};
    for (int64_t z = 0; z < N; ++z) {
        const double sz = prep_detail::src_index(z, N, nz);
        for (int64_t y = 0; y < N; ++y) {
            const double sy = prep_detail::src_index(y, N, ny);
            for (int64_t x = 0; x < N; ++x) {
                const double sx = prep_detail::src_index(x, N, nx);
                double val;
                if (cfg.interpolation == Interp::NEAREST) {
                    const auto idx = [](double q, int64_t n) {
                        return std::min(n - 1, std::max(int64_t{0},
                                                        static_cast<int64_t>(std::llround(q))));
                    };
                    val = static_cast<double>(
                        v.data.data()[(idx(sz, nz) * ny + idx(sy, ny)) * nx + idx(sx, nx)]);
                } else {
                    val = prep_detail::sample_trilinear(v.data, nz, ny, nx, sz, sy, sx);
                }
                out.at(z, y, x) = static_cast<float>(val);
            }
        }
    }
    if (v.has_mask) {
        std::vector<uint8_t> m(static_cast<size_t>(N * N * N));
        for (int64_t z = 0; z < N; ++z)
            for (int64_t y = 0; y < N; ++y)
                for (int64_t x = 0; x < N; ++x)
                    m[static_cast<size_t>((z * N + y) * N + x)] = prep_detail::sample_nearest_mask(
                        v.mask, nz, ny, nx, prep_detail::src_index(z, N, nz),
                        prep_detail::src_index(y, N, ny), prep_detail::src_index(x, N, nx));
        out.set_mask(std::move(m));
    }
    return out;
}

/// Built-in deterministic skull strip: Otsu foreground, largest 3D connected
/// component, morphological closing with a 2-voxel ball. Throws EmptyMask on
/// degenerate input (nothing separable from background).
inline Volume skull_strip(const Volume& v) {
    const double thr = otsu_threshold(v.data);
    std::vector<uint8_t> fg = mask_above(v.data, thr);
    const int64_t nz = v.nz(), ny = v.ny(), nx = v.nx();
    fg = largest_component(fg, nz, ny, nx);
    fg = binary_close(fg, nz, ny, nx, 2);
    int64_t count = 0;
    for (uint8_t b : fg) count += b;
    if (count == 0) throw EmptyMask("skull_strip: no foreground found");
    Volume out = v;
    out.set_mask(std::move(fg));
    return out;
}

/// Parses the plugin transform file: 12 whitespace-separated reals forming a
/// row-major 3x4 matrix [R|t]. The transform is the pull-back map in voxel
/// coordinates: p_moving = R * p_fixed + t.
inline std::array<double, 12> parse_rigid_transform(const std::string& text) {
    std::istringstream in(text);
    std::array<double, 12> m{};
    for (int i = 0; i < 12; ++i)
        if (!(in >> m[static_cast<size_t>(i)]))
            throw PluginFailure("registration plugin: transform file must hold 12 reals");
    double extra;
    if (in >> extra) throw PluginFailure("registration plugin: transform file holds extra values");
    return m;
}

/// Resamples `v` through a pull-back rigid transform on its own grid:
/// out(p) = v(R*p + t), trilinear for data, nearest for the mask, zeros
/// outside the grid.
inline Volume apply_rigid_transform(const Volume& v, const std::array<double, 12>& m) {
    const int64_t nz = v.nz(), ny = v.ny(), nx = v.nx();
    Volume out = Volume::zeros(nz, ny, nx);
    out.spacing = v.spacing;
    out.origin = v.origin;
    std::vector<uint8_t> mask;
    if (v.has_mask) mask.assign(static_cast<size_t>(nz * ny * nx), 0);
    for (int64_t z = 0; z < nz; ++z)
        for (int64_t y = 0; y < ny; ++y)
            for (int64_t x = 0; x < nx; ++x) {
                // Row-major [R|t] acting on (x, y, z).
                const double sx = m[0] * x + m[1] * y + m[2] * z + m[3];
                const double sy = m[4] * x + m[5] * y + m[6] * z + m[7];
                const double sz = m[8] * x + m[9] * y + m[10] * z + m[11];
                if (sx < -0.5 || sx > static_cast<double>(nx) - 0.5 || sy < -0.5 ||
                    sy > static_cast<double>(ny) - 0.5 || sz < -0.5 ||
                    sz > static_cast<double>(nz) - 0.5)
                    continue;  // outside: stays 0
                out.at(z, y, x) = static_cast<float>(
                    prep_detail::sample_trilinear(v.data, nz, ny, nx, sz, sy, sx));
                if (v.has_mask)
                    mask[static_cast<size_t>((z * ny + y) * nx + x)] =
                        prep_detail::sample_nearest_mask(v.mask, nz, ny, nx, sz, sy, sx);
            }
    if (v.has_mask) out.set_mask(std::move(mask));
    return out;
}

/// Rigid registration. IDENTITY returns the input unchanged. PLUGIN writes
/// moving/fixed volumes to a scratch directory, invokes the user-supplied
/// command template (`{moving} {fixed} {out_transform}` placeholders), parses
/// the emitted 3x4 transform, and resamples through it.
inline Volume register_rigid(const Volume& v, const Volume& atlas, const PrepConfig& cfg) {
    cfg.validate();
    if (cfg.registration_backend == RegBackend::IDENTITY) return v;
    if (atlas.nz() != v.nz() || atlas.ny() != v.ny() || atlas.nx() != v.nx())
        throw Error("register_rigid: moving and atlas dims differ");

    static std::atomic<uint64_t> scratch_seq{0};
    const fs::path scratch =
        fs::temp_directory_path() /
        ("gbmbench_reg_" + std::to_string(::getpid()) + "_" +
         std::to_string(scratch_seq.fetch_add(1)));
    ensure_dir(scratch);
    const fs::path moving_p = scratch / "moving.nii.gz";
    const fs::path fixed_p = scratch / "fixed.nii.gz";
    const fs::path xform_p = scratch / "transform.txt";
    write_nifti(moving_p, v);
    write_nifti(fixed_p, atlas);

    std::string cmd = cfg.plugin_command;
    const auto substitute = [&cmd](const std::string& key, const std::string& val) {
        for (size_t at = cmd.find(key); at != std::string::npos; at = cmd.find(key))
            cmd.replace(at, key.size(), val);
    };
    substitute("{moving}", moving_p.string());
    substitute("{fixed}", fixed_p.string());
    substitute("{out_transform}", xform_p.string());

    const int rc = std::system(cmd.c_str());
    if (rc != 0)
        throw PluginFailure("registration plugin exited with status " + std::to_string(rc));
    if (!fs::exists(xform_p)) throw PluginFailure("registration plugin wrote no transform file");
    const auto m = parse_rigid_transform(read_text_file(xform_p));
    Volume out = apply_rigid_transform(v, m);
    fs::remove_all(scratch);
    return out;
}

/// Z-score normalization within the brain mask: statistics (mean, population
/// sd) come from mask-interior voxels; z-scores are written over the whole
/// grid, then the exterior is set to exactly 0.
inline Volume znormalize(const Volume& v) {
    if (!v.has_mask) throw Error("znormalize: mask required");
    const auto [mean, sd] = masked_stats(v.data, v.mask);
    bool any = false;
    for (uint8_t b : v.mask)
        if (b) {
            any = true;
            break;
        }
    if (!any) throw EmptyMask("znormalize: empty mask");
    if (sd <= 0.0) throw ZeroVariance("znormalize: constant intensity within mask");
    Volume out = v;
    for (int64_t i = 0; i < out.data.numel(); ++i) {
        const double z = (static_cast<double>(v.data.data()[i]) - mean) / sd;
        out.data.data()[i] = v.mask[static_cast<size_t>(i)] ? static_cast<float>(z) : 0.0f;
    }
    return out;
}

/// The full standardization pipeline for one volume:
/// resample -> skull_strip -> register_rigid -> znormalize.
inline Volume prep_volume(const Volume& v, const PrepConfig& cfg,
                          const std::optional<Volume>& atlas = std::nullopt) {
    Volume out = resample(v, cfg);
    out = skull_strip(out);
    if (cfg.registration_backend == RegBackend::PLUGIN) {
        if (!atlas) throw Error("prep: PLUGIN registration requires an atlas volume");
        out = register_rigid(out, *atlas, cfg);
    }
    return znormalize(out);
}

struct PrepResult {
    // (patient_id, timepoint) -> written volume path; mask path derives from it.
    std::map<std::pair<std::string, int64_t>, std::string> outputs;
    std::vector<std::tuple<std::string, int64_t, std::string>> excluded;  // pid, tp, reason
};

inline fs::path prep_volume_path(const fs::path& out, const std::string& pid, int64_t tp) {
    return out / "prep" / (pid + "_" + std::to_string(tp) + ".nii.gz");
}

inline fs::path prep_mask_path(const fs::path& out, const std::string& pid, int64_t tp) {
    return out / "prep" / (pid + "_" + std::to_string(tp) + "_mask.nii.gz");
}

/// Preps every QC-selected series. Degenerate volumes (EmptyMask,
/// ZeroVariance) are excluded and logged, never fatal. Writes
/// `<out>/prep/<patient>_<timepoint>.nii.gz` (+ `..._mask.nii.gz`) and a
/// status log `<out>/prep/prep_log.csv`.
inline PrepResult run_prep(const CohortManifest& manifest, const SeriesSelection& selection,
                           const PrepConfig& cfg, const fs::path& out) {
    cfg.validate();
    std::optional<Volume> atlas;
    if (cfg.registration_backend == RegBackend::PLUGIN) {
        if (cfg.atlas_path.empty()) throw Error("prep: PLUGIN backend requires atlas_path");
        atlas = resample(read_nifti(cfg.atlas_path), cfg);
    }
    PrepResult res;
    CsvTable log;
    log.header = {"patient_id", "timepoint", "series_id", "status", "detail"};
    ensure_dir(out / "prep");
    for (const auto& s : manifest.series) {
        auto it = selection.find({s.patient_id, s.timepoint});
        if (it == selection.end() || it->second != s.series_id) continue;
        std::string status = "ok", detail;
        try {
            const Volume prepped = prep_volume(read_nifti(s.file_ref), cfg, atlas);
            const fs::path vol_p = prep_volume_path(out, s.patient_id, s.timepoint);
            write_nifti(vol_p, prepped);
            Volume maskv = Volume::zeros(prepped.nz(), prepped.ny(), prepped.nx());
            maskv.spacing = prepped.spacing;
            maskv.origin = prepped.origin;
            for (int64_t i = 0; i < maskv.data.numel(); ++i)
                maskv.data.data()[i] = prepped.mask[static_cast<size_t>(i)] ? 1.0f : 0.0f;
            write_nifti(prep_mask_path(out, s.patient_id, s.timepoint), maskv);
            res.outputs[{s.patient_id, s.timepoint}] = vol_p.string();
        } catch (const EmptyMask& e) {
            status = "excluded";
            detail = e.what();
            res.excluded.emplace_back(s.patient_id, s.timepoint, detail);
        } catch (const ZeroVariance& e) {
            status = "excluded";
            detail = e.what();
            res.excluded.emplace_back(s.patient_id, s.timepoint, detail);
        }
        log.rows.push_back({s.patient_id, std::to_string(s.timepoint), s.series_id, status,
                            detail});
    }
    write_csv(out / "prep" / "prep_log.csv", log);
    return res;
}

}  // namespace gbmbench
