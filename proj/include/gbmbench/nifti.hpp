// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <string>

#include "gbmbench/common.hpp"
#include "gbmbench/gzipio.hpp"
#include "gbmbench/volume.hpp"

namespace gbmbench {

namespace nifti_detail {

// NIfTI-1 header, 348 bytes. Only the fields this harness touches are named
// in code; the rest ride along zero-initialized.
#pragma pack(push, 1)
struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code;
    int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

template <class T>
inline void bswap(T& v) {
    char* p = reinterpret_cast<char*>(&v);
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

inline void swap_header(Nifti1Header& h) {
    bswap(h.sizeof_hdr);
    for (auto& d : h.dim) bswap(d);
    bswap(h.datatype);
    bswap(h.bitpix);
    for (auto& p : h.pixdim) bswap(p);
    bswap(h.vox_offset);
    bswap(h.scl_slope);
    bswap(h.scl_inter);
    bswap(h.qform_code);
    bswap(h.sform_code);
    for (auto& v : h.srow_x) bswap(v);
    for (auto& v : h.srow_y) bswap(v);
    for (auto& v : h.srow_z) bswap(v);
}

template <class T>
inline void convert_voxels(const char* raw, int64_t n, bool swapped, float slope, float inter,
                           float* out) {
    for (int64_t i = 0; i < n; ++i) {
        T v;
        std::memcpy(&v, raw + i * sizeof(T), sizeof(T));
        if (swapped && sizeof(T) > 1) bswap(v);
        out[i] = static_cast<float>(v) * slope + inter;
    }
}

}  // namespace nifti_detail

/// Reads a .nii or .nii.gz volume: 3D dims, spacing, origin, voxels as float32
/// with scl_slope/scl_inter applied. Integer, float and double voxel types are
/// accepted; anything else is an IOFailure naming the datatype code.
inline Volume read_nifti(const fs::path& path) {
    using namespace nifti_detail;
    std::string bytes = read_text_file(path);
    if (looks_gzip(bytes)) bytes = gzip_decompress(bytes);
    if (bytes.size() < sizeof(Nifti1Header))
        throw IOFailure("nifti: file too small: " + path.string());
    Nifti1Header h{};
    std::memcpy(&h, bytes.data(), sizeof(h));
    bool swapped = false;
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        swapped = true;
        if (h.sizeof_hdr != 348) throw IOFailure("nifti: bad header size: " + path.string());
    }
    if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
        throw IOFailure("nifti: bad magic: " + path.string());
    if (h.dim[0] < 3) throw IOFailure("nifti: expected 3D volume: " + path.string());
    for (int d = 4; d <= h.dim[0]; ++d)
        if (h.dim[d] > 1) throw IOFailure("nifti: non-singleton dim beyond 3: " + path.string());
    const int64_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
    if (nx < 1 || ny < 1 || nz < 1) throw IOFailure("nifti: bad dims: " + path.string());
    const int64_t n = nx * ny * nz;
    const size_t off = static_cast<size_t>(h.vox_offset);
    const float slope = (h.scl_slope == 0.0f) ? 1.0f : h.scl_slope;
    const float inter = (h.scl_slope == 0.0f) ? 0.0f : h.scl_inter;

    Volume v;
    v.data = Tensor({nz, ny, nx});
    v.spacing = {std::abs(h.pixdim[1]), std::abs(h.pixdim[2]), std::abs(h.pixdim[3])};
    for (int i = 0; i < 3; ++i)
        if (v.spacing[i] <= 0.0) v.spacing[i] = 1.0;
    if (h.sform_code > 0) {
        v.origin = {h.srow_x[3], h.srow_y[3], h.srow_z[3]};
    } else if (h.qform_code > 0) {
        v.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
    }

    const int64_t elem = h.bitpix / 8;
    if (bytes.size() < off + static_cast<size_t>(n * elem))
        throw IOFailure("nifti: truncated voxel data: " + path.string());
    const char* raw = bytes.data() + off;
    float* out = v.data.data();
    switch (h.datatype) {
        case 2: convert_voxels<uint8_t>(raw, n, swapped, slope, inter, out); break;
        case 4: convert_voxels<int16_t>(raw, n, swapped, slope, inter, out); break;
        case 8: convert_voxels<int32_t>(raw, n, swapped, slope, inter, out); break;
        case 16: convert_voxels<float>(raw, n, swapped, slope, inter, out); break;
        case 64: convert_voxels<double>(raw, n, swapped, slope, inter, out); break;
        case 256: convert_voxels<int8_t>(raw, n, swapped, slope, inter, out); break;
        case 512: convert_voxels<uint16_t>(raw, n, swapped, slope, inter, out); break;
        default:
            throw IOFailure("nifti: unsupported datatype " + std::to_string(h.datatype) + ": " +
                            path.string());
    }
    return v;
}

/// Reads only dims and spacing (for metadata-first QC).
struct NiftiHeaderInfo {
    int64_t nx = 0, ny = 0, nz = 0;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

inline NiftiHeaderInfo read_nifti_header(const fs::path& path) {
    using namespace nifti_detail;
    std::string bytes = read_text_file(path);
    if (looks_gzip(bytes)) bytes = gzip_decompress(bytes);
    if (bytes.size() < sizeof(Nifti1Header))
        throw IOFailure("nifti: file too small: " + path.string());
    Nifti1Header h{};
    std::memcpy(&h, bytes.data(), sizeof(h));
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        if (h.sizeof_hdr != 348) throw IOFailure("nifti: bad header size: " + path.string());
    }
    NiftiHeaderInfo info;
    info.nx = h.dim[1];
    info.ny = h.dim[2];
    info.nz = h.dim[3];
    info.spacing = {std::abs(h.pixdim[1]), std::abs(h.pixdim[2]), std::abs(h.pixdim[3])};
    for (int i = 0; i < 3; ++i)
        if (info.spacing[i] <= 0.0) info.spacing[i] = 1.0;
    return info;
}

/// Writes float32 .nii.gz with a diagonal sform carrying spacing and origin.
inline void write_nifti(const fs::path& path, const Volume& v) {
    using namespace nifti_detail;
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<int16_t>(v.nx());
    h.dim[2] = static_cast<int16_t>(v.ny());
    h.dim[3] = static_cast<int16_t>(v.nz());
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = 16;  // float32
    h.bitpix = 32;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(v.spacing[0]);
    h.pixdim[2] = static_cast<float>(v.spacing[1]);
    h.pixdim[3] = static_cast<float>(v.spacing[2]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // mm
    h.sform_code = 1;
    h.qform_code = 0;
    h.srow_x[0] = static_cast<float>(v.spacing[0]);
    h.srow_x[3] = static_cast<float>(v.origin[0]);
    h.srow_y[1] = static_cast<float>(v.spacing[1]);
    h.srow_y[3] = static_cast<float>(v.origin[1]);
    h.srow_z[2] = static_cast<float>(v.spacing[2]);
    h.srow_z[3] = static_cast<float>(v.origin[2]);
    std::memcpy(h.magic, "n+1", 4);

    std::string raw(sizeof(h) + 4 + v.data.numel() * sizeof(float), '\0');
    std::memcpy(raw.data(), &h, sizeof(h));
    std::memcpy(raw.data() + 352, v.data.data(), v.data.numel() * sizeof(float));
    const std::string gz = gzip_compress(raw);
    ensure_dir(path.parent_path());
    atomic_write(path, gz);
}

}  // namespace gbmbench
