// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gbmbench/common.hpp"
#include "gbmbench/tensor.hpp"

namespace gbmbench {

/// A 3D scalar grid with spatial metadata and an optional brain mask.
/// Data layout is [nz, ny, nx] with x fastest, matching NIfTI voxel order.
struct Volume {
    Tensor data;                                // shape {nz, ny, nx}
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // (x, y, z) mm
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    std::vector<uint8_t> mask;  // nonempty => same numel as data
    bool has_mask = false;

    int64_t nx() const { return data.shape()[2]; }
    int64_t ny() const { return data.shape()[1]; }
    int64_t nz() const { return data.shape()[0]; }

    float& at(int64_t z, int64_t y, int64_t x) { return data.data()[(z * ny() + y) * nx() + x]; }
    float at(int64_t z, int64_t y, int64_t x) const {
        return data.data()[(z * ny() + y) * nx() + x];
    }
    uint8_t mask_at(int64_t z, int64_t y, int64_t x) const {
        return mask[(z * ny() + y) * nx() + x];
    }

    static Volume zeros(int64_t nz, int64_t ny, int64_t nx) {
        Volume v;
        v.data = Tensor({nz, ny, nx});
        v.data.fill(0.0f);
        return v;
    }

    void set_mask(std::vector<uint8_t> m) {
        if (static_cast<int64_t>(m.size()) != data.numel())
            throw Error("Volume: mask size mismatch");
        mask = std::move(m);
        has_mask = true;
    }
};

}  // namespace gbmbench
