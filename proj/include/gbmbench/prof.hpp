// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gbmbench/tensor.hpp"

namespace gbmbench::prof {

/// One forward op (or model-level marker) seen while a Recorder is active.
/// `macs` is the multiply-accumulate count for this op; ops with no counting
/// rule are recorded with counted=false so they are listed, never absorbed.
struct LayerRecord {
    std::string op;
    Shape out_shape;
    double macs = 0.0;
    bool counted = true;
    bool marker = false;
};

class Recorder {
public:
    std::vector<LayerRecord> records;

    double total_macs() const {
        double t = 0.0;
        for (const auto& r : records) t += r.macs;
        return t;
    }
    double total_flops() const { return 2.0 * total_macs(); }

    std::vector<LayerRecord> uncounted() const {
        std::vector<LayerRecord> out;
        for (const auto& r : records)
            if (!r.counted && !r.marker) out.push_back(r);
        return out;
    }

    const LayerRecord* find_marker(const std::string& name) const {
        for (const auto& r : records)
            if (r.marker && r.op == name) return &r;
        return nullptr;
    }
};

inline Recorder*& active_recorder() {
    thread_local Recorder* rec = nullptr;
    return rec;
}

/// RAII scope that routes op records into `rec`.
struct RecordScope {
    explicit RecordScope(Recorder& rec) : prev_(active_recorder()) { active_recorder() = &rec; }
    ~RecordScope() { active_recorder() = prev_; }

private:
    Recorder* prev_;
};

inline void record(const char* op, const Shape& out, double macs) {
    if (Recorder* r = active_recorder()) r->records.push_back({op, out, macs, true, false});
}

inline void record_uncounted(const char* op, const Shape& out) {
    if (Recorder* r = active_recorder()) r->records.push_back({op, out, 0.0, false, false});
}

/// Model-level shape marker (e.g. a backbone stage boundary).
inline void mark(const std::string& label, const Shape& shape) {
    if (Recorder* r = active_recorder()) r->records.push_back({label, shape, 0.0, true, true});
}

}  // namespace gbmbench::prof
