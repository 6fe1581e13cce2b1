// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gbmbench/common.hpp"
#include "gbmbench/rng.hpp"

namespace gbmbench {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

/// Dense row-major float32 tensor. A "dry" tensor carries only a shape and no
/// storage; ops propagate dryness and skip arithmetic, which is what the
/// profiler uses to walk real forward code at paper scale without computing.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, float fill = 0.f)
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {}

    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        assert(static_cast<int64_t>(data_.size()) == shape_numel(shape_));
    }

    static Tensor dry(Shape shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.dry_ = true;
        return t;
    }

    static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

    static Tensor randn(const Shape& shape, Rng& rng, float sd = 1.f, float mean = 0.f) {
        Tensor t(shape);
        for (auto& v : t.data_) v = static_cast<float>(rng.normal(mean, sd));
        return t;
    }

    static Tensor uniform(const Shape& shape, Rng& rng, float lo, float hi) {
        Tensor t(shape);
        for (auto& v : t.data_) v = static_cast<float>(rng.uniform(lo, hi));
        return t;
    }

    const Shape& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t ndim() const { return shape_.size(); }
    int64_t numel() const { return shape_numel(shape_); }
    bool is_dry() const { return dry_; }
    bool defined() const { return dry_ || !shape_.empty() || !data_.empty(); }

    float* data() {
        assert(!dry_);
        return data_.data();
    }
    const float* data() const {
        assert(!dry_);
        return data_.data();
    }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    float item() const {
        assert(numel() == 1 && !dry_);
        return data_[0];
    }

    Tensor reshaped(Shape s) const {
        assert(shape_numel(s) == numel());
        if (dry_) return dry(std::move(s));
        Tensor t = *this;
        t.shape_ = std::move(s);
        return t;
    }

    void fill(float v) {
        for (auto& x : data_) x = v;
    }

    double sum_d() const {
        double acc = 0.0;
        for (float v : data_) acc += v;
        return acc;
    }

    float max_abs() const {
        float m = 0.f;
        for (float v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    Shape shape_;
    std::vector<float> data_;
    bool dry_ = false;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace gbmbench
