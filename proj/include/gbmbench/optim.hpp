// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "gbmbench/nn.hpp"

namespace gbmbench::nn {

/// Adam with bias correction. State is per-parameter and allocated lazily;
/// parameters without an accumulated gradient are skipped that step.
class Adam {
public:
    explicit Adam(std::vector<NamedParam>& params, double lr = 1e-4, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params.size());
        v_.resize(params.size());
    }

    double lr() const { return lr_; }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            Var& p = params_[i].var;
            if (!p.requires_grad() || !p.has_grad()) continue;
            if (!m_[i].defined()) {
                m_[i] = Tensor(p.shape());
                m_[i].fill(0.0f);
                v_[i] = Tensor(p.shape());
                v_[i].fill(0.0f);
            }
            float* w = p.val().data();
            const float* g = p.grad().data();
            float* m = m_[i].data();
            float* v = v_[i].data();
            const int64_t n = p.val().numel();
            for (int64_t j = 0; j < n; ++j) {
                m[j] = static_cast<float>(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
                v[j] = static_cast<float>(beta2_ * v[j] +
                                          (1.0 - beta2_) * static_cast<double>(g[j]) * g[j]);
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                w[j] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

private:
    std::vector<NamedParam>& params_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace gbmbench::nn
