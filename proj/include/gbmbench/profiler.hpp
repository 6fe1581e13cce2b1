// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Model complexity profiling.
//
// Three quantities are measured for a built model:
//   * parameter count — an exact traversal of the registered tensors,
//     split into trainable and frozen scalars;
//   * forward FLOPs — analytic multiply-accumulate (MAC) counts recorded by
//     each op during a dry forward pass, converted as FLOPs = 2 x MACs.
//     The per-op counting rules live next to the op implementations and are
//     summarized by counting_rules(). Ops with no counting rule contribute
//     zero and are listed in `uncounted_ops`, never absorbed silently;
//   * batch inference time — mean +/- SD over >= 20 timed forward passes
//     after 3 warm-up passes (the defaults encode that floor).
//
// Published reference figures for the full-scale configurations are bundled
// for informational side-by-side display; measured values are never gated
// against them because several full-scale layer configurations are known
// only approximately.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbmbench/autograd.hpp"
#include "gbmbench/common.hpp"
#include "gbmbench/nn.hpp"
#include "gbmbench/prof.hpp"
#include "gbmbench/tensor.hpp"

namespace gbmbench::harness {

// ---------------------------------------------------------------------------
// Record type.

/// Complexity facts for one (model, batch size) pair. `flops` and `macs` are
/// per-sample forward costs; timing fields stay zero until a timed profile
/// fills them; `total_runtime_min` is filled by the training sweep.
struct ComplexityRecord {
    std::string model_name;
    int64_t batch_size = 1;

    int64_t params = 0;         ///< trainable scalars, exact traversal
    int64_t frozen_params = 0;  ///< registered but non-trainable scalars

    double macs = 0.0;   ///< per-sample forward multiply-accumulates
    double flops = 0.0;  ///< per-sample forward FLOPs = 2 * macs

    /// Ops encountered during the dry forward that have no counting rule,
    /// formatted as "<op> x<occurrences>". Their cost is counted as zero.
    std::vector<std::string> uncounted_ops;

    double batch_time_mean_s = 0.0;
    double batch_time_sd_s = 0.0;
    int warmup_batches = 0;
    int timed_batches = 0;  ///< 0 means timing was not measured

    double total_runtime_min = 0.0;
};

inline nlohmann::json complexity_to_json(const ComplexityRecord& r) {
    nlohmann::json j;
    j["model_name"] = r.model_name;
    j["batch_size"] = r.batch_size;
    j["params"] = r.params;
    j["frozen_params"] = r.frozen_params;
    j["macs"] = r.macs;
    j["flops"] = r.flops;
    j["uncounted_ops"] = r.uncounted_ops;
    j["batch_time_mean_s"] = r.batch_time_mean_s;
    j["batch_time_sd_s"] = r.batch_time_sd_s;
    j["warmup_batches"] = r.warmup_batches;
    j["timed_batches"] = r.timed_batches;
    j["total_runtime_min"] = r.total_runtime_min;
    return j;
}

inline ComplexityRecord complexity_from_json(const nlohmann::json& j) {
    ComplexityRecord r;
    r.model_name = j.at("model_name").get<std::string>();
    r.batch_size = j.at("batch_size").get<int64_t>();
    r.params = j.at("params").get<int64_t>();
    r.frozen_params = j.at("frozen_params").get<int64_t>();
    r.macs = j.at("macs").get<double>();
    r.flops = j.at("flops").get<double>();
    r.uncounted_ops = j.at("uncounted_ops").get<std::vector<std::string>>();
    r.batch_time_mean_s = j.at("batch_time_mean_s").get<double>();
    r.batch_time_sd_s = j.at("batch_time_sd_s").get<double>();
    r.warmup_batches = j.at("warmup_batches").get<int>();
    r.timed_batches = j.at("timed_batches").get<int>();
    r.total_runtime_min = j.at("total_runtime_min").get<double>();
    return r;
}

// ---------------------------------------------------------------------------
// Counting-rule documentation.

/// Human-readable summary of the analytic MAC rule each op type records.
/// Ops listed with "0 (by convention)" are cheap elementwise / data-movement /
/// normalization work excluded from the MAC convention on purpose; they are
/// still *counted* ops, distinct from uncounted ops that lack any rule.
inline std::vector<std::pair<std::string, std::string>> counting_rules() {
    return {
        {"linear", "rows * d_in * d_out (rows = batch x leading dims)"},
        {"matmul", "m * k * n"},
        {"bmm", "batch * m * k * n"},
        {"conv3d / conv2d", "N * C_out * P * (C_in * prod(kernel)); P = output positions"},
        {"dwconv1d", "B * L * C * k (depthwise, per-channel kernel k)"},
        {"selective_scan", "B * L * D * (4 * d_state + 2) (state update + output read-out)"},
        {"lstm", "counted through its per-step input/hidden linear maps"},
        {"attention", "qkv/proj counted as linear; score and value products counted as bmm"},
        {"activations, elementwise, softmax", "0 (by convention)"},
        {"batchnorm / layernorm", "0 (by convention)"},
        {"pooling, resize, reshape, permute, roll, index ops", "0 (by convention)"},
        {"FLOPs", "2 * MACs for every rule above"},
    };
}

// ---------------------------------------------------------------------------
// Profiling.

struct TimingOptions {
    int warmup_batches = 3;
    int timed_batches = 20;  ///< the benchmark contract floor; must be >= 1
    uint64_t data_seed = 0;  ///< fills the timing input deterministically
};

namespace profiler_detail {

/// Dedupe uncounted op records into "name x<count>" entries, name-sorted.
inline std::vector<std::string> summarize_uncounted(const prof::Recorder& rec) {
    std::map<std::string, int> counts;
    for (const auto& r : rec.uncounted()) ++counts[r.op];
    std::vector<std::string> out;
    out.reserve(counts.size());
    for (const auto& [op, n] : counts) out.push_back(op + " x" + std::to_string(n));
    return out;
}

/// Mean and population SD of a sample.
inline std::pair<double, double> mean_sd(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

/// Runs one dry (shape-only) forward at the given batch size and returns the
/// recorder holding every op's MAC record.
inline prof::Recorder dry_forward(nn::Model& model, const Shape& input_contract,
                                  int64_t batch_size) {
    Shape dims;
    dims.reserve(input_contract.size() + 1);
    dims.push_back(batch_size);
    dims.insert(dims.end(), input_contract.begin(), input_contract.end());
    prof::Recorder rec;
    const bool was_training = model.training;
    model.eval();
    {
        prof::RecordScope scope(rec);
        Var dry{Tensor::dry(dims)};
        model.forward(dry);
    }
    model.training = was_training;
    return rec;
}

}  // namespace profiler_detail

/// Parameter counts and analytic per-sample FLOPs; no wall-clock timing.
/// `input_contract` is the per-sample input shape (no batch axis).
inline ComplexityRecord profile_static(nn::Model& model, const Shape& input_contract,
                                       int64_t batch_size, const std::string& model_name = "") {
    if (batch_size < 1) throw Error("profile: batch_size must be >= 1");
    ComplexityRecord r;
    r.model_name = model_name;
    r.batch_size = batch_size;
    r.params = model.param_count();
    int64_t total = 0;
    for (const auto& p : model.params()) total += p.var.val().numel();
    r.frozen_params = total - r.params;

    const prof::Recorder rec = profiler_detail::dry_forward(model, input_contract, 1);
    r.macs = rec.total_macs();
    r.flops = rec.total_flops();
    r.uncounted_ops = profiler_detail::summarize_uncounted(rec);
    return r;
}

/// Full complexity record: static facts plus timed batch inference.
/// Timing runs real forwards in eval mode under a no-grad guard on a
/// deterministically filled input of shape [batch_size, input_contract...].
inline ComplexityRecord profile(nn::Model& model, const Shape& input_contract,
                                int64_t batch_size, const TimingOptions& opt = {},
                                const std::string& model_name = "") {
    if (opt.timed_batches < 1) throw Error("profile: timed_batches must be >= 1");
    if (opt.warmup_batches < 0) throw Error("profile: warmup_batches must be >= 0");
    ComplexityRecord r = profile_static(model, input_contract, batch_size, model_name);

    Shape dims;
    dims.reserve(input_contract.size() + 1);
    dims.push_back(batch_size);
    dims.insert(dims.end(), input_contract.begin(), input_contract.end());
    Rng rng(opt.data_seed);
    Var input{Tensor::uniform(dims, rng, -1.0f, 1.0f)};

    const bool was_training = model.training;
    model.eval();
    std::vector<double> seconds;
    seconds.reserve(static_cast<size_t>(opt.timed_batches));
    {
        NoGrad guard;
        for (int i = 0; i < opt.warmup_batches; ++i) model.forward(input);
        for (int i = 0; i < opt.timed_batches; ++i) {
            const auto t0 = std::chrono::steady_clock::now();
            model.forward(input);
            const auto t1 = std::chrono::steady_clock::now();
            seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
        }
    }
    model.training = was_training;

    const auto [mean, sd] = profiler_detail::mean_sd(seconds);
    r.batch_time_mean_s = mean;
    r.batch_time_sd_s = sd;
    r.warmup_batches = opt.warmup_batches;
    r.timed_batches = opt.timed_batches;
    return r;
}

// ---------------------------------------------------------------------------
// Published reference figures (informational only, never gated).

/// Reference complexity of one full-scale benchmark configuration.
struct ReferenceCard {
    std::string name;        ///< catalog display name
    double gflops;           ///< per-sample forward GFLOPs
    double params_millions;  ///< parameter count, millions
};

/// Published full-scale reference values, keyed by catalog display name.
inline const std::vector<ReferenceCard>& reference_cards() {
    static const std::vector<ReferenceCard> cards = {
        {"CNN3D", 12.3889, 0.0832},       {"LSTM", 7.4189, 20.381},
        {"VIT3D", 277.2708, 88.166},      {"RESNET3D", 28.4955, 0.6528},
        {"CNN_LSTM", 5.6613, 1.5707},     {"CNN_SE", 44.821, 2.4304},
        {"VIT2D_LSTM", 468.6238, 5.6421}, {"SWIN3D", 236.9559, 7.8644},
        {"SWIN_CNN", 0.0255, 0.0701},     {"MAMBA2D-50", 446.7358, 24.515},
        {"MAMBA2D-16", 142.9558, 24.515}, {"MAMBA2D_CNN", 0.7776, 24.231},
    };
    return cards;
}

inline const ReferenceCard* find_reference(const std::string& name) {
    for (const auto& c : reference_cards())
        if (c.name == name) return &c;
    return nullptr;
}

/// Relative difference of a measured value against a reference value.
inline double relative_difference(double measured, double reference) {
    return (measured - reference) / reference;
}

/// One-line informational comparison: measured vs reference with relative
/// differences. Display only; no acceptance decision is derived from it.
inline std::string side_by_side(const ComplexityRecord& r, const ReferenceCard& c) {
    const double measured_m = static_cast<double>(r.params) / 1e6;
    const double measured_g = r.flops / 1e9;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%s: params %.4f M vs reference %.4f M (rel diff %+.2f%%); "
                  "flops %.4f G vs reference %.4f G (rel diff %+.2f%%)",
                  c.name.c_str(), measured_m, c.params_millions,
                  100.0 * relative_difference(measured_m, c.params_millions), measured_g,
                  c.gflops, 100.0 * relative_difference(measured_g, c.gflops));
    return std::string(buf);
}

}  // namespace gbmbench::harness
