// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Profiler contract: parameter counts match hand-derived closed forms, FLOPs
// come from analytic MAC rules and are exactly additive under sequential
// composition, ops without a counting rule are listed rather than absorbed,
// and timed batch inference reports mean/SD over the contract floor of
// 3 warm-ups + 20 timed batches.

#include <gtest/gtest.h>

#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "gbmbench/profiler.hpp"
#include "gbmbench/zoo.hpp"

using namespace gbmbench;
using harness::ComplexityRecord;

namespace {

/// Single linear layer d_in=4 -> d_out=3 with bias: the closed-form anchor.
class TinyLinearModel : public nn::Model {
public:
    TinyLinearModel() {
        Rng rng(7);
        fc_ = nn::make_linear(*this, "fc", 4, 3, rng);
    }
    Var forward(const Var& x) override { return fc_(x); }

private:
    nn::Linear fc_;
};

/// Two-stage MLP used for the additivity property; each stage is also
/// profileable on its own.
class StageA : public nn::Model {
public:
    StageA() {
        Rng rng(11);
        fc_ = nn::make_linear(*this, "a", 8, 5, rng);
    }
    Var forward(const Var& x) override { return fc_(x); }

private:
    nn::Linear fc_;
};

class StageB : public nn::Model {
public:
    StageB() {
        Rng rng(13);
        fc_ = nn::make_linear(*this, "b", 5, 3, rng);
    }
    Var forward(const Var& x) override { return fc_(x); }

private:
    nn::Linear fc_;
};

class Composed : public nn::Model {
public:
    Var forward(const Var& x) override { return b.forward(a.forward(x)); }
    StageA a;
    StageB b;
};

/// A model whose forward emits an op with no counting rule, plus one linear.
class MysteryOpModel : public nn::Model {
public:
    MysteryOpModel() {
        Rng rng(3);
        fc_ = nn::make_linear(*this, "fc", 6, 2, rng);
    }
    Var forward(const Var& x) override {
        prof::record_uncounted("mystery_op", x.shape());
        prof::record_uncounted("mystery_op", x.shape());
        return fc_(x);
    }

private:
    nn::Linear fc_;
};

}  // namespace

TEST(Profiler, LinearLayerClosedFormCounts) {
    TinyLinearModel m;
    const ComplexityRecord r = harness::profile_static(m, {4}, 1, "tiny_linear");
    // 4*3 weights + 3 biases.
    EXPECT_EQ(r.params, 15);
    EXPECT_EQ(r.frozen_params, 0);
    // One sample through a 4->3 linear map: 12 MACs, 24 FLOPs. Exact.
    EXPECT_EQ(r.macs, 12.0);
    EXPECT_EQ(r.flops, 24.0);
    EXPECT_TRUE(r.uncounted_ops.empty());
    EXPECT_EQ(r.batch_size, 1);
    EXPECT_EQ(r.timed_batches, 0);
}

TEST(Profiler, PerSampleFlopsIndependentOfBatchSize) {
    TinyLinearModel m;
    const ComplexityRecord r1 = harness::profile_static(m, {4}, 1);
    const ComplexityRecord r8 = harness::profile_static(m, {4}, 8);
    EXPECT_EQ(r1.flops, r8.flops);
    EXPECT_EQ(r8.batch_size, 8);
    // The batch-level recorder cost scales exactly linearly for dense ops.
    const prof::Recorder rec =
        harness::profiler_detail::dry_forward(m, {4}, 8);
    EXPECT_EQ(rec.total_flops(), 8.0 * r1.flops);
}

TEST(Profiler, ToyCnn3dParamsMatchHandCount) {
    const ModelSpec spec = toy_scale(default_spec(Family::CNN3D));
    auto model = build(spec, 42);
    const ComplexityRecord r =
        harness::profile_static(*model, spec.input_dims(), 1, spec.display_name());
    // Hand count at smoke scale (widths 2,4,8):
    //   conv1 1->2 k3: 54+2      bn1: 4
    //   conv2 2->4 k3: 216+4     bn2: 8
    //   conv3 4->8 k3: 864+8     bn3: 16
    //   head 8*64->3: 1536+3
    EXPECT_EQ(r.params, 2715);
    EXPECT_GT(r.flops, 0.0);
    EXPECT_TRUE(r.uncounted_ops.empty());
}

TEST(Profiler, FlopsAdditiveUnderSequentialComposition) {
    Composed comp;
    const ComplexityRecord whole = harness::profile_static(comp, {8}, 1);
    const ComplexityRecord part_a = harness::profile_static(comp.a, {8}, 1);
    const ComplexityRecord part_b = harness::profile_static(comp.b, {5}, 1);
    // Exact double equality: both sides sum the same analytic integers.
    EXPECT_EQ(whole.flops, part_a.flops + part_b.flops);
    EXPECT_EQ(part_a.flops, 2.0 * 8 * 5);
    EXPECT_EQ(part_b.flops, 2.0 * 5 * 3);
}

TEST(Profiler, CatalogFlopsEqualSumOfPerOpRecords) {
    // The record total must be exactly the sum of its per-op entries for a
    // real multi-layer model, not just toy MLPs.
    const ModelSpec spec = toy_scale(default_spec(Family::SWIN3D));
    auto model = build(spec, 42);
    const prof::Recorder rec =
        harness::profiler_detail::dry_forward(*model, spec.input_dims(), 1);
    double sum = 0.0;
    for (const auto& op : rec.records) sum += op.macs;
    EXPECT_EQ(rec.total_macs(), sum);
    EXPECT_GT(sum, 0.0);
}

TEST(Profiler, UncountedOpsAreListedNeverAbsorbed) {
    MysteryOpModel m;
    const ComplexityRecord r = harness::profile_static(m, {6}, 1);
    // The unknown op contributes zero cost but must appear in the listing.
    EXPECT_EQ(r.flops, 2.0 * 6 * 2);
    ASSERT_EQ(r.uncounted_ops.size(), 1u);
    EXPECT_EQ(r.uncounted_ops[0], "mystery_op x2");
}

TEST(Profiler, FrozenParamsTrackedSeparately) {
    // A full-scale build of the pretrained slice-sequence family freezes its
    // backbone: those scalars must appear in frozen_params, not params.
    const ModelSpec spec = default_spec(Family::MAMBA2D);
    auto model = build_random_init(spec, 1);
    const ComplexityRecord r =
        harness::profile_static(*model, spec.input_dims(), 1, spec.display_name());
    EXPECT_GT(r.frozen_params, 0);
    EXPECT_GT(r.params, 0);
    int64_t total = 0;
    for (const auto& p : model->params()) total += p.var.val().numel();
    EXPECT_EQ(r.params + r.frozen_params, total);
    EXPECT_EQ(r.params, model->param_count());
}

TEST(Profiler, TimingMeetsContractFloor) {
    const ModelSpec spec = toy_scale(default_spec(Family::CNN3D));
    auto model = build(spec, 42);
    const ComplexityRecord r =
        harness::profile(*model, spec.input_dims(), 2, {}, spec.display_name());
    EXPECT_EQ(r.warmup_batches, 3);
    EXPECT_EQ(r.timed_batches, 20);
    EXPECT_GT(r.batch_time_mean_s, 0.0);
    EXPECT_GE(r.batch_time_sd_s, 0.0);
    // Static facts ride along unchanged.
    EXPECT_EQ(r.params, 2715);
    EXPECT_EQ(r.batch_size, 2);
    // Profiling must not flip the model out of its caller-visible mode.
    EXPECT_TRUE(model->training);
}

TEST(Profiler, RejectsDegenerateOptions) {
    TinyLinearModel m;
    EXPECT_THROW(harness::profile_static(m, {4}, 0), Error);
    harness::TimingOptions bad;
    bad.timed_batches = 0;
    EXPECT_THROW(harness::profile(m, {4}, 1, bad), Error);
}

TEST(Profiler, JsonRoundTrip) {
    TinyLinearModel m;
    ComplexityRecord r = harness::profile(m, {4}, 3, {}, "tiny_linear");
    r.total_runtime_min = 1.25;
    const ComplexityRecord back = harness::complexity_from_json(harness::complexity_to_json(r));
    EXPECT_EQ(back.model_name, r.model_name);
    EXPECT_EQ(back.batch_size, r.batch_size);
    EXPECT_EQ(back.params, r.params);
    EXPECT_EQ(back.frozen_params, r.frozen_params);
    EXPECT_EQ(back.macs, r.macs);
    EXPECT_EQ(back.flops, r.flops);
    EXPECT_EQ(back.uncounted_ops, r.uncounted_ops);
    EXPECT_EQ(back.batch_time_mean_s, r.batch_time_mean_s);
    EXPECT_EQ(back.batch_time_sd_s, r.batch_time_sd_s);
    EXPECT_EQ(back.warmup_batches, r.warmup_batches);
    EXPECT_EQ(back.timed_batches, r.timed_batches);
    EXPECT_EQ(back.total_runtime_min, r.total_runtime_min);
}

TEST(Profiler, ReferenceCardsCoverEveryBenchmarkVariant) {
    const auto& cards = harness::reference_cards();
    ASSERT_EQ(cards.size(), 12u);
    std::set<std::string> card_names;
    for (const auto& c : cards) {
        EXPECT_GT(c.gflops, 0.0);
        EXPECT_GT(c.params_millions, 0.0);
        card_names.insert(c.name);
    }
    for (const auto& spec : table_variants(Scale::PAPER)) {
        EXPECT_TRUE(card_names.count(spec.display_name()))
            << "no reference card for " << spec.display_name();
        EXPECT_NE(harness::find_reference(spec.display_name()), nullptr);
    }
    EXPECT_EQ(harness::find_reference("NOPE"), nullptr);
}

TEST(Profiler, SideBySideReportsRelativeDifference) {
    // Measured == reference -> both relative differences print as +0.00%.
    ComplexityRecord r;
    r.params = 7864400;
    r.flops = 236.9559e9;
    const harness::ReferenceCard* card = harness::find_reference("SWIN3D");
    ASSERT_NE(card, nullptr);
    const std::string line = harness::side_by_side(r, *card);
    EXPECT_NE(line.find("SWIN3D"), std::string::npos);
    EXPECT_NE(line.find("+0.00%"), std::string::npos);
    EXPECT_EQ(harness::relative_difference(110.0, 100.0), 0.1);
}

TEST(Profiler, FullScaleSwinSideBySideIsInformational) {
    // Build the full-scale shifted-window model, measure, and print the
    // comparison. Informational by design: the measurement must be sane
    // (positive, right order of magnitude) but is never gated on the
    // reference values.
    const ModelSpec spec = default_spec(Family::SWIN3D);
    auto model = build(spec, 42);
    const ComplexityRecord r =
        harness::profile_static(*model, spec.input_dims(), 1, spec.display_name());
    const harness::ReferenceCard* card = harness::find_reference("SWIN3D");
    ASSERT_NE(card, nullptr);
    const std::string line = harness::side_by_side(r, *card);
    std::printf("[ info ] %s\n", line.c_str());
    EXPECT_GT(r.params, 1000000);
    EXPECT_GT(r.flops, 1e9);
    EXPECT_NE(line.find("rel diff"), std::string::npos);
}

TEST(Profiler, CountingRulesDocumentEveryMacEmittingOp) {
    const auto rules = harness::counting_rules();
    ASSERT_FALSE(rules.empty());
    std::string joined;
    for (const auto& [op, rule] : rules) {
        EXPECT_FALSE(rule.empty()) << op;
        joined += op + "\n";
    }
    // Every op family that records nonzero MACs has a documented rule.
    for (const char* op : {"linear", "matmul", "bmm", "conv3d", "dwconv1d", "selective_scan"})
        EXPECT_NE(joined.find(op), std::string::npos) << op;
}
