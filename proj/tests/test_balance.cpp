// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Imbalance-mitigation contract: the fold-local autoencoder reconstructs
// better than a constant predictor and is seed-deterministic; latent SMOTE
// interpolates on the parent segment with full provenance, honors caps, and
// falls back to augmentation-only for single-sample classes; augmentation is
// bounded, mask-aware, and deterministic; plans audit cleanly and round-trip
// through JSON.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "gbmbench/balance.hpp"

using namespace gbmbench;
using namespace gbmbench::balance;

namespace {

/// Structured, compressible volumes: a bright ball whose radius/position vary
/// per index, over a smooth background, plus a spherical brain mask.
Volume structured_volume(int64_t dim, uint64_t index) {
    Volume v = Volume::zeros(dim, dim, dim);
    Rng rng(1000 + index);
    const double cz = dim / 2.0 + rng.uniform(-4.0, 4.0);
    const double cy = dim / 2.0 + rng.uniform(-4.0, 4.0);
    const double cx = dim / 2.0 + rng.uniform(-4.0, 4.0);
    const double radius = dim / 6.0 + rng.uniform(0.0, dim / 8.0);
    const double brain_r = 0.45 * dim;
    std::vector<uint8_t> mask(static_cast<size_t>(dim * dim * dim), 0);
    for (int64_t z = 0; z < dim; ++z)
        for (int64_t y = 0; y < dim; ++y)
            for (int64_t x = 0; x < dim; ++x) {
                const double bz = z - dim / 2.0, by = y - dim / 2.0, bx = x - dim / 2.0;
                const bool inside = bz * bz + by * by + bx * bx < brain_r * brain_r;
                if (!inside) continue;
                mask[static_cast<size_t>((z * dim + y) * dim + x)] = 1;
                const double dz = z - cz, dy = y - cy, dx = x - cx;
                const double r = std::sqrt(dz * dz + dy * dy + dx * dx);
                double val = -0.3 + 0.1 * std::sin(0.3 * z) * std::cos(0.2 * x);
                if (r < radius) val += 1.5 * (1.0 - r / radius);
                v.at(z, y, x) = static_cast<float>(val);
            }
    v.set_mask(std::move(mask));
    return v;
}

std::vector<Volume> volume_set(int64_t n, int64_t dim) {
    std::vector<Volume> out;
    for (int64_t i = 0; i < n; ++i) out.push_back(structured_volume(dim, static_cast<uint64_t>(i)));
    return out;
}

/// Real latent codes with the given per-class counts; coordinates cluster by
/// class so nearest neighbors stay in-class by a wide margin.
std::vector<LatentCode> clustered_codes(const std::vector<int64_t>& counts, size_t len = 8) {
    std::vector<LatentCode> codes;
    Rng rng(7);
    for (size_t cls = 0; cls < counts.size(); ++cls)
        for (int64_t i = 0; i < counts[cls]; ++i) {
            LatentCode c;
            c.source = CodeSource::REAL;
            c.label = static_cast<int>(cls);
            c.sample_id = "sub-" + std::to_string(cls) + "-" + std::to_string(i);
            c.vec.resize(len);
            for (size_t j = 0; j < len; ++j)
                c.vec[j] = static_cast<float>(10.0 * static_cast<double>(cls) +
                                              rng.uniform(-1.0, 1.0));
            codes.push_back(std::move(c));
        }
    return codes;
}

std::set<std::string> ids_of(const std::vector<LatentCode>& codes) {
    std::set<std::string> out;
    for (const auto& c : codes) out.insert(c.sample_id);
    return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_EQ(a.shape(), b.shape());
    float m = 0.0f;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Autoencoder.

TEST(Balance, AutoencoderShapeContract) {
    const auto vols = volume_set(2, 16);
    AutoencoderConfig cfg;
    cfg.epochs = 1;
    const Autoencoder ae = train_autoencoder(vols, 5, cfg);
    const std::vector<float> code = ae.encode(vols[0]);
    EXPECT_EQ(static_cast<int64_t>(code.size()), cfg.latent);
    const Volume recon = ae.decode(code);
    EXPECT_EQ(recon.data.shape(), vols[0].data.shape());
}

TEST(Balance, AutoencoderRejectsBadInput) {
    EXPECT_THROW(train_autoencoder(volume_set(1, 16), 5), InsufficientData);
    // Dims must be multiples of 16 for the 4 stride-2 blocks to invert.
    EXPECT_THROW(train_autoencoder(volume_set(2, 24), 5), Error);
    auto mixed = volume_set(2, 16);
    mixed.push_back(structured_volume(32, 9));
    EXPECT_THROW(train_autoencoder(mixed, 5), Error);
}

TEST(Balance, AutoencoderSeedDeterminism) {
    const auto vols = volume_set(4, 16);
    AutoencoderConfig cfg;
    cfg.epochs = 2;
    const Autoencoder a = train_autoencoder(vols, 99, cfg);
    const Autoencoder b = train_autoencoder(vols, 99, cfg);
    const auto ca = a.encode(vols[2]), cb = b.encode(vols[2]);
    ASSERT_EQ(ca.size(), cb.size());
    for (size_t i = 0; i < ca.size(); ++i) EXPECT_NEAR(ca[i], cb[i], 1e-6);
}

TEST(Balance, AutoencoderBeatsConstantPredictor) {
    const auto vols = volume_set(20, 32);
    const Autoencoder ae = train_autoencoder(vols, 42);
    double mean_mse = 0.0;
    for (const auto& v : vols) mean_mse += ae.reconstruction_mse(v);
    mean_mse /= static_cast<double>(vols.size());
    const double baseline = constant_predictor_mse(vols);
    EXPECT_LT(mean_mse, baseline) << "trained MSE " << mean_mse << " vs constant " << baseline;
}

// ---------------------------------------------------------------------------
// Latent SMOTE.

TEST(Balance, InterpolationEndpointsAndMidpoint) {
    const std::vector<float> za{0.0f, 0.0f}, zb{2.0f, 4.0f};
    // Endpoint: lambda 0 reproduces z_a bit-for-bit.
    EXPECT_EQ(interpolate(za, zb, 0.0), za);
    EXPECT_EQ(interpolate(za, zb, 1.0), zb);
    const std::vector<float> mid = interpolate(za, zb, 0.5);
    EXPECT_EQ(mid[0], 1.0f);
    EXPECT_EQ(mid[1], 2.0f);
}

TEST(Balance, SmoteBalancesToMajorityWithProvenance) {
    const auto codes = clustered_codes({10, 4, 2});
    const SamplePlan plan = latent_smote(codes, majority_targets(codes), 5, 20, 77);

    EXPECT_EQ(plan.counts_before.at(0), 10);
    EXPECT_EQ(plan.counts_before.at(1), 4);
    EXPECT_EQ(plan.counts_before.at(2), 2);
    EXPECT_EQ(plan.counts_after.at(0), 10);
    EXPECT_EQ(plan.counts_after.at(1), 10);
    EXPECT_EQ(plan.counts_after.at(2), 10);
    EXPECT_EQ(plan.synthetic_specs.size(), 14u);
    EXPECT_TRUE(plan.fallback_classes.empty());

    // Exhaustive provenance walk: same-class distinct parents drawn from the
    // real refs, lambda in range, codes exactly on the parent segment.
    const std::set<std::string> real_ids(plan.real_refs.begin(), plan.real_refs.end());
    for (const auto& syn : plan.synthetic_specs) {
        EXPECT_EQ(syn.source, CodeSource::SYNTHETIC);
        EXPECT_NE(syn.parent_a, syn.parent_b);
        EXPECT_TRUE(real_ids.count(syn.parent_a));
        EXPECT_TRUE(real_ids.count(syn.parent_b));
        EXPECT_EQ(plan.real_labels.at(syn.parent_a), syn.label);
        EXPECT_EQ(plan.real_labels.at(syn.parent_b), syn.label);
        EXPECT_GE(syn.lambda, 0.0);
        EXPECT_LE(syn.lambda, 1.0);
    }
    EXPECT_TRUE(audit_plan(plan, ids_of(codes)).empty());
    EXPECT_TRUE(audit_convexity(plan, codes).empty());
}

TEST(Balance, SmoteStopsAtCap) {
    const auto codes = clustered_codes({10, 4, 2});
    const SamplePlan plan = latent_smote(codes, majority_targets(codes), 5, 6, 77);
    EXPECT_EQ(plan.counts_after.at(0), 10);  // real counts stand
    EXPECT_EQ(plan.counts_after.at(1), 6);
    EXPECT_EQ(plan.counts_after.at(2), 6);
    EXPECT_TRUE(audit_plan(plan, ids_of(codes)).empty());
}

TEST(Balance, SingleSampleClassFallsBackToAugmentationOnly) {
    const auto codes = clustered_codes({5, 1});
    const SamplePlan plan = latent_smote(codes, majority_targets(codes), 5, 10, 3);
    ASSERT_EQ(plan.fallback_classes.size(), 1u);
    EXPECT_EQ(plan.fallback_classes[0], 1);
    EXPECT_TRUE(plan.synthetic_specs.empty());
    EXPECT_EQ(plan.counts_after.at(1), 1);
    ASSERT_FALSE(plan.notes.empty());
    EXPECT_NE(plan.notes[0].find("augmentation-only"), std::string::npos);
}

TEST(Balance, SmoteStreamsAreOrderIndependent) {
    const auto codes = clustered_codes({8, 3, 3});
    // Plan A asks for class 1 only; plan B for classes 1 and 2. The class-1
    // synthetics must be identical: each sample's stream is keyed by
    // (seed, class, index), not by generation order.
    const SamplePlan a = latent_smote(codes, {{1, 6}}, 5, 8, 42);
    const SamplePlan b = latent_smote(codes, {{1, 6}, {2, 7}}, 5, 8, 42);
    ASSERT_EQ(a.synthetic_specs.size(), 3u);
    std::vector<LatentCode> b_class1;
    for (const auto& s : b.synthetic_specs)
        if (s.label == 1) b_class1.push_back(s);
    ASSERT_EQ(b_class1.size(), 3u);
    for (size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(a.synthetic_specs[i].parent_a, b_class1[i].parent_a);
        EXPECT_EQ(a.synthetic_specs[i].parent_b, b_class1[i].parent_b);
        EXPECT_EQ(a.synthetic_specs[i].lambda, b_class1[i].lambda);
        EXPECT_EQ(a.synthetic_specs[i].vec, b_class1[i].vec);
    }
}

TEST(Balance, AuditFlagsDoctoredPlans) {
    const auto codes = clustered_codes({4, 3});
    SamplePlan plan = latent_smote(codes, majority_targets(codes), 5, 10, 1);
    ASSERT_FALSE(plan.synthetic_specs.empty());
    const auto training = ids_of(codes);
    EXPECT_TRUE(audit_plan(plan, training).empty());

    // Parent outside the training split.
    SamplePlan leaky = plan;
    leaky.synthetic_specs[0].parent_a = "sub-9-9";
    EXPECT_FALSE(audit_plan(leaky, training).empty());

    // Identical parents.
    SamplePlan twins = plan;
    twins.synthetic_specs[0].parent_b = twins.synthetic_specs[0].parent_a;
    EXPECT_FALSE(audit_plan(twins, training).empty());

    // Cross-class parents.
    SamplePlan crossed = plan;
    crossed.synthetic_specs[0].label = 0;
    EXPECT_FALSE(audit_plan(crossed, training).empty());

    // A vector nudged off the parent segment.
    SamplePlan off = plan;
    off.synthetic_specs[0].vec[0] += 0.25f;
    EXPECT_FALSE(audit_convexity(off, codes).empty());
}

TEST(Balance, PlanJsonRoundTrip) {
    const auto codes = clustered_codes({6, 2});
    SamplePlan plan = latent_smote(codes, majority_targets(codes), 3, 6, 11);
    plan.stage = "followup1";
    plan.fold = 3;
    const fs::path dir = fs::temp_directory_path() / "gbm_balance_plans";
    write_plan(dir, plan);
    EXPECT_TRUE(fs::exists(dir / "fold_3_plan.json"));
    const SamplePlan back = read_plan(dir, 3);
    EXPECT_EQ(back.stage, plan.stage);
    EXPECT_EQ(back.fold, plan.fold);
    EXPECT_EQ(back.cap, plan.cap);
    EXPECT_EQ(back.real_refs, plan.real_refs);
    EXPECT_EQ(back.real_labels, plan.real_labels);
    EXPECT_EQ(back.counts_before, plan.counts_before);
    EXPECT_EQ(back.counts_after, plan.counts_after);
    ASSERT_EQ(back.synthetic_specs.size(), plan.synthetic_specs.size());
    for (size_t i = 0; i < back.synthetic_specs.size(); ++i) {
        EXPECT_EQ(back.synthetic_specs[i].vec, plan.synthetic_specs[i].vec);
        EXPECT_EQ(back.synthetic_specs[i].parent_a, plan.synthetic_specs[i].parent_a);
        EXPECT_EQ(back.synthetic_specs[i].parent_b, plan.synthetic_specs[i].parent_b);
        EXPECT_EQ(back.synthetic_specs[i].lambda, plan.synthetic_specs[i].lambda);
    }
    EXPECT_TRUE(audit_convexity(back, codes).empty());
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Augmentation.

TEST(Balance, AugmentIdentityBounds) {
    const Volume v = structured_volume(16, 0);
    AugmentConfig cfg;
    cfg.max_rotation_deg = 0;
    cfg.max_translation_vox = 0;
    cfg.noise_sigma = 0;
    cfg.probability = 1.0;
    Rng rng(4);
    const Volume out = augment(v, cfg, rng);
    EXPECT_EQ(max_abs_diff(out.data, v.data), 0.0f);
}

TEST(Balance, AugmentNoiseSdMatchesSigma) {
    const Volume v = structured_volume(32, 1);
    AugmentConfig cfg;
    cfg.max_rotation_deg = 0;
    cfg.max_translation_vox = 0;
    cfg.noise_sigma = 0.02;
    cfg.probability = 1.0;
    Rng rng(10);
    const Volume out = augment(v, cfg, rng);

    double sum = 0.0, sum2 = 0.0;
    int64_t n = 0;
    for (int64_t i = 0; i < v.data.numel(); ++i) {
        if (!v.mask[static_cast<size_t>(i)]) {
            // Background untouched: stays exactly as it was.
            EXPECT_EQ(out.data.data()[i], v.data.data()[i]);
            continue;
        }
        const double d = static_cast<double>(out.data.data()[i]) - v.data.data()[i];
        sum += d;
        sum2 += d * d;
        ++n;
    }
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(sum2 / static_cast<double>(n) - mean * mean);
    EXPECT_NEAR(sd, 0.02, 0.002);
}

TEST(Balance, AugmentRigidMovesDataDeterministically) {
    const Volume v = structured_volume(32, 2);
    AugmentConfig cfg;  // defaults: 5 deg, 4 vox, sigma 0.02, probability 0.5
    cfg.probability = 1.0;
    Rng r1(21), r2(21), r3(22);
    const Volume a = augment(v, cfg, r1);
    const Volume b = augment(v, cfg, r2);
    const Volume c = augment(v, cfg, r3);
    EXPECT_EQ(a.data.shape(), v.data.shape());
    EXPECT_EQ(max_abs_diff(a.data, b.data), 0.0f);       // same stream, same output
    EXPECT_GT(max_abs_diff(a.data, v.data), 0.01f);      // it actually moved
    EXPECT_GT(max_abs_diff(a.data, c.data), 0.0f);       // different stream differs
}

TEST(Balance, AugmentProbabilityGate) {
    const Volume v = structured_volume(16, 3);
    AugmentConfig cfg;
    cfg.probability = 0.0;  // never applies
    Rng rng(5);
    const Volume out = augment(v, cfg, rng);
    EXPECT_EQ(max_abs_diff(out.data, v.data), 0.0f);

    AugmentConfig bad;
    bad.probability = 1.5;
    Rng rng2(5);
    EXPECT_THROW(augment(v, bad, rng2), Error);
}

// ---------------------------------------------------------------------------
// Materialization.

TEST(Balance, MaterializePlanAssemblesRealAndSynthetic) {
    const auto vols = volume_set(6, 16);
    AutoencoderConfig cfg;
    cfg.epochs = 1;
    const Autoencoder ae = train_autoencoder(vols, 8, cfg);

    std::vector<LatentCode> codes;
    std::map<std::string, const Volume*> by_id;
    for (size_t i = 0; i < vols.size(); ++i) {
        LatentCode c;
        c.source = CodeSource::REAL;
        c.sample_id = "sub-" + std::to_string(i);
        c.label = i < 4 ? 0 : 1;  // counts (4, 2)
        c.vec = ae.encode(vols[i]);
        by_id[c.sample_id] = &vols[i];
        codes.push_back(std::move(c));
    }
    const SamplePlan plan = latent_smote(codes, majority_targets(codes), 5, 4, 13);
    ASSERT_EQ(plan.synthetic_specs.size(), 2u);

    AugmentConfig aug;
    const auto samples = materialize_plan(plan, by_id, ae, aug, 31);
    ASSERT_EQ(samples.size(), 8u);
    int synthetic = 0;
    for (const auto& s : samples) {
        EXPECT_EQ(s.volume.data.shape(), vols[0].data.shape());
        EXPECT_TRUE(s.label == 0 || s.label == 1);
        synthetic += s.synthetic ? 1 : 0;
    }
    EXPECT_EQ(synthetic, 2);

    // Deterministic assembly.
    const auto again = materialize_plan(plan, by_id, ae, aug, 31);
    for (size_t i = 0; i < samples.size(); ++i)
        EXPECT_EQ(max_abs_diff(samples[i].volume.data, again[i].volume.data), 0.0f);

    // Unknown id is an error, not a silent skip.
    std::map<std::string, const Volume*> missing = by_id;
    missing.erase("sub-3");
    EXPECT_THROW(materialize_plan(plan, missing, ae, aug, 31), Error);
}
