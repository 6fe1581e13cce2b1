// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Class-imbalance mitigation, applied to training splits only:
//   * a lightweight 3D convolutional autoencoder (4 stride-2 encoder blocks
//     to a 256-dim latent, mirror decoder) trained per fold on the fold's
//     training volumes;
//   * SMOTE in the latent space — synthetic codes interpolate between a
//     minority sample and one of its k nearest same-class neighbors, capped
//     so no class is over-represented;
//   * mild augmentation (small rigid perturbation + in-mask Gaussian noise)
//     applied to both real and synthetic samples.
//
// Every synthetic sample carries full provenance (both parent ids and the
// interpolation weight), so the no-leakage guard is assertable directly from
// the persisted SamplePlan without touching voxel data. Validation samples
// never pass through this module.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbmbench/autograd.hpp"
#include "gbmbench/common.hpp"
#include "gbmbench/nn.hpp"
#include "gbmbench/ops.hpp"
#include "gbmbench/ops_nn.hpp"
#include "gbmbench/optim.hpp"
#include "gbmbench/prep.hpp"
#include "gbmbench/rng.hpp"
#include "gbmbench/volume.hpp"

namespace gbmbench::balance {

struct InsufficientData : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Domain types.

enum class CodeSource { REAL, SYNTHETIC };

/// One latent embedding with class label and provenance. REAL codes have no
/// parents; SYNTHETIC codes carry two distinct same-class parent sample ids
/// and the interpolation weight lambda in [0, 1].
struct LatentCode {
    std::vector<float> vec;
    CodeSource source = CodeSource::REAL;
    std::string sample_id;
    int label = -1;
    std::string parent_a;
    std::string parent_b;
    double lambda = 0.0;
};

inline nlohmann::json code_to_json(const LatentCode& c) {
    nlohmann::json j;
    j["vec"] = c.vec;
    j["source"] = c.source == CodeSource::REAL ? "REAL" : "SYNTHETIC";
    j["sample_id"] = c.sample_id;
    j["label"] = c.label;
    if (c.source == CodeSource::SYNTHETIC) {
        j["parent_a"] = c.parent_a;
        j["parent_b"] = c.parent_b;
        j["lambda"] = c.lambda;
    }
    return j;
}

inline LatentCode code_from_json(const nlohmann::json& j) {
    LatentCode c;
    c.vec = j.at("vec").get<std::vector<float>>();
    c.source = j.at("source").get<std::string>() == "REAL" ? CodeSource::REAL
                                                           : CodeSource::SYNTHETIC;
    c.sample_id = j.at("sample_id").get<std::string>();
    c.label = j.at("label").get<int>();
    if (c.source == CodeSource::SYNTHETIC) {
        c.parent_a = j.at("parent_a").get<std::string>();
        c.parent_b = j.at("parent_b").get<std::string>();
        c.lambda = j.at("lambda").get<double>();
    }
    return c;
}

/// The balanced-training recipe for one fold: which real samples to use,
/// which synthetic codes to decode, and the class counts before/after.
/// Classes too small to interpolate (one real sample) fall back to
/// augmentation-only and are listed in `fallback_classes` with a log note.
struct SamplePlan {
    std::string stage;
    int fold = -1;
    uint64_t seed = 0;
    int64_t cap = 0;
    std::vector<std::string> real_refs;
    std::map<std::string, int> real_labels;  ///< id -> class, for audits
    std::vector<LatentCode> synthetic_specs;
    std::map<int, int64_t> counts_before;
    std::map<int, int64_t> counts_after;
    std::vector<int> fallback_classes;
    std::vector<std::string> notes;
};

inline nlohmann::json plan_to_json(const SamplePlan& p) {
    nlohmann::json j;
    j["stage"] = p.stage;
    j["fold"] = p.fold;
    j["seed"] = p.seed;
    j["cap"] = p.cap;
    j["real_refs"] = p.real_refs;
    j["real_labels"] = p.real_labels;
    j["synthetic_specs"] = nlohmann::json::array();
    for (const auto& c : p.synthetic_specs) j["synthetic_specs"].push_back(code_to_json(c));
    const auto counts_json = [](const std::map<int, int64_t>& m) {
        nlohmann::json out;
        for (const auto& [k, v] : m) out[std::to_string(k)] = v;
        return out;
    };
    j["counts_before"] = counts_json(p.counts_before);
    j["counts_after"] = counts_json(p.counts_after);
    j["fallback_classes"] = p.fallback_classes;
    j["notes"] = p.notes;
    return j;
}

inline SamplePlan plan_from_json(const nlohmann::json& j) {
    SamplePlan p;
    p.stage = j.at("stage").get<std::string>();
    p.fold = j.at("fold").get<int>();
    p.seed = j.at("seed").get<uint64_t>();
    p.cap = j.at("cap").get<int64_t>();
    p.real_refs = j.at("real_refs").get<std::vector<std::string>>();
    p.real_labels = j.at("real_labels").get<std::map<std::string, int>>();
    for (const auto& c : j.at("synthetic_specs")) p.synthetic_specs.push_back(code_from_json(c));
    const auto counts_from = [](const nlohmann::json& m) {
        std::map<int, int64_t> out;
        for (auto it = m.begin(); it != m.end(); ++it) out[std::stoi(it.key())] = *it;
        return out;
    };
    p.counts_before = counts_from(j.at("counts_before"));
    p.counts_after = counts_from(j.at("counts_after"));
    p.fallback_classes = j.at("fallback_classes").get<std::vector<int>>();
    p.notes = j.at("notes").get<std::vector<std::string>>();
    return p;
}

inline fs::path plan_path(const fs::path& dir, int fold) {
    return dir / ("fold_" + std::to_string(fold) + "_plan.json");
}

inline void write_plan(const fs::path& dir, const SamplePlan& p) {
    ensure_dir(dir);
    atomic_write(plan_path(dir, p.fold), plan_to_json(p).dump(2) + "\n");
}

inline SamplePlan read_plan(const fs::path& dir, int fold) {
    return plan_from_json(nlohmann::json::parse(read_text_file(plan_path(dir, fold))));
}

/// Augmentation bounds: rigid perturbation (rotation/translation) applied
/// with the given probability, plus additive in-mask Gaussian noise.
struct AugmentConfig {
    double max_rotation_deg = 5.0;
    int64_t max_translation_vox = 4;
    double noise_sigma = 0.02;
    double probability = 0.5;

    void validate() const {
        if (max_rotation_deg < 0 || max_translation_vox < 0 || noise_sigma < 0)
            throw Error("augment: bounds must be nonnegative");
        if (probability < 0.0 || probability > 1.0)
            throw Error("augment: probability must lie in [0, 1]");
    }
};

// ---------------------------------------------------------------------------
// Autoencoder.

struct AutoencoderConfig {
    int64_t latent = 256;
    std::array<int64_t, 4> widths{4, 8, 16, 32};
    int64_t epochs = 6;
    double lr = 1e-3;
    int64_t batch = 4;
};

namespace balance_detail {

/// Encoder: 4 x [conv3d k3 s2 p1 + ReLU] then flatten -> linear(latent).
/// Decoder mirror: linear -> reshape -> 4 x [nearest upsample x2 + conv3d k3
/// p1], ReLU between blocks, linear final conv back to one channel.
class AutoencoderModel : public nn::Model {
public:
    AutoencoderModel(const Shape& dims, const AutoencoderConfig& cfg, uint64_t seed)
        : dims_(dims), latent_(cfg.latent) {
        for (int a = 0; a < 3; ++a) {
            if (dims_[static_cast<size_t>(a)] < 16 || dims_[static_cast<size_t>(a)] % 16 != 0)
                throw Error("autoencoder: volume dims must be multiples of 16");
        }
        Rng rng(seed);
        const auto& w = cfg.widths;
        enc_[0] = nn::make_conv3d(*this, "enc1", 1, w[0], 3, rng, {2, 2, 2}, {1, 1, 1});
        enc_[1] = nn::make_conv3d(*this, "enc2", w[0], w[1], 3, rng, {2, 2, 2}, {1, 1, 1});
        enc_[2] = nn::make_conv3d(*this, "enc3", w[1], w[2], 3, rng, {2, 2, 2}, {1, 1, 1});
        enc_[3] = nn::make_conv3d(*this, "enc4", w[2], w[3], 3, rng, {2, 2, 2}, {1, 1, 1});
        bz_ = dims_[0] / 16;
        by_ = dims_[1] / 16;
        bx_ = dims_[2] / 16;
        flat_ = w[3] * bz_ * by_ * bx_;
        cbot_ = w[3];
        enc_proj_ = nn::make_linear(*this, "enc_proj", flat_, latent_, rng);
        dec_proj_ = nn::make_linear(*this, "dec_proj", latent_, flat_, rng);
        dec_[0] = nn::make_conv3d(*this, "dec1", w[3], w[2], 3, rng, {1, 1, 1}, {1, 1, 1});
        dec_[1] = nn::make_conv3d(*this, "dec2", w[2], w[1], 3, rng, {1, 1, 1}, {1, 1, 1});
        dec_[2] = nn::make_conv3d(*this, "dec3", w[1], w[0], 3, rng, {1, 1, 1}, {1, 1, 1});
        dec_[3] = nn::make_conv3d(*this, "dec4", w[0], 1, 3, rng, {1, 1, 1}, {1, 1, 1});
    }

    Var encode(const Var& x) {
        Var t = x;
        for (const auto& c : enc_) t = ops::relu(c(t));
        t = ops::reshape(t, {t.shape()[0], flat_});
        return enc_proj_(t);
    }

    Var decode(const Var& z) {
        Var t = dec_proj_(z);
        t = ops::relu(t);
        t = ops::reshape(t, {t.shape()[0], cbot_, bz_, by_, bx_});
        for (size_t i = 0; i < 4; ++i) {
            t = ops::upsample_nearest3d(t, 2);
            t = dec_[i](t);
            if (i + 1 < 4) t = ops::relu(t);
        }
        return t;
    }

    Var forward(const Var& x) override { return decode(encode(x)); }

    const Shape& dims() const { return dims_; }
    int64_t latent() const { return latent_; }

private:
    Shape dims_;  // {D, H, W}
    int64_t latent_, bz_ = 0, by_ = 0, bx_ = 0, flat_ = 0, cbot_ = 0;
    std::array<nn::Conv3d, 4> enc_;
    nn::Linear enc_proj_, dec_proj_;
    std::array<nn::Conv3d, 4> dec_;
};

inline Tensor stack_volumes(const std::vector<const Volume*>& vols) {
    const Shape d = vols.front()->data.shape();
    Tensor t({static_cast<int64_t>(vols.size()), 1, d[0], d[1], d[2]});
    const int64_t n = d[0] * d[1] * d[2];
    for (size_t i = 0; i < vols.size(); ++i)
        std::copy(vols[i]->data.data(), vols[i]->data.data() + n,
                  t.data() + static_cast<int64_t>(i) * n);
    return t;
}

}  // namespace balance_detail

/// A trained autoencoder: encode volumes to latent codes, decode codes back
/// to volumes of the training dims. Also records the training MSE curve.
class Autoencoder {
public:
    Autoencoder(std::shared_ptr<balance_detail::AutoencoderModel> model,
                std::vector<double> epoch_mse)
        : model_(std::move(model)), epoch_mse_(std::move(epoch_mse)) {}

    const Shape& dims() const { return model_->dims(); }
    int64_t latent() const { return model_->latent(); }
    const std::vector<double>& epoch_mse() const { return epoch_mse_; }
    double final_mse() const { return epoch_mse_.empty() ? 0.0 : epoch_mse_.back(); }

    std::vector<float> encode(const Volume& v) const {
        if (v.data.shape() != model_->dims()) throw Error("autoencoder: volume dims mismatch");
        NoGrad guard;
        model_->eval();
        Tensor t({1, 1, dims()[0], dims()[1], dims()[2]});
        std::copy(v.data.data(), v.data.data() + v.data.numel(), t.data());
        const Var z = model_->encode(Var(std::move(t)));
        return std::vector<float>(z.val().data(), z.val().data() + z.val().numel());
    }

    Volume decode(const std::vector<float>& code) const {
        if (static_cast<int64_t>(code.size()) != latent())
            throw Error("autoencoder: latent length mismatch");
        NoGrad guard;
        model_->eval();
        Tensor z({1, latent()});
        std::copy(code.begin(), code.end(), z.data());
        const Var out = model_->decode(Var(std::move(z)));
        Volume v = Volume::zeros(dims()[0], dims()[1], dims()[2]);
        std::copy(out.val().data(), out.val().data() + out.val().numel(), v.data.data());
        return v;
    }

    double reconstruction_mse(const Volume& v) const {
        const Volume r = decode(encode(v));
        double sum = 0.0;
        for (int64_t i = 0; i < v.data.numel(); ++i) {
            const double d = static_cast<double>(v.data.data()[i]) - r.data.data()[i];
            sum += d * d;
        }
        return sum / static_cast<double>(v.data.numel());
    }

private:
    std::shared_ptr<balance_detail::AutoencoderModel> model_;
    std::vector<double> epoch_mse_;
};

/// Trains the fold-local autoencoder on the training volumes. Deterministic
/// given the seed; volumes must share dims (multiples of 16 per axis).
inline Autoencoder train_autoencoder(const std::vector<Volume>& train_volumes, uint64_t seed,
                                     const AutoencoderConfig& cfg = {}) {
    if (train_volumes.size() < 2)
        throw InsufficientData("train_autoencoder: need at least 2 volumes");
    const Shape dims = train_volumes.front().data.shape();
    for (const auto& v : train_volumes)
        if (v.data.shape() != dims) throw Error("train_autoencoder: volumes must share dims");
    if (cfg.epochs < 1 || cfg.batch < 1) throw Error("train_autoencoder: degenerate config");

    auto model = std::make_shared<balance_detail::AutoencoderModel>(dims, cfg, seed);
    model->train();
    nn::Adam opt(model->params(), cfg.lr);
    Rng order_rng = Rng(seed).fork("order");

    std::vector<double> epoch_mse;
    std::vector<size_t> order(train_volumes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        double sum_loss = 0.0;
        int64_t batches = 0;
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch)) {
            std::vector<const Volume*> chunk;
            for (size_t i = at; i < std::min(order.size(), at + static_cast<size_t>(cfg.batch));
                 ++i)
                chunk.push_back(&train_volumes[order[i]]);
            Tensor batch = balance_detail::stack_volumes(chunk);
            Tensor target = batch;
            Var loss = ops::mse_loss(model->forward(Var(std::move(batch))), target);
            model->zero_grad();
            loss.backward();
            opt.step();
            sum_loss += static_cast<double>(loss.val().data()[0]);
            ++batches;
        }
        epoch_mse.push_back(sum_loss / static_cast<double>(batches));
    }
    return Autoencoder(std::move(model), std::move(epoch_mse));
}

/// MSE of the best constant predictor (the global voxel mean) over a set of
/// volumes: the baseline a trained autoencoder must beat.
inline double constant_predictor_mse(const std::vector<Volume>& vols) {
    double mean = 0.0;
    int64_t n = 0;
    for (const auto& v : vols) {
        for (int64_t i = 0; i < v.data.numel(); ++i) mean += v.data.data()[i];
        n += v.data.numel();
    }
    mean /= static_cast<double>(n);
    double sse = 0.0;
    for (const auto& v : vols)
        for (int64_t i = 0; i < v.data.numel(); ++i) {
            const double d = static_cast<double>(v.data.data()[i]) - mean;
            sse += d * d;
        }
    return sse / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Latent-space SMOTE.

/// The interpolation kernel: z = z_a + lambda (z_b - z_a), elementwise in
/// double, stored as float. Generation and audit share this exact arithmetic
/// so the convexity check is bit-exact.
inline std::vector<float> interpolate(const std::vector<float>& a, const std::vector<float>& b,
                                      double lambda) {
    if (a.size() != b.size()) throw Error("interpolate: length mismatch");
    std::vector<float> z(a.size());
    for (size_t j = 0; j < a.size(); ++j)
        z[j] = static_cast<float>(static_cast<double>(a[j]) +
                                  lambda * (static_cast<double>(b[j]) -
                                            static_cast<double>(a[j])));
    return z;
}

/// For each class below min(target, cap): repeatedly pick a minority code
/// uniformly, pick one of its k nearest same-class neighbors (Euclidean),
/// and interpolate z = z_a + lambda * (z_b - z_a) with lambda uniform on
/// [0, 1]. Each synthetic sample draws from an independent stream keyed by
/// (seed, class, index), so generation order cannot change the output.
/// Classes with a single real sample fall back to augmentation-only (logged).
inline SamplePlan latent_smote(const std::vector<LatentCode>& codes,
                               const std::map<int, int64_t>& target_counts, int64_t k,
                               int64_t cap, uint64_t seed) {
    if (k < 1) throw Error("latent_smote: k must be >= 1");
    if (cap < 1) throw Error("latent_smote: cap must be >= 1");
    SamplePlan plan;
    plan.seed = seed;
    plan.cap = cap;

    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < codes.size(); ++i) {
        const LatentCode& c = codes[i];
        if (c.source != CodeSource::REAL)
            throw Error("latent_smote: input codes must all be REAL");
        if (!codes.empty() && c.vec.size() != codes.front().vec.size())
            throw Error("latent_smote: latent lengths differ");
        plan.real_refs.push_back(c.sample_id);
        plan.real_labels[c.sample_id] = c.label;
        by_class[c.label].push_back(i);
        ++plan.counts_before[c.label];
    }
    plan.counts_after = plan.counts_before;

    for (const auto& [cls, target] : target_counts) {
        const int64_t goal = std::min(target, cap);
        const auto it = by_class.find(cls);
        const int64_t have = it == by_class.end() ? 0 : static_cast<int64_t>(it->second.size());
        if (goal <= have) continue;
        if (have == 0) {
            plan.notes.push_back("class " + std::to_string(cls) +
                                 ": no real samples in this training split; skipped");
            continue;
        }
        if (have == 1) {
            plan.fallback_classes.push_back(cls);
            plan.notes.push_back("class " + std::to_string(cls) +
                                 ": single real sample, interpolation impossible; "
                                 "augmentation-only fallback");
            continue;
        }
        const std::vector<size_t>& members = it->second;
        for (int64_t i = 0; i < goal - have; ++i) {
            // Independent stream per (class, sample index): order-independent.
            Rng rng = Rng(seed).fork(static_cast<uint64_t>(cls) * 0x100000000ULL +
                                     static_cast<uint64_t>(i));
            const size_t a_pos = static_cast<size_t>(
                rng.randint(0, static_cast<int64_t>(members.size())));
            const LatentCode& a = codes[members[a_pos]];

            // k nearest same-class neighbors of a (excluding a), Euclidean.
            std::vector<std::pair<double, size_t>> dist;
            for (size_t m = 0; m < members.size(); ++m) {
                if (m == a_pos) continue;
                const LatentCode& other = codes[members[m]];
                double d2 = 0.0;
                for (size_t j = 0; j < a.vec.size(); ++j) {
                    const double d = static_cast<double>(a.vec[j]) - other.vec[j];
                    d2 += d * d;
                }
                dist.emplace_back(d2, members[m]);
            }
            const size_t kk = std::min<size_t>(static_cast<size_t>(k), dist.size());
            std::partial_sort(dist.begin(), dist.begin() + static_cast<int64_t>(kk), dist.end());
            const LatentCode& b =
                codes[dist[static_cast<size_t>(rng.randint(0, static_cast<int64_t>(kk)))].second];

            const double lambda = rng.uniform();
            LatentCode syn;
            syn.source = CodeSource::SYNTHETIC;
            syn.label = cls;
            syn.sample_id = "syn-" + std::to_string(cls) + "-" + std::to_string(i);
            syn.parent_a = a.sample_id;
            syn.parent_b = b.sample_id;
            syn.lambda = lambda;
            syn.vec = interpolate(a.vec, b.vec, lambda);
            plan.synthetic_specs.push_back(std::move(syn));
            ++plan.counts_after[cls];
        }
    }
    return plan;
}

/// Convenience: full balance to the majority class (the default cap).
inline std::map<int, int64_t> majority_targets(const std::vector<LatentCode>& codes) {
    std::map<int, int64_t> counts;
    for (const auto& c : codes) ++counts[c.label];
    int64_t majority = 0;
    for (const auto& [cls, n] : counts) majority = std::max(majority, n);
    std::map<int, int64_t> targets;
    for (const auto& [cls, n] : counts) targets[cls] = majority;
    return targets;
}

// ---------------------------------------------------------------------------
// Plan audits (the leakage guard, assertable without voxel IO).

/// Returns human-readable violations; empty means the plan is clean.
/// `training_patients` is the fold's training-split patient set.
inline std::vector<std::string> audit_plan(const SamplePlan& plan,
                                           const std::set<std::string>& training_patients) {
    std::vector<std::string> violations;
    std::set<std::string> real_ids(plan.real_refs.begin(), plan.real_refs.end());
    for (const auto& id : plan.real_refs)
        if (!training_patients.count(id))
            violations.push_back("real sample " + id + " is not a training patient");
    for (const auto& syn : plan.synthetic_specs) {
        if (syn.source != CodeSource::SYNTHETIC) {
            violations.push_back(syn.sample_id + ": listed as synthetic but marked REAL");
            continue;
        }
        if (syn.parent_a == syn.parent_b)
            violations.push_back(syn.sample_id + ": parents are not distinct");
        if (syn.lambda < 0.0 || syn.lambda > 1.0)
            violations.push_back(syn.sample_id + ": lambda outside [0, 1]");
        for (const std::string& parent : {syn.parent_a, syn.parent_b}) {
            if (!real_ids.count(parent))
                violations.push_back(syn.sample_id + ": parent " + parent +
                                     " is not in real_refs");
            else if (!training_patients.count(parent))
                violations.push_back(syn.sample_id + ": parent " + parent +
                                     " is not a training patient");
            const auto lab = plan.real_labels.find(parent);
            if (lab != plan.real_labels.end() && lab->second != syn.label)
                violations.push_back(syn.sample_id + ": parent " + parent +
                                     " has a different class");
        }
    }
    for (const auto& [cls, n] : plan.counts_after) {
        const auto before = plan.counts_before.find(cls);
        const int64_t real_n = before == plan.counts_before.end() ? 0 : before->second;
        // Real counts stand as-is; any class that gained synthetics must land
        // at or under the cap.
        if (n > real_n && n > plan.cap)
            violations.push_back("class " + std::to_string(cls) +
                                 " exceeds the synthetic cap");
    }
    return violations;
}

/// Verifies every synthetic latent lies exactly on the segment between its
/// parents: recomputing z_a + lambda (z_b - z_a) with the generation
/// arithmetic must reproduce the stored vector bit-for-bit.
inline std::vector<std::string> audit_convexity(const SamplePlan& plan,
                                                const std::vector<LatentCode>& real_codes) {
    std::map<std::string, const LatentCode*> by_id;
    for (const auto& c : real_codes) by_id[c.sample_id] = &c;
    std::vector<std::string> violations;
    for (const auto& syn : plan.synthetic_specs) {
        const auto a = by_id.find(syn.parent_a);
        const auto b = by_id.find(syn.parent_b);
        if (a == by_id.end() || b == by_id.end()) {
            violations.push_back(syn.sample_id + ": parent codes unavailable");
            continue;
        }
        const std::vector<float> expect =
            interpolate(a->second->vec, b->second->vec, syn.lambda);
        if (expect != syn.vec)
            violations.push_back(syn.sample_id + ": off the parent segment");
    }
    return violations;
}

// ---------------------------------------------------------------------------
// Augmentation.

namespace balance_detail {

/// Pull-back rigid matrix for a forward rotation (Euler XYZ, degrees) about
/// the volume center plus a forward translation in voxels:
/// out(p) = v(R^T (p - c - t) + c).
inline std::array<double, 12> rigid_matrix(const Shape& dims, double deg_x, double deg_y,
                                           double deg_z, double tx, double ty, double tz) {
    const double rx = deg_x * M_PI / 180.0, ry = deg_y * M_PI / 180.0,
                 rz = deg_z * M_PI / 180.0;
    const double cx = std::cos(rx), sx = std::sin(rx);
    const double cy = std::cos(ry), sy = std::sin(ry);
    const double cz = std::cos(rz), sz = std::sin(rz);
    // R = Rz * Ry * Rx acting on (x, y, z) column vectors.
    const double r[3][3] = {
        {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
        {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
        {-sy, cy * sx, cy * cx},
    };
    const double c[3] = {static_cast<double>(dims[2] - 1) / 2.0,
                         static_cast<double>(dims[1] - 1) / 2.0,
                         static_cast<double>(dims[0] - 1) / 2.0};
    const double t[3] = {tx, ty, tz};
    std::array<double, 12> m{};
    for (int row = 0; row < 3; ++row) {
        // R^T row = column `row` of R.
        m[static_cast<size_t>(row * 4 + 0)] = r[0][row];
        m[static_cast<size_t>(row * 4 + 1)] = r[1][row];
        m[static_cast<size_t>(row * 4 + 2)] = r[2][row];
        double off = c[row];
        for (int kidx = 0; kidx < 3; ++kidx) off -= r[kidx][row] * (c[kidx] + t[kidx]);
        m[static_cast<size_t>(row * 4 + 3)] = off;
    }
    return m;
}

}  // namespace balance_detail

/// Mild perturbation: with probability cfg.probability, apply a random rigid
/// transform within the configured bounds and add in-mask Gaussian noise.
/// Dims are preserved; deterministic given the rng state. The draw order is
/// fixed (gate, 3 angles, 3 translations, noise field) so identical streams
/// give identical outputs.
inline Volume augment(const Volume& v, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    const bool apply = rng.uniform() < cfg.probability;
    const double ax = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    const double ay = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    const double az = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    const double bound = static_cast<double>(cfg.max_translation_vox);
    const double tx = rng.uniform(-bound, bound);
    const double ty = rng.uniform(-bound, bound);
    const double tz = rng.uniform(-bound, bound);
    if (!apply) return v;

    Volume out = v;
    if (cfg.max_rotation_deg > 0 || cfg.max_translation_vox > 0) {
        const auto m =
            balance_detail::rigid_matrix(v.data.shape(), ax, ay, az, tx, ty, tz);
        out = apply_rigid_transform(v, m);
    }
    if (cfg.noise_sigma > 0) {
        for (int64_t i = 0; i < out.data.numel(); ++i) {
            if (out.has_mask && !out.mask[static_cast<size_t>(i)]) continue;
            out.data.data()[i] += static_cast<float>(rng.normal(0.0, cfg.noise_sigma));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Plan materialization (the training-set assembly step).

/// One assembled training sample: the (possibly augmented) volume + label +
/// the originating sample id.
struct PlanSample {
    Volume volume;
    int label = -1;
    std::string sample_id;
    bool synthetic = false;
};

/// Decodes the plan into concrete training samples: real volumes first (in
/// real_refs order), then decoded synthetics, each augmented through an
/// independent stream keyed by its position, so assembly order or parallel
/// generation cannot change the result.
inline std::vector<PlanSample> materialize_plan(
    const SamplePlan& plan, const std::map<std::string, const Volume*>& volumes_by_id,
    const Autoencoder& ae, const AugmentConfig& aug, uint64_t seed) {
    std::vector<PlanSample> out;
    out.reserve(plan.real_refs.size() + plan.synthetic_specs.size());
    uint64_t stream = 0;
    for (const auto& id : plan.real_refs) {
        const auto it = volumes_by_id.find(id);
        if (it == volumes_by_id.end())
            throw Error("materialize_plan: no volume for training sample " + id);
        Rng rng = Rng(seed).fork(stream++);
        PlanSample s;
        s.volume = augment(*it->second, aug, rng);
        s.label = plan.real_labels.at(id);
        s.sample_id = id;
        s.synthetic = false;
        out.push_back(std::move(s));
    }
    for (const auto& syn : plan.synthetic_specs) {
        Rng rng = Rng(seed).fork(stream++);
        PlanSample s;
        s.volume = augment(ae.decode(syn.vec), aug, rng);
        s.label = syn.label;
        s.sample_id = syn.sample_id;
        s.synthetic = true;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace gbmbench::balance
