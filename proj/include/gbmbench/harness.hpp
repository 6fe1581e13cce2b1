// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// The experiment protocol: patient-level stratified k-fold cross-validation
// per stage, multi-seed training with fixed hyperparameters (ADAM, lr 1e-4,
// cross-entropy, 10 epochs — no schedule, no weight decay, no early
// stopping; the final-epoch model is evaluated), metric computation with
// brute-force-verifiable definitions, and a resumable sweep runner that
// checkpoints after every (family, batch, seed, fold) unit.
//
// The central guard: balancing artifacts (autoencoder, SMOTE parents,
// augmentation) derive only from each fold's training patients. train_one
// re-audits the SamplePlan against the training split and refuses to run on
// a leaky or misattached plan; validation sets are never balanced.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbmbench/balance.hpp"
#include "gbmbench/cohort.hpp"
#include "gbmbench/labels.hpp"
#include "gbmbench/nn.hpp"
#include "gbmbench/ops.hpp"
#include "gbmbench/optim.hpp"
#include "gbmbench/profiler.hpp"
#include "gbmbench/volume.hpp"
#include "gbmbench/zoo.hpp"

namespace gbmbench::harness {

struct TooFewPatients : Error {
    using Error::Error;
};
struct NonFiniteLoss : Error {
    using Error::Error;
};
struct LeakageViolation : Error {
    using Error::Error;
};

/// Class index convention: 0 progression, 1 pseudoprogression, 2 stable.
inline int class_index(FinalLabel l) { return static_cast<int>(l); }
constexpr int kNumClasses = 3;

// ---------------------------------------------------------------------------
// Fold assignment.

/// Patient-level stratified fold map. Every patient lands in exactly one
/// fold; per-fold class counts stay within +/-1 of the stratified ideal.
struct FoldAssignment {
    Stage stage = Stage::FIRST_FOLLOWUP;
    int64_t k = 5;
    uint64_t seed = 0;
    std::map<std::string, int> fold_of;  // patient_id -> fold index [0, k)
    std::vector<std::string> warnings;   // graceful-degradation notes
};

inline nlohmann::json folds_to_json(const FoldAssignment& f) {
    nlohmann::json j;
    j["stage"] = to_string(f.stage);
    j["k"] = f.k;
    j["seed"] = f.seed;
    j["fold_of"] = f.fold_of;
    j["warnings"] = f.warnings;
    return j;
}

inline FoldAssignment folds_from_json(const nlohmann::json& j) {
    FoldAssignment f;
    f.stage = parse_stage(j.at("stage").get<std::string>());
    f.k = j.at("k").get<int64_t>();
    f.seed = j.at("seed").get<uint64_t>();
    f.fold_of = j.at("fold_of").get<std::map<std::string, int>>();
    f.warnings = j.at("warnings").get<std::vector<std::string>>();
    return f;
}

/// Stratified assignment: per class, shuffle the class's patients with the
/// seeded stream, then deal them round-robin starting at a random offset.
/// Round-robin dealing keeps every fold's count of each class within +/-1 of
/// the ideal; classes smaller than k get a documented warning (some folds
/// will lack that class).
inline FoldAssignment make_folds(const StageCohort& cohort, int64_t k, uint64_t seed) {
    if (k < 2) throw Error("make_folds: k must be >= 2");
    if (static_cast<int64_t>(cohort.samples.size()) < k)
        throw TooFewPatients("make_folds: " + std::to_string(cohort.samples.size()) +
                             " patients for k=" + std::to_string(k));
    FoldAssignment out;
    out.stage = cohort.stage;
    out.k = k;
    out.seed = seed;

    std::map<int, std::vector<std::string>> by_class;
    for (const auto& s : cohort.samples)
        by_class[class_index(s.label.value)].push_back(s.patient_id);

    Rng rng = Rng(seed).fork("folds");
    for (auto& [cls, patients] : by_class) {
        std::sort(patients.begin(), patients.end());  // input-order independence
        rng.shuffle(patients);
        if (static_cast<int64_t>(patients.size()) < k)
            out.warnings.push_back("class " + std::to_string(cls) + " has " +
                                   std::to_string(patients.size()) + " patients (< k=" +
                                   std::to_string(k) + "); some folds lack this class");
        const int64_t start = rng.randint(0, k);
        for (size_t i = 0; i < patients.size(); ++i)
            out.fold_of[patients[i]] =
                static_cast<int>((start + static_cast<int64_t>(i)) % k);
    }
    return out;
}

inline std::set<std::string> fold_val_patients(const FoldAssignment& f, int fold) {
    std::set<std::string> out;
    for (const auto& [pid, fd] : f.fold_of)
        if (fd == fold) out.insert(pid);
    return out;
}

inline std::set<std::string> fold_train_patients(const FoldAssignment& f, int fold) {
    std::set<std::string> out;
    for (const auto& [pid, fd] : f.fold_of)
        if (fd != fold) out.insert(pid);
    return out;
}

// ---------------------------------------------------------------------------
// Training configuration.

/// Fixed protocol hyperparameters, recorded verbatim in every result record.
struct TrainConfig {
    std::string optimizer = "adam";
    double learning_rate = 1e-4;
    std::string loss = "cross_entropy";
    int64_t epochs = 10;
    int64_t batch_size = 1;
    int64_t seed = 21;
};

inline const std::vector<int64_t>& default_seeds() {
    static const std::vector<int64_t> seeds = {21, 33, 42};
    return seeds;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["optimizer"] = c.optimizer;
    j["learning_rate"] = c.learning_rate;
    j["loss"] = c.loss;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["seed"] = c.seed;
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.optimizer = j.at("optimizer").get<std::string>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.loss = j.at("loss").get<std::string>();
    c.epochs = j.at("epochs").get<int64_t>();
    c.batch_size = j.at("batch_size").get<int64_t>();
    c.seed = j.at("seed").get<int64_t>();
    return c;
}

// ---------------------------------------------------------------------------
// Input adaptation.

namespace harness_detail {

/// Adapts a stage volume [D, H, W] to a model input contract {C, d, h, w}:
/// channel axis added; if the contract wants fewer slices than the volume
/// has, slices are subsampled evenly (the slice-sequence families consume 16
/// slices at smoke scale from a 32-deep volume). In-plane dims must match.
inline Tensor adapt_volume(const Tensor& vol, const Shape& contract) {
    if (vol.shape().size() != 3) throw Error("adapt_volume: expected [D, H, W]");
    if (contract.size() != 4 || contract[0] != 1)
        throw Error("adapt_volume: contract must be {1, d, h, w}");
    const int64_t D = vol.shape()[0], H = vol.shape()[1], W = vol.shape()[2];
    if (H != contract[2] || W != contract[3])
        throw Error("adapt_volume: in-plane dims mismatch contract");
    if (D == contract[1]) return vol.reshaped({1, D, H, W});
    if (D < contract[1]) throw Error("adapt_volume: volume has too few slices");
    const auto idx = zoo_detail::subsample_indices(D, contract[1]);
    Tensor out({1, contract[1], H, W});
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy(vol.data() + idx[i] * H * W, vol.data() + (idx[i] + 1) * H * W,
                  out.data() + static_cast<int64_t>(i) * H * W);
    return out;
}

/// Stacks adapted per-sample tensors [1, d, h, w] into a batch [B, 1, d, h, w].
inline Tensor stack_batch(const std::vector<const Tensor*>& samples) {
    const Shape s = samples.front()->shape();
    Tensor out({static_cast<int64_t>(samples.size()), 1, s[1], s[2], s[3]});
    const int64_t n = s[1] * s[2] * s[3];
    for (size_t i = 0; i < samples.size(); ++i)
        std::copy(samples[i]->data(), samples[i]->data() + n,
                  out.data() + static_cast<int64_t>(i) * n);
    return out;
}

}  // namespace harness_detail

// ---------------------------------------------------------------------------
// Metrics.

/// Metric bundle for one evaluation. AUC may be missing (degenerate val set);
/// excluded-class lists flag what the macro averages skipped.
struct Metrics {
    int64_t n = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::vector<int> f1_excluded;  ///< classes absent from the val labels
    std::optional<double> macro_auc;
    std::vector<int> auc_excluded;  ///< classes without both a pos and a neg
    bool degenerate = false;        ///< single-class val set
};

inline nlohmann::json metrics_to_json(const Metrics& m) {
    nlohmann::json j;
    j["n"] = m.n;
    j["accuracy"] = m.accuracy;
    j["macro_f1"] = m.macro_f1;
    j["f1_excluded"] = m.f1_excluded;
    if (m.macro_auc) j["macro_auc"] = *m.macro_auc;
    else j["macro_auc"] = nullptr;
    j["auc_excluded"] = m.auc_excluded;
    j["degenerate"] = m.degenerate;
    return j;
}

inline Metrics metrics_from_json(const nlohmann::json& j) {
    Metrics m;
    m.n = j.at("n").get<int64_t>();
    m.accuracy = j.at("accuracy").get<double>();
    m.macro_f1 = j.at("macro_f1").get<double>();
    m.f1_excluded = j.at("f1_excluded").get<std::vector<int>>();
    if (!j.at("macro_auc").is_null()) m.macro_auc = j.at("macro_auc").get<double>();
    m.auc_excluded = j.at("auc_excluded").get<std::vector<int>>();
    m.degenerate = j.at("degenerate").get<bool>();
    return m;
}

namespace harness_detail {

/// One-vs-rest AUC for class c from probability scores, ties by midrank:
/// AUC = (sum of positive ranks - n_pos(n_pos+1)/2) / (n_pos * n_neg).
inline std::optional<double> ovr_auc(const std::vector<int>& labels,
                                     const std::vector<double>& scores, int cls) {
    const size_t n = labels.size();
    int64_t n_pos = 0;
    for (int l : labels) n_pos += l == cls ? 1 : 0;
    const int64_t n_neg = static_cast<int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // Midranks: tied scores all get the mean of the ranks they span.
    std::vector<double> rank(n);
    size_t i = 0;
    while (i < n) {
        size_t jx = i;
        while (jx + 1 < n && scores[order[jx + 1]] == scores[order[i]]) ++jx;
        const double mid = (static_cast<double>(i + 1) + static_cast<double>(jx + 1)) / 2.0;
        for (size_t t = i; t <= jx; ++t) rank[order[t]] = mid;
        i = jx + 1;
    }
    double pos_ranks = 0.0;
    for (size_t t = 0; t < n; ++t)
        if (labels[t] == cls) pos_ranks += rank[t];
    const double num =
        pos_ranks - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return num / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace harness_detail

/// Computes accuracy (argmax, first index wins ties), macro-F1 (unweighted
/// mean of per-class F1; classes absent from the labels are excluded and
/// flagged), and macro-AUC (unweighted mean of one-vs-rest midrank AUCs;
/// classes lacking a positive or negative are excluded; a single-class val
/// set yields a missing AUC — never a silent 0.5).
inline Metrics compute_metrics(const std::vector<int>& labels, const Tensor& probs) {
    if (probs.shape().size() != 2) throw Error("compute_metrics: probs must be [N, C]");
    const int64_t n = probs.shape()[0], c = probs.shape()[1];
    if (static_cast<int64_t>(labels.size()) != n)
        throw Error("compute_metrics: label count mismatch");
    if (n == 0) throw Error("compute_metrics: empty val set");

    Metrics m;
    m.n = n;

    // Accuracy by argmax.
    std::vector<int> pred(static_cast<size_t>(n));
    int64_t correct = 0;
    for (int64_t r = 0; r < n; ++r) {
        const float* row = probs.data() + r * c;
        int best = 0;
        for (int64_t j = 1; j < c; ++j)
            if (row[j] > row[best]) best = static_cast<int>(j);
        pred[static_cast<size_t>(r)] = best;
        correct += best == labels[static_cast<size_t>(r)] ? 1 : 0;
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(n);

    // Macro-F1 over classes present in the labels.
    double f1_sum = 0.0;
    int64_t f1_classes = 0;
    for (int cls = 0; cls < c; ++cls) {
        int64_t tp = 0, fp = 0, fn = 0, present = 0;
        for (int64_t r = 0; r < n; ++r) {
            const bool is = labels[static_cast<size_t>(r)] == cls;
            const bool hat = pred[static_cast<size_t>(r)] == cls;
            present += is ? 1 : 0;
            tp += (is && hat) ? 1 : 0;
            fp += (!is && hat) ? 1 : 0;
            fn += (is && !hat) ? 1 : 0;
        }
        if (present == 0) {
            m.f1_excluded.push_back(cls);
            continue;
        }
        const double denom = static_cast<double>(2 * tp + fp + fn);
        f1_sum += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
        ++f1_classes;
    }
    m.macro_f1 = f1_classes == 0 ? 0.0 : f1_sum / static_cast<double>(f1_classes);

    // Macro-AUC, one-vs-rest.
    double auc_sum = 0.0;
    int64_t auc_classes = 0;
    for (int cls = 0; cls < c; ++cls) {
        std::vector<double> scores(static_cast<size_t>(n));
        for (int64_t r = 0; r < n; ++r)
            scores[static_cast<size_t>(r)] = probs.data()[r * c + cls];
        const auto auc = harness_detail::ovr_auc(labels, scores, cls);
        if (!auc) {
            m.auc_excluded.push_back(cls);
            continue;
        }
        auc_sum += *auc;
        ++auc_classes;
    }
    if (auc_classes > 0) m.macro_auc = auc_sum / static_cast<double>(auc_classes);
    m.degenerate = f1_classes <= 1;
    return m;
}

// ---------------------------------------------------------------------------
// Training and evaluation.

/// Materialized, audited training data for one fold.
struct FoldTrainData {
    balance::SamplePlan plan;
    std::vector<balance::PlanSample> samples;  // aligned with the plan
    std::set<std::string> training_patients;   // the fold's training split
};

struct TrainRunRecord {
    std::vector<double> epoch_losses;  // mean loss per epoch
    double wall_seconds = 0.0;
};

/// Trains for the fixed epoch budget (no early stopping, final model kept).
/// Refuses to run unless the plan audits clean against the training split —
/// this is the leakage guard's enforcement point. Throws NonFiniteLoss the
/// moment a batch loss stops being finite; the caller records a failed seed.
inline TrainRunRecord train_one(nn::Model& model, const FoldTrainData& data,
                                const Shape& input_contract, const TrainConfig& cfg) {
    if (data.samples.empty()) throw Error("train_one: empty training set");
    if (cfg.optimizer != "adam") throw Error("train_one: only the adam optimizer is wired");
    if (cfg.loss != "cross_entropy") throw Error("train_one: only cross_entropy is wired");
    const auto violations = balance::audit_plan(data.plan, data.training_patients);
    if (!violations.empty())
        throw LeakageViolation("train_one: plan failed the leakage audit: " + violations[0]);

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Tensor> adapted;
    adapted.reserve(data.samples.size());
    for (const auto& s : data.samples)
        adapted.push_back(harness_detail::adapt_volume(s.volume.data, input_contract));

    model.train();
    nn::Adam opt(model.params(), cfg.learning_rate);
    Rng order_rng = Rng(static_cast<uint64_t>(cfg.seed)).fork("batch_order");
    std::vector<size_t> order(data.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    TrainRunRecord rec;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        int64_t batches = 0;
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            std::vector<const Tensor*> chunk;
            std::vector<int64_t> labels;
            const size_t end =
                std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
            for (size_t i = at; i < end; ++i) {
                chunk.push_back(&adapted[order[i]]);
                labels.push_back(data.samples[order[i]].label);
            }
            Var logits = model.forward(Var(harness_detail::stack_batch(chunk)));
            Var loss = ops::cross_entropy(logits, labels);
            const double value = static_cast<double>(loss.val().data()[0]);
            if (!std::isfinite(value))
                throw NonFiniteLoss("train_one: non-finite loss at epoch " +
                                    std::to_string(epoch));
            model.zero_grad();
            loss.backward();
            opt.step();
            loss_sum += value;
            ++batches;
        }
        rec.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

/// One validation sample: a real (never balanced) volume and its label.
struct EvalSample {
    std::string patient_id;
    const Volume* volume = nullptr;
    int label = -1;
};

struct EvalResult {
    Tensor probs;  // [N, C]
    std::vector<int> labels;
    std::vector<std::string> patient_ids;
    Metrics metrics;
};

/// Runs the model on the validation set (eval mode, no grad) and computes
/// the metric bundle from softmax probabilities.
inline EvalResult evaluate(nn::Model& model, const std::vector<EvalSample>& val_set,
                           const Shape& input_contract, int64_t batch_size = 4) {
    if (val_set.empty()) throw Error("evaluate: empty val set");
    NoGrad guard;
    model.eval();
    EvalResult out;
    Tensor probs({static_cast<int64_t>(val_set.size()), kNumClasses});
    for (size_t at = 0; at < val_set.size(); at += static_cast<size_t>(batch_size)) {
        std::vector<Tensor> adapted;
        std::vector<const Tensor*> chunk;
        const size_t end = std::min(val_set.size(), at + static_cast<size_t>(batch_size));
        for (size_t i = at; i < end; ++i)
            adapted.push_back(
                harness_detail::adapt_volume(val_set[i].volume->data, input_contract));
        for (const auto& t : adapted) chunk.push_back(&t);
        const Var logits = model.forward(Var(harness_detail::stack_batch(chunk)));
        const Var p = ops::softmax_lastdim(logits);
        std::copy(p.val().data(), p.val().data() + p.val().numel(),
                  probs.data() + static_cast<int64_t>(at) * kNumClasses);
    }
    for (const auto& s : val_set) {
        out.labels.push_back(s.label);
        out.patient_ids.push_back(s.patient_id);
    }
    out.metrics = compute_metrics(out.labels, probs);
    out.probs = std::move(probs);
    return out;
}

// ---------------------------------------------------------------------------
// Experiment sweep.

/// The in-memory dataset for one stage: volumes and class labels by patient.
struct StageDataset {
    Stage stage = Stage::FIRST_FOLLOWUP;
    std::vector<std::string> patient_ids;  // sorted, unique
    std::map<std::string, Volume> volumes;
    std::map<std::string, int> labels;
};

/// One sweep unit: (family, batch, seed, fold) at a fixed stage.
struct UnitKey {
    std::string stage;
    std::string family;
    int64_t batch = 1;
    int64_t seed = 21;
    int fold = 0;

    std::string str() const {
        return stage + "/" + family + "/batch" + std::to_string(batch) + "/seed" +
               std::to_string(seed) + "/fold" + std::to_string(fold);
    }
};

struct UnitResult {
    UnitKey key;
    TrainConfig config;  // recorded verbatim
    bool failed = false;
    std::string failure;
    std::vector<double> epoch_losses;
    double train_seconds = 0.0;
    Metrics metrics;
    int64_t n_train_real = 0, n_train_synthetic = 0, n_val = 0;
};

inline nlohmann::json unit_to_json(const UnitResult& u) {
    nlohmann::json j;
    j["stage"] = u.key.stage;
    j["family"] = u.key.family;
    j["batch"] = u.key.batch;
    j["seed"] = u.key.seed;
    j["fold"] = u.key.fold;
    j["config"] = train_config_to_json(u.config);
    j["failed"] = u.failed;
    j["failure"] = u.failure;
    j["epoch_losses"] = u.epoch_losses;
    j["train_seconds"] = u.train_seconds;
    j["metrics"] = u.failed ? nlohmann::json(nullptr) : metrics_to_json(u.metrics);
    j["n_train_real"] = u.n_train_real;
    j["n_train_synthetic"] = u.n_train_synthetic;
    j["n_val"] = u.n_val;
    return j;
}

inline UnitResult unit_from_json(const nlohmann::json& j) {
    UnitResult u;
    u.key.stage = j.at("stage").get<std::string>();
    u.key.family = j.at("family").get<std::string>();
    u.key.batch = j.at("batch").get<int64_t>();
    u.key.seed = j.at("seed").get<int64_t>();
    u.key.fold = j.at("fold").get<int>();
    u.config = train_config_from_json(j.at("config"));
    u.failed = j.at("failed").get<bool>();
    u.failure = j.at("failure").get<std::string>();
    u.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
    u.train_seconds = j.at("train_seconds").get<double>();
    if (!j.at("metrics").is_null()) u.metrics = metrics_from_json(j.at("metrics"));
    u.n_train_real = j.at("n_train_real").get<int64_t>();
    u.n_train_synthetic = j.at("n_train_synthetic").get<int64_t>();
    u.n_val = j.at("n_val").get<int64_t>();
    return u;
}

/// Mean +/- two SD decompositions for one metric. `sd_across_seeds` is the
/// population SD of the per-seed means (the headline convention);
/// `sd_across_runs` is the population SD over every (seed, fold) value, kept
/// so either decomposition can be emitted.
struct MetricAggregate {
    double mean = 0.0;
    double sd_across_seeds = 0.0;
    double sd_across_runs = 0.0;
    int64_t n_seeds = 0;
    int64_t n_runs = 0;
};

inline nlohmann::json metric_agg_to_json(const MetricAggregate& a) {
    return nlohmann::json{{"mean", a.mean},
                          {"sd_across_seeds", a.sd_across_seeds},
                          {"sd_across_runs", a.sd_across_runs},
                          {"n_seeds", a.n_seeds},
                          {"n_runs", a.n_runs}};
}

inline MetricAggregate metric_agg_from_json(const nlohmann::json& j) {
    MetricAggregate a;
    a.mean = j.at("mean").get<double>();
    a.sd_across_seeds = j.at("sd_across_seeds").get<double>();
    a.sd_across_runs = j.at("sd_across_runs").get<double>();
    a.n_seeds = j.at("n_seeds").get<int64_t>();
    a.n_runs = j.at("n_runs").get<int64_t>();
    return a;
}

/// Aggregated outcome of one (stage, family, batch) cell.
struct ExperimentResult {
    std::string stage;
    std::string family;
    int64_t batch_size = 1;
    TrainConfig base_config;  // batch/seed vary per unit
    std::vector<int64_t> seeds;
    std::vector<UnitResult> units;  // every unit, including failures
    std::optional<MetricAggregate> accuracy, macro_f1, macro_auc;
    std::vector<int64_t> failed_seeds;  // seeds with >= 1 failed unit
    ComplexityRecord complexity;
};

namespace harness_detail {

inline std::pair<double, double> mean_pop_sd(const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= static_cast<double>(xs.size());
    return {mean, std::sqrt(var)};
}

/// Aggregates one metric across units: per-seed means over folds first, then
/// mean and population SD of the seed means; plus the flat seeds-x-folds SD.
inline std::optional<MetricAggregate> aggregate_metric(
    const std::vector<UnitResult>& units, const std::vector<int64_t>& seeds,
    double (*pick)(const UnitResult&), bool (*defined)(const UnitResult&)) {
    std::vector<double> seed_means;
    std::vector<double> all;
    for (int64_t seed : seeds) {
        std::vector<double> vals;
        for (const auto& u : units)
            if (u.key.seed == seed && !u.failed && defined(u)) vals.push_back(pick(u));
        if (vals.empty()) continue;
        seed_means.push_back(mean_pop_sd(vals).first);
        all.insert(all.end(), vals.begin(), vals.end());
    }
    if (seed_means.empty()) return std::nullopt;
    MetricAggregate agg;
    const auto [m, sd] = mean_pop_sd(seed_means);
    agg.mean = m;
    agg.sd_across_seeds = sd;
    agg.sd_across_runs = mean_pop_sd(all).second;
    agg.n_seeds = static_cast<int64_t>(seed_means.size());
    agg.n_runs = static_cast<int64_t>(all.size());
    return agg;
}

}  // namespace harness_detail

/// Recomputes every aggregate of one (stage, family, batch) cell from its
/// unit records. Pure: calling it again on the same units reproduces the
/// stored aggregate exactly.
inline ExperimentResult aggregate_units(const std::string& stage, const std::string& family,
                                        int64_t batch, const TrainConfig& base,
                                        const std::vector<int64_t>& seeds,
                                        std::vector<UnitResult> units,
                                        const ComplexityRecord& complexity) {
    ExperimentResult r;
    r.stage = stage;
    r.family = family;
    r.batch_size = batch;
    r.base_config = base;
    r.seeds = seeds;
    r.units = std::move(units);
    r.complexity = complexity;

    r.accuracy = harness_detail::aggregate_metric(
        r.units, seeds, [](const UnitResult& u) { return u.metrics.accuracy; },
        [](const UnitResult& u) { return u.metrics.n > 0; });
    r.macro_f1 = harness_detail::aggregate_metric(
        r.units, seeds, [](const UnitResult& u) { return u.metrics.macro_f1; },
        [](const UnitResult& u) { return u.metrics.n > 0; });
    r.macro_auc = harness_detail::aggregate_metric(
        r.units, seeds, [](const UnitResult& u) { return *u.metrics.macro_auc; },
        [](const UnitResult& u) { return u.metrics.n > 0 && u.metrics.macro_auc.has_value(); });

    std::set<int64_t> failed;
    double total_seconds = 0.0;
    for (const auto& u : r.units) {
        if (u.failed) failed.insert(u.key.seed);
        total_seconds += u.train_seconds;
    }
    r.failed_seeds.assign(failed.begin(), failed.end());
    r.complexity.total_runtime_min = total_seconds / 60.0;
    return r;
}

inline nlohmann::json experiment_to_json(const ExperimentResult& r) {
    nlohmann::json j;
    j["stage"] = r.stage;
    j["family"] = r.family;
    j["batch_size"] = r.batch_size;
    j["base_config"] = train_config_to_json(r.base_config);
    j["seeds"] = r.seeds;
    j["units"] = nlohmann::json::array();
    for (const auto& u : r.units) j["units"].push_back(unit_to_json(u));
    const auto put = [&j](const char* name, const std::optional<MetricAggregate>& a) {
        j[name] = a ? metric_agg_to_json(*a) : nlohmann::json(nullptr);
    };
    put("accuracy", r.accuracy);
    put("macro_f1", r.macro_f1);
    put("macro_auc", r.macro_auc);
    j["failed_seeds"] = r.failed_seeds;
    j["complexity"] = complexity_to_json(r.complexity);
    return j;
}

inline ExperimentResult experiment_from_json(const nlohmann::json& j) {
    ExperimentResult r;
    r.stage = j.at("stage").get<std::string>();
    r.family = j.at("family").get<std::string>();
    r.batch_size = j.at("batch_size").get<int64_t>();
    r.base_config = train_config_from_json(j.at("base_config"));
    r.seeds = j.at("seeds").get<std::vector<int64_t>>();
    for (const auto& u : j.at("units")) r.units.push_back(unit_from_json(u));
    const auto get = [&j](const char* name) -> std::optional<MetricAggregate> {
        if (j.at(name).is_null()) return std::nullopt;
        return metric_agg_from_json(j.at(name));
    };
    r.accuracy = get("accuracy");
    r.macro_f1 = get("macro_f1");
    r.macro_auc = get("macro_auc");
    r.failed_seeds = j.at("failed_seeds").get<std::vector<int64_t>>();
    r.complexity = complexity_from_json(j.at("complexity"));
    return r;
}

// ---------------------------------------------------------------------------
// Sweep runner.

struct SweepConfig {
    std::vector<ModelSpec> families;
    std::vector<int64_t> seeds = default_seeds();
    TrainConfig train;  // epochs/lr fixed; batch_size and seed vary per unit
    int64_t k_folds = 5;
    uint64_t split_seed = 42;
    uint64_t balance_seed = 7;
    balance::AutoencoderConfig ae;
    balance::AugmentConfig aug;
    int64_t smote_k = 5;
    int64_t cap = 0;  // 0 => majority-class count (full balance)
    fs::path results_dir;
    bool profile_timing = true;
    std::optional<std::vector<int64_t>> batch_override;  // else the family grid
    int64_t max_units = 0;  // 0 = unlimited; used to exercise interruption
    std::optional<int> only_fold;  // restrict to a single fold (CLI `train`)
};

struct SweepStats {
    int64_t executed = 0;
    int64_t skipped = 0;
    int64_t failed = 0;
    bool stopped_early = false;
};

struct SweepOutcome {
    std::vector<ExperimentResult> results;
    SweepStats stats;
    FoldAssignment folds;
};

namespace harness_detail {

inline fs::path unit_path(const fs::path& root, const UnitKey& k) {
    return root / k.stage / k.family / ("batch" + std::to_string(k.batch)) /
           ("seed" + std::to_string(k.seed)) / ("fold" + std::to_string(k.fold) + ".json");
}

inline fs::path state_path(const fs::path& root) { return root / "sweep_state.json"; }

inline std::set<std::string> load_state(const fs::path& root) {
    const fs::path p = state_path(root);
    if (!fs::exists(p)) return {};
    const auto j = nlohmann::json::parse(read_text_file(p));
    const auto keys = j.at("completed").get<std::vector<std::string>>();
    return {keys.begin(), keys.end()};
}

inline void save_state(const fs::path& root, const std::set<std::string>& completed) {
    nlohmann::json j;
    j["completed"] = std::vector<std::string>(completed.begin(), completed.end());
    atomic_write(state_path(root), j.dump(2) + "\n");
}

/// Balancing artifacts for one fold, shared by every unit touching the fold.
struct FoldCache {
    FoldTrainData train_data;
    std::vector<EvalSample> val_set;
};

}  // namespace harness_detail

/// The fold's trained autoencoder plus the oversampling plan derived from the
/// fold's training patients only. The plan is keyed by balance_seed and fold,
/// never by the training seed, so every unit of a fold shares it.
struct FoldBalance {
    balance::Autoencoder ae;
    balance::SamplePlan plan;
    std::set<std::string> training_patients;
};

inline FoldBalance make_fold_balance(const StageDataset& data, const FoldAssignment& folds,
                                     int fold, const SweepConfig& cfg) {
    std::set<std::string> training = fold_train_patients(folds, fold);
    std::vector<Volume> train_volumes;
    std::vector<std::string> train_ids;
    for (const auto& pid : data.patient_ids) {
        if (!training.count(pid)) continue;
        train_volumes.push_back(data.volumes.at(pid));
        train_ids.push_back(pid);
    }
    const uint64_t fold_seed =
        Rng(cfg.balance_seed).fork(static_cast<uint64_t>(fold)).next_u64();

    FoldBalance out{balance::train_autoencoder(train_volumes, fold_seed, cfg.ae), {}, {}};
    out.training_patients = std::move(training);
    std::vector<balance::LatentCode> codes;
    for (size_t i = 0; i < train_ids.size(); ++i) {
        balance::LatentCode c;
        c.source = balance::CodeSource::REAL;
        c.sample_id = train_ids[i];
        c.label = data.labels.at(train_ids[i]);
        c.vec = out.ae.encode(train_volumes[i]);
        codes.push_back(std::move(c));
    }
    auto targets = balance::majority_targets(codes);
    int64_t cap = cfg.cap;
    if (cap <= 0)
        for (const auto& [cls, t] : targets) cap = std::max(cap, t);
    out.plan = balance::latent_smote(codes, targets, cfg.smote_k, cap, fold_seed);
    out.plan.stage = to_string(data.stage);
    out.plan.fold = fold;
    return out;
}

namespace harness_detail {

inline FoldCache build_fold_cache(const StageDataset& data, const FoldAssignment& folds,
                                  int fold, const SweepConfig& cfg) {
    FoldCache cache;
    FoldBalance fb = make_fold_balance(data, folds, fold, cfg);
    const uint64_t fold_seed =
        Rng(cfg.balance_seed).fork(static_cast<uint64_t>(fold)).next_u64();

    std::map<std::string, const Volume*> by_id;
    for (const auto& pid : fb.plan.real_refs) by_id[pid] = &data.volumes.at(pid);
    cache.train_data.training_patients = std::move(fb.training_patients);
    cache.train_data.samples =
        balance::materialize_plan(fb.plan, by_id, fb.ae, cfg.aug, fold_seed);
    cache.train_data.plan = std::move(fb.plan);

    for (const auto& [pid, fd] : folds.fold_of) {
        if (fd != fold) continue;
        EvalSample s;
        s.patient_id = pid;
        s.volume = &data.volumes.at(pid);
        s.label = data.labels.at(pid);
        cache.val_set.push_back(std::move(s));
    }
    return cache;
}

}  // namespace harness_detail

/// Converts a StageDataset + labels into the cohort view make_folds expects.
inline StageCohort dataset_cohort(const StageDataset& data) {
    StageCohort c;
    c.stage = data.stage;
    for (const auto& pid : data.patient_ids) {
        StageSample s;
        s.patient_id = pid;
        s.label.value = static_cast<FinalLabel>(data.labels.at(pid));
        c.samples.push_back(std::move(s));
    }
    return c;
}

/// Runs the full sweep: families x batch grid x seeds x folds. Each unit is
/// checkpointed (result JSON + sweep state) the moment it finishes, so an
/// interrupted sweep resumes by skipping completed keys. Unit failures are
/// recorded and the sweep continues. Aggregates are recomputed from the unit
/// records at the end of every run.
inline SweepOutcome run_experiment(const StageDataset& data, const SweepConfig& cfg) {
    if (cfg.families.empty()) throw Error("run_experiment: no families");
    if (cfg.results_dir.empty()) throw Error("run_experiment: results_dir required");
    ensure_dir(cfg.results_dir);

    SweepOutcome out;
    out.folds = make_folds(dataset_cohort(data), cfg.k_folds, cfg.split_seed);
    const std::string stage_name = to_string(data.stage);

    // Persist fold plans next to the results for audits.
    std::set<std::string> completed = harness_detail::load_state(cfg.results_dir);

    std::map<int, harness_detail::FoldCache> fold_cache;
    const auto fold_data = [&](int fold) -> harness_detail::FoldCache& {
        auto it = fold_cache.find(fold);
        if (it == fold_cache.end()) {
            it = fold_cache.emplace(fold, harness_detail::build_fold_cache(
                                              data, out.folds, fold, cfg))
                     .first;
            balance::write_plan(cfg.results_dir / stage_name / "plans",
                                it->second.train_data.plan);
        }
        return it->second;
    };

    for (const auto& spec : cfg.families) {
        const std::vector<int64_t> batches =
            cfg.batch_override ? *cfg.batch_override : batch_grid(spec);
        for (int64_t batch : batches) {
            std::vector<UnitResult> units;
            for (int64_t seed : cfg.seeds) {
                for (int fold = 0; fold < cfg.k_folds; ++fold) {
                    if (cfg.only_fold && fold != *cfg.only_fold) continue;
                    UnitKey key{stage_name, spec.display_name(), batch, seed, fold};
                    const fs::path upath = harness_detail::unit_path(cfg.results_dir, key);
                    if (completed.count(key.str())) {
                        units.push_back(
                            unit_from_json(nlohmann::json::parse(read_text_file(upath))));
                        ++out.stats.skipped;
                        continue;
                    }
                    if (cfg.max_units > 0 && out.stats.executed >= cfg.max_units) {
                        out.stats.stopped_early = true;
                        continue;
                    }
                    UnitResult u;
                    u.key = key;
                    u.config = cfg.train;
                    u.config.batch_size = batch;
                    u.config.seed = seed;
                    try {
                        harness_detail::FoldCache& fc = fold_data(fold);
                        auto model = build(spec, static_cast<uint64_t>(seed));
                        const TrainRunRecord rec =
                            train_one(*model, fc.train_data, spec.input_dims(), u.config);
                        const EvalResult ev =
                            evaluate(*model, fc.val_set, spec.input_dims(), batch);
                        u.epoch_losses = rec.epoch_losses;
                        u.train_seconds = rec.wall_seconds;
                        u.metrics = ev.metrics;
                        u.n_train_real =
                            static_cast<int64_t>(fc.train_data.plan.real_refs.size());
                        u.n_train_synthetic =
                            static_cast<int64_t>(fc.train_data.plan.synthetic_specs.size());
                        u.n_val = static_cast<int64_t>(fc.val_set.size());
                    } catch (const Error& e) {
                        u.failed = true;
                        u.failure = e.what();
                        ++out.stats.failed;
                    }
                    ensure_dir(upath.parent_path());
                    atomic_write(upath, unit_to_json(u).dump(2) + "\n");
                    completed.insert(key.str());
                    harness_detail::save_state(cfg.results_dir, completed);
                    units.push_back(std::move(u));
                    ++out.stats.executed;
                }
            }
            if (out.stats.stopped_early) continue;

            // Profile the (family, batch) cell once, on a fresh build.
            ComplexityRecord complexity;
            try {
                auto model = build(spec, static_cast<uint64_t>(cfg.seeds.front()));
                complexity =
                    cfg.profile_timing
                        ? profile(*model, spec.input_dims(), batch, {}, spec.display_name())
                        : profile_static(*model, spec.input_dims(), batch,
                                         spec.display_name());
            } catch (const Error& e) {
                complexity.model_name = spec.display_name() + " (profile failed: " +
                                        e.what() + ")";
            }
            ExperimentResult res =
                aggregate_units(stage_name, spec.display_name(), batch, cfg.train,
                                cfg.seeds, std::move(units), complexity);
            const fs::path apath = cfg.results_dir / stage_name / spec.display_name() /
                                   ("batch" + std::to_string(batch)) / "aggregate.json";
            ensure_dir(apath.parent_path());
            atomic_write(apath, experiment_to_json(res).dump(2) + "\n");
            out.results.push_back(std::move(res));
        }
    }
    return out;
}

}  // namespace gbmbench::harness
