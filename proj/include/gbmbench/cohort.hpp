// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Cohort ingestion: scans a NIfTI tree plus visits.csv into a deterministic
// manifest, consolidates per-patient labels, selects stage cohorts, and
// generates fully seeded phantom cohorts with planted class structure.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbmbench/common.hpp"
#include "gbmbench/csv.hpp"
#include "gbmbench/labels.hpp"
#include "gbmbench/nifti.hpp"
#include "gbmbench/rng.hpp"
#include "gbmbench/sha256.hpp"
#include "gbmbench/volume.hpp"

namespace gbmbench {

struct MissingVisitFile : Error {
    explicit MissingVisitFile(const std::string& path)
        : Error("missing visits file: " + path) {}
};

struct MalformedRow : Error {
    using Error::Error;
};

struct EmptyStage : Error {
    using Error::Error;
};

struct SeriesMeta {
    std::string patient_id;
    int64_t timepoint = 0;
    std::string series_id;
    std::array<double, 3> voxel_spacing{1.0, 1.0, 1.0};  // (x, y, z) mm
    double slice_thickness = 1.0;                        // mm
    std::array<int64_t, 3> dims{0, 0, 0};                // (nx, ny, nz)
    std::string file_ref;                                // path to the NIfTI volume
};

struct VisitRecord {
    std::string patient_id;
    int64_t timepoint = 0;
    int64_t days_from_rt = 0;
    VisitLabel visit_label = VisitLabel::STABLE;
};

struct CohortManifest {
    std::vector<SeriesMeta> series;   // sorted by (patient_id, timepoint, series_id)
    std::vector<VisitRecord> visits;  // sorted by (patient_id, timepoint)
    std::string created_from;
    std::string content_hash;
    std::vector<std::string> warnings;  // e.g. orphan series (non-fatal)
};

enum class Stage { FIRST_FOLLOWUP, SECOND_FOLLOWUP };

inline int64_t timepoint_of(Stage s) { return s == Stage::FIRST_FOLLOWUP ? 1 : 2; }

inline std::string to_string(Stage s) {
    return s == Stage::FIRST_FOLLOWUP ? "first_followup" : "second_followup";
}

inline Stage parse_stage(const std::string& s) {
    if (s == "first_followup" || s == "first" || s == "1") return Stage::FIRST_FOLLOWUP;
    if (s == "second_followup" || s == "second" || s == "2") return Stage::SECOND_FOLLOWUP;
    throw Error("unknown stage '" + s + "' (expected first_followup or second_followup)");
}

struct StageSample {
    std::string patient_id;
    SeriesMeta series;  // the selected volume at the stage timepoint
    ConsolidatedLabel label;
};

struct StageCohort {
    Stage stage = Stage::FIRST_FOLLOWUP;
    std::vector<StageSample> samples;                          // at most one per patient
    std::vector<std::pair<std::string, std::string>> excluded; // (patient_id, reason)
};

/// QC's output: the winning series per (patient_id, timepoint).
using SeriesSelection = std::map<std::pair<std::string, int64_t>, std::string>;

namespace cohort_detail {

inline std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

/// Canonical serialization of the sorted entries. Deliberately excludes
/// created_from and file_ref so relocated copies of the same tree hash equal.
inline std::string canonical_serialization(const CohortManifest& m) {
    std::string s;
    for (const auto& e : m.series) {
        s += "S|" + e.patient_id + "|" + std::to_string(e.timepoint) + "|" + e.series_id;
        for (double sp : e.voxel_spacing) s += "|" + fmt_real(sp);
        s += "|" + fmt_real(e.slice_thickness);
        for (int64_t d : e.dims) s += "|" + std::to_string(d);
        s += "\n";
    }
    for (const auto& v : m.visits) {
        s += "V|" + v.patient_id + "|" + std::to_string(v.timepoint) + "|" +
             std::to_string(v.days_from_rt) + "|" + to_string(v.visit_label) + "\n";
    }
    return s;
}

inline void sort_manifest(CohortManifest& m) {
    std::sort(m.series.begin(), m.series.end(), [](const SeriesMeta& a, const SeriesMeta& b) {
        return std::tie(a.patient_id, a.timepoint, a.series_id) <
               std::tie(b.patient_id, b.timepoint, b.series_id);
    });
    std::sort(m.visits.begin(), m.visits.end(), [](const VisitRecord& a, const VisitRecord& b) {
        return std::tie(a.patient_id, a.timepoint) < std::tie(b.patient_id, b.timepoint);
    });
}

inline int64_t parse_int_field(const std::string& v, const std::string& what, int lineno) {
    try {
        size_t used = 0;
        const int64_t x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw MalformedRow("visits.csv line " + std::to_string(lineno) + ": bad " + what + " '" +
                           v + "'");
    }
}

}  // namespace cohort_detail

inline std::vector<VisitRecord> parse_visits_csv(const std::string& text) {
    const CsvTable t = parse_csv(text);
    const std::vector<std::string> want = {"patient_id", "timepoint", "days_from_rt",
                                           "visit_label"};
    if (t.header != want) throw MalformedRow("visits.csv line 1: bad header");
    std::vector<VisitRecord> out;
    for (size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        const int lineno = static_cast<int>(i) + 2;  // 1-based, after header
        if (r.size() != 4)
            throw MalformedRow("visits.csv line " + std::to_string(lineno) + ": expected 4 fields, got " +
                               std::to_string(r.size()));
        VisitRecord v;
        v.patient_id = r[0];
        if (v.patient_id.empty())
            throw MalformedRow("visits.csv line " + std::to_string(lineno) + ": empty patient_id");
        v.timepoint = cohort_detail::parse_int_field(r[1], "timepoint", lineno);
        v.days_from_rt = cohort_detail::parse_int_field(r[2], "days_from_rt", lineno);
        try {
            v.visit_label = parse_visit_label(r[3]);
        } catch (const Error&) {
            throw MalformedRow("visits.csv line " + std::to_string(lineno) + ": bad visit_label '" +
                               r[3] + "'");
        }
        out.push_back(std::move(v));
    }
    return out;
}

/// Validates the per-patient ordering invariants: timepoints strictly
/// increasing, days_from_rt nondecreasing (in file order per patient).
inline void validate_visit_order(const std::vector<VisitRecord>& visits) {
    std::map<std::string, const VisitRecord*> last;
    for (const auto& v : visits) {
        auto it = last.find(v.patient_id);
        if (it != last.end()) {
            if (v.timepoint <= it->second->timepoint)
                throw MalformedRow("visits.csv: patient " + v.patient_id +
                                   ": timepoints not strictly increasing");
            if (v.days_from_rt < it->second->days_from_rt)
                throw MalformedRow("visits.csv: patient " + v.patient_id +
                                   ": days_from_rt decreasing");
        }
        last[v.patient_id] = &v;
    }
}

/// Scans `<root>/<patient_id>/<timepoint>/<series_id>.nii.gz` plus
/// `<root>/visits.csv` into a deterministic, content-hashed manifest.
/// A series without a matching visit row becomes a warning, never an error.
inline CohortManifest scan_cohort(const fs::path& root) {
    if (!fs::exists(root)) throw IOFailure("cohort root does not exist: " + root.string());
    const fs::path visits_path = root / "visits.csv";
    if (!fs::exists(visits_path)) throw MissingVisitFile(visits_path.string());

    CohortManifest m;
    m.created_from = root.string();
    m.visits = parse_visits_csv(read_text_file(visits_path));
    validate_visit_order(m.visits);

    for (const auto& pdir : fs::directory_iterator(root)) {
        if (!pdir.is_directory()) continue;
        const std::string pid = pdir.path().filename().string();
        for (const auto& tdir : fs::directory_iterator(pdir.path())) {
            if (!tdir.is_directory()) continue;
            const std::string tname = tdir.path().filename().string();
            int64_t tp = 0;
            try {
                size_t used = 0;
                tp = std::stoll(tname, &used);
                if (used != tname.size()) continue;  // non-timepoint directory
            } catch (const std::exception&) {
                continue;
            }
            for (const auto& f : fs::directory_iterator(tdir.path())) {
                if (!f.is_regular_file()) continue;
                std::string name = f.path().filename().string();
                std::string sid;
                if (name.size() > 7 && name.substr(name.size() - 7) == ".nii.gz")
                    sid = name.substr(0, name.size() - 7);
                else if (name.size() > 4 && name.substr(name.size() - 4) == ".nii")
                    sid = name.substr(0, name.size() - 4);
                else
                    continue;
                const NiftiHeaderInfo info = read_nifti_header(f.path());
                SeriesMeta s;
                s.patient_id = pid;
                s.timepoint = tp;
                s.series_id = sid;
                s.voxel_spacing = info.spacing;
                s.slice_thickness = info.spacing[2];
                s.dims = {info.nx, info.ny, info.nz};
                s.file_ref = f.path().string();
                m.series.push_back(std::move(s));
            }
        }
    }
    cohort_detail::sort_manifest(m);

    // Orphan detection: volume without a matching (patient, timepoint) visit.
    std::set<std::pair<std::string, int64_t>> visit_keys;
    for (const auto& v : m.visits) visit_keys.insert({v.patient_id, v.timepoint});
    for (const auto& s : m.series)
        if (!visit_keys.count({s.patient_id, s.timepoint}))
            m.warnings.push_back("orphan series: " + s.patient_id + "/tp" +
                                 std::to_string(s.timepoint) + "/" + s.series_id +
                                 " has no visit row");

    m.content_hash = sha256_hex(cohort_detail::canonical_serialization(m));
    return m;
}

inline nlohmann::json manifest_to_json(const CohortManifest& m) {
    nlohmann::json j;
    j["created_from"] = m.created_from;
    j["content_hash"] = m.content_hash;
    j["series"] = nlohmann::json::array();
    for (const auto& s : m.series) {
        j["series"].push_back({{"patient_id", s.patient_id},
                               {"timepoint", s.timepoint},
                               {"series_id", s.series_id},
                               {"voxel_spacing", s.voxel_spacing},
                               {"slice_thickness", s.slice_thickness},
                               {"dims", s.dims},
                               {"file_ref", s.file_ref}});
    }
    j["visits"] = nlohmann::json::array();
    for (const auto& v : m.visits) {
        j["visits"].push_back({{"patient_id", v.patient_id},
                               {"timepoint", v.timepoint},
                               {"days_from_rt", v.days_from_rt},
                               {"visit_label", to_string(v.visit_label)}});
    }
    j["warnings"] = m.warnings;
    return j;
}

inline CohortManifest manifest_from_json(const nlohmann::json& j) {
    CohortManifest m;
    m.created_from = j.at("created_from").get<std::string>();
    m.content_hash = j.at("content_hash").get<std::string>();
    for (const auto& e : j.at("series")) {
        SeriesMeta s;
        s.patient_id = e.at("patient_id").get<std::string>();
        s.timepoint = e.at("timepoint").get<int64_t>();
        s.series_id = e.at("series_id").get<std::string>();
        s.voxel_spacing = e.at("voxel_spacing").get<std::array<double, 3>>();
        s.slice_thickness = e.at("slice_thickness").get<double>();
        s.dims = e.at("dims").get<std::array<int64_t, 3>>();
        s.file_ref = e.at("file_ref").get<std::string>();
        m.series.push_back(std::move(s));
    }
    for (const auto& e : j.at("visits")) {
        VisitRecord v;
        v.patient_id = e.at("patient_id").get<std::string>();
        v.timepoint = e.at("timepoint").get<int64_t>();
        v.days_from_rt = e.at("days_from_rt").get<int64_t>();
        v.visit_label = parse_visit_label(e.at("visit_label").get<std::string>());
        m.visits.push_back(std::move(v));
    }
    if (j.contains("warnings")) m.warnings = j.at("warnings").get<std::vector<std::string>>();
    return m;
}

inline void save_manifest(const fs::path& path, const CohortManifest& m) {
    ensure_dir(path.parent_path());
    atomic_write(path, manifest_to_json(m).dump(2) + "\n");
}

inline CohortManifest load_manifest(const fs::path& path) {
    return manifest_from_json(nlohmann::json::parse(read_text_file(path)));
}

/// Time-ordered visit sequences per patient (input to consolidation).
inline std::map<std::string, std::vector<VisitAssessment>> visits_by_patient(
    const CohortManifest& m) {
    std::map<std::string, std::vector<VisitAssessment>> out;
    for (const auto& v : m.visits)
        out[v.patient_id].push_back({v.timepoint, v.visit_label});
    for (auto& [pid, seq] : out)
        std::sort(seq.begin(), seq.end(),
                  [](const VisitAssessment& a, const VisitAssessment& b) {
                      return a.timepoint < b.timepoint;
                  });
    return out;
}

/// Consolidates every patient's visit sequence into a final label.
inline std::map<std::string, ConsolidatedLabel> consolidate_cohort(const CohortManifest& m) {
    std::map<std::string, ConsolidatedLabel> out;
    for (const auto& [pid, seq] : visits_by_patient(m)) out[pid] = consolidate(seq);
    return out;
}

/// Builds the stage cohort: one sample per patient owning a QC-selected
/// volume at the stage timepoint. `selection` is QC's winner map; when null,
/// every series is eligible and the lexicographically smallest series wins.
/// Patients lacking the timepoint (or whose series were all rejected) are
/// excluded and logged on the returned cohort.
inline StageCohort select_stage(const CohortManifest& m, Stage stage,
                                const std::map<std::string, ConsolidatedLabel>& labels,
                                const SeriesSelection* selection = nullptr) {
    const int64_t tp = timepoint_of(stage);
    StageCohort out;
    out.stage = stage;

    std::set<std::string> patients;
    for (const auto& s : m.series) patients.insert(s.patient_id);
    for (const auto& v : m.visits) patients.insert(v.patient_id);

    for (const std::string& pid : patients) {
        const SeriesMeta* pick = nullptr;
        bool has_tp = false;
        for (const auto& s : m.series) {
            if (s.patient_id != pid || s.timepoint != tp) continue;
            has_tp = true;
            if (selection) {
                auto it = selection->find({pid, tp});
                if (it == selection->end() || it->second != s.series_id) continue;
            }
            if (!pick || s.series_id < pick->series_id) pick = &s;
        }
        if (!pick) {
            out.excluded.emplace_back(pid, has_tp ? "no QC-passing series at timepoint " +
                                                        std::to_string(tp)
                                                  : "no series at timepoint " + std::to_string(tp));
            continue;
        }
        auto lit = labels.find(pid);
        if (lit == labels.end())
            throw Error("select_stage: no consolidated label for patient " + pid);
        out.samples.push_back({pid, *pick, lit->second});
    }
    if (out.samples.empty())
        throw EmptyStage("no patient has a usable volume at timepoint " + std::to_string(tp));
    return out;
}

// ---------------------------------------------------------------------------
// Phantom cohort generator
// ---------------------------------------------------------------------------

struct PhantomConfig {
    int64_t n_patients = 30;
    uint64_t seed = 42;
    int64_t dim = 64;  // cubic volume edge
};

namespace cohort_detail {

/// Largest-remainder apportionment of n into the declared class ratios
/// (Progression 1/2, Pseudoprogression 1/3, Stable 1/6).
inline std::array<int64_t, 3> phantom_class_counts(int64_t n) {
    const double ratios[3] = {0.5, 1.0 / 3.0, 1.0 / 6.0};
    std::array<int64_t, 3> counts{};
    double rema[3];
    int64_t used = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = ratios[i] * static_cast<double>(n);
        counts[i] = static_cast<int64_t>(exact);
        rema[i] = exact - static_cast<double>(counts[i]);
        used += counts[i];
    }
    while (used < n) {
        int best = 0;
        for (int i = 1; i < 3; ++i)
            if (rema[i] > rema[best]) best = i;
        ++counts[best];
        rema[best] = -1.0;
        ++used;
    }
    return counts;
}

/// Smooth per-voxel pseudo-texture in [-1, 1] (sum of three fixed sinusoids).
inline float phantom_texture(double x, double y, double z, double phase) {
    return static_cast<float>(
        (std::sin(0.37 * x + phase) + std::sin(0.29 * y + 1.7 * phase) +
         std::sin(0.23 * z + 0.6 * phase)) /
        3.0);
}

/// 3-pass separable box blur (radius 1) used to make the "worse" series.
inline void box_blur_inplace(Volume& v) {
    const int64_t nz = v.nz(), ny = v.ny(), nx = v.nx();
    Tensor tmp = v.data;
    auto pass = [&](Tensor& src, Tensor& dst, int axis) {
        const int64_t n[3] = {nz, ny, nx};
        for (int64_t z = 0; z < nz; ++z)
            for (int64_t y = 0; y < ny; ++y)
                for (int64_t x = 0; x < nx; ++x) {
                    int64_t c[3] = {z, y, x};
                    float acc = 0.0f;
                    int cnt = 0;
                    for (int64_t d = -1; d <= 1; ++d) {
                        int64_t q[3] = {c[0], c[1], c[2]};
                        q[axis] += d;
                        if (q[axis] < 0 || q[axis] >= n[axis]) continue;
                        acc += src.data()[(q[0] * ny + q[1]) * nx + q[2]];
                        ++cnt;
                    }
                    dst.data()[(z * ny + y) * nx + x] = acc / static_cast<float>(cnt);
                }
    };
    pass(v.data, tmp, 0);
    pass(tmp, v.data, 1);
    pass(v.data, tmp, 2);
    v.data = tmp;
}

}  // namespace cohort_detail

/// The phantom's patient/class plan: ids and planted consolidated labels,
/// before any volume is written. Shared by the generator and by tests that
/// need many random cohorts without paying for voxel output.
inline std::vector<std::pair<std::string, FinalLabel>> phantom_assignments(int64_t n_patients,
                                                                           uint64_t seed) {
    if (n_patients < 1) throw Error("phantom_assignments: n_patients must be >= 1");
    const auto counts = cohort_detail::phantom_class_counts(n_patients);
    std::vector<FinalLabel> klass;
    for (int c = 0; c < 3; ++c)
        for (int64_t i = 0; i < counts[static_cast<size_t>(c)]; ++i)
            klass.push_back(static_cast<FinalLabel>(c));
    Rng assign = Rng(seed).fork("assign");
    assign.shuffle(klass);
    std::vector<std::pair<std::string, FinalLabel>> out;
    for (int64_t idx = 0; idx < n_patients; ++idx) {
        char pid_buf[16];
        std::snprintf(pid_buf, sizeof(pid_buf), "sub-%03lld", static_cast<long long>(idx + 1));
        out.emplace_back(pid_buf, klass[static_cast<size_t>(idx)]);
    }
    return out;
}

/// Writes a seeded synthetic cohort: n patients x 3 timepoints x 2 series of
/// cubic volumes with class-dependent lesions, plus visits.csv whose rows
/// consolidate to the planted ground truth.
///
/// Planted structure (timepoints 0 = pre-RT, 1, 2):
///   - Progression: solid bright blob that grows across timepoints; every
///     fifth progression patient carries a distant lesion at timepoint 1.
///   - Pseudoprogression: bright rim (hollow shell) that shrinks.
///   - Stable: static low-contrast textured patch.
/// Series "ser-a" is sharp; "ser-b" is blurred (clarity ranking fodder).
/// Geometry faults: every (idx % 4 == 1) patient's tp1 "ser-b" gets 7 mm
/// slices; every (idx % 6 == 5) patient's tp2 series (both) get 8 mm slices,
/// so those patients drop out of the second follow-up at QC.
inline CohortManifest generate_phantom_cohort(const PhantomConfig& cfg, const fs::path& out) {
    if (cfg.n_patients < 1) throw Error("generate_phantom_cohort: n_patients must be >= 1");
    if (cfg.dim < 16) throw Error("generate_phantom_cohort: dim must be >= 16");
    ensure_dir(out);

    const int64_t n = cfg.n_patients;
    const int64_t D = cfg.dim;
    Rng root_rng(cfg.seed);
    const auto assignments = phantom_assignments(n, cfg.seed);

    CsvTable visits;
    visits.header = {"patient_id", "timepoint", "days_from_rt", "visit_label"};
    const int64_t days[3] = {-14, 25, 75};

    std::vector<int64_t> class_seen(3, 0);
    for (int64_t idx = 0; idx < n; ++idx) {
        const std::string& pid = assignments[static_cast<size_t>(idx)].first;
        const FinalLabel cls = assignments[static_cast<size_t>(idx)].second;
        const int64_t nth = class_seen[static_cast<size_t>(cls)]++;

        // Visit template per class (consolidates to the planted label).
        std::vector<std::string> vl;
        switch (cls) {
            case FinalLabel::PROGRESSION:
                vl = (nth % 5 == 0) ? std::vector<std::string>{"stable", "distant_progression",
                                                               "progression"}
                                    : std::vector<std::string>{"stable", "progression",
                                                               "progression"};
                break;
            case FinalLabel::PSEUDOPROGRESSION:
                vl = {"stable", "pseudoprogression", "stable"};
                break;
            default: vl = {"stable", "stable", "response"}; break;
        }
        for (int64_t tp = 0; tp < 3; ++tp)
            visits.rows.push_back({pid, std::to_string(tp), std::to_string(days[tp]),
                                   vl[static_cast<size_t>(tp)]});

        // Patient-deterministic geometry: lesion offset inside the brain.
        Rng prng = root_rng.fork(pid);
        const double cx = D / 2.0 + prng.uniform(-6.0, 6.0) * (D / 64.0);
        const double cy = D / 2.0 + prng.uniform(-6.0, 6.0) * (D / 64.0);
        const double cz = D / 2.0 + prng.uniform(-5.0, 5.0) * (D / 64.0);
        const double phase = prng.uniform(0.0, 6.28);

        for (int64_t tp = 0; tp < 3; ++tp) {
            Volume base = Volume::zeros(D, D, D);
            Rng vrng = prng.fork("tp" + std::to_string(tp));
            // Brain: smooth bright ellipsoid over a dark background.
            const double ax = 0.82 * D / 2, ay = 0.76 * D / 2, az = 0.70 * D / 2;
            for (int64_t z = 0; z < D; ++z)
                for (int64_t y = 0; y < D; ++y)
                    for (int64_t x = 0; x < D; ++x) {
                        const double ex = (x - D / 2.0) / ax, ey = (y - D / 2.0) / ay,
                                     ez = (z - D / 2.0) / az;
                        const double r2 = ex * ex + ey * ey + ez * ez;
                        float v = 0.0f;
                        if (r2 <= 1.0) {
                            v = 200.0f +
                                30.0f * cohort_detail::phantom_texture(
                                            static_cast<double>(x), static_cast<double>(y),
                                            static_cast<double>(z), phase);
                        }
                        base.at(z, y, x) = v;
                    }

            // Class-dependent lesion, scaled with the volume edge. Painting
            // is confined to the lesion's bounding box.
            const double ls = D / 64.0;
            auto for_box = [&](double r, auto&& fn) {
                const auto clamp = [&](double v) {
                    return std::min(D - 1.0, std::max(0.0, v));
                };
                const int64_t z0 = static_cast<int64_t>(clamp(cz - r)),
                              z1 = static_cast<int64_t>(clamp(cz + r)),
                              y0 = static_cast<int64_t>(clamp(cy - r)),
                              y1 = static_cast<int64_t>(clamp(cy + r)),
                              x0 = static_cast<int64_t>(clamp(cx - r)),
                              x1 = static_cast<int64_t>(clamp(cx + r));
                for (int64_t z = z0; z <= z1; ++z)
                    for (int64_t y = y0; y <= y1; ++y)
                        for (int64_t x = x0; x <= x1; ++x) {
                            const double dx = x - cx, dy = y - cy, dz = z - cz;
                            fn(z, y, x, std::sqrt(dx * dx + dy * dy + dz * dz));
                        }
            };
            switch (cls) {
                case FinalLabel::PROGRESSION: {
                    const double r[3] = {3.0, 6.5, 9.5};
                    for_box(r[tp] * ls, [&](int64_t z, int64_t y, int64_t x, double d) {
                        if (d <= r[tp] * ls && base.at(z, y, x) > 0.0f)
                            base.at(z, y, x) += 240.0f;
                    });
                    break;
                }
                case FinalLabel::PSEUDOPROGRESSION: {
                    const double r_out[3] = {9.0, 7.0, 5.0};
                    const double ro = r_out[tp] * ls, ri = (r_out[tp] - 2.5) * ls;
                    for_box(ro, [&](int64_t z, int64_t y, int64_t x, double d) {
                        if (d <= ro && d >= ri && base.at(z, y, x) > 0.0f)
                            base.at(z, y, x) += 240.0f;
                    });
                    break;
                }
                default: {
                    // Static mild texture patch, identical radius every visit.
                    for_box(6.0 * ls, [&](int64_t z, int64_t y, int64_t x, double d) {
                        if (d <= 6.0 * ls && base.at(z, y, x) > 0.0f)
                            base.at(z, y, x) += 40.0f * cohort_detail::phantom_texture(
                                                            static_cast<double>(x) * 2.1,
                                                            static_cast<double>(y) * 2.1,
                                                            static_cast<double>(z) * 2.1, phase);
                    });
                    break;
                }
            }

            // Acquisition noise (same field for both series of this visit).
            for (int64_t i = 0; i < base.data.numel(); ++i)
                base.data.data()[i] += static_cast<float>(vrng.normal(0.0, 4.0));

            for (const std::string sid : {std::string("ser-a"), std::string("ser-b")}) {
                Volume v = base;
                if (sid == "ser-b") cohort_detail::box_blur_inplace(v);
                v.spacing = {1.0, 1.0, 1.0};
                // Planted geometry faults (see doc comment).
                if (sid == "ser-b" && tp == 1 && idx % 4 == 1) v.spacing[2] = 7.0;
                if (tp == 2 && idx % 6 == 5) v.spacing[2] = 8.0;
                const fs::path p = out / pid / std::to_string(tp) / (sid + ".nii.gz");
                write_nifti(p, v);
            }
        }
    }
    write_csv(out / "visits.csv", visits);
    return scan_cohort(out);
}

}  // namespace gbmbench
