// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Cohort scanning, manifest determinism, stage selection, and the phantom
// generator's planted ground truth.

#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <string>

#include "gbmbench/cohort.hpp"

namespace fs = std::filesystem;
using namespace gbmbench;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("gbmbench_cohort_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

PhantomConfig small_phantom(int64_t n, uint64_t seed) {
    PhantomConfig cfg;
    cfg.n_patients = n;
    cfg.seed = seed;
    cfg.dim = 24;  // small volumes keep unit tests fast
    return cfg;
}

}  // namespace

TEST(Cohort, PhantomClassCountsFollowDeclaredRatios) {
    const auto c30 = cohort_detail::phantom_class_counts(30);
    EXPECT_EQ(c30, (std::array<int64_t, 3>{15, 10, 5}));
    for (int64_t n = 1; n <= 60; ++n) {
        const auto c = cohort_detail::phantom_class_counts(n);
        EXPECT_EQ(c[0] + c[1] + c[2], n);
        // Largest-remainder keeps each count within 1 of the exact share.
        EXPECT_LE(std::abs(c[0] - n / 2.0), 1.0);
        EXPECT_LE(std::abs(c[1] - n / 3.0), 1.0);
        EXPECT_LE(std::abs(c[2] - n / 6.0), 1.0);
    }
}

TEST(Cohort, PhantomIsDeterministicPerSeed) {
    const fs::path a = temp_dir("det_a"), b = temp_dir("det_b"), c = temp_dir("det_c");
    const CohortManifest ma = generate_phantom_cohort(small_phantom(4, 9), a);
    const CohortManifest mb = generate_phantom_cohort(small_phantom(4, 9), b);
    const CohortManifest mc = generate_phantom_cohort(small_phantom(4, 10), c);

    EXPECT_EQ(read_text_file(a / "visits.csv"), read_text_file(b / "visits.csv"));
    EXPECT_EQ(ma.content_hash, mb.content_hash);
    // Volumes are byte-identical too, not merely metadata-identical.
    EXPECT_EQ(read_text_file(a / "sub-001" / "1" / "ser-a.nii.gz"),
              read_text_file(b / "sub-001" / "1" / "ser-a.nii.gz"));
    // A different seed reshuffles class assignment (visit labels differ).
    EXPECT_NE(read_text_file(a / "visits.csv"), read_text_file(c / "visits.csv"));
}

TEST(Cohort, ScanIsDeterministicAndRelocatable) {
    const fs::path root = temp_dir("scan");
    const CohortManifest m = generate_phantom_cohort(small_phantom(4, 3), root);
    EXPECT_EQ(m.series.size(), 4u * 3u * 2u);
    EXPECT_EQ(m.visits.size(), 4u * 3u);
    EXPECT_TRUE(m.warnings.empty());

    const CohortManifest again = scan_cohort(root);
    EXPECT_EQ(again.content_hash, m.content_hash);

    // Copying the tree elsewhere preserves the hash (file_ref is not hashed).
    const fs::path copy = temp_dir("scan_copy");
    fs::remove_all(copy);
    fs::copy(root, copy, fs::copy_options::recursive);
    EXPECT_EQ(scan_cohort(copy).content_hash, m.content_hash);

    // Manifest ordering: sorted by (patient_id, timepoint, series_id).
    for (size_t i = 1; i < m.series.size(); ++i) {
        const auto& p = m.series[i - 1];
        const auto& q = m.series[i];
        EXPECT_LT(std::tie(p.patient_id, p.timepoint, p.series_id),
                  std::tie(q.patient_id, q.timepoint, q.series_id));
    }

    // JSON round trip.
    save_manifest(root / "manifest.json", m);
    const CohortManifest loaded = load_manifest(root / "manifest.json");
    EXPECT_EQ(loaded.content_hash, m.content_hash);
    ASSERT_EQ(loaded.series.size(), m.series.size());
    EXPECT_EQ(loaded.series[5].series_id, m.series[5].series_id);
    EXPECT_EQ(loaded.series[5].dims, m.series[5].dims);
    EXPECT_EQ(loaded.visits.size(), m.visits.size());
}

TEST(Cohort, ScanErrorsAndWarnings) {
    // Missing visits file.
    const fs::path bare = temp_dir("bare");
    EXPECT_THROW(scan_cohort(bare), MissingVisitFile);

    // Valid empty cohort: header-only visits.csv, no series.
    atomic_write(bare / "visits.csv", "patient_id,timepoint,days_from_rt,visit_label\n");
    const CohortManifest empty = scan_cohort(bare);
    EXPECT_TRUE(empty.series.empty());
    EXPECT_TRUE(empty.visits.empty());

    // Malformed rows carry their line number.
    try {
        parse_visits_csv("patient_id,timepoint,days_from_rt,visit_label\n"
                         "sub-001,1,20,stable\n"
                         "sub-001,2,40,improving\n");
        FAIL() << "expected MalformedRow";
    } catch (const MalformedRow& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
    EXPECT_THROW(parse_visits_csv("patient_id,timepoint\nsub-001,1\n"), MalformedRow);
    EXPECT_THROW(parse_visits_csv("patient_id,timepoint,days_from_rt,visit_label\n"
                                  "sub-001,x,20,stable\n"),
                 MalformedRow);

    // Ordering invariants.
    EXPECT_THROW(validate_visit_order(parse_visits_csv(
                     "patient_id,timepoint,days_from_rt,visit_label\n"
                     "sub-001,2,40,stable\nsub-001,1,20,stable\n")),
                 MalformedRow);
    EXPECT_THROW(validate_visit_order(parse_visits_csv(
                     "patient_id,timepoint,days_from_rt,visit_label\n"
                     "sub-001,1,40,stable\nsub-001,2,20,stable\n")),
                 MalformedRow);

    // Orphan series: volume present, visit row absent -> warning, not error.
    const fs::path orph = temp_dir("orphan");
    generate_phantom_cohort(small_phantom(2, 5), orph);
    fs::create_directories(orph / "sub-099" / "1");
    fs::copy_file(orph / "sub-001" / "1" / "ser-a.nii.gz",
                  orph / "sub-099" / "1" / "ser-a.nii.gz");
    const CohortManifest m = scan_cohort(orph);
    ASSERT_EQ(m.warnings.size(), 1u);
    EXPECT_NE(m.warnings[0].find("orphan"), std::string::npos);
    EXPECT_NE(m.warnings[0].find("sub-099"), std::string::npos);
}

TEST(Cohort, PhantomConsolidatesToPlantedLabels) {
    const fs::path root = temp_dir("planted");
    const CohortManifest m = generate_phantom_cohort(small_phantom(12, 42), root);
    const auto labels = consolidate_cohort(m);
    const auto plan = phantom_assignments(12, 42);

    ASSERT_EQ(labels.size(), 12u);
    std::array<int64_t, 3> realized{};
    int distants = 0;
    for (const auto& [pid, planted] : plan) {
        ASSERT_TRUE(labels.count(pid)) << pid;
        EXPECT_EQ(labels.at(pid).value, planted) << pid;
        ++realized[static_cast<size_t>(labels.at(pid).value)];
        if (labels.at(pid).rule_fired == RuleFired::DISTANT) ++distants;
    }
    EXPECT_EQ(realized, cohort_detail::phantom_class_counts(12));
    // Every fifth progression patient is planted as a distant progression.
    EXPECT_EQ(distants, (realized[0] + 4) / 5);
}

TEST(Cohort, SelectStagePicksOnePerPatient) {
    const fs::path root = temp_dir("stage");
    const CohortManifest m = generate_phantom_cohort(small_phantom(5, 17), root);
    const auto labels = consolidate_cohort(m);

    const StageCohort first = select_stage(m, Stage::FIRST_FOLLOWUP, labels);
    EXPECT_EQ(first.samples.size(), 5u);
    EXPECT_TRUE(first.excluded.empty());
    std::set<std::string> files;
    for (const auto& s : first.samples) {
        EXPECT_EQ(s.series.timepoint, 1);
        EXPECT_EQ(s.series.series_id, "ser-a");  // lexicographic tie-break
        EXPECT_TRUE(files.insert(s.series.file_ref).second) << "volume paired twice";
    }

    // Stage exclusivity: the two stages reference distinct volumes.
    const StageCohort second = select_stage(m, Stage::SECOND_FOLLOWUP, labels);
    for (const auto& s : second.samples) {
        EXPECT_EQ(s.series.timepoint, 2);
        EXPECT_FALSE(files.count(s.series.file_ref));
    }

    // A QC selection map gates eligibility: drop two patients at tp1.
    SeriesSelection sel;
    for (const auto& s : first.samples)
        if (s.patient_id != "sub-002" && s.patient_id != "sub-004")
            sel[{s.patient_id, 1}] = "ser-b";
    const StageCohort gated = select_stage(m, Stage::FIRST_FOLLOWUP, labels, &sel);
    EXPECT_EQ(gated.samples.size(), 3u);
    EXPECT_EQ(gated.excluded.size(), 2u);
    for (const auto& s : gated.samples) EXPECT_EQ(s.series.series_id, "ser-b");
    for (const auto& [pid, why] : gated.excluded)
        EXPECT_NE(why.find("no QC-passing"), std::string::npos) << pid << ": " << why;

    // Nothing selected at the stage -> EmptyStage.
    SeriesSelection none;
    EXPECT_THROW(select_stage(m, Stage::SECOND_FOLLOWUP, labels, &none), EmptyStage);

    // Missing consolidated label violates the precondition.
    std::map<std::string, ConsolidatedLabel> partial(labels);
    partial.erase("sub-003");
    EXPECT_THROW(select_stage(m, Stage::FIRST_FOLLOWUP, partial), Error);
}

TEST(Cohort, PhantomAssignmentsAreStablePerSeed) {
    const auto a = phantom_assignments(30, 42);
    const auto b = phantom_assignments(30, 42);
    ASSERT_EQ(a, b);
    std::array<int64_t, 3> counts{};
    for (const auto& [pid, cls] : a) ++counts[static_cast<size_t>(cls)];
    EXPECT_EQ(counts, (std::array<int64_t, 3>{15, 10, 5}));
}
