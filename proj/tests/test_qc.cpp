// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Geometry QC against a brute-force predicate oracle, clarity-score
// properties (degeneracy, blur monotonicity, scale invariance), selection
// tie-breaking against exhaustive argmax, and the audit CSV contract.

#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <string>

#include "gbmbench/cohort.hpp"
#include "gbmbench/imgproc.hpp"
#include "gbmbench/png.hpp"
#include "gbmbench/qc.hpp"
#include "gbmbench/rng.hpp"

namespace fs = std::filesystem;
using namespace gbmbench;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("gbmbench_qc_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

/// Independent re-statement of the geometry predicate, used as an oracle.
bool oracle_geometry_pass(const SeriesMeta& m, const GeometryThresholds& t) {
    const double sx = m.voxel_spacing[0], sy = m.voxel_spacing[1], sz = m.voxel_spacing[2];
    const double hi = std::max(sx, std::max(sy, sz));
    const double lo = std::min(sx, std::min(sy, sz));
    const bool ok_inplane = std::max(sx, sy) <= t.max_inplane_spacing;
    const bool ok_thick = m.slice_thickness <= t.max_slice_thickness;
    const bool ok_aniso = hi / lo <= t.max_anisotropy_ratio;
    const bool ok_slices = m.dims[2] >= t.min_slices;
    return ok_inplane && ok_thick && ok_aniso && ok_slices;
}

Volume smooth_random_volume(int64_t d, uint64_t seed) {
    Volume v = Volume::zeros(d, d, d);
    Rng rng(seed);
    for (int64_t z = 0; z < d; ++z)
        for (int64_t y = 0; y < d; ++y)
            for (int64_t x = 0; x < d; ++x) {
                const double r = std::sqrt(static_cast<double>((x - d / 2) * (x - d / 2) +
                                                               (y - d / 2) * (y - d / 2) +
                                                               (z - d / 2) * (z - d / 2)));
                v.at(z, y, x) = r < 0.4 * static_cast<double>(d)
                                    ? 100.0f + static_cast<float>(rng.normal(0.0, 12.0))
                                    : 0.0f;
            }
    return v;
}

}  // namespace

TEST(Qc, GeometryMatchesOracleOnRandomMetas) {
    Rng rng(123);
    int fails = 0;
    for (int i = 0; i < 1000; ++i) {
        SeriesMeta m;
        m.voxel_spacing = {rng.uniform(0.4, 3.0), rng.uniform(0.4, 3.0), rng.uniform(0.4, 9.0)};
        m.slice_thickness = m.voxel_spacing[2];
        m.dims = {64, 64, rng.randint(5, 80)};
        GeometryThresholds t;
        t.max_inplane_spacing = rng.uniform(0.5, 3.0);
        t.max_slice_thickness = rng.uniform(1.0, 9.0);
        t.max_anisotropy_ratio = rng.uniform(1.0, 8.0);
        t.min_slices = rng.randint(1, 60);
        const QCVerdict v = check_geometry(m, t);
        EXPECT_EQ(v.geometry_pass, oracle_geometry_pass(m, t));
        EXPECT_EQ(v.geometry_pass, v.reject_reasons.empty());
        fails += v.geometry_pass ? 0 : 1;
    }
    // The sweep must exercise both branches to be meaningful.
    EXPECT_GT(fails, 50);
    EXPECT_LT(fails, 990);
}

TEST(Qc, GeometryReasonsNameEachViolation) {
    SeriesMeta m;
    m.voxel_spacing = {1.0, 1.0, 7.0};
    m.slice_thickness = 7.0;
    m.dims = {64, 64, 64};
    const QCVerdict v = check_geometry(m, GeometryThresholds{});
    EXPECT_FALSE(v.geometry_pass);
    ASSERT_EQ(v.reject_reasons.size(), 2u);  // thickness 7 > 6.5 and anisotropy 7 > 6
    EXPECT_NE(v.reject_reasons[0].find("slice thickness"), std::string::npos);
    EXPECT_NE(v.reject_reasons[1].find("anisotropy"), std::string::npos);

    SeriesMeta thin = m;
    thin.voxel_spacing = {1.0, 1.0, 1.0};
    thin.slice_thickness = 1.0;
    thin.dims = {64, 64, 12};
    const QCVerdict v2 = check_geometry(thin, GeometryThresholds{});
    ASSERT_EQ(v2.reject_reasons.size(), 1u);
    EXPECT_NE(v2.reject_reasons[0].find("slices 12 < min 20"), std::string::npos);

    // Boundary: exactly at the threshold passes (violation is strict).
    SeriesMeta edge = m;
    edge.voxel_spacing = {2.0, 2.0, 6.5};
    edge.slice_thickness = 6.5;
    edge.dims = {64, 64, 20};
    GeometryThresholds t;  // defaults: 2.0 / 6.5 / 6.0 / 20
    EXPECT_TRUE(check_geometry(edge, t).geometry_pass);
}

TEST(Qc, GeometryMonotoneUnderLoosening) {
    Rng rng(77);
    for (int i = 0; i < 300; ++i) {
        SeriesMeta m;
        m.voxel_spacing = {rng.uniform(0.4, 3.0), rng.uniform(0.4, 3.0), rng.uniform(0.4, 9.0)};
        m.slice_thickness = m.voxel_spacing[2];
        m.dims = {64, 64, rng.randint(5, 80)};
        GeometryThresholds t;
        t.max_inplane_spacing = rng.uniform(0.5, 3.0);
        t.max_slice_thickness = rng.uniform(1.0, 9.0);
        t.max_anisotropy_ratio = rng.uniform(1.0, 8.0);
        t.min_slices = rng.randint(1, 60);
        if (!check_geometry(m, t).geometry_pass) continue;
        GeometryThresholds loose = t;
        loose.max_inplane_spacing += rng.uniform(0.0, 2.0);
        loose.max_slice_thickness += rng.uniform(0.0, 2.0);
        loose.max_anisotropy_ratio += rng.uniform(0.0, 2.0);
        loose.min_slices = std::max<int64_t>(1, loose.min_slices - rng.randint(0, 5));
        EXPECT_TRUE(check_geometry(m, loose).geometry_pass);
    }
}

TEST(Qc, ClarityDegenerateAndBlurAndScale) {
    // Constant volume -> 0 by convention.
    Volume flat = Volume::zeros(16, 16, 16);
    flat.data.fill(7.0f);
    EXPECT_EQ(clarity_score(flat), 0.0);

    // Blur strictly reduces the score.
    const Volume sharp = smooth_random_volume(24, 5);
    Volume blurred = sharp;
    blurred.data = box_blur(sharp.data, 2);  // 5-voxel box blur
    const double s_sharp = clarity_score(sharp);
    const double s_blur = clarity_score(blurred);
    EXPECT_GT(s_sharp, 0.0);
    EXPECT_GT(s_sharp, s_blur);

    // Positive scaling leaves the score unchanged (exact for power-of-two
    // factors, which keep float inputs bit-representable).
    for (const float a : {2.0f, 0.25f, 128.0f}) {
        Volume scaled = sharp;
        for (int64_t i = 0; i < scaled.data.numel(); ++i) scaled.data.data()[i] *= a;
        const double s = clarity_score(scaled);
        EXPECT_NEAR(s, s_sharp, 1e-9 * std::abs(s_sharp));
    }
}

TEST(Qc, SelectionMatchesBruteForceArgmax) {
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = static_cast<int>(rng.randint(1, 7));
        std::vector<QCVerdict> cands(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            auto& c = cands[static_cast<size_t>(i)];
            c.series.series_id = std::string("ser-") + static_cast<char>('a' + rng.randint(0, 5));
            c.geometry_pass = rng.uniform() < 0.7;
            if (c.geometry_pass)
                // Coarse grid of scores makes ties common.
                c.clarity_score = std::floor(rng.uniform(0.0, 4.0)) / 4.0;
        }
        auto picked = select_best_series(cands);

        // Oracle: exhaustive comparison under (score desc, series_id asc).
        int best = -1;
        for (int i = 0; i < n; ++i) {
            const auto& c = cands[static_cast<size_t>(i)];
            if (!c.geometry_pass) continue;
            if (best < 0) {
                best = i;
                continue;
            }
            const auto& b = cands[static_cast<size_t>(best)];
            if (*c.clarity_score > *b.clarity_score ||
                (*c.clarity_score == *b.clarity_score &&
                 c.series.series_id < b.series.series_id))
                best = i;
        }
        if (best < 0) {
            EXPECT_FALSE(picked.has_value());
        } else {
            ASSERT_TRUE(picked.has_value());
            // Equal keys may resolve to a different index; selection identity
            // is (score, series_id), which must match the oracle's.
            EXPECT_EQ(*cands[*picked].clarity_score,
                      *cands[static_cast<size_t>(best)].clarity_score);
            EXPECT_EQ(cands[*picked].series.series_id,
                      cands[static_cast<size_t>(best)].series.series_id);
            int n_selected = 0;
            for (const auto& c : cands) n_selected += c.selected ? 1 : 0;
            EXPECT_EQ(n_selected, 1);
        }
    }
}

TEST(Qc, PreviewMontageDimensions) {
    const Volume v = smooth_random_volume(24, 9);
    const fs::path dir = temp_dir("preview");
    emit_preview(v, dir / "p.png");
    const PngImage img = read_png(dir / "p.png");
    EXPECT_EQ(img.width, 24 + 2 + 24 + 2 + 24);
    EXPECT_EQ(img.height, 24);

    Volume flat = Volume::zeros(10, 12, 14);
    flat.data.fill(3.0f);
    emit_preview(flat, dir / "flat.png");  // degenerate input must not crash
    EXPECT_TRUE(fs::exists(dir / "flat.png"));
}

TEST(Qc, RunQcOnPhantomCohort) {
    const fs::path root = temp_dir("run_root");
    PhantomConfig cfg;
    cfg.n_patients = 8;  // includes idx 1,5 (tp1 fault) and idx 5 (tp2 dropout)
    cfg.seed = 11;
    cfg.dim = 24;
    const CohortManifest m = generate_phantom_cohort(cfg, root);

    const fs::path out = temp_dir("run_out");
    const QCResult r = run_qc(m, GeometryThresholds{}, out);
    ASSERT_EQ(r.verdicts.size(), m.series.size());

    // The sharp series wins every contested (patient, timepoint).
    for (const auto& [key, sid] : r.selection) EXPECT_EQ(sid, "ser-a") << key.first;

    // Planted faults: patients idx%4==1 have a failing tp1 ser-b with two
    // reasons; patients idx%6==5 lose both tp2 series.
    int two_reason_rows = 0;
    for (const auto& v : r.verdicts)
        if (!v.geometry_pass && v.series.timepoint == 1) {
            EXPECT_EQ(v.series.series_id, "ser-b");
            EXPECT_EQ(v.reject_reasons.size(), 2u);
            ++two_reason_rows;
        }
    EXPECT_EQ(two_reason_rows, 2);  // idx 1 and idx 5 of 8 patients

    ASSERT_EQ(r.excluded.size(), 1u);  // idx 5 -> sub-006 at tp2
    EXPECT_EQ(r.excluded[0].first, "sub-006");
    EXPECT_EQ(r.excluded[0].second, 2);

    // Selection feeds stage choice: the second follow-up drops sub-006.
    const auto labels = consolidate_cohort(m);
    const StageCohort second = select_stage(m, Stage::SECOND_FOLLOWUP, labels, &r.selection);
    EXPECT_EQ(second.samples.size(), 7u);
    EXPECT_EQ(second.excluded.size(), 1u);
    EXPECT_EQ(second.excluded[0].first, "sub-006");

    // Audit CSV: exact header, manifest order, byte determinism.
    const std::string csv1 = read_text_file(out / "qc.csv");
    EXPECT_EQ(csv1.substr(0, csv1.find('\n')),
              "patient_id,timepoint,series_id,spacing_x,spacing_y,spacing_z,slice_thickness,"
              "anisotropy_ratio,n_slices,geometry_pass,reject_reasons,clarity_score,selected");
    const CsvTable t = parse_csv(csv1);
    ASSERT_EQ(t.rows.size(), m.series.size());
    const int col_sel = t.column("selected");
    const int col_pass = t.column("geometry_pass");
    const int col_clar = t.column("clarity_score");
    const int col_reasons = t.column("reject_reasons");
    for (const auto& row : t.rows) {
        if (row[static_cast<size_t>(col_sel)] == "true")
            EXPECT_EQ(row[static_cast<size_t>(col_pass)], "true");
        if (row[static_cast<size_t>(col_pass)] == "false") {
            EXPECT_FALSE(row[static_cast<size_t>(col_reasons)].empty());
            EXPECT_TRUE(row[static_cast<size_t>(col_clar)].empty());
        } else {
            EXPECT_TRUE(row[static_cast<size_t>(col_reasons)].empty());
            EXPECT_FALSE(row[static_cast<size_t>(col_clar)].empty());
        }
    }

    const fs::path out2 = temp_dir("run_out2");
    run_qc(m, GeometryThresholds{}, out2);
    EXPECT_EQ(read_text_file(out2 / "qc.csv"), csv1);

    // Previews exist for passing series only.
    EXPECT_TRUE(fs::exists(out / "previews" / "sub-001_1_ser-a.png"));
    EXPECT_TRUE(fs::exists(out / "previews" / "sub-001_1_ser-b.png"));
    EXPECT_FALSE(fs::exists(out / "previews" / "sub-002_1_ser-b.png"));  // planted fault
}
