// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Report emission: performance and complexity comparison tables (CSV and
// Markdown), deterministic plots with sidecar data JSON, and prediction
// galleries. Tables and plots are pure views over stored unit-run records —
// every emitted number is reproducible from the raw results, and report
// generation never writes into results storage.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbmbench/draw.hpp"
#include "gbmbench/harness.hpp"

namespace gbmbench::report {

struct NoResults : Error {
    using Error::Error;
};

/// Identity block stamped into every artifact: which configuration produced
/// the results, under which seeds, with which code.
struct Provenance {
    std::string config_hash = "unspecified";
    std::vector<int64_t> seeds;
    std::string code_version = kVersion;
};

inline std::string provenance_line(const Provenance& p) {
    std::string seeds;
    for (size_t i = 0; i < p.seeds.size(); ++i)
        seeds += (i ? "," : "") + std::to_string(p.seeds[i]);
    return "provenance: config=" + p.config_hash + " seeds=" + (seeds.empty() ? "-" : seeds) +
           " code=" + p.code_version;
}

inline nlohmann::json provenance_to_json(const Provenance& p) {
    return nlohmann::json{{"config_hash", p.config_hash},
                          {"seeds", p.seeds},
                          {"code_version", p.code_version}};
}

namespace report_detail {

inline std::string fmt4(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

/// `mean ± sd` with 4 decimals, or the em-dash placeholder when absent.
inline std::string cell(const std::optional<harness::MetricAggregate>& a) {
    if (!a) return "—";
    return fmt4(a->mean) + " ± " + fmt4(a->sd_across_seeds);
}

inline std::vector<const harness::ExperimentResult*> sorted_rows(
    const std::vector<harness::ExperimentResult>& results, const std::string& stage) {
    std::vector<const harness::ExperimentResult*> rows;
    for (const auto& r : results)
        if (r.stage == stage) rows.push_back(&r);
    std::sort(rows.begin(), rows.end(),
              [](const harness::ExperimentResult* a, const harness::ExperimentResult* b) {
                  if (a->family != b->family) return a->family < b->family;
                  return a->batch_size < b->batch_size;
              });
    return rows;
}

inline std::vector<std::string> stages_of(const std::vector<harness::ExperimentResult>& rs) {
    std::set<std::string> s;
    for (const auto& r : rs) s.insert(r.stage);
    return {s.begin(), s.end()};
}

inline void require_results(const std::vector<harness::ExperimentResult>& results) {
    int64_t units = 0;
    for (const auto& r : results) units += static_cast<int64_t>(r.units.size());
    if (results.empty() || units == 0)
        throw NoResults("report: no completed unit runs to report");
}

constexpr const char* kMissingFootnote =
    "'—' marks a metric with no defined value (degenerate validation set, "
    "untimed profile, or all seeds failed); missing values are never imputed.";
constexpr const char* kAucFootnote =
    "macro-AUC is one-vs-rest with midrank tie handling; cells are mean ± SD "
    "where SD is the population SD across per-seed means.";

}  // namespace report_detail

enum class TableFormat { CSV, MARKDOWN };

/// Emits the per-stage performance tables (rows ordered by (family, batch),
/// metric columns exactly Accuracy, F1, AUC) and complexity tables. Returns
/// the written file paths.
inline std::vector<fs::path> emit_tables(const std::vector<harness::ExperimentResult>& results,
                                         const fs::path& dir, TableFormat format,
                                         const Provenance& prov) {
    report_detail::require_results(results);
    ensure_dir(dir);
    std::vector<fs::path> written;

    for (const std::string& stage : report_detail::stages_of(results)) {
        const auto rows = report_detail::sorted_rows(results, stage);

        // ---- performance ----
        std::string perf;
        if (format == TableFormat::CSV) {
            perf += "# gbmbench performance table\n";
            perf += "# " + provenance_line(prov) + "\n";
            perf += "# stage: " + stage + "\n";
            perf += "family,batch,Accuracy,F1,AUC\n";
            for (const auto* r : rows)
                perf += r->family + "," + std::to_string(r->batch_size) + "," +
                        report_detail::cell(r->accuracy) + "," +
                        report_detail::cell(r->macro_f1) + "," +
                        report_detail::cell(r->macro_auc) + "\n";
            perf += std::string("# ") + report_detail::kMissingFootnote + "\n";
            perf += std::string("# ") + report_detail::kAucFootnote + "\n";
        } else {
            perf += "# Classification performance — " + stage + "\n\n";
            perf += provenance_line(prov) + "\n\n";
            perf += "| Model | Batch | Accuracy | F1 | AUC |\n";
            perf += "|---|---|---|---|---|\n";
            for (const auto* r : rows)
                perf += "| " + r->family + " | " + std::to_string(r->batch_size) + " | " +
                        report_detail::cell(r->accuracy) + " | " +
                        report_detail::cell(r->macro_f1) + " | " +
                        report_detail::cell(r->macro_auc) + " |\n";
            perf += std::string("\n") + report_detail::kMissingFootnote + "\n";
            perf += std::string(report_detail::kAucFootnote) + "\n";
        }
        const fs::path ppath =
            dir / ("performance_" + stage + (format == TableFormat::CSV ? ".csv" : ".md"));
        atomic_write(ppath, perf);
        written.push_back(ppath);

        // ---- complexity ----
        std::string cx;
        const auto cxcell = [](double v, bool defined) {
            return defined ? report_detail::fmt4(v) : std::string("—");
        };
        if (format == TableFormat::CSV) {
            cx += "# gbmbench complexity table\n";
            cx += "# " + provenance_line(prov) + "\n";
            cx += "# stage: " + stage + "\n";
            cx += "family,batch,FLOPs (G),Params (M),Batch Time (s),Runtime (min)\n";
        } else {
            cx += "# Computational complexity — " + stage + "\n\n";
            cx += provenance_line(prov) + "\n\n";
            cx += "| Model | Batch | FLOPs (G) | Params (M) | Batch Time (s) | Runtime (min) |\n";
            cx += "|---|---|---|---|---|---|\n";
        }
        for (const auto* r : rows) {
            const auto& c = r->complexity;
            const double params_m =
                static_cast<double>(c.params + c.frozen_params) / 1e6;
            const std::string cells[4] = {
                cxcell(c.flops / 1e9, c.flops > 0), cxcell(params_m, params_m > 0),
                cxcell(c.batch_time_mean_s, c.timed_batches > 0),
                cxcell(c.total_runtime_min, c.total_runtime_min > 0)};
            if (format == TableFormat::CSV)
                cx += r->family + "," + std::to_string(r->batch_size) + "," + cells[0] + "," +
                      cells[1] + "," + cells[2] + "," + cells[3] + "\n";
            else
                cx += "| " + r->family + " | " + std::to_string(r->batch_size) + " | " +
                      cells[0] + " | " + cells[1] + " | " + cells[2] + " | " + cells[3] +
                      " |\n";
        }
        if (format == TableFormat::CSV)
            cx += std::string("# ") + report_detail::kMissingFootnote + "\n";
        else
            cx += std::string("\n") + report_detail::kMissingFootnote + "\n";
        const fs::path cpath =
            dir / ("complexity_" + stage + (format == TableFormat::CSV ? ".csv" : ".md"));
        atomic_write(cpath, cx);
        written.push_back(cpath);
    }
    return written;
}

// ---------------------------------------------------------------------------
// Plots.

namespace report_detail {

inline Color palette(size_t i) {
    static const Color colors[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                                   {214, 39, 40},  {148, 103, 189}, {140, 86, 75},
                                   {227, 119, 194}, {127, 127, 127}, {188, 189, 34},
                                   {23, 190, 207}, {166, 86, 40}};
    return colors[i % (sizeof(colors) / sizeof(colors[0]))];
}

/// One metric panel of the grouped-bar figure: bars of `mean` per row with a
/// ± sd whisker, y spanning [0, 1].
inline void draw_bar_panel(Canvas& cv, int64_t x0, int64_t y0, int64_t w, int64_t h,
                           const std::string& title,
                           const std::vector<std::optional<harness::MetricAggregate>>& vals) {
    const Color axis{60, 60, 60}, grid{220, 220, 220};
    cv.text(x0, y0 - 12, title, axis);
    for (int g = 0; g <= 4; ++g) {
        const int64_t gy = y0 + h - h * g / 4;
        cv.line(x0, gy, x0 + w, gy, g == 0 ? axis : grid);
    }
    cv.line(x0, y0, x0, y0 + h, axis);
    const int64_t n = static_cast<int64_t>(vals.size());
    const int64_t slot = w / std::max<int64_t>(n, 1);
    for (int64_t i = 0; i < n; ++i) {
        if (!vals[static_cast<size_t>(i)]) continue;
        const auto& a = *vals[static_cast<size_t>(i)];
        const double mean = std::clamp(a.mean, 0.0, 1.0);
        const int64_t bh = static_cast<int64_t>(std::lround(mean * h));
        const int64_t bw = std::max<int64_t>(slot - 4, 2);
        const int64_t bx = x0 + i * slot + 2;
        cv.fill_rect(bx, y0 + h - bh, bw, bh, palette(static_cast<size_t>(i)));
        const double lo = std::clamp(a.mean - a.sd_across_seeds, 0.0, 1.0);
        const double hi = std::clamp(a.mean + a.sd_across_seeds, 0.0, 1.0);
        const int64_t cxm = bx + bw / 2;
        cv.line(cxm, y0 + h - static_cast<int64_t>(std::lround(hi * h)), cxm,
                y0 + h - static_cast<int64_t>(std::lround(lo * h)), {20, 20, 20});
        cv.text(bx + bw / 2 - 2, y0 + h + 4, std::to_string(i + 1), axis);
    }
}

}  // namespace report_detail

/// Grouped bars of accuracy/F1/AUC per stage plus an efficiency scatter of
/// per-sample FLOPs against macro-AUC. Every plot ships a sidecar JSON with
/// its exact plotted values; the PNG bytes are deterministic given results.
inline std::vector<fs::path> emit_plots(const std::vector<harness::ExperimentResult>& results,
                                        const fs::path& dir, const Provenance& prov) {
    report_detail::require_results(results);
    ensure_dir(dir);
    std::vector<fs::path> written;

    for (const std::string& stage : report_detail::stages_of(results)) {
        const auto rows = report_detail::sorted_rows(results, stage);
        const int64_t n = static_cast<int64_t>(rows.size());
        std::vector<std::string> row_names;
        for (const auto* r : rows)
            row_names.push_back(r->family + " b" + std::to_string(r->batch_size));

        // ---- grouped bars ----
        {
            const int64_t panel_w = std::max<int64_t>(120, n * 26);
            const int64_t panel_h = 160, gap = 36, left = 40, top = 40;
            const int64_t legend_w = 150;
            Canvas cv(left + 3 * (panel_w + gap) + legend_w,
                      top + panel_h + 60 + 14 * std::max<int64_t>(n, 1));
            const char* titles[3] = {"Accuracy", "F1", "AUC"};
            for (int p = 0; p < 3; ++p) {
                std::vector<std::optional<harness::MetricAggregate>> vals;
                for (const auto* r : rows)
                    vals.push_back(p == 0 ? r->accuracy : p == 1 ? r->macro_f1 : r->macro_auc);
                report_detail::draw_bar_panel(cv, left + p * (panel_w + gap), top, panel_w,
                                              panel_h, titles[p], vals);
            }
            // Legend: bar index -> row name.
            const int64_t lx = left + 3 * (panel_w + gap);
            cv.text(lx, top - 12, "models", {60, 60, 60});
            for (int64_t i = 0; i < n; ++i) {
                cv.fill_rect(lx, top + i * 14, 8, 8, report_detail::palette(static_cast<size_t>(i)));
                cv.text(lx + 12, top + i * 14, std::to_string(i + 1) + " " +
                                                    row_names[static_cast<size_t>(i)],
                        {30, 30, 30});
            }
            cv.text(8, cv.height() - 12, provenance_line(prov), {120, 120, 120});
            const fs::path png = dir / ("bars_" + stage + ".png");
            cv.save(png);
            written.push_back(png);

            nlohmann::json side;
            side["plot"] = "grouped_bars";
            side["stage"] = stage;
            side["provenance"] = provenance_to_json(prov);
            side["rows"] = nlohmann::json::array();
            for (const auto* r : rows) {
                nlohmann::json row;
                row["family"] = r->family;
                row["batch"] = r->batch_size;
                const auto put = [&row](const char* k,
                                        const std::optional<harness::MetricAggregate>& a) {
                    row[k] = a ? harness::metric_agg_to_json(*a) : nlohmann::json(nullptr);
                };
                put("accuracy", r->accuracy);
                put("macro_f1", r->macro_f1);
                put("macro_auc", r->macro_auc);
                side["rows"].push_back(row);
            }
            const fs::path sjson = dir / ("bars_" + stage + ".json");
            atomic_write(sjson, side.dump(2) + "\n");
            written.push_back(sjson);
        }

        // ---- efficiency scatter ----
        {
            std::vector<double> xs;
            std::vector<size_t> plotted;
            std::vector<std::string> skipped;
            for (size_t i = 0; i < rows.size(); ++i) {
                if (rows[i]->macro_auc && rows[i]->complexity.flops > 0) {
                    xs.push_back(std::log10(rows[i]->complexity.flops));
                    plotted.push_back(i);
                } else {
                    skipped.push_back(row_names[i]);
                }
            }
            double xmin = 0.0, xmax = 1.0;
            if (!xs.empty()) {
                xmin = *std::min_element(xs.begin(), xs.end()) - 0.5;
                xmax = *std::max_element(xs.begin(), xs.end()) + 0.5;
            }
            const int64_t w = 520, h = 240, left = 48, top = 32;
            Canvas cv(left + w + 170, top + h + 56);
            const Color axis{60, 60, 60};
            cv.text(left, top - 12, "per-sample FLOPs (log10) vs macro-AUC", axis);
            cv.line(left, top, left, top + h, axis);
            cv.line(left, top + h, left + w, top + h, axis);
            for (int g = 0; g <= 2; ++g)
                cv.text(left - 40, top + h - h * g / 2 - 3,
                        report_detail::fmt4(g / 2.0).substr(0, 4), axis);
            for (size_t pi = 0; pi < plotted.size(); ++pi) {
                const auto* r = rows[plotted[pi]];
                const double fx = (std::log10(r->complexity.flops) - xmin) / (xmax - xmin);
                const double fy = std::clamp(r->macro_auc->mean, 0.0, 1.0);
                const int64_t px = left + static_cast<int64_t>(std::lround(fx * w));
                const int64_t py = top + h - static_cast<int64_t>(std::lround(fy * h));
                cv.fill_rect(px - 2, py - 2, 5, 5, report_detail::palette(plotted[pi]));
                cv.text(px + 6, py - 3, row_names[plotted[pi]], {30, 30, 30});
            }
            cv.text(8, cv.height() - 12, provenance_line(prov), {120, 120, 120});
            const fs::path png = dir / ("efficiency_" + stage + ".png");
            cv.save(png);
            written.push_back(png);

            nlohmann::json side;
            side["plot"] = "efficiency_scatter";
            side["stage"] = stage;
            side["provenance"] = provenance_to_json(prov);
            side["points"] = nlohmann::json::array();
            for (size_t i : plotted) {
                side["points"].push_back({{"family", rows[i]->family},
                                          {"batch", rows[i]->batch_size},
                                          {"flops_per_sample", rows[i]->complexity.flops},
                                          {"params", rows[i]->complexity.params +
                                                         rows[i]->complexity.frozen_params},
                                          {"macro_auc", rows[i]->macro_auc->mean}});
            }
            side["skipped"] = skipped;  // rows lacking AUC or FLOPs
            const fs::path sjson = dir / ("efficiency_" + stage + ".json");
            atomic_write(sjson, side.dump(2) + "\n");
            written.push_back(sjson);
        }
    }
    return written;
}

// ---------------------------------------------------------------------------
// Prediction gallery.

struct GallerySummary {
    std::map<int, fs::path> files;                   // class -> montage
    std::map<int, std::vector<std::string>> shown;   // class -> patient ids
    std::map<int, int64_t> predicted_counts;         // class -> #predicted
};

/// Mid-slice montages grouped by the model's predicted class, true labels
/// annotated; a class the model never predicts gets an explicit
/// "no predictions" panel rather than a missing file.
inline GallerySummary emit_gallery(nn::Model& model, const harness::StageDataset& data,
                                   const Shape& input_contract, int64_t n_per_class,
                                   const fs::path& dir, const Provenance& prov) {
    if (data.patient_ids.empty()) throw Error("emit_gallery: empty cohort");
    if (n_per_class < 1) throw Error("emit_gallery: n_per_class must be >= 1");
    ensure_dir(dir);

    std::vector<harness::EvalSample> samples;
    for (const auto& pid : data.patient_ids) {
        harness::EvalSample s;
        s.patient_id = pid;
        s.volume = &data.volumes.at(pid);
        s.label = data.labels.at(pid);
        samples.push_back(std::move(s));
    }
    const harness::EvalResult ev = harness::evaluate(model, samples, input_contract);

    std::map<int, std::vector<size_t>> by_pred;
    for (size_t i = 0; i < samples.size(); ++i) {
        const float* row = ev.probs.data() + static_cast<int64_t>(i) * harness::kNumClasses;
        int best = 0;
        for (int j = 1; j < harness::kNumClasses; ++j)
            if (row[j] > row[best]) best = j;
        by_pred[best].push_back(i);
    }

    GallerySummary out;
    const int64_t scale = 4, cap_h = 14, pad = 8;
    for (int cls = 0; cls < harness::kNumClasses; ++cls) {
        const std::string cls_name = to_string(static_cast<FinalLabel>(cls));
        const auto it = by_pred.find(cls);
        const int64_t have =
            it == by_pred.end() ? 0 : static_cast<int64_t>(it->second.size());
        out.predicted_counts[cls] = have;
        const int64_t show = std::min(have, n_per_class);

        const fs::path png = dir / ("predicted_" + cls_name + ".png");
        if (show == 0) {
            Canvas cv(360, 72);
            cv.text(pad, pad, "predicted: " + cls_name, {30, 30, 30});
            cv.text(pad, pad + 18, "no predictions", {160, 30, 30});
            cv.text(pad, cv.height() - 12, provenance_line(prov), {120, 120, 120});
            cv.save(png);
            out.files[cls] = png;
            continue;
        }

        // Tile geometry from the first shown volume's mid slice.
        const Volume& v0 = *samples[it->second[0]].volume;
        const int64_t th = v0.ny() * scale, tw = v0.nx() * scale;
        Canvas cv(pad + show * (tw + pad),
                  pad + 16 + th + cap_h + 16 + pad);
        cv.text(pad, pad, "predicted: " + cls_name, {30, 30, 30});
        for (int64_t t = 0; t < show; ++t) {
            const size_t si = it->second[static_cast<size_t>(t)];
            const Volume& v = *samples[si].volume;
            const int64_t z = v.nz() / 2;
            float lo = v.at(z, 0, 0), hi = lo;
            for (int64_t y = 0; y < v.ny(); ++y)
                for (int64_t x = 0; x < v.nx(); ++x) {
                    lo = std::min(lo, v.at(z, y, x));
                    hi = std::max(hi, v.at(z, y, x));
                }
            const int64_t ox = pad + t * (tw + pad), oy = pad + 16;
            for (int64_t y = 0; y < th; ++y)
                for (int64_t x = 0; x < tw; ++x) {
                    const uint8_t g = gray_of(v.at(z, y / scale, x / scale), lo, hi);
                    cv.set(ox + x, oy + y, {g, g, g});
                }
            const int truth = samples[si].label;
            cv.text(ox, oy + th + 4,
                    "true: " + to_string(static_cast<FinalLabel>(truth)),
                    truth == cls ? Color{20, 120, 20} : Color{160, 30, 30});
            out.shown[cls].push_back(samples[si].patient_id);
        }
        cv.text(pad, cv.height() - 12, provenance_line(prov), {120, 120, 120});
        cv.save(png);
        out.files[cls] = png;
    }
    return out;
}

/// Emits the full report bundle (both table formats plus plots) under `dir`
/// with the documented layout. Returns all written paths.
inline std::vector<fs::path> emit_report(const std::vector<harness::ExperimentResult>& results,
                                         const fs::path& dir, const Provenance& prov) {
    report_detail::require_results(results);
    std::vector<fs::path> written;
    for (const auto format : {TableFormat::CSV, TableFormat::MARKDOWN}) {
        auto w = emit_tables(results, dir, format, prov);
        written.insert(written.end(), w.begin(), w.end());
    }
    auto p = emit_plots(results, dir / "plots", prov);
    written.insert(written.end(), p.begin(), p.end());
    return written;
}

}  // namespace gbmbench::report
