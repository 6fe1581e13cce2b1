// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Label-consolidation engine vs an independently written straight-line
// oracle, exhaustively over every visit sequence of length 1..4, plus the
// rule-framework properties (progression dominance, PsP suffix monotonicity).

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <string>
#include <vector>

#include "gbmbench/labels.hpp"

using namespace gbmbench;

namespace {

// ---------------------------------------------------------------------------
// Straight-line oracle. A literal transcription of the consolidation rule
// text over a symbol string, deliberately sharing no code with the engine:
//   'P' progression, 'p' pseudoprogression, 's' stable, 'r' response,
//   'D' distant progression.
// ---------------------------------------------------------------------------
struct OracleResult {
    std::string label;
    std::string rule;
};

OracleResult oracle(const std::string& seq) {
    const size_t npos = std::string::npos;
    // (1) any distant progression => Progression
    if (seq.find('D') != npos) return {"progression", "DISTANT"};
    // (2) any evidence of true progression at any timepoint => Progression
    if (seq.find('P') != npos) return {"progression", "OVERRIDE"};
    // (3) with <= 2 assessments the most recent report determines the label
    if (seq.size() <= 2) {
        if (seq.back() == 'p') return {"pseudoprogression", "SCARCE"};
        return {"progression", "SCARCE"};
    }
    // (4) last visit PsP, or an initial PsP followed only by stability or
    //     response without subsequent progression => Pseudoprogression
    bool psp = seq.back() == 'p';
    for (size_t i = 0; i + 1 < seq.size() && !psp; ++i)
        if (seq[i] == 'p' && seq.find_first_not_of("sr", i + 1) == npos) psp = true;
    if (psp) return {"pseudoprogression", "PSP"};
    // (5) >= 3 consecutive follow-ups showing only stability or response
    for (size_t i = 0; i + 3 <= seq.size(); ++i)
        if (seq.compare(i, 3, "sss") == 0 || seq.substr(i, 3).find_first_not_of("sr") == npos)
            return {"stable", "STABLE_RUN"};
    // (6) fallback on the final visit, logged distinctly
    const char last = seq.back();
    if (last != 's' && last != 'r' && last != 'p') return {"progression", "STABLE_RUN-fallback"};
    return {"stable", "STABLE_RUN-fallback"};
}

constexpr char kSymbols[] = {'P', 'p', 's', 'r', 'D'};

VisitLabel label_of_symbol(char c) {
    switch (c) {
        case 'P': return VisitLabel::PROGRESSION;
        case 'p': return VisitLabel::PSEUDOPROGRESSION;
        case 's': return VisitLabel::STABLE;
        case 'r': return VisitLabel::RESPONSE;
        default: return VisitLabel::DISTANT_PROGRESSION;
    }
}

std::vector<VisitAssessment> visits_of(const std::string& seq) {
    std::vector<VisitAssessment> v;
    for (size_t i = 0; i < seq.size(); ++i)
        v.push_back({static_cast<int64_t>(i) * 10 + 3, label_of_symbol(seq[i])});
    return v;
}

/// All 5^1 + ... + 5^max_len sequences over the visit alphabet.
std::vector<std::string> all_sequences(int max_len) {
    std::vector<std::string> out, frontier{""};
    for (int len = 1; len <= max_len; ++len) {
        std::vector<std::string> next;
        for (const auto& s : frontier)
            for (char c : kSymbols) next.push_back(s + c);
        out.insert(out.end(), next.begin(), next.end());
        frontier = std::move(next);
    }
    return out;
}

}  // namespace

TEST(Labels, EngineMatchesOracleExhaustively) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto seqs = all_sequences(4);
    ASSERT_EQ(seqs.size(), 780u);
    int mismatches = 0;
    for (const auto& s : seqs) {
        const ConsolidatedLabel got = consolidate(visits_of(s));
        const OracleResult want = oracle(s);
        if (to_string(got.value) != want.label || got.rule_name() != want.rule) {
            ++mismatches;
            ADD_FAILURE() << "sequence '" << s << "': engine " << to_string(got.value) << "/"
                          << got.rule_name() << " vs oracle " << want.label << "/" << want.rule;
        }
    }
    EXPECT_EQ(mismatches, 0);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 5.0);
}

TEST(Labels, RuleInstantiations) {
    {
        const auto c = consolidate(visits_of("pP"));
        EXPECT_EQ(c.value, FinalLabel::PROGRESSION);
        EXPECT_EQ(c.rule_fired, RuleFired::OVERRIDE);
    }
    {
        const auto c = consolidate(visits_of("psr"));
        EXPECT_EQ(c.value, FinalLabel::PSEUDOPROGRESSION);
        EXPECT_EQ(c.rule_fired, RuleFired::PSP);
    }
    {
        const auto c = consolidate(visits_of("s"));
        EXPECT_EQ(c.value, FinalLabel::PROGRESSION);
        EXPECT_EQ(c.rule_fired, RuleFired::SCARCE);
    }
    {
        // Both PSP and STABLE_RUN match; PSP precedence wins.
        const auto c = consolidate(visits_of("psss"));
        EXPECT_EQ(c.value, FinalLabel::PSEUDOPROGRESSION);
        EXPECT_EQ(c.rule_fired, RuleFired::PSP);
    }
    {
        // A late PsP after stability yields PSP under rule (4) as written.
        const auto c = consolidate(visits_of("sssp"));
        EXPECT_EQ(c.value, FinalLabel::PSEUDOPROGRESSION);
        EXPECT_EQ(c.rule_fired, RuleFired::PSP);
    }
    {
        // Distant progression outranks everything.
        const auto c = consolidate(visits_of("sDsp"));
        EXPECT_EQ(c.value, FinalLabel::PROGRESSION);
        EXPECT_EQ(c.rule_fired, RuleFired::DISTANT);
    }
    EXPECT_THROW(consolidate({}), EmptyVisitList);
}

TEST(Labels, ProgressionDominance) {
    // Inserting a progression visit anywhere into any sequence must yield
    // PROGRESSION, exhaustively over all length <= 4 bases and positions.
    for (const auto& s : all_sequences(4)) {
        for (size_t pos = 0; pos <= s.size(); ++pos) {
            std::string t = s;
            t.insert(t.begin() + static_cast<std::ptrdiff_t>(pos), 'P');
            EXPECT_EQ(consolidate(visits_of(t)).value, FinalLabel::PROGRESSION)
                << "sequence '" << t << "'";
        }
    }
}

TEST(Labels, PspSuffixMonotone) {
    // Appending stable/response visits to a PSP-labeled sequence never
    // changes the label.
    for (const auto& s : all_sequences(4)) {
        const ConsolidatedLabel base = consolidate(visits_of(s));
        if (base.rule_fired != RuleFired::PSP) continue;
        for (const char suffix : {'s', 'r'}) {
            const ConsolidatedLabel ext = consolidate(visits_of(s + suffix));
            EXPECT_EQ(ext.value, FinalLabel::PSEUDOPROGRESSION)
                << "sequence '" << s << "' + '" << suffix << "'";
        }
    }
}

TEST(Labels, InvariantsAndEvidence) {
    for (const auto& s : all_sequences(4)) {
        const auto visits = visits_of(s);
        const ConsolidatedLabel c = consolidate(visits);
        // Enum invariants from the rule framework.
        if (c.rule_fired == RuleFired::DISTANT || c.rule_fired == RuleFired::OVERRIDE)
            EXPECT_EQ(c.value, FinalLabel::PROGRESSION);
        if (c.rule_fired == RuleFired::PSP) EXPECT_EQ(c.value, FinalLabel::PSEUDOPROGRESSION);
        if (c.rule_fired == RuleFired::STABLE_RUN && !c.fallback)
            EXPECT_EQ(c.value, FinalLabel::STABLE);
        // The fallback clause is unreachable over the 5-symbol alphabet.
        EXPECT_FALSE(c.fallback) << "sequence '" << s << "'";
        // Evidence is nonempty, sorted, and drawn from the input timepoints.
        ASSERT_FALSE(c.evidence.empty());
        EXPECT_TRUE(std::is_sorted(c.evidence.begin(), c.evidence.end()));
        for (int64_t tp : c.evidence) {
            const bool known = std::any_of(visits.begin(), visits.end(),
                                           [&](const VisitAssessment& v) { return v.timepoint == tp; });
            EXPECT_TRUE(known);
        }
    }
}

TEST(Labels, EvidenceSemanticsPerRule) {
    {
        // DISTANT evidence lists exactly the distant-progression timepoints.
        const auto c = consolidate(visits_of("DsDP"));
        EXPECT_EQ(c.rule_fired, RuleFired::DISTANT);
        EXPECT_EQ(c.evidence, (std::vector<int64_t>{3, 23}));
    }
    {
        // OVERRIDE evidence lists the progression timepoints.
        const auto c = consolidate(visits_of("sPsP"));
        EXPECT_EQ(c.rule_fired, RuleFired::OVERRIDE);
        EXPECT_EQ(c.evidence, (std::vector<int64_t>{13, 33}));
    }
    {
        // SCARCE evidence is the most recent visit.
        const auto c = consolidate(visits_of("sp"));
        EXPECT_EQ(c.evidence, (std::vector<int64_t>{13}));
    }
    {
        // STABLE_RUN evidence covers the qualifying run.
        const auto c = consolidate(visits_of("srsr"));
        EXPECT_EQ(c.rule_fired, RuleFired::STABLE_RUN);
        EXPECT_EQ(c.evidence, (std::vector<int64_t>{3, 13, 23, 33}));
    }
}

TEST(Labels, RuleTableEnumeration) {
    const CsvTable t1 = rule_table(1);
    EXPECT_EQ(t1.rows.size(), 5u);
    const CsvTable t2 = rule_table(2);
    EXPECT_EQ(t2.rows.size(), 30u);
    EXPECT_EQ(t2.header, (std::vector<std::string>{"sequence", "label", "rule_fired"}));

    // Self-consistency: each row reproduces consolidate() on its sequence.
    for (const auto& row : t2.rows) {
        std::vector<VisitAssessment> visits;
        std::string tok;
        int64_t tp = 0;
        for (char ch : row[0] + ";") {
            if (ch == ';') {
                visits.push_back({tp++, parse_visit_label(tok)});
                tok.clear();
            } else {
                tok.push_back(ch);
            }
        }
        const ConsolidatedLabel c = consolidate(visits);
        EXPECT_EQ(to_string(c.value), row[1]);
        EXPECT_EQ(c.rule_name(), row[2]);
    }

    EXPECT_THROW(rule_table(0), Error);
    EXPECT_THROW(rule_table(7), Error);
}

TEST(Labels, LabelsTableFormat) {
    PatientLabelRow row;
    row.patient_id = "sub-004";
    row.label = consolidate(visits_of("psr"));
    const CsvTable t = labels_table({row});
    ASSERT_EQ(t.rows.size(), 1u);
    EXPECT_EQ(t.header,
              (std::vector<std::string>{"patient_id", "label", "rule_fired", "evidence_timepoints"}));
    EXPECT_EQ(t.rows[0][0], "sub-004");
    EXPECT_EQ(t.rows[0][1], "pseudoprogression");
    EXPECT_EQ(t.rows[0][2], "PSP");
    EXPECT_EQ(t.rows[0][3], "3;13;23");
}
