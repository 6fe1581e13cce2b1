// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gbmbench/common.hpp"

namespace gbmbench {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw Error("csv: missing column '" + name + "'");
    }
};

namespace csv_detail {

inline std::string escape_field(const std::string& f) {
    if (f.find_first_of(",\"\n") == std::string::npos) return f;
    std::string out = "\"";
    for (char c : f) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

}  // namespace csv_detail

/// Quote-aware parser: commas and newlines inside "..." belong to the field,
/// doubled quotes escape a literal quote. Blank records are skipped.
inline CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    bool field_started = false;
    bool first = true;

    auto end_record = [&]() {
        if (!field_started && fields.empty()) return;  // blank line
        fields.push_back(cur);
        cur.clear();
        field_started = false;
        if (first) {
            t.header = std::move(fields);
            first = false;
        } else {
            t.rows.push_back(std::move(fields));
        }
        fields.clear();
    };

    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
            field_started = true;  // a comma implies a (possibly empty) next field
        } else if (c == '\n') {
            end_record();
        } else if (c == '\r') {
            // swallowed; \r\n handled by the \n branch
        } else {
            cur.push_back(c);
            field_started = true;
        }
    }
    end_record();
    return t;
}

inline CsvTable read_csv(const fs::path& path) { return parse_csv(read_text_file(path)); }

inline std::string format_csv(const CsvTable& t) {
    std::string out;
    auto emit_row = [&](const std::vector<std::string>& row) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out.push_back(',');
            out += csv_detail::escape_field(row[i]);
        }
        out.push_back('\n');
    };
    emit_row(t.header);
    for (const auto& r : t.rows) emit_row(r);
    return out;
}

inline void write_csv(const fs::path& path, const CsvTable& t) {
    ensure_dir(path.parent_path());
    atomic_write(path, format_csv(t));
}

}  // namespace gbmbench
