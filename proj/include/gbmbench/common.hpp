// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace gbmbench {

namespace fs = std::filesystem;

/// Code version stamped into report provenance headers.
inline constexpr const char* kVersion = "0.1.0";

/// Base class for all gbmbench errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IOFailure : Error {
    explicit IOFailure(const std::string& msg) : Error("I/O failure: " + msg) {}
};

inline void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw IOFailure("cannot create directory " + p.string() + ": " + ec.message());
}

// Atomic file replace: write to a sibling temp file, then rename over the target.
inline void atomic_write(const fs::path& target, const std::string& content);

}  // namespace gbmbench

#include <fstream>

namespace gbmbench {

inline void atomic_write(const fs::path& target, const std::string& content) {
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IOFailure("cannot open " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw IOFailure("short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IOFailure("rename " + tmp.string() + " -> " + target.string() + ": " + ec.message());
}

inline std::string read_text_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IOFailure("cannot open " + p.string());
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

}  // namespace gbmbench
