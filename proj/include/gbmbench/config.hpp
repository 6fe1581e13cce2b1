// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gbmbench/common.hpp"
#include "gbmbench/sha256.hpp"

namespace gbmbench {

/// Raised for malformed config input: unknown keys, type mismatches, bad
/// files. Callers treat it as a user error (CLI exit code 1).
struct ConfigError : Error {
    using Error::Error;
};

enum class ConfigType { Int, Real, Bool, Str };

inline const char* config_type_name(ConfigType t) {
    switch (t) {
        case ConfigType::Int: return "int";
        case ConfigType::Real: return "real";
        case ConfigType::Bool: return "bool";
        default: return "string";
    }
}

namespace config_detail {

inline std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const int64_t x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects int, got '" + v + "'");
    }
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects real, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: key '" + key + "' expects bool, got '" + v + "'");
}

}  // namespace config_detail

/// Declares every key a command accepts: type, default, one-line help.
/// Anything outside the schema is rejected — silent typos in experiment
/// configs are the failure mode this guards against.
class ConfigSchema {
public:
    struct Entry {
        std::string key;
        ConfigType type;
        std::string default_value;
        std::string help;
    };

    ConfigSchema& add_int(const std::string& key, int64_t def, const std::string& help) {
        return add(key, ConfigType::Int, std::to_string(def), help);
    }
    ConfigSchema& add_real(const std::string& key, double def, const std::string& help) {
        std::ostringstream os;
        os << def;
        return add(key, ConfigType::Real, os.str(), help);
    }
    ConfigSchema& add_bool(const std::string& key, bool def, const std::string& help) {
        return add(key, ConfigType::Bool, def ? "true" : "false", help);
    }
    ConfigSchema& add_str(const std::string& key, const std::string& def, const std::string& help) {
        return add(key, ConfigType::Str, def, help);
    }

    bool has(const std::string& key) const { return index_.count(key) != 0; }

    const Entry& at(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) throw ConfigError("config: unknown key '" + key + "'");
        return entries_[it->second];
    }

    const std::vector<Entry>& entries() const { return entries_; }

    /// Human-readable schema listing for `--help`.
    std::string describe() const {
        std::ostringstream os;
        for (const auto& e : entries_) {
            os << "  " << e.key << " (" << config_type_name(e.type) << ", default: "
               << (e.default_value.empty() ? "\"\"" : e.default_value) << ")\n      " << e.help
               << "\n";
        }
        return os.str();
    }

private:
    ConfigSchema& add(const std::string& key, ConfigType t, std::string def, std::string help) {
        if (index_.count(key)) throw Error("config schema: duplicate key '" + key + "'");
        index_[key] = entries_.size();
        entries_.push_back({key, t, std::move(def), std::move(help)});
        return *this;
    }

    std::vector<Entry> entries_;
    std::map<std::string, size_t> index_;
};

/// Flat typed key-value store bound to a schema. Values arrive from a config
/// file (`key = value`, `#` comments, optional quotes) and from CLI flag
/// overrides applied afterwards; every assignment is type-checked eagerly.
class Config {
public:
    explicit Config(const ConfigSchema& schema) : schema_(&schema) {}

    /// Strict assignment: the key must exist in the schema and the value must
    /// parse as the declared type.
    void set(const std::string& key, const std::string& value) {
        const auto& e = schema_->at(key);
        validate(e, value);
        values_[key] = value;
    }

    /// Parses a flat key=value document. Quoted values keep embedded '#';
    /// unquoted values have trailing `# comment` stripped.
    void load_file(const fs::path& path) {
        const std::string text = read_text_file(path);
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string t = config_detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            const size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config: " + path.string() + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + t + "'");
            const std::string key = config_detail::trim(t.substr(0, eq));
            std::string value = config_detail::trim(t.substr(eq + 1));
            if (!value.empty() && (value[0] == '"' || value[0] == '\'')) {
                const char q = value[0];
                const size_t close = value.find(q, 1);
                if (close == std::string::npos)
                    throw ConfigError("config: " + path.string() + ":" + std::to_string(lineno) +
                                      ": unterminated quote");
                value = value.substr(1, close - 1);
            } else {
                const size_t hash = value.find('#');
                if (hash != std::string::npos) value = config_detail::trim(value.substr(0, hash));
            }
            try {
                set(key, value);
            } catch (const ConfigError& err) {
                throw ConfigError(std::string(err.what()) + " (" + path.string() + ":" +
                                  std::to_string(lineno) + ")");
            }
        }
    }

    int64_t get_int(const std::string& key) const {
        return config_detail::parse_int(key, raw(key, ConfigType::Int));
    }
    double get_real(const std::string& key) const {
        const auto& e = schema_->at(key);
        // Int keys may be read as real for convenience, never the reverse.
        if (e.type == ConfigType::Int) return static_cast<double>(get_int(key));
        return config_detail::parse_real(key, raw(key, ConfigType::Real));
    }
    bool get_bool(const std::string& key) const {
        return config_detail::parse_bool(key, raw(key, ConfigType::Bool));
    }
    std::string get_str(const std::string& key) const { return raw(key, ConfigType::Str); }

    bool is_default(const std::string& key) const {
        schema_->at(key);
        return values_.count(key) == 0;
    }

    /// Every key with its resolved value (explicit or default), sorted by key.
    std::map<std::string, std::string> resolved() const {
        std::map<std::string, std::string> out;
        for (const auto& e : schema_->entries()) {
            auto it = values_.find(e.key);
            out[e.key] = it == values_.end() ? e.default_value : it->second;
        }
        return out;
    }

    /// Provenance identity: digest of the canonical sorted key=value listing.
    std::string hash() const {
        std::string canon;
        for (const auto& [k, v] : resolved()) canon += k + "=" + v + "\n";
        return sha256_hex(canon);
    }

    const ConfigSchema& schema() const { return *schema_; }

private:
    std::string raw(const std::string& key, ConfigType want) const {
        const auto& e = schema_->at(key);
        if (e.type != want)
            throw Error("config: key '" + key + "' is " + config_type_name(e.type) + ", read as " +
                        config_type_name(want));
        auto it = values_.find(key);
        return it == values_.end() ? e.default_value : it->second;
    }

    static void validate(const ConfigSchema::Entry& e, const std::string& value) {
        switch (e.type) {
            case ConfigType::Int: config_detail::parse_int(e.key, value); break;
            case ConfigType::Real: config_detail::parse_real(e.key, value); break;
            case ConfigType::Bool: config_detail::parse_bool(e.key, value); break;
            case ConfigType::Str: break;
        }
    }

    const ConfigSchema* schema_;
    std::map<std::string, std::string> values_;
};

}  // namespace gbmbench
