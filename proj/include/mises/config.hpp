#pragma once
// Flat key-value configuration with [section] headers.
//
//   # comment
//   [phase1]
//   K_list = 3, 10, 30
//   utility = quadratic-offset
//
// Keys are unique within a section. Lists are comma separated. Values keep
// their line number so errors can point at the offending field.
#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace mises {

class Config {
public:
    struct Entry {
        std::string value;
        int line = 0;  // 0 for values set programmatically
    };
    using Section = std::map<std::string, Entry>;

    static Config parse(std::istream& in, const std::string& source = "<config>") {
        Config cfg;
        cfg.source_ = source;
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string s = trim(line);
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.back() != ']' || s.size() < 3)
                    throw config_error(source + ":" + std::to_string(lineno) + ": malformed section header '" + s + "'");
                section = trim(s.substr(1, s.size() - 2));
                cfg.sections_[section];
                continue;
            }
            const auto eq = s.find('=');
            if (eq == std::string::npos)
                throw config_error(source + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + s + "'");
            const std::string key = trim(s.substr(0, eq));
            if (key.empty()) throw config_error(source + ":" + std::to_string(lineno) + ": empty key");
            if (section.empty())
                throw config_error(source + ":" + std::to_string(lineno) + ": key '" + key + "' outside any section");
            auto [it, inserted] = cfg.sections_[section].try_emplace(key, Entry{trim(s.substr(eq + 1)), lineno});
            if (!inserted)
                throw config_error(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "' in [" +
                                   section + "] (first at line " + std::to_string(it->second.line) + ")");
        }
        return cfg;
    }

    static Config parse_string(const std::string& text, const std::string& source = "<string>") {
        std::istringstream in(text);
        return parse(in, source);
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw config_error("cannot open config file '" + path + "'");
        return parse(in, path);
    }

    void set(const std::string& section, const std::string& key, std::string value) {
        sections_[section][key] = Entry{std::move(value), 0};
    }

    bool has(const std::string& section, const std::string& key) const { return find(section, key) != nullptr; }
    bool has_section(const std::string& section) const { return sections_.count(section) > 0; }

    const std::map<std::string, Section>& sections() const { return sections_; }

    std::string get_string(const std::string& section, const std::string& key,
                           const std::optional<std::string>& fallback = std::nullopt) const {
        if (const auto* e = find(section, key)) return e->value;
        if (fallback) return *fallback;
        throw config_error(source_ + ": missing required field [" + section + "] " + key);
    }

    double get_double(const std::string& section, const std::string& key,
                      std::optional<double> fallback = std::nullopt) const {
        const auto* e = find(section, key);
        if (!e) {
            if (fallback) return *fallback;
            throw config_error(source_ + ": missing required field [" + section + "] " + key);
        }
        return to_double(e->value, where(section, key, *e));
    }

    std::int64_t get_int(const std::string& section, const std::string& key,
                         std::optional<std::int64_t> fallback = std::nullopt) const {
        const auto* e = find(section, key);
        if (!e) {
            if (fallback) return *fallback;
            throw config_error(source_ + ": missing required field [" + section + "] " + key);
        }
        return to_int(e->value, where(section, key, *e));
    }

    bool get_bool(const std::string& section, const std::string& key, std::optional<bool> fallback = std::nullopt) const {
        const auto* e = find(section, key);
        if (!e) {
            if (fallback) return *fallback;
            throw config_error(source_ + ": missing required field [" + section + "] " + key);
        }
        if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
        if (e->value == "false" || e->value == "0" || e->value == "no") return false;
        throw config_error(where(section, key, *e) + ": expected a boolean, got '" + e->value + "'");
    }

    std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                    const std::optional<std::vector<double>>& fallback = std::nullopt) const {
        const auto* e = find(section, key);
        if (!e) {
            if (fallback) return *fallback;
            throw config_error(source_ + ": missing required field [" + section + "] " + key);
        }
        std::vector<double> out;
        for (const auto& item : split_list(e->value)) out.push_back(to_double(item, where(section, key, *e)));
        return out;
    }

    std::vector<std::int64_t> get_ints(const std::string& section, const std::string& key,
                                       const std::optional<std::vector<std::int64_t>>& fallback = std::nullopt) const {
        const auto* e = find(section, key);
        if (!e) {
            if (fallback) return *fallback;
            throw config_error(source_ + ": missing required field [" + section + "] " + key);
        }
        std::vector<std::int64_t> out;
        for (const auto& item : split_list(e->value)) out.push_back(to_int(item, where(section, key, *e)));
        return out;
    }

    // Throws a config error tagged with the field's location.
    [[noreturn]] void fail(const std::string& section, const std::string& key, const std::string& msg) const {
        if (const auto* e = find(section, key)) throw config_error(where(section, key, *e) + ": " + msg);
        throw config_error(source_ + ": [" + section + "] " + key + ": " + msg);
    }

    // Canonical text form; parse(to_text()) reproduces the same values.
    std::string to_text() const {
        std::ostringstream os;
        for (const auto& [name, sec] : sections_) {
            os << '[' << name << "]\n";
            for (const auto& [k, e] : sec) os << k << " = " << e.value << '\n';
        }
        return os.str();
    }

private:
    const Entry* find(const std::string& section, const std::string& key) const {
        const auto s = sections_.find(section);
        if (s == sections_.end()) return nullptr;
        const auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    }

    std::string where(const std::string& section, const std::string& key, const Entry& e) const {
        return source_ + (e.line ? ":" + std::to_string(e.line) : std::string()) + ": [" + section + "] " + key;
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static std::vector<std::string> split_list(const std::string& v) {
        std::vector<std::string> out;
        std::string cur;
        std::istringstream in(v);
        while (std::getline(in, cur, ',')) {
            cur = trim(cur);
            if (!cur.empty()) out.push_back(cur);
        }
        return out;
    }

    static double to_double(const std::string& s, const std::string& where) {
        double x = 0.0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
        if (ec != std::errc() || p != s.data() + s.size() || s.empty())
            throw config_error(where + ": expected a number, got '" + s + "'");
        return x;
    }

    static std::int64_t to_int(const std::string& s, const std::string& where) {
        std::int64_t x = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
        if (ec != std::errc() || p != s.data() + s.size() || s.empty())
            throw config_error(where + ": expected an integer, got '" + s + "'");
        return x;
    }

    std::string source_ = "<config>";
    std::map<std::string, Section> sections_;
};

}  // namespace mises
