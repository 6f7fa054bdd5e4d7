#include "cbrl/harness/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace cbrl {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
    };
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section.empty()) fail("empty section name");
            cfg.sections_[section];  // materialize even if empty
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected `key = value`");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) fail("empty key");
        if (section.empty()) fail("key outside any [section]");
        auto& sec = cfg.sections_[section];
        if (sec.count(key)) fail("duplicate key `" + key + "`");
        sec[key] = value;
    }
    return cfg;
}

Config Config::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
}

std::string Config::serialize() const {
    std::ostringstream out;
    bool first = true;
    for (const auto& [name, keys] : sections_) {
        if (!first) out << "\n";
        first = false;
        out << "[" << name << "]\n";
        for (const auto& [k, v] : keys) out << k << " = " << v << "\n";
    }
    return out.str();
}

bool Config::has(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key) > 0;
}

const std::string& Config::get(const std::string& section, const std::string& key) const {
    auto it = sections_.find(section);
    if (it != sections_.end()) {
        auto jt = it->second.find(key);
        if (jt != it->second.end()) return jt->second;
    }
    throw ConfigError("missing config key `" + section + "." + key + "`");
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
    sections_[section][key] = value;
}

std::string Config::get_or(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
    return has(section, key) ? get(section, key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = get(section, key);
    char* end = nullptr;
    double r = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config key `" + section + "." + key + "`: not a number: " + v);
    return r;
}

long Config::get_long(const std::string& section, const std::string& key, long fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = get(section, key);
    char* end = nullptr;
    long r = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0')
        throw ConfigError("config key `" + section + "." + key + "`: not an integer: " + v);
    return r;
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    if (!has(section, key)) return fallback;
    const std::string& v = get(section, key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key `" + section + "." + key + "`: not a boolean: " + v);
}

void Config::apply_override(const std::string& spec) {
    auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like key=value or section.key=value: " + spec);
    std::string lhs = trim(spec.substr(0, eq));
    std::string value = trim(spec.substr(eq + 1));
    if (lhs.empty()) throw ConfigError("override has an empty key: " + spec);
    auto dot = lhs.find('.');
    if (dot != std::string::npos) {
        set(lhs.substr(0, dot), lhs.substr(dot + 1), value);
        return;
    }
    // bare key: must already exist in exactly one section
    std::string found;
    for (const auto& [name, keys] : sections_) {
        if (!keys.count(lhs)) continue;
        if (!found.empty())
            throw ConfigError("override key `" + lhs + "` is ambiguous ([" + found + "] and [" +
                              name + "]); qualify as section.key");
        found = name;
    }
    if (found.empty())
        throw ConfigError("override key `" + lhs +
                          "` not present in any section; qualify as section.key");
    set(found, lhs, value);
}

void Config::validate_schema(
    const std::map<std::string, std::vector<std::string>>& schema) const {
    std::string problems;
    for (const auto& [name, keys] : sections_) {
        auto it = schema.find(name);
        if (it == schema.end()) {
            problems += "unknown section [" + name + "]; ";
            continue;
        }
        for (const auto& [k, v] : keys) {
            (void)v;
            bool ok = false;
            for (const auto& allowed : it->second)
                if (allowed == k) {
                    ok = true;
                    break;
                }
            if (!ok) problems += "unknown key `" + name + "." + k + "`; ";
        }
    }
    if (!problems.empty()) {
        problems.erase(problems.size() - 2);
        throw ConfigError(problems);
    }
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::string t = trim(text);
    if (t.empty()) throw ConfigError("empty seed list");
    auto dots = t.find("..");
    std::vector<std::uint64_t> seeds;
    auto parse_u64 = [](const std::string& s) -> std::uint64_t {
        char* end = nullptr;
        unsigned long long v = std::strtoull(s.c_str(), &end, 10);
        if (end == s.c_str() || *end != '\0') throw ConfigError("bad seed value: " + s);
        return v;
    };
    if (dots != std::string::npos) {
        std::uint64_t a = parse_u64(trim(t.substr(0, dots)));
        std::uint64_t b = parse_u64(trim(t.substr(dots + 2)));
        if (b < a) throw ConfigError("seed range is reversed: " + text);
        if (b - a > 100000) throw ConfigError("seed range too large: " + text);
        for (std::uint64_t s = a; s <= b; ++s) seeds.push_back(s);
        return seeds;
    }
    std::size_t pos = 0;
    while (pos <= t.size()) {
        auto comma = t.find(',', pos);
        std::string tok = trim(t.substr(pos, comma == std::string::npos ? std::string::npos
                                                                        : comma - pos));
        if (tok.empty()) throw ConfigError("empty entry in seed list: " + text);
        seeds.push_back(parse_u64(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return seeds;
}

}  // namespace cbrl
