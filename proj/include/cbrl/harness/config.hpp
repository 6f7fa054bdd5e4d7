#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbrl {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Line-oriented `key = value` configuration with [section] headers, '#'
// comments, and strict unknown-key rejection at resolution time. Values keep
// their raw text; typed access happens in the consumer.
class Config {
  public:
    static Config parse(const std::string& text, const std::string& origin = "<string>");
    static Config load(const std::string& path);

    std::string serialize() const;  // round-trips parse(serialize()) == *this

    bool has(const std::string& section, const std::string& key) const;
    const std::string& get(const std::string& section, const std::string& key) const;
    void set(const std::string& section, const std::string& key, const std::string& value);

    std::string get_or(const std::string& section, const std::string& key,
                       const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    long get_long(const std::string& section, const std::string& key, long fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

    // "section.key=value" or bare "key=value" (bare keys must be unambiguous
    // across the known schema; applied before validation).
    void apply_override(const std::string& spec);

    // Throws ConfigError listing any key not in the allowed schema
    // (map section -> allowed keys) or any unknown section.
    void validate_schema(const std::map<std::string, std::vector<std::string>>& schema) const;

    const std::map<std::string, std::map<std::string, std::string>>& sections() const {
        return sections_;
    }

  private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

// Parses "0..9" (inclusive range) or "0,3,7" into a seed list.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace cbrl
