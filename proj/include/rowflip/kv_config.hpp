#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace rf {

// Flat `key = value` text config. Blank lines and `#` comments are ignored.
class KvConfig {
public:
    static KvConfig parse(const std::string& text);
    static KvConfig load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get(const std::string& key, const std::string& fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    std::string dump() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace rf
