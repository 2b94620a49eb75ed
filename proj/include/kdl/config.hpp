#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace kdl {

// Flat "key = value" text. Blank lines and lines starting with '#' are
// ignored. Used for experiment configs and for checkpoint sidecars.
class KeyValueConfig {
public:
    static KeyValueConfig parse(std::string_view text);
    static KeyValueConfig load(const std::filesystem::path& path);

    void save(const std::filesystem::path& path) const;
    std::string to_string() const;

    bool contains(std::string_view key) const;
    void set(std::string key, std::string value);

    std::string get_string(std::string_view key) const;
    std::string get_string(std::string_view key, std::string fallback) const;
    long long get_int(std::string_view key) const;
    long long get_int(std::string_view key, long long fallback) const;
    double get_double(std::string_view key) const;
    double get_double(std::string_view key, double fallback) const;

    // Throws BadConfig naming the first key not in allowed.
    void require_known(const std::vector<std::string_view>& allowed) const;

    const std::map<std::string, std::string, std::less<>>& values() const noexcept { return values_; }

private:
    std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace kdl
