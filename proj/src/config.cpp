#include "kdl/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "kdl/error.hpp"

namespace kdl {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw Error(ErrorCode::kParseError, "config line " + std::to_string(line_no) + ": expected key = value");
        }
        std::string key(trim(line.substr(0, eq)));
        if (key.empty()) throw Error(ErrorCode::kParseError, "config line " + std::to_string(line_no) + ": empty key");
        cfg.values_[key] = std::string(trim(line.substr(eq + 1)));
    }
    return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kIoError, "cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
    out << to_string();
}

std::string KeyValueConfig::to_string() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

bool KeyValueConfig::contains(std::string_view key) const { return values_.find(key) != values_.end(); }

void KeyValueConfig::set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }

std::string KeyValueConfig::get_string(std::string_view key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(ErrorCode::kBadConfig, "missing config key '" + std::string(key) + "'");
    return it->second;
}

std::string KeyValueConfig::get_string(std::string_view key, std::string fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

long long KeyValueConfig::get_int(std::string_view key) const {
    const std::string s = get_string(key);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw Error(ErrorCode::kBadConfig, "config key '" + std::string(key) + "': '" + s + "' is not an integer");
    }
    return v;
}

long long KeyValueConfig::get_int(std::string_view key, long long fallback) const {
    return contains(key) ? get_int(key) : fallback;
}

double KeyValueConfig::get_double(std::string_view key) const {
    const std::string s = get_string(key);
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::kBadConfig, "config key '" + std::string(key) + "': '" + s + "' is not a number");
}

double KeyValueConfig::get_double(std::string_view key, double fallback) const {
    return contains(key) ? get_double(key) : fallback;
}

void KeyValueConfig::require_known(const std::vector<std::string_view>& allowed) const {
    for (const auto& [k, v] : values_) {
        if (std::find(allowed.begin(), allowed.end(), std::string_view(k)) == allowed.end()) {
            throw Error(ErrorCode::kBadConfig, "unknown config key '" + k + "'");
        }
    }
}

}  // namespace kdl
