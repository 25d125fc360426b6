#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace swtt {

// Flat "key = value" text with [section] headers. '#' starts a comment.
// Keys before any header belong to section "".
class ConfigFile {
public:
    static ConfigFile parse(std::istream& is, const std::string& origin = "<config>");
    static ConfigFile load(const std::filesystem::path& path);

    // "section.key=value"
    void apply_override(const std::string& assignment);
    void set(const std::string& section, const std::string& key, const std::string& value);

    std::optional<std::string> find(const std::string& section, const std::string& key) const;
    std::string get(const std::string& section, const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& section, const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& section, const std::string& key, std::size_t fallback) const;
    bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& section, const std::string& key) const;

    // Rejects keys outside `known` (section -> keys).
    void check_known(const std::map<std::string, std::vector<std::string>>& known) const;

private:
    std::map<std::string, std::map<std::string, std::string>> values_;
};

}  // namespace swtt
