#include "swtt/config_file.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "swtt/errors.hpp"

namespace swtt {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& is, const std::string& origin) {
    ConfigFile cfg;
    std::string section;
    std::string line;
    for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(where + ": empty key");
        cfg.values_[section][key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    return parse(is, path.string());
}

void ConfigFile::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw UsageError("override '" + assignment + "' is not of the form section.key=value");
    }
    set(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
        trim(assignment.substr(eq + 1)));
}

void ConfigFile::set(const std::string& section, const std::string& key, const std::string& value) {
    values_[section][key] = value;
}

std::optional<std::string> ConfigFile::find(const std::string& section, const std::string& key) const {
    auto s = values_.find(section);
    if (s == values_.end()) return std::nullopt;
    auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
}

std::string ConfigFile::get(const std::string& section, const std::string& key, const std::string& fallback) const {
    return find(section, key).value_or(fallback);
}

double ConfigFile::get_double(const std::string& section, const std::string& key, double fallback) const {
    const auto v = find(section, key);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        const double d = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        throw ConfigError(section + "." + key + ": '" + *v + "' is not a number");
    }
}

std::size_t ConfigFile::get_size(const std::string& section, const std::string& key, std::size_t fallback) const {
    const auto v = find(section, key);
    if (!v) return fallback;
    if (v->empty() || !std::all_of(v->begin(), v->end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw ConfigError(section + "." + key + ": '" + *v + "' is not a non-negative integer");
    }
    return std::stoull(*v);
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const auto v = find(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError(section + "." + key + ": '" + *v + "' is not a boolean");
}

std::vector<double> ConfigFile::get_doubles(const std::string& section, const std::string& key) const {
    std::vector<double> out;
    const auto v = find(section, key);
    if (!v || v->empty()) return out;
    std::stringstream ss(*v);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            out.push_back(std::stod(trim(item)));
        } catch (const std::exception&) {
            throw ConfigError(section + "." + key + ": '" + item + "' is not a number");
        }
    }
    return out;
}

void ConfigFile::check_known(const std::map<std::string, std::vector<std::string>>& known) const {
    for (const auto& [section, keys] : values_) {
        auto s = known.find(section);
        if (s == known.end()) throw ConfigError("unknown config section [" + section + "]");
        for (const auto& [key, value] : keys) {
            if (std::find(s->second.begin(), s->second.end(), key) == s->second.end()) {
                throw ConfigError("unknown config key " + section + "." + key);
            }
        }
    }
}

}  // namespace swtt
