#include "swtt/log.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>

#include "swtt/errors.hpp"

namespace swtt::log {

namespace {

std::optional<Level>& override_level() {
    static std::optional<Level> l;
    return l;
}

Level env_level() {
    static const Level l = [] {
        const char* v = std::getenv("SWTT_LOG_LEVEL");
        if (v == nullptr || *v == '\0') return Level::Info;
        try {
            return parse_level(v);
        } catch (const ConfigError&) {
            std::cerr << "[warn] ignoring SWTT_LOG_LEVEL=" << v << "\n";
            return Level::Info;
        }
    }();
    return l;
}

void emit(Level l, const char* tag, const std::string& msg) {
    if (static_cast<int>(l) <= static_cast<int>(level())) std::cerr << '[' << tag << "] " << msg << '\n';
}

}  // namespace

Level parse_level(const std::string& s) {
    if (s == "error") return Level::Error;
    if (s == "warn" || s == "warning") return Level::Warn;
    if (s == "info") return Level::Info;
    if (s == "debug") return Level::Debug;
    throw ConfigError("unknown log level '" + s + "'");
}

Level level() { return override_level() ? *override_level() : env_level(); }
void set_level(Level l) { override_level() = l; }

void error(const std::string& msg) { emit(Level::Error, "error", msg); }
void warn(const std::string& msg) { emit(Level::Warn, "warn", msg); }
void info(const std::string& msg) { emit(Level::Info, "info", msg); }
void debug(const std::string& msg) { emit(Level::Debug, "debug", msg); }

}  // namespace swtt::log
