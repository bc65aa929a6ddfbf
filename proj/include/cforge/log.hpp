#pragma once

#include <string_view>

#include <json.hpp>

namespace cforge::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

void set_level(Level level);
Level level();

// One JSON object per line on stderr: {"level":..., "event":..., ...fields}.
void emit(Level level, std::string_view event, const nlohmann::json& fields = nlohmann::json::object());

inline void info(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::info, event, fields);
}
inline void warn(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::warn, event, fields);
}

}  // namespace cforge::log
