#include "cforge/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace cforge::log {

namespace {
std::atomic<Level> g_level{Level::info};
std::mutex g_mutex;

const char* name(Level l) {
  switch (l) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    case Level::off: break;
  }
  return "off";
}
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void emit(Level l, std::string_view event, const nlohmann::json& fields) {
  if (l < g_level.load()) return;
  nlohmann::json record = {{"level", name(l)}, {"event", event}};
  for (const auto& [k, v] : fields.items()) record[k] = v;
  const std::string line = record.dump();
  std::lock_guard lock(g_mutex);
  std::cerr << line << '\n';
}

}  // namespace cforge::log
