#include "tpl/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace tpl::log {
namespace {
std::atomic<bool> g_quiet{false};
std::mutex g_mutex;
}  // namespace

void set_quiet(bool q) { g_quiet.store(q); }
bool quiet() { return g_quiet.load(); }

void info(const std::string& message) {
  if (g_quiet.load()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << message << '\n';
}

void warn(const std::string& message) {
  if (g_quiet.load()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "warning: " << message << '\n';
}

}  // namespace tpl::log
