#pragma once

#include <string>

// Minimal process-wide diagnostics; everything goes to stderr.
namespace tpl::log {

void set_quiet(bool quiet);
bool quiet();

void info(const std::string& message);
void warn(const std::string& message);

}  // namespace tpl::log
