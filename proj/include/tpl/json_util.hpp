#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

namespace tpl::json_util {

// Parses a JSON file; ParseError messages carry line and column.
nlohmann::json parse_file(const std::filesystem::path& path);
nlohmann::json parse_text(const std::string& text, const std::string& origin);

void write_file(const std::filesystem::path& path, const nlohmann::json& value);

// Shortest decimal text that round-trips the double exactly.
std::string format_double(double value);

}  // namespace tpl::json_util
