#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace inject {

/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// Lines without trailing '\r'; a final empty line is not reported.
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Splits on '\t', keeping empty fields.
std::vector<std::string> split_tabs(std::string_view line);

}  // namespace inject
