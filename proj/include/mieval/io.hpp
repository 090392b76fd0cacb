#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mieval {

using json = nlohmann::json;

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& content);

/// Calls `fn(line_number, object)` for each non-blank line of a newline-delimited
/// JSON file. Parse failures raise ValidationError naming file and line.
void for_each_ndjson(const std::filesystem::path& path,
                     const std::function<void(std::size_t, const json&)>& fn);

/// Current UTC time as "YYYY-MM-DDTHH:MM:SS.mmmZ"; sorts lexicographically.
std::string utc_timestamp();

/// One compact JSON object per line, trailing newline after each.
std::string to_ndjson(const std::vector<json>& rows);

}  // namespace mieval
