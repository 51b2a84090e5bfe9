#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mgan {

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Throws LoadError when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

std::vector<std::string> split(std::string_view text, char sep);
std::vector<std::string> split_whitespace(std::string_view text);
std::string_view trim(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

}  // namespace mgan
