#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace prerank {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);
std::vector<std::string> read_lines(const std::filesystem::path& path);
// Text that round-trips the double exactly.
std::string format_double(double v);

}  // namespace prerank
