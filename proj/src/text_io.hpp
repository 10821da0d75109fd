#pragma once

#include <filesystem>
#include <string>

namespace tvp::detail {

// Whole-file read; a missing file throws InvalidInput naming `what` and the path.
std::string read_text_file(const std::filesystem::path& path, const std::string& what = "file");
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace tvp::detail
