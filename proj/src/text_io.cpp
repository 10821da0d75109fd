#include "text_io.hpp"

#include <fstream>
#include <sstream>

#include "tvprobe/error.hpp"

namespace tvp::detail {

std::string read_text_file(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::InvalidInput, "missing " + what + " " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::InvalidInput, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::InvalidInput, "write failed for " + path.string());
}

}  // namespace tvp::detail
