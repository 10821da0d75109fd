#pragma once

#include <ostream>

namespace tvp {

// Runs the tvprobe command line; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tvp
