#pragma once

#include <ostream>

namespace latentlm::cli {

/// Runs one command line. Returns the process exit status: 0 on success, 1
/// on a configuration, input or usage error (one diagnostic line on `err`),
/// 2 when training diverges.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace latentlm::cli
