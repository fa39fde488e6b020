#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ssc {

// Command-line front end, shared by the binary and the tests. `args` excludes
// the program name. Returns the process exit code:
//   0  success
//   2  usage or configuration error
//   3  file I/O error
//   4  parameter file does not fit the model
//   5  numeric failure (diverged training, failed gradient check)
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ssc
