#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace qte::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kValidation = 2,
  kRuntime = 3,
  kPartial = 4,
};

/// The `qte` command line; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Stops glibc from handing the sampler's scratch blocks back to the OS after every gradient.
void tune_allocator();

}  // namespace qte::cli
