#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mieval::cli {

enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,
    kValidation = 2,
    kConfig = 3,
    kProvider = 4,
};

/// Runs one command line (args exclude the program name). Everything the
/// process would print goes to `out` / `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mieval::cli
