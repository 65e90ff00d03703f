#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mwcr {

/// Exit codes of the command-line front end.
enum ExitCode : int {
    kExitOk = 0,
    kExitFailure = 1,
    kExitInput = 2,      // bad arguments, schema or validation errors
    kExitNumerical = 3,  // singular designs and other numerical failures
};

/// Entry point shared by the `mwcr` binary and the tests. `args` excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mwcr
