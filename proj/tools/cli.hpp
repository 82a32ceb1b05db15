#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace docsynth::cli {

enum ExitCode : int {
    kOk = 0,
    kInvalid = 1,  // usage errors and failed validation
    kRuntime = 2,
};

/// argv[0] is the program name.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace docsynth::cli
