#pragma once

#include <string>
#include <vector>

namespace voxdec::cli {

// Entry point used by the voxdec binary and by in-process tests.
// Returns the process exit code: 0 on success.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace voxdec::cli
