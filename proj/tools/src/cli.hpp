// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace clmoe::cli {

/// Runs the command line `args` (without the program name) and returns the
/// process exit code. Nothing here calls exit().
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace clmoe::cli
