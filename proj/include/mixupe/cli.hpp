#pragma once

#include <string>
#include <vector>

namespace mixupe {

/// Entry point shared by the binary and the in-process CLI tests.
/// Returns 0 on success, 1 on a run failure, 2 on a config error.
int cli_main(const std::vector<std::string>& args);

}  // namespace mixupe
