#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace expnet {

/// Entry point of the `expnet` command. Returns the process exit status:
/// 0 on success, 1 when validation or the work itself fails, 2 on an unknown
/// verb or flag (usage is printed to `err`).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace expnet
