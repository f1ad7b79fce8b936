#pragma once

#include <string>
#include <vector>

namespace fam {

/// Entry point behind the fam binary; args exclude the program name.
/// Returns 0 on success, 2 on usage errors, 1 on runtime failures.
int cli_main(const std::vector<std::string>& args);

}  // namespace fam
