#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace samtl {

// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric divergence.
int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
             std::ostream& err = std::cerr);

}  // namespace samtl
