#pragma once

#include <iosfwd>

namespace confex {

// Exit codes: 0 success, 1 runtime error (JSON error object on `err`), 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace confex
