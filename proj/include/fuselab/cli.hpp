#pragma once

#include <iosfwd>

namespace fuselab {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitNumeric = 4;

int run_cli(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace fuselab
