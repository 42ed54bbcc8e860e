#pragma once

namespace stemdeg {

/// Command-line entry point. Exit codes: 0 success, 1 usage error,
/// 2 I/O or format error, 3 numerical failure.
int run_cli(int argc, const char* const* argv);

} // namespace stemdeg
