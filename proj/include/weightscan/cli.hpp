#pragma once

namespace weightscan::cli {

/// Full command-line surface. Exit codes: 0 success, 2 usage error,
/// 3 data error, 4 numerical failure. Failures print one machine-readable
/// JSON line to stderr: {"error":{"kind":...,"exit_code":...,"message":...}}.
int run(int argc, const char* const* argv);

}  // namespace weightscan::cli
