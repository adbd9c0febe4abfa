#pragma once

namespace fitq {

// Entry point behind the fitquant binary; returns the process exit code:
// 0 success, 1 validation failure, 2 numerical failure.
int cli_main(int argc, const char* const* argv);

}  // namespace fitq
