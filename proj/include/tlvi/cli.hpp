#pragma once

namespace tlvi {

// Command-line front end: subcommands estimate | simulate | check-eif.
// Returns the process exit code: 0 success, 1 input or configuration error,
// 2 statistical warning (non-convergence, degeneracy, failed verification).
int run_cli(int argc, const char* const* argv);

} // namespace tlvi
