#pragma once

namespace swtt {

// Runs one subcommand. Returns 0 on success, 1 on usage errors, 2 on runtime
// or numeric failures.
int cli_dispatch(int argc, char** argv);

}  // namespace swtt
