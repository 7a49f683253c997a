#pragma once

namespace uqseg {

// Subcommands: synth | train | eval | target | render.
// Exit codes: 0 success, 1 usage error, 2 data/format error.
int cli_main(int argc, const char* const* argv);

}  // namespace uqseg
