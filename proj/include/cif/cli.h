// Command-line front end: gen-data, train, eval, decode, align.
//
// Exit codes: 0 success, 1 runtime failure (unreadable or malformed input,
// checkpoint/config mismatch, training divergence), 2 usage error (unknown
// subcommand or flag, missing required flag, bad flag value).

#ifndef CIF_CLI_H_
#define CIF_CLI_H_

#include <iosfwd>

namespace cif {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cif

#endif  // CIF_CLI_H_
