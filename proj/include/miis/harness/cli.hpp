#ifndef MIIS_HARNESS_CLI_HPP
#define MIIS_HARNESS_CLI_HPP

#include <iosfwd>

namespace miis::harness {

/// Exit codes: 0 success, 1 runtime failure (including failed chains),
/// 2 malformed config or command line.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace miis::harness

#endif  // MIIS_HARNESS_CLI_HPP
