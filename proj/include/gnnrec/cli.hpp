#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gnnrec {

/// Runs one `gnnrec` command line (without the program name). Config comes
/// from `--config FILE`, else from $GNNREC_CONFIG, else defaults; then
/// `--section.key value` (or `--section.key=value`) overrides apply.
/// Returns 0 on success, 1 for a library error, 2 for a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace gnnrec
