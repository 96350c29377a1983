#pragma once

#include <ostream>

namespace msam {

/// Entry point of the `msam` tool. Returns 0 on success, 1 for usage,
/// validation or I/O errors and 2 for numeric failures.
int cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace msam
