#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace biaslens {

/// Runs `bias-lens` with `args` (program name excluded). Returns the process
/// exit code: 0 ok, 1 usage error, 2 I/O or format error, 3 numeric failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// File name of the i-th image written by `bias-lens sample`.
std::string sample_file_name(std::size_t index);

}  // namespace biaslens
