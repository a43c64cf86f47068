#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gmetro {

/// Entry point of the `gmetro` tool. Returns the process exit status:
/// 0 on success, 2 when a dataset or checkpoint is missing, 1 otherwise.
/// Diagnostics go to `err` as a single line.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// RFC 4180 style field quoting and splitting, as used by the CSV artifacts.
std::string csv_row(const std::vector<std::string>& fields);
std::vector<std::string> parse_csv_row(const std::string& line);

}  // namespace gmetro
