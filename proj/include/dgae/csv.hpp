// SPDX-License-Identifier: Apache-2.0
//
// Schema-versioned CSV files. Line 1 is `# schema: <name>/<version>`, line 2
// the header. Writers only append rows; readers reject any schema other than
// the one they were built for.
#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace dgae {

struct CsvTable {
  std::string schema;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws IoError if absent.
  std::size_t column(const std::string& name) const;
};

/// Creates the file with schema + header if missing; otherwise checks both match.
void csv_ensure(const std::filesystem::path& path, const std::string& schema, const std::string& header);
void csv_append(const std::filesystem::path& path, const std::string& row);
CsvTable csv_read(const std::filesystem::path& path, const std::string& expected_schema);
/// Rewrites the file keeping only rows for which keep(row) holds.
void csv_filter(const std::filesystem::path& path, const std::string& schema,
                const std::function<bool(const std::vector<std::string>&)>& keep);

std::vector<std::string> csv_split(const std::string& line);
/// Shortest round-tripping decimal form of a double.
std::string csv_number(double v);

}  // namespace dgae
