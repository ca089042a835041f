// SPDX-License-Identifier: Apache-2.0
#include "dgae/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "dgae/checkpoint.hpp"
#include "dgae/errors.hpp"

namespace dgae {
namespace {

std::string schema_line(const std::string& schema) { return "# schema: " + schema; }

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw IoError("csv: no column '" + name + "'");
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string csv_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("csv: number formatting failed");
  return std::string(buf, p);
}

void csv_ensure(const std::filesystem::path& path, const std::string& schema, const std::string& header) {
  if (std::filesystem::exists(path)) {
    const CsvTable t = csv_read(path, schema);
    if (t.header != csv_split(header)) throw IoError("csv: header of " + path.string() + " does not match");
    return;
  }
  write_file_atomic(path, schema_line(schema) + "\n" + header + "\n");
}

void csv_append(const std::filesystem::path& path, const std::string& row) {
  std::ofstream f(path, std::ios::app | std::ios::binary);
  if (!f) throw IoError("cannot append to " + path.string());
  f << row << '\n';
  f.flush();
  if (!f) throw IoError("append failed for " + path.string());
}

CsvTable csv_read(const std::filesystem::path& path, const std::string& expected_schema) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(f, line) || line.rfind("# schema: ", 0) != 0)
    throw IoError(path.string() + ": missing schema line", 0);
  t.schema = line.substr(10);
  if (t.schema != expected_schema)
    throw IoError(path.string() + ": unsupported schema '" + t.schema + "' (expected '" + expected_schema + "')", 0);
  if (!std::getline(f, line)) throw IoError(path.string() + ": missing header");
  t.header = csv_split(line);
  while (std::getline(f, line))
    if (!line.empty()) t.rows.push_back(csv_split(line));
  return t;
}

void csv_filter(const std::filesystem::path& path, const std::string& schema,
                const std::function<bool(const std::vector<std::string>&)>& keep) {
  const CsvTable t = csv_read(path, schema);
  std::string out = schema_line(schema) + "\n";
  for (std::size_t i = 0; i < t.header.size(); ++i) out += (i ? "," : "") + t.header[i];
  out += "\n";
  for (const auto& r : t.rows) {
    if (!keep(r)) continue;
    for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
    out += "\n";
  }
  write_file_atomic(path, out);
}

}  // namespace dgae
