#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace s2sk::cli {

// Shortest decimal that round-trips the double; "nan" for NaN.
std::string format_number(double v);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void close();

 private:
  std::filesystem::path path_;
  std::string text_;
  std::size_t columns_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

// Splits "a,b,c" into its non-empty parts.
std::vector<std::string> split_list(const std::string& s);

}  // namespace s2sk::cli
