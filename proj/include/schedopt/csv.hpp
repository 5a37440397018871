#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace schedopt {

/// Shortest decimal form that round-trips to the same double.
std::string format_double(double x);

/// Comma-separated writer. Fields are written verbatim; callers keep them free of commas.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);

  void row(const std::vector<std::string>& fields);

 private:
  std::ofstream out_;
  std::size_t width_;
};

}  // namespace schedopt
