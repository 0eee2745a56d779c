#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace critkit::fileio {

class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes to a sibling temporary file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace critkit::fileio
