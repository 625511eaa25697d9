#pragma once

#include <filesystem>
#include <string>

namespace dropclass {

/// Lowercase hex SHA-256.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);
/// Hash over the sorted relative names and contents of every regular file below `dir`.
std::string sha256_directory(const std::filesystem::path& dir);

}  // namespace dropclass
