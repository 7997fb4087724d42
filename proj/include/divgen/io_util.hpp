#pragma once

#include <string>

namespace divgen {

/// Writes to a sibling temp file then renames into place, so readers never
/// observe a truncated file.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

/// SHA-256 hex digest, used for config content hashes in run manifests.
std::string sha256_hex(const std::string& data);

}  // namespace divgen
