#pragma once

#include <string>

namespace seldpo {

// Writes content to path via a temp file plus rename, so readers never see a
// truncated file. Throws IoError on failure.
void write_file_atomic(const std::string& path, const std::string& content);

// Whole-file read; throws IoError if the file cannot be opened.
std::string read_file(const std::string& path);

}  // namespace seldpo
