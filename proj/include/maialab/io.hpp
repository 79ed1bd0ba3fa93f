#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace maialab::io {

std::optional<std::string> read_file(const std::filesystem::path& path);

/// Write-temp-then-rename so concurrent writers leave one valid winner and
/// readers never observe a torn file.
void atomic_write_file(const std::filesystem::path& path, const std::string& content);

void ensure_dirs(const std::filesystem::path& dir);

}  // namespace maialab::io
