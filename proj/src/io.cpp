#include "maialab/io.hpp"

#include <unistd.h>

#include <atomic>
#include <fstream>

#include "maialab/common.hpp"

namespace maialab::io {

namespace fs = std::filesystem;

std::optional<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return content;
}

void atomic_write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) ensure_dirs(path.parent_path());
    static std::atomic<std::uint64_t> counter{0};
    const fs::path tmp = path.parent_path() /
                         (path.filename().string() + ".tmp." + std::to_string(getpid()) + "." +
                          std::to_string(counter.fetch_add(1)));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail("IoError", "cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) fail("IoError", "short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        fail("IoError", "rename to " + path.string() + " failed: " + ec.message());
    }
}

void ensure_dirs(const fs::path& dir) {
    if (dir.empty()) return;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::exists(dir)) fail("IoError", "cannot create directory " + dir.string());
}

}  // namespace maialab::io
