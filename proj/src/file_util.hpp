#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "slog/errors.hpp"

namespace slog::detail {

// Cuts a file back to its last newline, dropping a line left half-written by a crash.
inline void truncate_torn_tail(const std::filesystem::path& path) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec || size == 0) return;
    std::ifstream in(path, std::ios::binary);
    std::string data(size, '\0');
    in.read(data.data(), static_cast<std::streamsize>(size));
    if (data.back() == '\n') return;
    const auto keep = data.rfind('\n');
    const auto new_size = keep == std::string::npos ? 0 : keep + 1;
    if (::truncate(path.c_str(), static_cast<off_t>(new_size)) != 0)
        throw Error("cannot truncate " + path.string() + ": " + std::strerror(errno));
}

// Appends complete lines with one write and fsyncs before returning.
inline void durable_append_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
    if (lines.empty()) return;
    std::string buf;
    for (const auto& l : lines) buf += l + '\n';
    const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd < 0) throw Error("cannot open " + path.string() + ": " + std::strerror(errno));
    const char* p = buf.data();
    std::size_t left = buf.size();
    while (left > 0) {
        const ssize_t n = ::write(fd, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            const int err = errno;
            ::close(fd);
            throw Error("cannot append to " + path.string() + ": " + std::strerror(err));
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    const bool synced = ::fsync(fd) == 0;
    ::close(fd);
    if (!synced) throw Error("fsync failed on " + path.string());
}

// Newline-terminated, non-empty lines; an unterminated final fragment is ignored.
inline std::vector<std::string> read_complete_lines(const std::filesystem::path& path) {
    std::vector<std::string> out;
    std::ifstream in(path, std::ios::binary);
    if (!in) return out;
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::size_t start = 0;
    for (std::size_t nl; (nl = data.find('\n', start)) != std::string::npos; start = nl + 1)
        if (nl > start) out.push_back(data.substr(start, nl - start));
    return out;
}

}  // namespace slog::detail
