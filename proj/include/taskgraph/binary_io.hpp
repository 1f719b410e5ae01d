#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "taskgraph/error.hpp"

namespace taskgraph::binary {

/// Append-only little-endian encoder.
class Writer {
public:
    void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }

    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

    const std::vector<char>& bytes() const { return bytes_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
        if (!out) throw IoError("write failed: " + path.string());
    }

private:
    std::vector<char> bytes_;
};

/// Bounds-checked little-endian decoder streaming from a file. Reads are
/// checked against the file size first, so a truncated file never over-reads.
/// Every failure names the file and the byte offset.
class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open " + path.string());
        std::error_code ec;
        size_ = static_cast<std::size_t>(std::filesystem::file_size(path, ec));
        if (ec) throw IoError("cannot stat " + path.string() + ": " + ec.message());
    }

    std::size_t size() const { return size_; }
    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }
    const std::filesystem::path& path() const { return path_; }

    void expect_magic(std::string_view tag) {
        const std::size_t at = pos_;
        std::string got = raw(tag.size());
        if (got != tag) {
            pos_ = at;
            fail("bad magic (expected \"" + std::string(tag) + "\")");
        }
    }

    std::uint32_t u32() {
        std::array<unsigned char, 4> b{};
        read_into(reinterpret_cast<char*>(b.data()), 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    float f32() { return std::bit_cast<float>(u32()); }

    /// Bulk decode of `n` little-endian words.
    void u32_array(std::uint32_t* dst, std::size_t n) {
        std::vector<unsigned char> buf(n * 4);
        read_into(reinterpret_cast<char*>(buf.data()), buf.size());
        for (std::size_t i = 0; i < n; ++i) {
            const unsigned char* b = buf.data() + 4 * i;
            dst[i] = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                     (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        }
    }

    std::string raw(std::size_t n) {
        std::string s(n, '\0');
        read_into(s.data(), n);
        return s;
    }

    /// Fails unless at least `n` more bytes exist; reports expected vs actual size.
    void require_payload(std::uint64_t n, std::string_view what) const {
        if (n > remaining()) {
            throw IoError(path_.string() + ": truncated " + std::string(what) + " at offset " +
                          std::to_string(pos_) + ": expected " + std::to_string(pos_ + n) +
                          " bytes, file has " + std::to_string(size_));
        }
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw IoError(path_.string() + ": " + what + " at offset " + std::to_string(pos_));
    }

private:
    void read_into(char* dst, std::size_t n) {
        if (n > remaining()) {
            throw IoError(path_.string() + ": unexpected end of file at offset " + std::to_string(pos_) +
                          ": expected " + std::to_string(pos_ + n) + " bytes, file has " +
                          std::to_string(size_));
        }
        in_.read(dst, static_cast<std::streamsize>(n));
        if (!in_) throw IoError("read failed: " + path_.string());
        pos_ += n;
    }

    std::filesystem::path path_;
    std::ifstream in_;
    std::size_t size_ = 0;
    std::size_t pos_ = 0;
};

}  // namespace taskgraph::binary
