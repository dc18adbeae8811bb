// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian byte buffers for the on-disk formats.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bb::io {

class Writer {
  public:
    void bytes(const void* p, std::size_t n);
    void u8(std::uint8_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v);
    /// u32 length prefix followed by raw bytes.
    void str32(const std::string& s);

    const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }
    /// Writes the buffer, throwing DataError on failure.
    void save(const std::filesystem::path& path) const;

  private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
  public:
    explicit Reader(std::vector<std::uint8_t> data, std::string source = "buffer");
    static Reader load(const std::filesystem::path& path);

    void expect_magic(const char (&magic)[8], const char* what);
    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64();
    std::string str32();

    /// Throws DataError unless `n` more bytes are available.
    void require(std::uint64_t n, const std::string& what) const;
    bool at_end() const noexcept { return pos_ == data_.size(); }

  private:
    std::vector<std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string source_;
};

} // namespace bb::io
