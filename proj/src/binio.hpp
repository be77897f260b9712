#pragma once

// Shared little-endian record encoding for checkpoint and dataset files.
// Layout contract for both: magic, version, typed header fields,
// length-prefixed records, trailing CRC32 over everything before it.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "ermpp/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are defined little-endian; big-endian hosts need byte swapping");

namespace ermpp::binio {

class Writer {
  public:
    void u8(uint8_t v) { raw(&v, 1); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i64(int64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }

    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        raw(s.data(), s.size());
    }

    void f64_array(const std::vector<double>& a) {
        u64(a.size());
        raw(a.data(), a.size() * sizeof(double));
    }

    void i32_array(const std::vector<int>& a) {
        u64(a.size());
        raw(a.data(), a.size() * sizeof(int32_t));
    }

    const std::string& buffer() const { return buf_; }

  private:
    void raw(const void* p, size_t n) { buf_.append(static_cast<const char*>(p), n); }

    std::string buf_;
};

class Reader {
  public:
    Reader(std::string buf, std::string what) : buf_(std::move(buf)), what_(std::move(what)) {}

    uint8_t u8() { return read<uint8_t>(); }
    uint32_t u32() { return read<uint32_t>(); }
    uint64_t u64() { return read<uint64_t>(); }
    int64_t i64() { return read<int64_t>(); }
    double f64() { return read<double>(); }

    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    std::vector<double> f64_array() {
        const uint64_t n = u64();
        need(n * sizeof(double));
        std::vector<double> a(n);
        std::memcpy(a.data(), buf_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
        return a;
    }

    std::vector<int> i32_array() {
        const uint64_t n = u64();
        need(n * sizeof(int32_t));
        std::vector<int> a(n);
        std::memcpy(a.data(), buf_.data() + pos_, n * sizeof(int32_t));
        pos_ += n * sizeof(int32_t);
        return a;
    }

    size_t remaining() const { return buf_.size() - pos_; }

  private:
    template <typename T>
    T read() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    void need(size_t n) {
        if (buf_.size() - pos_ < n) {
            throw FileFormatError("truncated " + what_ + " file");
        }
    }

    std::string buf_;
    size_t pos_ = 0;
    std::string what_;
};

std::string read_file(const std::string& path, const std::string& what);
void write_file(const std::string& path, const std::string& bytes);

uint32_t crc32_of(const std::string& bytes);
std::string crc32_hex(const std::string& bytes);

/// Append CRC32 of the buffer so far; returns the finished byte string.
std::string finish_with_crc(Writer& w);

/// Split payload from trailing CRC and verify it. Returns the payload.
std::string check_crc(std::string bytes, const std::string& what);

}  // namespace ermpp::binio
