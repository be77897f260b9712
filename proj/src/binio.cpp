#include "binio.hpp"

#include <zlib.h>

#include <cstdio>
#include <fstream>

namespace ermpp::binio {

std::string read_file(const std::string& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FileFormatError("cannot open " + what + " file: " + path);
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FileFormatError("cannot open file for writing: " + path);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw FileFormatError("short write to " + path);
    }
}

uint32_t crc32_of(const std::string& bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
                  static_cast<uInt>(bytes.size()));
    return static_cast<uint32_t>(crc);
}

std::string crc32_hex(const std::string& bytes) {
    char buf[9];
    std::snprintf(buf, sizeof(buf), "%08x", crc32_of(bytes));
    return buf;
}

std::string finish_with_crc(Writer& w) {
    const uint32_t crc = crc32_of(w.buffer());
    w.u32(crc);
    return w.buffer();
}

std::string check_crc(std::string bytes, const std::string& what) {
    if (bytes.size() < 4) {
        throw FileFormatError("truncated " + what + " file");
    }
    uint32_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
    bytes.resize(bytes.size() - 4);
    if (crc32_of(bytes) != stored) {
        throw FileFormatError("checksum mismatch in " + what + " file");
    }
    return bytes;
}

}  // namespace ermpp::binio
