#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "samlab/error.hpp"
#include "samlab/params.hpp"

namespace samlab {

class CheckpointFormatError : public Error {
public:
    explicit CheckpointFormatError(const std::string& msg) : Error("checkpoint format: " + msg) {}
};

class CheckpointTruncatedError : public Error {
public:
    explicit CheckpointTruncatedError(const std::string& msg)
        : Error("checkpoint truncated: " + msg) {}
};

class CheckpointChecksumError : public Error {
public:
    explicit CheckpointChecksumError(const std::string& msg)
        : Error("checkpoint checksum: " + msg) {}
};

/// CRC-32 (IEEE, reflected 0xEDB88320), the same polynomial and conventions
/// zlib uses.
inline uint32_t crc32_ieee(const uint8_t* data, size_t len, uint32_t crc = 0) {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return ~crc;
}

namespace detail {

inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'M', 'L', 'A', 'B', '0', '1'};

struct ByteWriter {
    std::vector<uint8_t> bytes;

    void u8(uint8_t v) { bytes.push_back(v); }
    void u16(uint16_t v) {
        for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void f64(double v) {
        uint64_t u = std::bit_cast<uint64_t>(v);
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(u >> (8 * i)));
    }
    void raw(const void* p, size_t n) {
        const uint8_t* b = static_cast<const uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
};

struct ByteReader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > bytes.size())
            throw CheckpointTruncatedError("expected " + std::to_string(n) + " more bytes at offset " +
                                           std::to_string(pos));
    }
    uint8_t u8() {
        need(1);
        return bytes[pos++];
    }
    uint16_t u16() {
        need(2);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<uint16_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos++]) << (8 * i);
        return v;
    }
    double f64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos++]) << (8 * i);
        return std::bit_cast<double>(v);
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace detail

/// Little-endian binary checkpoint: magic "SAMLAB01", u32 entry count, then
/// per entry a u16 name length, the UTF-8 name, u8 rank, rank u32 dims, and
/// the raw f64 data; a CRC32 of everything before it closes the file.
inline void save_checkpoint(const ParamVector& params, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.raw(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
    w.u32(static_cast<uint32_t>(params.size()));
    for (const auto& e : params.entries()) {
        w.u16(static_cast<uint16_t>(e.name.size()));
        w.raw(e.name.data(), e.name.size());
        w.u8(static_cast<uint8_t>(e.tensor.rank()));
        for (long long d : e.tensor.shape) w.u32(static_cast<uint32_t>(d));
        for (double v : e.tensor.data) w.f64(v);
    }
    w.u32(crc32_ieee(w.bytes.data(), w.bytes.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(w.bytes.data()),
              static_cast<std::streamsize>(w.bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

inline ParamVector load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < sizeof detail::kCheckpointMagic + 8)
        throw CheckpointTruncatedError("file shorter than header");
    if (std::memcmp(bytes.data(), detail::kCheckpointMagic, sizeof detail::kCheckpointMagic) != 0)
        throw CheckpointFormatError("bad magic; not a SAMLAB01 checkpoint");

    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<uint32_t>(bytes[bytes.size() - 4 + static_cast<size_t>(i)]) << (8 * i);
    uint32_t actual = crc32_ieee(bytes.data(), bytes.size() - 4);
    if (stored != actual) throw CheckpointChecksumError("stored checksum does not match contents");

    detail::ByteReader r{bytes};
    r.pos = sizeof detail::kCheckpointMagic;
    uint32_t count = r.u32();
    ParamVector params;
    for (uint32_t e = 0; e < count; ++e) {
        uint16_t name_len = r.u16();
        std::string name = r.str(name_len);
        uint8_t rank = r.u8();
        Shape shape;
        long long numel = 1;
        for (uint8_t d = 0; d < rank; ++d) {
            uint32_t dim = r.u32();
            if (dim == 0) throw CheckpointFormatError("zero dimension in entry " + name);
            shape.push_back(static_cast<long long>(dim));
            numel *= dim;
        }
        std::vector<double> data(static_cast<size_t>(numel));
        for (double& v : data) v = r.f64();
        Tensor t(std::move(shape), std::move(data), true);
        params.add(std::move(name), std::move(t));
    }
    if (r.pos != bytes.size() - 4)
        throw CheckpointFormatError("trailing bytes after last entry");
    return params;
}

}  // namespace samlab
