#pragma once

// Little-endian byte packing shared by the wire codecs and checkpoint files.

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "fam/errors.hpp"

namespace fam {

using ByteBuffer = std::vector<std::uint8_t>;

inline void put_u8(ByteBuffer& out, std::uint8_t v) { out.push_back(v); }

inline void put_u16_le(ByteBuffer& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32_le(ByteBuffer& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64_le(ByteBuffer& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32_le(ByteBuffer& out, float v) { put_u32_le(out, std::bit_cast<std::uint32_t>(v)); }

inline void put_f64_le(ByteBuffer& out, double v) { put_u64_le(out, std::bit_cast<std::uint64_t>(v)); }

class ByteReader {
  public:
    ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}
    explicit ByteReader(const ByteBuffer& buf) : ByteReader(buf.data(), buf.size()) {}

    std::size_t remaining() const { return size_ - pos_; }
    std::size_t position() const { return pos_; }

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint16_t u16_le() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    std::uint32_t u32_le() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64_le() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32_le() { return std::bit_cast<float>(u32_le()); }
    double f64_le() { return std::bit_cast<double>(u64_le()); }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

    void need(std::size_t n) const {
        if (pos_ + n > size_) throw IoError("truncated buffer: need " + std::to_string(n) + " more bytes");
    }

  private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

ByteBuffer read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const ByteBuffer& bytes);

}  // namespace fam
