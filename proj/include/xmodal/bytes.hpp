#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "xmodal/errors.hpp"

namespace xmodal::bytes {

// Explicit little-endian encoding, independent of host byte order.

inline void put_u8(std::vector<unsigned char>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f32(std::vector<unsigned char>& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

inline void put_f32s(std::vector<unsigned char>& out, std::span<const float> values) {
    out.reserve(out.size() + 4 * values.size());
    for (float v : values) put_f32(out, v);
}

class Reader {
public:
    explicit Reader(std::span<const unsigned char> data) : data_(data) {}

    std::size_t remaining() const noexcept { return data_.size() - pos_; }
    std::size_t position() const noexcept { return pos_; }

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    void f32s(std::span<float> out) {
        need(4 * out.size());
        for (auto& v : out) v = f32();
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw FormatError("unexpected end of data");
    }

    std::span<const unsigned char> data_;
    std::size_t pos_ = 0;
};

}  // namespace xmodal::bytes
