#pragma once

// Little-endian byte encoding shared by the FSET and ADPT formats.

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tsjm/errors.hpp"

namespace tsjm {

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) noexcept;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

class ByteWriter {
public:
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }

    std::span<const std::uint8_t> data() const noexcept { return buf_; }
    std::vector<std::uint8_t> take() noexcept { return std::move(buf_); }

private:
    void put(std::uint32_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked reader; running off the end throws FormatErrc::Truncated.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) noexcept : bytes_(bytes) {}

    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return get(4); }
    float f32() { return std::bit_cast<float>(u32()); }

    void expect_magic(std::span<const std::uint8_t, 4> magic) {
        if (bytes_.size() - pos_ < 4 ||
            !std::equal(magic.begin(), magic.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_))) {
            throw FormatError(FormatErrc::BadMagic, "");
        }
        pos_ += 4;
    }

    void require(std::uint64_t n) const {
        if (n > bytes_.size() - pos_) throw FormatError(FormatErrc::Truncated, "");
    }

    std::size_t position() const noexcept { return pos_; }
    bool at_end() const noexcept { return pos_ == bytes_.size(); }

private:
    std::uint32_t get(int n) {
        require(static_cast<std::uint64_t>(n));
        std::uint32_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint32_t{bytes_[pos_++]} << (8 * i);
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace tsjm
