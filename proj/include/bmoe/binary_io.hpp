#pragma once

// Little-endian primitive encoding shared by checkpoint and dataset files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "bmoe/tensor.hpp"

namespace bmoe::io {

class ByteWriter {
public:
    void bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }

    const std::vector<char>& buffer() const { return buf_; }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + path + " for writing");
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("failed writing " + path);
    }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::vector<char> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<char> data, std::string source = "buffer")
        : data_(std::move(data)), source_(std::move(source)) {}

    static ByteReader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path + " for reading");
        std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(data), path);
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string out(data_.data() + pos_, n);
        pos_ += n;
        return out;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }

    /// Throws unless `n` more bytes are available.
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw IoError(source_ + ": truncated file, expected at least " + std::to_string(pos_ + n) +
                          " bytes but found " + std::to_string(data_.size()));
        }
    }
    std::size_t position() const { return pos_; }
    std::size_t size() const { return data_.size(); }
    bool at_end() const { return pos_ == data_.size(); }
    const std::string& source() const { return source_; }

private:
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::vector<char> data_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace bmoe::io
