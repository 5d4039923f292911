#ifndef LORTSAR_CONTAINER_HPP
#define LORTSAR_CONTAINER_HPP

// Little-endian binary containers.
//
// LRTS (weights):
//   "LRTS" | u32 version=1 | u32 tensor_count |
//   per tensor: u16 name_len | name (UTF-8) | u8 ndims | u32 dims[ndims] | f64 payload[prod(dims)]

#include <lortsar/errors.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

namespace lortsar {

class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

    const std::string& buffer() const { return buf_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    std::string buf_;
};

/// Bounds-checked reader; running off the end raises ContainerError(Corrupt).
class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::string_view bytes(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    double f64() { return std::bit_cast<double>(get(8)); }

    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw ContainerError(ContainerErrorKind::Corrupt,
                                 "truncated at offset " + std::to_string(pos_) + " (needed " + std::to_string(n) + " bytes)");
        }
    }
    std::uint64_t get(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t{static_cast<unsigned char>(data_[pos_ + i])} << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ContainerError(ContainerErrorKind::Io, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ContainerError(ContainerErrorKind::Io, "write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContainerError(ContainerErrorKind::Io, "cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw ContainerError(ContainerErrorKind::Io, "read failed: " + path.string());
    return data;
}

/// Reads the 4-byte magic and u32 version shared by both containers.
inline void read_header(ByteReader& r, std::string_view magic, std::uint32_t version) {
    if (r.remaining() < magic.size() || r.bytes(magic.size()) != magic) {
        throw ContainerError(ContainerErrorKind::BadMagic, "expected \"" + std::string(magic) + "\"");
    }
    const std::uint32_t v = r.u32();
    if (v != version) {
        throw ContainerError(ContainerErrorKind::VersionMismatch,
                             "file version " + std::to_string(v) + ", supported " + std::to_string(version));
    }
}

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<double> values;

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

inline constexpr std::string_view weights_magic = "LRTS";
inline constexpr std::uint32_t weights_version = 1;

inline std::string encode_tensors(const std::vector<NamedTensor>& tensors) {
    ByteWriter w;
    w.bytes(weights_magic);
    w.u32(weights_version);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > UINT16_MAX) throw std::invalid_argument("tensor name too long: " + t.name);
        if (t.dims.size() > UINT8_MAX) throw std::invalid_argument("too many dims: " + t.name);
        std::size_t n = 1;
        for (auto d : t.dims) n *= d;
        if (n != t.values.size()) throw std::invalid_argument("tensor payload does not match dims: " + t.name);
        w.u16(static_cast<std::uint16_t>(t.name.size()));
        w.bytes(t.name);
        w.u8(static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) w.u32(d);
        for (double v : t.values) w.f64(v);
    }
    return w.buffer();
}

inline std::vector<NamedTensor> decode_tensors(std::string_view bytes) {
    ByteReader r(bytes);
    read_header(r, weights_magic, weights_version);
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint16_t len = r.u16();
        t.name = std::string(r.bytes(len));
        const std::uint8_t nd = r.u8();
        std::uint64_t n = 1;
        for (std::uint8_t d = 0; d < nd; ++d) {
            t.dims.push_back(r.u32());
            n *= t.dims.back();
            if (n > bytes.size()) {
                throw ContainerError(ContainerErrorKind::Corrupt, "dims of \"" + t.name + "\" exceed file size");
            }
        }
        if (n * 8 > r.remaining()) {
            throw ContainerError(ContainerErrorKind::Corrupt, "payload of \"" + t.name + "\" exceeds file size");
        }
        t.values.resize(n);
        for (auto& v : t.values) v = r.f64();
        out.push_back(std::move(t));
    }
    if (!r.at_end()) throw ContainerError(ContainerErrorKind::Corrupt, "trailing bytes after last tensor");
    return out;
}

} // namespace lortsar

#endif // LORTSAR_CONTAINER_HPP
