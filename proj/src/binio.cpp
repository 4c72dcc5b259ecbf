#include "tscuap/binio.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tscuap {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::little) return v;
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

// Guards against absurd allocations when a corrupted header claims a huge size.
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

FormatError::FormatError(Kind kind, const std::string& message)
    : Error(to_string(kind) + ": " + message), kind_(kind) {}

std::string to_string(FormatError::Kind kind) {
    switch (kind) {
        case FormatError::Kind::BadMagic: return "bad magic";
        case FormatError::Kind::UnsupportedVersion: return "unsupported version";
        case FormatError::Kind::Truncated: return "truncated file";
        case FormatError::Kind::Malformed: return "malformed file";
        case FormatError::Kind::InvariantViolation: return "invariant violation";
    }
    return "format error";
}

void ByteWriter::bytes(std::string_view raw) { buf_.append(raw); }

void ByteWriter::u32(std::uint32_t v) {
    v = to_le(v);
    char raw[4];
    std::memcpy(raw, &v, 4);
    buf_.append(raw, 4);
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::tensor(std::span<const std::uint32_t> dims, std::span<const float> data) {
    std::size_t count = 1;
    for (auto d : dims) count *= d;
    if (count != data.size()) throw ShapeError("tensor dims do not match data length");
    u32(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) u32(d);
    for (float v : data) f32(v);
}

void ByteReader::need(std::size_t n, const char* section) const {
    if (n > data_.size() - pos_) {
        std::ostringstream msg;
        msg << "missing " << section << " (needed " << n << " bytes at offset " << pos_ << ", "
            << (data_.size() - pos_) << " available)";
        throw FormatError(FormatError::Kind::Truncated, msg.str());
    }
}

std::string ByteReader::bytes(std::size_t n, const char* section) {
    need(n, section);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
}

std::uint32_t ByteReader::u32(const char* section) {
    need(4, section);
    std::uint32_t v;
    std::memcpy(&v, data_.data() + pos_, 4);
    pos_ += 4;
    return to_le(v);
}

float ByteReader::f32(const char* section) { return std::bit_cast<float>(u32(section)); }

TensorBlob ByteReader::tensor(const char* section) {
    TensorBlob t;
    const std::uint32_t rank = u32(section);
    if (rank > kMaxRank) {
        throw FormatError(FormatError::Kind::Malformed,
                          std::string(section) + " has implausible rank " + std::to_string(rank));
    }
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.dims.push_back(u32(section));
        count *= t.dims.back();
    }
    need(count * 4, section);
    t.data.resize(count);
    for (std::size_t i = 0; i < count; ++i) t.data[i] = f32(section);
    return t;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp + "' for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw IoError("write to '" + tmp + "' failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

}  // namespace tscuap
