#pragma once

// Little-endian binary encoding shared by UAP artifacts and model weight
// files: u32 scalars, UTF-8 blobs and [u32 rank, u32 dims..., f32 data]
// tensors.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tscuap/core.hpp"

namespace tscuap {

/// Malformed binary file. `kind` identifies the failure class.
class FormatError : public Error {
public:
    enum class Kind { BadMagic, UnsupportedVersion, Truncated, Malformed, InvariantViolation };

    FormatError(Kind kind, const std::string& message);
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

std::string to_string(FormatError::Kind kind);

struct TensorBlob {
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

class ByteWriter {
public:
    void bytes(std::string_view raw);
    void u32(std::uint32_t v);
    void f32(float v);
    void tensor(std::span<const std::uint32_t> dims, std::span<const float> data);

    const std::string& buffer() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string data) : data_(std::move(data)) {}

    /// Each read names the section it belongs to so truncation errors point
    /// at the missing part.
    std::string bytes(std::size_t n, const char* section);
    std::uint32_t u32(const char* section);
    float f32(const char* section);
    TensorBlob tensor(const char* section);

    bool at_end() const { return pos_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n, const char* section) const;

    std::string data_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
/// Writes through a temporary file and renames, so readers never observe a
/// partially written file.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace tscuap
