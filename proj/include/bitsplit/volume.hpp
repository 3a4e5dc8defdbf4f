#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bitsplit {

/// T x H x W grid of unsigned samples, row-major within a slice, slices outermost.
///
/// `bit_depth` may be anything in [0, 16] so that the high/low parts of a split
/// can be represented with the same type; ingestion only accepts 8 or 16.
/// `offset` is the cumulative value added by apply_offset() since ingestion.
class Volume {
 public:
  Volume() = default;
  Volume(std::size_t slices, std::size_t height, std::size_t width, int bit_depth);
  Volume(std::size_t slices, std::size_t height, std::size_t width, int bit_depth,
         std::vector<std::uint16_t> samples, std::int32_t offset = 0);

  std::size_t slices() const { return slices_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  int bit_depth() const { return bit_depth_; }
  std::int32_t offset() const { return offset_; }

  std::size_t slice_size() const { return height_ * width_; }
  std::size_t size() const { return samples_.size(); }

  std::uint16_t at(std::size_t t, std::size_t h, std::size_t w) const {
    return samples_[(t * height_ + h) * width_ + w];
  }
  std::uint16_t& at(std::size_t t, std::size_t h, std::size_t w) {
    return samples_[(t * height_ + h) * width_ + w];
  }

  std::span<const std::uint16_t> samples() const { return samples_; }
  std::span<std::uint16_t> samples() { return samples_; }
  std::span<const std::uint16_t> slice(std::size_t t) const {
    return std::span<const std::uint16_t>(samples_).subspan(t * slice_size(), slice_size());
  }
  std::span<std::uint16_t> slice(std::size_t t) {
    return std::span<std::uint16_t>(samples_).subspan(t * slice_size(), slice_size());
  }

  std::uint32_t max_value() const { return (1u << bit_depth_) - 1u; }
  bool same_shape(const Volume& other) const {
    return slices_ == other.slices_ && height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Volume& a, const Volume& b) = default;

 private:
  std::size_t slices_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  int bit_depth_ = 0;
  std::int32_t offset_ = 0;
  std::vector<std::uint16_t> samples_;
};

/// Cut position between the high and low bit parts.
struct BitDivision {
  int d = 8;
  int bit_depth = 16;

  int msb_depth() const { return bit_depth - d; }
  int lsb_depth() const { return d; }
};

struct SubvolumePair {
  Volume msbv;
  Volume lsbv;
  BitDivision division;
};

/// Default cut: 8 for 16-bit data, 6 for 8-bit data.
int default_division(int bit_depth);

/// msbv = sample >> d, lsbv = sample & (2^d - 1).
SubvolumePair split(const Volume& volume, int d);

/// Exact inverse of split().
Volume merge(const SubvolumePair& pair);

/// Adds `offset` to every sample; throws std::range_error naming the first voxel
/// that leaves [0, 2^bit_depth).
Volume apply_offset(const Volume& volume, std::int32_t offset);

enum class Endianness { little, big };

/// Sidecar description of a raw volume file (key=value lines).
struct RawDescriptor {
  std::size_t slices = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  int bit_depth = 16;
  Endianness endianness = Endianness::little;
  bool is_signed = false;
  std::int32_t offset = 0;

  std::size_t expected_bytes() const { return slices * height * width * (bit_depth / 8); }

  std::string to_text() const;
  static RawDescriptor parse(const std::string& text);
  static RawDescriptor load(const std::string& path);
  void save(const std::string& path) const;
};

/// Decode a raw byte buffer; signed samples are shifted by `descriptor.offset`.
Volume ingest_raw(std::span<const std::uint8_t> bytes, const RawDescriptor& descriptor);

/// Inverse of ingest_raw: removes the recorded offset and writes the original
/// sample representation. The returned descriptor describes the bytes.
std::vector<std::uint8_t> export_raw(const Volume& volume, bool as_signed, RawDescriptor* descriptor,
                                     Endianness endianness = Endianness::little);

std::vector<std::uint8_t> read_file(const std::string& path);
/// Writes via a temporary name and renames, so a failed write never leaves a partial file.
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace bitsplit
