#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bitsplit/entropy.hpp"
#include "bitsplit/model.hpp"
#include "bitsplit/msbv.hpp"
#include "bitsplit/scan.hpp"
#include "bitsplit/volume.hpp"

namespace bitsplit {

inline constexpr std::uint8_t kContainerVersion = 1;

enum ContainerFlag : std::uint8_t {
  kFlagExternalMsbv = 1u << 0,
  kFlagOffset = 1u << 1,
  /// The first slice was coded against all-zero previous slices.
  kFlagZeroFirstSlice = 1u << 2,
  /// The model ignores previous slices.
  kFlagIntraModel = 1u << 3,
};

/// Fixed little-endian header: magic "BDLV", version u8, flags u8, T/H/W u32,
/// bit depth u8, d u8, patch H'/W' u16, b as p u16 / q u16, K u8, N u8, model
/// hash (32 bytes), then an i32 offset when kFlagOffset is set.
struct ContainerHeader {
  std::uint8_t version = kContainerVersion;
  std::uint8_t flags = kFlagZeroFirstSlice;
  std::uint32_t slices = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint8_t bit_depth = 16;
  std::uint8_t d = 8;
  std::uint16_t patch_height = 32;
  std::uint16_t patch_width = 32;
  ScanRational b{2, 1};
  std::uint8_t kernel = 9;
  std::uint8_t mixtures = 5;
  Sha256 model_hash{};
  std::int32_t offset = 0;

  bool has(ContainerFlag f) const { return (flags & f) != 0; }
  std::size_t byte_size() const { return 62 + (has(kFlagOffset) ? 4 : 0); }

  std::vector<std::uint8_t> serialize() const;
  /// Parses and validates; returns the number of bytes consumed.
  static ContainerHeader parse(std::span<const std::uint8_t> bytes, std::size_t* consumed);
  void validate() const;

  friend bool operator==(const ContainerHeader&, const ContainerHeader&) = default;
};

/// Header, the MSBV stream and one LSBV stream per slice, each stream preceded
/// by its u64 little-endian byte length.
struct Container {
  ContainerHeader header;
  Bitstream msbv;
  std::vector<Bitstream> lsbv;

  std::vector<std::uint8_t> serialize() const;
  static Container parse(std::span<const std::uint8_t> bytes);
  std::uint64_t byte_size() const;
};

void write_container(const std::string& path, const Container& container);
Container read_container(const std::string& path);

struct PatchRect {
  std::uint32_t h0 = 0;
  std::uint32_t w0 = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  friend bool operator==(const PatchRect&, const PatchRect&) = default;
};

/// Row-major, non-overlapping tiles; edge tiles keep their smaller size.
std::vector<PatchRect> tile(std::uint32_t height, std::uint32_t width, std::uint32_t patch_height,
                            std::uint32_t patch_width);

struct EncodeOptions {
  int d = 8;
  ScanRational b{2, 1};
  std::uint32_t patch_height = 32;
  std::uint32_t patch_width = 32;
  std::optional<ExternalCodecHook> external_msbv;
};

/// Throws std::invalid_argument when the options or the model do not fit the
/// volume; nothing is produced in that case.
Container encode_volume(const Volume& volume, const Model& model, const EncodeOptions& options);

/// Refuses (FormatError) when the model hash or config differs from the header.
/// Stream damage raises DecodeError naming the slice, patch and step.
Volume decode_volume(const Container& container, const Model& model,
                     const std::optional<ExternalCodecHook>& external_msbv = std::nullopt);

struct RateBreakdown {
  std::uint64_t voxels = 0;
  std::uint64_t header_bits = 0;
  std::uint64_t msbv_bits = 0;  // stream plus its length field
  std::uint64_t lsbv_bits = 0;  // all slice streams plus their length fields
  std::vector<std::uint64_t> slice_bits;

  std::uint64_t total_bits() const { return header_bits + msbv_bits + lsbv_bits; }
  double bpv() const { return static_cast<double>(total_bits()) / static_cast<double>(voxels); }
  double msbv_share() const { return static_cast<double>(msbv_bits) / static_cast<double>(total_bits()); }
  double lsbv_share() const { return static_cast<double>(lsbv_bits) / static_cast<double>(total_bits()); }
};

RateBreakdown rate_breakdown(const Container& container);
std::string describe(const ContainerHeader& header);

}  // namespace bitsplit
