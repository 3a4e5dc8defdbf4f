#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bitsplit/entropy.hpp"
#include "bitsplit/volume.hpp"

namespace bitsplit {

/// All slices of a subvolume stacked vertically: slice t occupies rows [t*H, (t+1)*H).
struct ConcatImage {
  std::size_t height = 0;  // T * H
  std::size_t width = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;

  std::uint16_t at(std::size_t h, std::size_t w) const { return samples[h * width + w]; }
  friend bool operator==(const ConcatImage&, const ConcatImage&) = default;
};

ConcatImage concat(const Volume& volume);
/// Inverse of concat(); `slices` must divide the image height.
Volume deconcat(const ConcatImage& image, std::size_t slices);

/// Median edge detector on left (a), above (b) and above-left (c) neighbours.
constexpr std::int32_t med_predict(std::int32_t a, std::int32_t b, std::int32_t c) {
  const std::int32_t lo = a < b ? a : b;
  const std::int32_t hi = a < b ? b : a;
  if (c >= hi) return lo;
  if (c <= lo) return hi;
  return a + b - c;
}

inline constexpr int kGradientContexts = 729;

/// Thresholds for the nine-level gradient quantizer, scaled to the sample range.
struct GradientThresholds {
  std::int32_t t1 = 3;
  std::int32_t t2 = 7;
  std::int32_t t3 = 21;

  static GradientThresholds for_depth(int bit_depth);
  /// Maps a signed gradient to one of nine levels in [-4, 4].
  int quantize(std::int32_t g) const;
};

/// Context id in [0, 729) from the three local gradients d-b, b-c, c-a.
int gradient_context(const GradientThresholds& th, std::int32_t a, std::int32_t b, std::int32_t c,
                     std::int32_t d);

/// Frequency table that adds kIncrement per observation and halves when the
/// total reaches kLimit.
class AdaptiveModel {
 public:
  static constexpr std::uint32_t kIncrement = 32;
  static constexpr std::uint32_t kLimit = 1u << 15;

  explicit AdaptiveModel(std::size_t symbols = 2);

  void encode(RangeEncoder& enc, std::uint32_t symbol);
  std::uint32_t decode(RangeDecoder& dec);
  std::uint32_t total() const { return total_; }
  std::span<const std::uint32_t> frequencies() const { return freq_; }

 private:
  void update(std::uint32_t symbol);

  std::vector<std::uint32_t> freq_;
  std::uint32_t total_ = 0;
};

struct MsbvCodingStats {
  std::uint64_t state_hash = 0;  // FNV-1a over every context table after coding
};

/// Lossless coder for the high-bit image. Residuals against the MED prediction
/// are folded to a signed range, split into a magnitude class coded with the
/// context's adaptive table and raw mantissa bits.
Bitstream encode_msbv(const ConcatImage& image, MsbvCodingStats* stats = nullptr);
ConcatImage decode_msbv(const Bitstream& stream, std::size_t height, std::size_t width, int bit_depth,
                        MsbvCodingStats* stats = nullptr);

/// Command templates for an external lossless image codec; %in and %out are
/// replaced by file paths. The image is exchanged as a raw file with a `.desc`
/// sidecar next to it.
struct ExternalCodecHook {
  std::string encode_command;
  std::string decode_command;
};

/// Runs the external encoder, then the decoder, and throws std::runtime_error
/// unless the round trip reproduces `image` exactly.
Bitstream external_encode(const ConcatImage& image, const ExternalCodecHook& hook);
ConcatImage external_decode(const Bitstream& stream, std::size_t height, std::size_t width, int bit_depth,
                            const ExternalCodecHook& hook);

}  // namespace bitsplit
