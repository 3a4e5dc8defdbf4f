#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bitsplit {

/// Smallest admissible logistic scale, in symbol units.
inline constexpr double kSigmaMin = 1e-3;
inline constexpr int kDefaultPrecision = 16;

struct LogisticMixtureParams {
  std::vector<double> weights;  // pi, sums to 1
  std::vector<double> means;    // mu, symbol units
  std::vector<double> scales;   // sigma >= kSigmaMin

  std::size_t components() const { return weights.size(); }
  /// Throws std::invalid_argument on size mismatch, scale below floor or weights off the simplex.
  void validate() const;
};

/// Real-valued PMF over 2^d symbols plus, once quantized, integer frequencies.
struct Pmf {
  std::vector<double> probabilities;
  std::vector<std::uint32_t> frequencies;  // empty until quantize()
  int precision = 0;

  std::size_t symbol_count() const { return probabilities.size(); }
  bool quantized() const { return !frequencies.empty(); }
};

double logistic_sigmoid(double x);

/// Mass of one logistic component on bin [k - 0.5, k + 0.5] of a 2^d-symbol
/// alphabet; the first and last bins extend to -inf / +inf.
double logistic_bin_mass(double mean, double scale, std::uint32_t symbol, std::uint32_t last_symbol);

/// p(k) = sum_n pi_n * logistic_bin_mass(mu_n, sigma_n, k).
double mixture_probability(const LogisticMixtureParams& params, std::uint32_t symbol, int d);

/// Derivatives of -log2 p(symbol) with respect to pi, mu and sigma of every component.
struct MixtureNllGrad {
  double bits = 0.0;
  std::vector<double> d_weights;
  std::vector<double> d_means;
  std::vector<double> d_scales;
};
MixtureNllGrad mixture_nll_with_grad(const LogisticMixtureParams& params, std::uint32_t symbol, int d);

Pmf discretize(const LogisticMixtureParams& params, int d);

/// Largest-remainder apportionment of 2^precision with a floor of one per symbol.
Pmf quantize(const Pmf& pmf, int precision = kDefaultPrecision);
/// In-place variant for callers that reuse buffers; `out` receives symbol_count frequencies.
void quantize_into(std::span<const double> probabilities, int precision, std::vector<std::uint32_t>& out);

struct Bitstream {
  std::vector<std::uint8_t> bytes;
  std::size_t bit_length() const { return bytes.size() * 8; }
};

/// Byte-oriented range coder with a 64-bit low register and 32-bit range.
///
/// Every encode() narrows the range by floor(range / total); whenever the range
/// drops below 2^24 one byte is shifted out, with carries resolved through a
/// cached byte plus a run of pending 0xFF bytes. finish() shifts out five more
/// bytes. The first emitted byte is always zero and the decoder consumes
/// exactly the bytes produced. See docs/bitstream.md.
class RangeEncoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total);
  /// `bits` raw bits with uniform probability (bits <= 16).
  void encode_bits(std::uint32_t value, int bits) { encode(value, 1, 1u << bits); }
  Bitstream finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t cache_size_ = 1;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);

  /// Target frequency in [0, total); must be followed by consume() with the
  /// interval that contains it.
  std::uint32_t decode_target(std::uint32_t total);
  void consume(std::uint32_t cum, std::uint32_t freq);
  std::uint32_t decode_bits(int bits);

  std::size_t bytes_consumed() const { return pos_; }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t step_ = 0;
};

/// Encode with a static quantized PMF; `cumulative` has symbol_count + 1 entries.
void encode_symbol(RangeEncoder& enc, std::span<const std::uint32_t> frequencies, std::uint32_t symbol,
                   int precision);
std::uint32_t decode_symbol(RangeDecoder& dec, std::span<const std::uint32_t> frequencies, int precision);

/// Whole-sequence helpers over per-symbol quantized PMFs.
Bitstream encode(std::span<const std::uint32_t> symbols, std::span<const Pmf> pmfs);
std::vector<std::uint32_t> decode(const Bitstream& stream, std::span<const Pmf> pmfs, std::size_t count);

/// Ideal code length in bits of `symbol` under quantized frequencies.
double quantized_cost_bits(const Pmf& pmf, std::uint32_t symbol);

struct PmfBenchRow {
  int bit_depth = 0;
  std::size_t pixels = 0;
  std::uint64_t table_entries = 0;  // pixels * 2^depth
  double seconds = 0.0;
};

/// Builds per-pixel mixture PMF tables for every (depth, pixels) pair and times it.
std::vector<PmfBenchRow> pmf_bench(std::span<const int> bit_depths, std::span<const std::size_t> pixel_counts,
                                   int components = 10, std::uint64_t seed = 1);
std::string format_pmf_bench(std::span<const PmfBenchRow> rows);

}  // namespace bitsplit
