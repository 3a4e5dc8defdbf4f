#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace bitsplit {

/// Wavefront slope b = p/q in lowest terms.
///
/// Pixel (h, w) of a patch is decoded at step ceil(b*h) + w, so b = 0 gives
/// column wavefronts, b = 1 anti-diagonals and b = W' plain raster order.
struct ScanRational {
  std::uint32_t p = 2;
  std::uint32_t q = 1;

  ScanRational() = default;
  /// Reduces to lowest terms; q must be positive.
  ScanRational(std::uint32_t num, std::uint32_t den);

  double value() const { return static_cast<double>(p) / static_cast<double>(q); }
  std::string to_string() const;
  /// Accepts "p/q" or an integer.
  static ScanRational parse(const std::string& text);

  friend bool operator==(const ScanRational&, const ScanRational&) = default;
};

/// b = min(W', 1/tan(phi)). The slope is snapped to the nearest p/q with q <= 16
/// when that rational reproduces phi to within 0.005 degrees (the precision at
/// which angles are usually quoted); anything else throws Unsupported.
ScanRational b_from_angle(double phi_degrees, std::uint32_t patch_width);

/// ceil(p*x/q) for possibly negative x.
std::int64_t ceil_scaled(const ScanRational& b, std::int64_t x);

/// ceil(b*(H'-1)) + W'.
std::uint64_t total_steps(const ScanRational& b, std::uint32_t patch_height, std::uint32_t patch_width);

/// Number of distinct row classes: the denominator q.
std::uint32_t period(const ScanRational& b);

struct PixelIndex {
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  friend bool operator==(const PixelIndex&, const PixelIndex&) = default;
};

class ScanSchedule {
 public:
  ScanSchedule(ScanRational b, std::uint32_t patch_height, std::uint32_t patch_width);

  const ScanRational& b() const { return b_; }
  std::uint32_t height() const { return height_; }
  std::uint32_t width() const { return width_; }
  std::uint64_t total_steps() const { return wavefronts_.size(); }

  std::uint32_t step_of(std::uint32_t h, std::uint32_t w) const { return steps_[h * width_ + w]; }
  /// Pixels of one step, ordered by row. Some steps are empty when b > W'.
  const std::vector<PixelIndex>& wavefront(std::size_t step) const { return wavefronts_[step]; }
  const std::vector<std::vector<PixelIndex>>& wavefronts() const { return wavefronts_; }

  std::string dump() const;

 private:
  ScanRational b_;
  std::uint32_t height_;
  std::uint32_t width_;
  std::vector<std::uint32_t> steps_;
  std::vector<std::vector<PixelIndex>> wavefronts_;
};

ScanSchedule build_schedule(const ScanRational& b, std::uint32_t patch_height, std::uint32_t patch_width);

/// Causal K x K masks, one per row residue h mod F.
class MaskSet {
 public:
  MaskSet(ScanRational b, int kernel);

  const ScanRational& b() const { return b_; }
  int kernel() const { return kernel_; }
  int radius() const { return kernel_ / 2; }
  std::uint32_t period() const { return period_; }

  /// Mask entry for the row class of `row`; dy, dx in [-radius, radius].
  bool allows(std::uint32_t row, int dy, int dx) const {
    return masks_[row % period_][static_cast<std::size_t>((dy + radius()) * kernel_ + dx + radius())] != 0;
  }
  const std::vector<std::uint8_t>& mask(std::uint32_t residue) const { return masks_[residue]; }
  std::vector<std::uint8_t>& mutable_mask(std::uint32_t residue) { return masks_[residue]; }

  /// Number of pairwise different masks among the F residues.
  std::size_t distinct_count() const;

  std::string dump() const;

 private:
  ScanRational b_;
  int kernel_;
  std::uint32_t period_;
  std::vector<std::vector<std::uint8_t>> masks_;
};

MaskSet build_masks(const ScanRational& b, int kernel);

struct CausalityViolation {
  PixelIndex pixel;
  int dy = 0;
  int dx = 0;
  std::uint32_t pixel_step = 0;
  std::uint32_t neighbour_step = 0;
};

struct CausalityReport {
  std::optional<CausalityViolation> first_violation;
  std::uint64_t taps_checked = 0;

  bool ok() const { return !first_violation.has_value(); }
};

/// Exhaustive check that every enabled tap of every pixel points at a strictly earlier step.
CausalityReport verify_causality(const ScanSchedule& schedule, const MaskSet& masks);

}  // namespace bitsplit
