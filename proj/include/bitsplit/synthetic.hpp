#pragma once

#include <cstdint>
#include <string>

#include "bitsplit/volume.hpp"

namespace bitsplit {

enum class GeneratorKind { blurred_noise, ramp_noise, sparse_structures };

std::string to_string(GeneratorKind kind);
/// Accepts "blurred-noise", "ramp+noise" and "sparse-structures".
GeneratorKind parse_generator_kind(const std::string& text);

/// Seed-deterministic test volume. Every slice is the previous one plus a
/// small smooth perturbation and independent sensor noise.
struct SyntheticSpec {
  GeneratorKind kind = GeneratorKind::blurred_noise;
  std::size_t slices = 4;
  std::size_t height = 64;
  std::size_t width = 64;
  int bit_depth = 16;
  std::uint64_t seed = 1;
  /// Gaussian blur sigma in pixels. Zero gives i.i.d. uniform noise.
  double smoothness = 4.0;
  /// Standard deviation of the structure in sample units; 0 picks 2^depth / 16.
  double amplitude = 0.0;
  /// Standard deviation of the per-voxel noise in sample units.
  double noise = 1.0;
  /// Size of the slice-to-slice perturbation relative to the amplitude.
  double drift = 0.05;

  void validate() const;
};

Volume generate_synthetic(const SyntheticSpec& spec);

}  // namespace bitsplit
