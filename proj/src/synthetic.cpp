#include "bitsplit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace bitsplit {

namespace {

// Standard-library distributions are implementation-defined, so the samplers
// are built from raw mt19937_64 output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  std::uint64_t bits() { return engine_(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

using Field = std::vector<double>;

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable blur with mirrored borders.
Field blur(const Field& in, std::size_t height, std::size_t width, double sigma) {
  if (sigma <= 0.0) return in;
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  auto mirror = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
  };
  const int h_n = static_cast<int>(height);
  const int w_n = static_cast<int>(width);
  Field tmp(in.size());
  for (int h = 0; h < h_n; ++h) {
    for (int w = 0; w < w_n; ++w) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        acc += k[static_cast<std::size_t>(j + radius)] * in[static_cast<std::size_t>(h * w_n + mirror(w + j, w_n))];
      }
      tmp[static_cast<std::size_t>(h * w_n + w)] = acc;
    }
  }
  Field out(in.size());
  for (int h = 0; h < h_n; ++h) {
    for (int w = 0; w < w_n; ++w) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j) {
        acc += k[static_cast<std::size_t>(j + radius)] * tmp[static_cast<std::size_t>(mirror(h + j, h_n) * w_n + w)];
      }
      out[static_cast<std::size_t>(h * w_n + w)] = acc;
    }
  }
  return out;
}

// Blurred white noise rescaled to unit standard deviation.
Field smooth_noise(Rng& rng, std::size_t height, std::size_t width, double sigma) {
  Field f(height * width);
  for (double& v : f) v = rng.normal();
  f = blur(f, height, width, sigma);
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(f.size()));
  for (double& v : f) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return f;
}

struct Blob {
  double cy, cx, ry, rx, level, vy, vx;
};

}  // namespace

std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::blurred_noise:
      return "blurred-noise";
    case GeneratorKind::ramp_noise:
      return "ramp+noise";
    case GeneratorKind::sparse_structures:
      return "sparse-structures";
  }
  return "?";
}

GeneratorKind parse_generator_kind(const std::string& text) {
  for (auto k : {GeneratorKind::blurred_noise, GeneratorKind::ramp_noise, GeneratorKind::sparse_structures}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown generator kind '" + text +
                              "' (expected blurred-noise, ramp+noise or sparse-structures)");
}

void SyntheticSpec::validate() const {
  if (slices == 0 || height == 0 || width == 0) throw std::invalid_argument("synthetic dims must be positive");
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("synthetic bit depth must be 8 or 16");
  if (!(smoothness >= 0.0) || !(amplitude >= 0.0) || !(noise >= 0.0) || !(drift >= 0.0)) {
    throw std::invalid_argument("synthetic smoothness, amplitude, noise and drift must be non-negative");
  }
}

Volume generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t hh = spec.height;
  const std::size_t ww = spec.width;
  const std::size_t n = hh * ww;
  const double range = std::ldexp(1.0, spec.bit_depth) - 1.0;
  Volume out(spec.slices, hh, ww, spec.bit_depth);

  if (spec.smoothness == 0.0) {
    for (auto& v : out.samples()) v = static_cast<std::uint16_t>(rng.bits() & static_cast<std::uint64_t>(range));
    return out;
  }

  const double amp = spec.amplitude > 0.0 ? spec.amplitude : (range + 1.0) / 16.0;
  const double sigma = spec.smoothness;
  Field structure = smooth_noise(rng, hh, ww, sigma);

  std::vector<Blob> blobs;
  if (spec.kind == GeneratorKind::sparse_structures) {
    const std::size_t count = 2 + n / 1024;
    for (std::size_t i = 0; i < count; ++i) {
      Blob b;
      b.cy = rng.uniform() * static_cast<double>(hh);
      b.cx = rng.uniform() * static_cast<double>(ww);
      b.ry = 2.0 + rng.uniform() * static_cast<double>(hh) / 6.0;
      b.rx = 2.0 + rng.uniform() * static_cast<double>(ww) / 6.0;
      b.level = (2.0 + 4.0 * rng.uniform()) * amp;
      b.vy = 0.5 * (rng.uniform() - 0.5);
      b.vx = 0.5 * (rng.uniform() - 0.5);
      blobs.push_back(b);
    }
  }
  const double ramp_angle = 2.0 * std::numbers::pi * rng.uniform();

  for (std::size_t t = 0; t < spec.slices; ++t) {
    if (t > 0) {
      const Field step = smooth_noise(rng, hh, ww, sigma);
      for (std::size_t i = 0; i < n; ++i) structure[i] += spec.drift * step[i];
    }
    Field value(n);
    switch (spec.kind) {
      case GeneratorKind::blurred_noise:
        for (std::size_t i = 0; i < n; ++i) value[i] = 0.5 * range + amp * structure[i];
        break;
      case GeneratorKind::ramp_noise: {
        // Ramp spanning about four amplitudes, moving one row per slice.
        const double gy = std::sin(ramp_angle) * 4.0 * amp / static_cast<double>(std::max(hh, ww));
        const double gx = std::cos(ramp_angle) * 4.0 * amp / static_cast<double>(std::max(hh, ww));
        for (std::size_t h = 0; h < hh; ++h) {
          for (std::size_t w = 0; w < ww; ++w) {
            const double y = static_cast<double>(h) - 0.5 * static_cast<double>(hh) + static_cast<double>(t);
            const double x = static_cast<double>(w) - 0.5 * static_cast<double>(ww);
            value[h * ww + w] = 0.5 * range + gy * y + gx * x + 0.25 * amp * structure[h * ww + w];
          }
        }
        break;
      }
      case GeneratorKind::sparse_structures: {
        Field mask(n, 0.0);
        for (const Blob& b : blobs) {
          const double cy = b.cy + b.vy * static_cast<double>(t);
          const double cx = b.cx + b.vx * static_cast<double>(t);
          for (std::size_t h = 0; h < hh; ++h) {
            for (std::size_t w = 0; w < ww; ++w) {
              const double dy = (static_cast<double>(h) - cy) / b.ry;
              const double dx = (static_cast<double>(w) - cx) / b.rx;
              if (dy * dy + dx * dx <= 1.0) mask[h * ww + w] = std::max(mask[h * ww + w], b.level);
            }
          }
        }
        mask = blur(mask, hh, ww, std::max(0.5, sigma / 4.0));
        for (std::size_t i = 0; i < n; ++i) value[i] = 0.1 * range + mask[i] + 0.1 * amp * structure[i];
        break;
      }
    }
    auto slice = out.slice(t);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = std::round(value[i] + spec.noise * rng.normal());
      slice[i] = static_cast<std::uint16_t>(std::clamp(v, 0.0, range));
    }
  }
  return out;
}

}  // namespace bitsplit
