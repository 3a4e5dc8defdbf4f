#include "bitsplit/msbv.hpp"

#include <bit>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <stdexcept>

#include "bitsplit/errors.hpp"

namespace bitsplit {

ConcatImage concat(const Volume& volume) {
  ConcatImage img;
  img.height = volume.slices() * volume.height();
  img.width = volume.width();
  img.bit_depth = volume.bit_depth();
  img.samples.assign(volume.samples().begin(), volume.samples().end());
  return img;
}

Volume deconcat(const ConcatImage& image, std::size_t slices) {
  if (slices == 0 || image.height % slices != 0) {
    throw std::invalid_argument("image height is not a multiple of the slice count");
  }
  return Volume(slices, image.height / slices, image.width, image.bit_depth, image.samples);
}

GradientThresholds GradientThresholds::for_depth(int bit_depth) {
  const double maxval = static_cast<double>((1u << bit_depth) - 1u);
  const auto scaled = [&](double base) { return static_cast<std::int32_t>(base * maxval / 255.0 + 0.5); };
  GradientThresholds th;
  th.t1 = std::max<std::int32_t>(2, scaled(3));
  th.t2 = std::max<std::int32_t>(th.t1 + 1, scaled(7));
  th.t3 = std::max<std::int32_t>(th.t2 + 1, scaled(21));
  return th;
}

int GradientThresholds::quantize(std::int32_t g) const {
  const std::int32_t a = g < 0 ? -g : g;
  int level;
  if (a == 0) level = 0;
  else if (a < t1) level = 1;
  else if (a < t2) level = 2;
  else if (a < t3) level = 3;
  else level = 4;
  return g < 0 ? -level : level;
}

int gradient_context(const GradientThresholds& th, std::int32_t a, std::int32_t b, std::int32_t c,
                     std::int32_t d) {
  const int q1 = th.quantize(d - b) + 4;
  const int q2 = th.quantize(b - c) + 4;
  const int q3 = th.quantize(c - a) + 4;
  return (q1 * 9 + q2) * 9 + q3;
}

namespace {
constexpr std::uint32_t kInitialFrequency = 16;
}

AdaptiveModel::AdaptiveModel(std::size_t symbols)
    : freq_(symbols, kInitialFrequency), total_(static_cast<std::uint32_t>(symbols) * kInitialFrequency) {}

void AdaptiveModel::update(std::uint32_t symbol) {
  freq_[symbol] += kIncrement;
  total_ += kIncrement;
  if (total_ >= kLimit) {
    total_ = 0;
    for (auto& f : freq_) {
      f = (f + 1) / 2;
      total_ += f;
    }
  }
}

void AdaptiveModel::encode(RangeEncoder& enc, std::uint32_t symbol) {
  std::uint32_t cum = 0;
  for (std::uint32_t k = 0; k < symbol; ++k) cum += freq_[k];
  enc.encode(cum, freq_[symbol], total_);
  update(symbol);
}

std::uint32_t AdaptiveModel::decode(RangeDecoder& dec) {
  const std::uint32_t target = dec.decode_target(total_);
  std::uint32_t cum = 0;
  std::uint32_t k = 0;
  while (target >= cum + freq_[k]) cum += freq_[k++];
  dec.consume(cum, freq_[k]);
  update(k);
  return k;
}

namespace {

// Residual e in [-2^(m-1), 2^(m-1)) becomes class 0 (zero), 2k-1 (positive) or
// 2k (negative) where k is the bit width of |e|, plus k-1 mantissa bits. The
// only magnitude with k = m is the negative extreme, which needs no mantissa.
struct ResidualCode {
  std::uint32_t cls = 0;
  std::uint32_t mantissa = 0;
  int mantissa_bits = 0;
};

ResidualCode split_residual(std::int32_t e, int depth) {
  if (e == 0) return {};
  const auto mag = static_cast<std::uint32_t>(e < 0 ? -e : e);
  const int k = std::bit_width(mag);
  ResidualCode rc;
  rc.cls = static_cast<std::uint32_t>(e > 0 ? 2 * k - 1 : 2 * k);
  rc.mantissa_bits = k == depth ? 0 : k - 1;
  rc.mantissa = rc.mantissa_bits == 0 ? 0 : mag - (1u << (k - 1));
  return rc;
}

int mantissa_bits_for(std::uint32_t cls, int depth) {
  if (cls == 0) return 0;
  const int k = static_cast<int>((cls + 1) / 2);
  return k == depth ? 0 : k - 1;
}

std::int32_t join_residual(std::uint32_t cls, std::uint32_t mantissa, int depth) {
  if (cls == 0) return 0;
  const int k = static_cast<int>((cls + 1) / 2);
  const std::int32_t mag = k == depth ? (1 << (depth - 1)) : static_cast<std::int32_t>((1u << (k - 1)) + mantissa);
  return (cls % 2 == 1) ? mag : -mag;
}

std::uint64_t hash_models(const std::vector<AdaptiveModel>& models) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& m : models) {
    for (std::uint32_t f : m.frequencies()) {
      for (int i = 0; i < 4; ++i) {
        h ^= (f >> (8 * i)) & 0xFF;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

// Shared scan for encoder and decoder: `code` receives (context, prediction) and
// returns the sample value at the current position.
template <typename CodeFn>
void scan_image(std::vector<std::uint16_t>& samples, std::size_t height, std::size_t width, int depth,
                CodeFn&& code) {
  const GradientThresholds th = GradientThresholds::for_depth(depth);
  const auto px = [&](std::ptrdiff_t h, std::ptrdiff_t w) -> std::int32_t {
    if (h < 0 || w < 0 || w >= static_cast<std::ptrdiff_t>(width)) return 0;
    return samples[static_cast<std::size_t>(h) * width + static_cast<std::size_t>(w)];
  };
  for (std::size_t h = 0; h < height; ++h) {
    for (std::size_t w = 0; w < width; ++w) {
      const auto ih = static_cast<std::ptrdiff_t>(h);
      const auto iw = static_cast<std::ptrdiff_t>(w);
      const std::int32_t a = px(ih, iw - 1);
      const std::int32_t b = px(ih - 1, iw);
      const std::int32_t c = px(ih - 1, iw - 1);
      const std::int32_t d = px(ih - 1, iw + 1);
      // Contexts whose leading nonzero gradient is negative share a table with
      // their mirror image; the residual sign is flipped to match.
      const int ctx = gradient_context(th, a, b, c, d);
      const bool flip = ctx < kGradientContexts / 2;
      const int merged = (flip ? kGradientContexts - 1 - ctx : ctx) - kGradientContexts / 2;
      samples[h * width + w] = code(merged, flip, med_predict(a, b, c));
    }
  }
}

std::int32_t fold(std::int32_t diff, int depth) {
  const std::int32_t range = 1 << depth;
  std::int32_t e = diff & (range - 1);
  if (e >= range / 2) e -= range;
  return e;
}

constexpr std::size_t kMergedContexts = kGradientContexts / 2 + 1;

}  // namespace

Bitstream encode_msbv(const ConcatImage& image, MsbvCodingStats* stats) {
  const int depth = image.bit_depth;
  if (depth < 0 || depth > 15) throw std::invalid_argument("high-bit image depth must lie in [0, 15]");
  if (image.samples.size() != image.height * image.width) throw std::invalid_argument("image size mismatch");
  if (depth == 0) {
    if (stats) stats->state_hash = 0;
    return {};
  }
  const std::uint32_t mask = (1u << depth) - 1u;
  std::vector<AdaptiveModel> models(kMergedContexts, AdaptiveModel(2 * static_cast<std::size_t>(depth) + 1));
  RangeEncoder enc;
  std::vector<std::uint16_t> work(image.samples.size(), 0);
  std::size_t index = 0;
  scan_image(work, image.height, image.width, depth, [&](int ctx, bool flip, std::int32_t pred) {
    const std::uint16_t x = image.samples[index++];
    if (x > mask) throw std::invalid_argument("sample exceeds image depth");
    std::int32_t e = fold(static_cast<std::int32_t>(x) - pred, depth);
    if (flip) e = fold(-e, depth);
    const ResidualCode rc = split_residual(e, depth);
    models[static_cast<std::size_t>(ctx)].encode(enc, rc.cls);
    if (rc.mantissa_bits > 0) enc.encode_bits(rc.mantissa, rc.mantissa_bits);
    return x;
  });
  if (stats) stats->state_hash = hash_models(models);
  return enc.finish();
}

ConcatImage decode_msbv(const Bitstream& stream, std::size_t height, std::size_t width, int depth,
                        MsbvCodingStats* stats) {
  if (depth < 0 || depth > 15) throw std::invalid_argument("high-bit image depth must lie in [0, 15]");
  ConcatImage img{height, width, depth, std::vector<std::uint16_t>(height * width, 0)};
  if (depth == 0) {
    if (!stream.bytes.empty()) throw DecodeError("zero-depth high-bit image must have an empty stream");
    if (stats) stats->state_hash = 0;
    return img;
  }
  const std::int32_t mask = (1 << depth) - 1;
  std::vector<AdaptiveModel> models(kMergedContexts, AdaptiveModel(2 * static_cast<std::size_t>(depth) + 1));
  RangeDecoder dec(stream.bytes);
  scan_image(img.samples, height, width, depth, [&](int ctx, bool flip, std::int32_t pred) {
    const std::uint32_t cls = models[static_cast<std::size_t>(ctx)].decode(dec);
    const int bits = mantissa_bits_for(cls, depth);
    const std::uint32_t mantissa = bits > 0 ? dec.decode_bits(bits) : 0;
    std::int32_t e = join_residual(cls, mantissa, depth);
    if (flip) e = fold(-e, depth);
    return static_cast<std::uint16_t>((pred + e) & mask);
  });
  if (!dec.exhausted()) throw DecodeError("high-bit stream has trailing bytes");
  if (stats) stats->state_hash = hash_models(models);
  return img;
}

namespace {

class ScratchDir {
 public:
  ScratchDir() {
    std::random_device rd;
    const auto base = std::filesystem::temp_directory_path();
    for (int attempt = 0; attempt < 16; ++attempt) {
      path_ = base / ("bitsplit-hook-" + std::to_string(rd()));
      if (std::filesystem::create_directory(path_)) return;
    }
    throw std::runtime_error("cannot create scratch directory for external codec");
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

std::string substitute(std::string cmd, const std::string& in, const std::string& out) {
  for (const auto& [key, value] : {std::pair<std::string, std::string>{"%in", in}, {"%out", out}}) {
    std::size_t pos = 0;
    while ((pos = cmd.find(key, pos)) != std::string::npos) {
      cmd.replace(pos, key.size(), value);
      pos += value.size();
    }
  }
  return cmd;
}

void run(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  if (status != 0) throw std::runtime_error("external codec command failed (" + std::to_string(status) + "): " + cmd);
}

Volume as_volume(const ConcatImage& image) {
  return Volume(1, image.height, image.width, image.bit_depth, image.samples);
}

void write_image(const ConcatImage& image, const std::string& path) {
  RawDescriptor desc;
  const auto bytes = export_raw(as_volume(image), false, &desc);
  write_file_atomic(path, bytes);
  desc.save(path + ".desc");
}

ConcatImage read_image(const std::string& path, std::size_t height, std::size_t width, int depth) {
  RawDescriptor desc;
  desc.slices = 1;
  desc.height = height;
  desc.width = width;
  desc.bit_depth = depth <= 8 ? 8 : 16;
  const Volume v = ingest_raw(read_file(path), desc);
  ConcatImage img{height, width, depth, std::vector<std::uint16_t>(v.samples().begin(), v.samples().end())};
  const std::uint32_t limit = (1u << depth) - 1u;
  for (auto s : img.samples) {
    if (s > limit) throw FormatError("external decoder produced a sample outside the image depth");
  }
  return img;
}

}  // namespace

Bitstream external_encode(const ConcatImage& image, const ExternalCodecHook& hook) {
  ScratchDir dir;
  const std::string raw = dir.file("image.raw");
  const std::string packed = dir.file("image.bin");
  const std::string back = dir.file("roundtrip.raw");
  write_image(image, raw);
  run(substitute(hook.encode_command, raw, packed));
  Bitstream out{read_file(packed)};
  run(substitute(hook.decode_command, packed, back));
  ConcatImage check;
  try {
    check = read_image(back, image.height, image.width, image.bit_depth);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("external codec round trip failed: ") + e.what());
  }
  if (!(check == image)) throw std::runtime_error("external codec round trip is not lossless");
  return out;
}

ConcatImage external_decode(const Bitstream& stream, std::size_t height, std::size_t width, int bit_depth,
                            const ExternalCodecHook& hook) {
  ScratchDir dir;
  const std::string packed = dir.file("image.bin");
  const std::string back = dir.file("image.raw");
  write_file_atomic(packed, stream.bytes);
  run(substitute(hook.decode_command, packed, back));
  return read_image(back, height, width, bit_depth);
}

}  // namespace bitsplit
