#include "bitsplit/codec.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <sstream>

#include "bitsplit/errors.hpp"

namespace bitsplit {

namespace {

constexpr char kMagic[4] = {'B', 'D', 'L', 'V'};
constexpr std::uint8_t kKnownFlags = kFlagExternalMsbv | kFlagOffset | kFlagZeroFirstSlice | kFlagIntraModel;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Cursor {
 public:
  Cursor(std::span<const std::uint8_t> b, std::size_t pos = 0) : buf_(b), pos_(pos) {}
  std::uint64_t le(int bytes, const char* what) {
    if (pos_ + static_cast<std::size_t>(bytes) > buf_.size()) {
      throw FormatError(std::string("container truncated in ") + what);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }
  std::span<const std::uint8_t> take(std::size_t n) {
    auto s = buf_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> buf_;
  std::size_t pos_;
};

Bitstream read_segment(Cursor& c, const std::string& what) {
  const std::uint64_t len = c.le(8, what.c_str());
  if (len > c.remaining()) {
    throw FormatError(what + " truncated: declared " + std::to_string(len) + " bytes, " +
                      std::to_string(c.remaining()) + " present");
  }
  const auto s = c.take(static_cast<std::size_t>(len));
  return Bitstream{std::vector<std::uint8_t>(s.begin(), s.end())};
}

int msb_depth(const ContainerHeader& h) { return h.bit_depth - h.d; }

// Normalized crop of a slice; `symbols` empty means an all-zero slice.
Mat crop_normalized(std::span<const std::uint16_t> symbols, std::uint32_t width, const PatchRect& r, int depth) {
  std::vector<std::uint16_t> buf(static_cast<std::size_t>(r.height) * r.width, 0);
  if (!symbols.empty()) {
    for (std::uint32_t h = 0; h < r.height; ++h) {
      for (std::uint32_t w = 0; w < r.width; ++w) {
        buf[h * r.width + w] = symbols[static_cast<std::size_t>(r.h0 + h) * width + r.w0 + w];
      }
    }
  }
  return normalize_symbols(buf, depth);
}

struct SliceInputs {
  std::span<const std::uint16_t> msb_t;
  std::span<const std::uint16_t> msb_prev;  // empty for the first slice
  std::span<const std::uint16_t> lsb_prev;  // empty for the first slice
};

class ScheduleCache {
 public:
  explicit ScheduleCache(ScanRational b) : b_(b) {}
  const ScanSchedule& get(std::uint32_t h, std::uint32_t w) {
    auto it = cache_.find({h, w});
    if (it == cache_.end()) it = cache_.emplace(std::make_pair(h, w), build_schedule(b_, h, w)).first;
    return it->second;
  }

 private:
  ScanRational b_;
  std::map<std::pair<std::uint32_t, std::uint32_t>, ScanSchedule> cache_;
};

// Walks one slice in bitstream order: patches row-major, wavefronts ascending,
// pixels by row within a wavefront. `code(freqs, index)` encodes or decodes the
// symbol of pixel `index` of the slice and returns it.
template <class CodeFn>
void walk_slice(const Model& model, const ContainerHeader& hdr, const MaskSet& masks, ScheduleCache& schedules,
                std::size_t t, const SliceInputs& in, std::span<std::uint16_t> lsb, CodeFn&& code) {
  const int d = hdr.d;
  const int md = msb_depth(hdr);
  const bool zero_prev = in.msb_prev.empty() || model.config().intra;
  const double range = std::ldexp(1.0, d) - 1.0;
  const auto patches = tile(hdr.height, hdr.width, hdr.patch_height, hdr.patch_width);
  LogisticMixtureParams params;
  std::vector<std::uint32_t> freqs;
  for (std::size_t pi = 0; pi < patches.size(); ++pi) {
    const PatchRect& r = patches[pi];
    const Grid grid{static_cast<int>(r.height), static_cast<int>(r.width)};
    const Mat xm_t = crop_normalized(in.msb_t, hdr.width, r, md);
    const Mat xm_prev = crop_normalized(zero_prev ? std::span<const std::uint16_t>{} : in.msb_prev, hdr.width, r, md);
    const Mat xl_prev = crop_normalized(zero_prev ? std::span<const std::uint16_t>{} : in.lsb_prev, hdr.width, r, d);
    const Mat ca = tfam_forward(model, xm_t, xm_prev, xl_prev, grid);
    PixelPredictor predictor(model, ca, grid, masks, d);
    const ScanSchedule& sched = schedules.get(r.height, r.width);
    std::vector<double> xl_norm(static_cast<std::size_t>(grid.n()), 0.0);
    std::size_t step = 0;
    try {
      for (; step < sched.total_steps(); ++step) {
        for (const PixelIndex& px : sched.wavefront(step)) {
          predictor.predict(xl_norm, px.h, px.w, params);
          const Pmf pmf = discretize(params, d);
          quantize_into(pmf.probabilities, kDefaultPrecision, freqs);
          const std::size_t index = static_cast<std::size_t>(r.h0 + px.h) * hdr.width + r.w0 + px.w;
          const std::uint16_t sym = static_cast<std::uint16_t>(code(freqs, index));
          lsb[index] = sym;
          xl_norm[px.h * r.width + px.w] = 2.0 * sym / range - 1.0;
        }
      }
    } catch (const DecodeError& e) {
      std::ostringstream os;
      os << "slice " << t << ", patch " << pi << " at (" << r.h0 << ", " << r.w0 << "), step " << step << ": "
         << e.what();
      throw DecodeError(os.str());
    }
  }
}

void check_model(const ContainerHeader& h, const Model& model) {
  const auto& c = model.config();
  if (c.kernel != h.kernel) throw FormatError("model kernel does not match the container");
  if (c.mixtures != h.mixtures) throw FormatError("model mixture count does not match the container");
  if (c.intra != h.has(kFlagIntraModel)) throw FormatError("model slice conditioning does not match the container");
  if (model.hash() != h.model_hash) {
    throw FormatError("model hash " + to_hex(model.hash()) + " does not match the container's " +
                      to_hex(h.model_hash));
  }
}

}  // namespace

std::vector<std::uint8_t> ContainerHeader::serialize() const {
  validate();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, version, 1);
  put_le(out, flags, 1);
  put_le(out, slices, 4);
  put_le(out, height, 4);
  put_le(out, width, 4);
  put_le(out, bit_depth, 1);
  put_le(out, d, 1);
  put_le(out, patch_height, 2);
  put_le(out, patch_width, 2);
  put_le(out, b.p, 2);
  put_le(out, b.q, 2);
  put_le(out, kernel, 1);
  put_le(out, mixtures, 1);
  out.insert(out.end(), model_hash.begin(), model_hash.end());
  if (has(kFlagOffset)) put_le(out, static_cast<std::uint32_t>(offset), 4);
  return out;
}

ContainerHeader ContainerHeader::parse(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a BDLV container");
  Cursor c(bytes, 4);
  ContainerHeader h;
  h.version = static_cast<std::uint8_t>(c.le(1, "header"));
  if (h.version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(h.version));
  h.flags = static_cast<std::uint8_t>(c.le(1, "header"));
  h.slices = static_cast<std::uint32_t>(c.le(4, "header"));
  h.height = static_cast<std::uint32_t>(c.le(4, "header"));
  h.width = static_cast<std::uint32_t>(c.le(4, "header"));
  h.bit_depth = static_cast<std::uint8_t>(c.le(1, "header"));
  h.d = static_cast<std::uint8_t>(c.le(1, "header"));
  h.patch_height = static_cast<std::uint16_t>(c.le(2, "header"));
  h.patch_width = static_cast<std::uint16_t>(c.le(2, "header"));
  const auto p = static_cast<std::uint32_t>(c.le(2, "header"));
  const auto q = static_cast<std::uint32_t>(c.le(2, "header"));
  if (q == 0) throw FormatError("container scan slope has a zero denominator");
  h.b = ScanRational(p, q);
  if (h.b.p != p || h.b.q != q) throw FormatError("container scan slope is not in lowest terms");
  h.kernel = static_cast<std::uint8_t>(c.le(1, "header"));
  h.mixtures = static_cast<std::uint8_t>(c.le(1, "header"));
  const auto hash = c.take(std::min<std::size_t>(32, c.remaining()));
  if (hash.size() != 32) throw FormatError("container truncated in header");
  std::memcpy(h.model_hash.data(), hash.data(), 32);
  if (h.has(kFlagOffset)) h.offset = static_cast<std::int32_t>(static_cast<std::uint32_t>(c.le(4, "header")));
  try {
    h.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid container header: ") + e.what());
  }
  if (consumed) *consumed = c.pos();
  return h;
}

void ContainerHeader::validate() const {
  if ((flags & ~kKnownFlags) != 0) throw std::invalid_argument("unknown flag bits");
  if (!has(kFlagZeroFirstSlice)) throw std::invalid_argument("first-slice convention flag missing");
  if (slices == 0 || height == 0 || width == 0) throw std::invalid_argument("dims must be positive");
  if (bit_depth < 1 || bit_depth > 16) throw std::invalid_argument("bit depth outside [1, 16]");
  if (d < 1 || d > bit_depth) throw std::invalid_argument("cut position outside [1, bit depth]");
  if (patch_height == 0 || patch_width == 0) throw std::invalid_argument("patch dims must be positive");
  if (kernel % 2 == 0) throw std::invalid_argument("kernel must be odd");
  if (mixtures == 0) throw std::invalid_argument("mixture count must be positive");
  if (!has(kFlagOffset) && offset != 0) throw std::invalid_argument("offset set without its flag");
}

std::vector<std::uint8_t> Container::serialize() const {
  if (lsbv.size() != header.slices) throw std::invalid_argument("one LSBV stream per slice required");
  std::vector<std::uint8_t> out = header.serialize();
  out.reserve(byte_size());
  put_le(out, msbv.bytes.size(), 8);
  out.insert(out.end(), msbv.bytes.begin(), msbv.bytes.end());
  for (const auto& s : lsbv) {
    put_le(out, s.bytes.size(), 8);
    out.insert(out.end(), s.bytes.begin(), s.bytes.end());
  }
  return out;
}

Container Container::parse(std::span<const std::uint8_t> bytes) {
  Container c;
  std::size_t pos = 0;
  c.header = ContainerHeader::parse(bytes, &pos);
  Cursor cur(bytes, pos);
  c.msbv = read_segment(cur, "MSBV segment");
  for (std::uint32_t t = 0; t < c.header.slices; ++t) {
    c.lsbv.push_back(read_segment(cur, "LSBV segment of slice " + std::to_string(t)));
  }
  if (cur.remaining() != 0) throw FormatError(std::to_string(cur.remaining()) + " trailing bytes after the last segment");
  return c;
}

std::uint64_t Container::byte_size() const {
  std::uint64_t n = header.byte_size() + 8 + msbv.bytes.size();
  for (const auto& s : lsbv) n += 8 + s.bytes.size();
  return n;
}

void write_container(const std::string& path, const Container& container) {
  write_file_atomic(path, container.serialize());
}

Container read_container(const std::string& path) { return Container::parse(read_file(path)); }

std::vector<PatchRect> tile(std::uint32_t height, std::uint32_t width, std::uint32_t patch_height,
                            std::uint32_t patch_width) {
  if (patch_height == 0 || patch_width == 0) throw std::invalid_argument("patch dims must be positive");
  std::vector<PatchRect> out;
  for (std::uint32_t h0 = 0; h0 < height; h0 += patch_height) {
    for (std::uint32_t w0 = 0; w0 < width; w0 += patch_width) {
      out.push_back(PatchRect{h0, w0, std::min(patch_height, height - h0), std::min(patch_width, width - w0)});
    }
  }
  return out;
}

Container encode_volume(const Volume& volume, const Model& model, const EncodeOptions& options) {
  pin_eigen_blocking();
  const auto& cfg = model.config();
  if (volume.size() == 0) throw std::invalid_argument("cannot encode an empty volume");
  if (volume.bit_depth() < 1 || volume.bit_depth() > 16) throw std::invalid_argument("bit depth outside [1, 16]");
  if (options.d < 1 || options.d > volume.bit_depth()) {
    throw std::invalid_argument("d = " + std::to_string(options.d) + " outside [1, " +
                                std::to_string(volume.bit_depth()) + "]");
  }
  if (options.patch_height == 0 || options.patch_width == 0 || options.patch_height > 0xFFFF ||
      options.patch_width > 0xFFFF) {
    throw std::invalid_argument("patch dims must lie in [1, 65535]");
  }
  if (options.b.p > 0xFFFF || options.b.q > 0xFFFF) throw std::invalid_argument("scan slope terms exceed 16 bits");
  if (cfg.kernel > 0xFF || cfg.mixtures > 0xFF) throw std::invalid_argument("model kernel or mixtures exceed 8 bits");
  if (volume.slices() > 0xFFFFFFFFu || volume.height() > 0xFFFFFFFFu || volume.width() > 0xFFFFFFFFu) {
    throw std::invalid_argument("volume dims exceed 32 bits");
  }

  Container c;
  ContainerHeader& h = c.header;
  h.flags = kFlagZeroFirstSlice;
  if (options.external_msbv) h.flags |= kFlagExternalMsbv;
  if (volume.offset() != 0) h.flags |= kFlagOffset;
  if (cfg.intra) h.flags |= kFlagIntraModel;
  h.slices = static_cast<std::uint32_t>(volume.slices());
  h.height = static_cast<std::uint32_t>(volume.height());
  h.width = static_cast<std::uint32_t>(volume.width());
  h.bit_depth = static_cast<std::uint8_t>(volume.bit_depth());
  h.d = static_cast<std::uint8_t>(options.d);
  h.patch_height = static_cast<std::uint16_t>(options.patch_height);
  h.patch_width = static_cast<std::uint16_t>(options.patch_width);
  h.b = options.b;
  h.kernel = static_cast<std::uint8_t>(cfg.kernel);
  h.mixtures = static_cast<std::uint8_t>(cfg.mixtures);
  h.model_hash = model.hash();
  h.offset = volume.offset();
  h.validate();

  const SubvolumePair parts = split(volume, options.d);
  const ConcatImage msb_image = concat(parts.msbv);
  c.msbv = options.external_msbv ? external_encode(msb_image, *options.external_msbv) : encode_msbv(msb_image);

  const MaskSet masks = build_masks(h.b, static_cast<int>(cfg.kernel));
  ScheduleCache schedules(h.b);
  std::vector<std::uint16_t> scratch(volume.slice_size());
  for (std::size_t t = 0; t < volume.slices(); ++t) {
    SliceInputs in{parts.msbv.slice(t), {}, {}};
    if (t > 0) {
      in.msb_prev = parts.msbv.slice(t - 1);
      in.lsb_prev = parts.lsbv.slice(t - 1);
    }
    const auto truth = parts.lsbv.slice(t);
    RangeEncoder enc;
    walk_slice(model, h, masks, schedules, t, in, scratch, [&](const std::vector<std::uint32_t>& f, std::size_t i) {
      encode_symbol(enc, f, truth[i], kDefaultPrecision);
      return truth[i];
    });
    c.lsbv.push_back(enc.finish());
  }
  return c;
}

Volume decode_volume(const Container& container, const Model& model,
                     const std::optional<ExternalCodecHook>& external_msbv) {
  pin_eigen_blocking();
  const ContainerHeader& h = container.header;
  h.validate();
  check_model(h, model);
  if (container.lsbv.size() != h.slices) throw FormatError("container holds the wrong number of LSBV streams");
  if (h.has(kFlagExternalMsbv) && !external_msbv) {
    throw FormatError("container MSBV was produced by an external codec; a decode command is required");
  }

  const std::size_t rows = static_cast<std::size_t>(h.slices) * h.height;
  const ConcatImage msb_image = h.has(kFlagExternalMsbv)
                                    ? external_decode(container.msbv, rows, h.width, msb_depth(h), *external_msbv)
                                    : decode_msbv(container.msbv, rows, h.width, msb_depth(h));
  const Volume msbv = deconcat(msb_image, h.slices);
  Volume lsbv(h.slices, h.height, h.width, h.d);

  const MaskSet masks = build_masks(h.b, static_cast<int>(h.kernel));
  ScheduleCache schedules(h.b);
  for (std::size_t t = 0; t < h.slices; ++t) {
    SliceInputs in{msbv.slice(t), {}, {}};
    if (t > 0) {
      in.msb_prev = msbv.slice(t - 1);
      in.lsb_prev = std::span<const std::uint16_t>(lsbv.slice(t - 1));
    }
    const auto& stream = container.lsbv[t].bytes;
    std::optional<RangeDecoder> dec;
    try {
      dec.emplace(stream);
    } catch (const DecodeError& e) {
      throw DecodeError("slice " + std::to_string(t) + ": " + e.what());
    }
    walk_slice(model, h, masks, schedules, t, in, lsbv.slice(t),
               [&](const std::vector<std::uint32_t>& f, std::size_t) {
                 return decode_symbol(*dec, f, kDefaultPrecision);
               });
    if (!dec->exhausted()) {
      throw DecodeError("slice " + std::to_string(t) + ": LSBV stream has " +
                        std::to_string(stream.size() - dec->bytes_consumed()) + " trailing bytes");
    }
  }
  SubvolumePair parts{msbv, lsbv, BitDivision{h.d, h.bit_depth}};
  Volume merged = merge(parts);
  return Volume(merged.slices(), merged.height(), merged.width(), merged.bit_depth(),
                std::vector<std::uint16_t>(merged.samples().begin(), merged.samples().end()), h.offset);
}

RateBreakdown rate_breakdown(const Container& c) {
  RateBreakdown r;
  r.voxels = static_cast<std::uint64_t>(c.header.slices) * c.header.height * c.header.width;
  r.header_bits = c.header.byte_size() * 8;
  r.msbv_bits = (8 + c.msbv.bytes.size()) * 8;
  for (const auto& s : c.lsbv) {
    const std::uint64_t bits = (8 + s.bytes.size()) * 8;
    r.slice_bits.push_back(bits);
    r.lsbv_bits += bits;
  }
  return r;
}

std::string describe(const ContainerHeader& h) {
  std::ostringstream os;
  os << "version " << static_cast<int>(h.version) << "\n"
     << "flags 0x" << std::hex << static_cast<int>(h.flags) << std::dec << " (msbv "
     << (h.has(kFlagExternalMsbv) ? "external" : "internal") << (h.has(kFlagOffset) ? ", offset" : "")
     << (h.has(kFlagZeroFirstSlice) ? ", zero-filled first slice" : "") << (h.has(kFlagIntraModel) ? ", intra" : "")
     << ")\n"
     << "dims " << h.slices << "x" << h.height << "x" << h.width << "\n"
     << "bit_depth " << static_cast<int>(h.bit_depth) << "\n"
     << "d " << static_cast<int>(h.d) << "\n"
     << "patch " << h.patch_height << "x" << h.patch_width << "\n"
     << "b " << h.b.to_string() << "\n"
     << "kernel " << static_cast<int>(h.kernel) << "\n"
     << "mixtures " << static_cast<int>(h.mixtures) << "\n"
     << "model_hash " << to_hex(h.model_hash) << "\n";
  if (h.has(kFlagOffset)) os << "offset " << h.offset << "\n";
  return os.str();
}

}  // namespace bitsplit
