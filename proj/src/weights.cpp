#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/sha.h>

#include "bitsplit/errors.hpp"
#include "bitsplit/model.hpp"
#include "bitsplit/volume.hpp"

namespace bitsplit {

namespace {

constexpr char kMagic[4] = {'B', 'S', 'P', 'W'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kConfigFields = 12;

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + n);
  }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw FormatError("weight file truncated at byte " + std::to_string(pos));
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + static_cast<std::size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + static_cast<std::size_t>(i)]) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  std::span<const std::uint8_t> buf;
  std::size_t pos = 0;
};

Sha256 sha256(std::span<const std::uint8_t> data) {
  Sha256 d{};
  SHA256(data.data(), data.size(), d.data());
  return d;
}

}  // namespace

std::string to_hex(const Sha256& digest) {
  std::ostringstream os;
  for (auto b : digest) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
  return os.str();
}

std::vector<std::uint8_t> Model::serialize() const {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(kConfigFields);
  const ModelConfig& c = config_;
  for (std::uint32_t v : {c.fe_channels, c.embed_channels, c.heads, c.head_dim, c.attn_stride, c.mixtures,
                          c.masked_channels, c.align_out_channels, c.ppn_hidden, c.ffn_hidden, c.kernel,
                          static_cast<std::uint32_t>(c.intra ? 1 : 0)}) {
    w.u32(v);
  }
  w.u32(static_cast<std::uint32_t>(params_.size()));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string& name = params_.name(i);
    const Mat& m = params_[i];
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index col = 0; col < m.cols(); ++col) w.f64(m(r, col));
    }
  }
  const Sha256 digest = sha256(w.out);
  w.bytes(digest.data(), digest.size());
  return std::move(w.out);
}

Model Model::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + 32 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a weight file");
  const auto body = bytes.first(bytes.size() - 32);
  const Sha256 digest = sha256(body);
  if (std::memcmp(digest.data(), bytes.data() + body.size(), 32) != 0) {
    throw FormatError("weight file hash mismatch");
  }
  Reader r(body);
  r.pos = 4;
  if (r.u32() != kVersion) throw FormatError("unsupported weight file version");
  if (r.u32() != kConfigFields) throw FormatError("unexpected weight file config layout");
  ModelConfig c;
  c.fe_channels = r.u32();
  c.embed_channels = r.u32();
  c.heads = r.u32();
  c.head_dim = r.u32();
  c.attn_stride = r.u32();
  c.mixtures = r.u32();
  c.masked_channels = r.u32();
  c.align_out_channels = r.u32();
  c.ppn_hidden = r.u32();
  c.ffn_hidden = r.u32();
  c.kernel = r.u32();
  c.intra = r.u32() != 0;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid model config in weight file: ") + e.what());
  }
  Model m(c);
  const std::uint32_t count = r.u32();
  if (count != m.params_.size()) throw FormatError("weight file tensor count does not match its config");
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u16());
    Mat& dst = m.params_[i];
    if (name != m.params_.name(i)) throw FormatError("unexpected tensor '" + name + "' in weight file");
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != dst.rows() || cols != dst.cols()) throw FormatError("tensor '" + name + "' has wrong dims");
    for (Eigen::Index rr = 0; rr < dst.rows(); ++rr) {
      for (Eigen::Index cc = 0; cc < dst.cols(); ++cc) dst(rr, cc) = r.f64();
    }
    if (!dst.allFinite()) throw FormatError("tensor '" + name + "' has non-finite values");
  }
  if (r.pos != body.size()) throw FormatError("trailing bytes in weight file");
  return m;
}

void Model::save(const std::string& path) const { write_file_atomic(path, serialize()); }

Model Model::load(const std::string& path) { return deserialize(read_file(path)); }

Sha256 Model::hash() const {
  const auto bytes = serialize();
  Sha256 d{};
  std::memcpy(d.data(), bytes.data() + bytes.size() - 32, 32);
  return d;
}

}  // namespace bitsplit
