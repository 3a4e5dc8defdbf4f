#include "bitsplit/volume.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "bitsplit/errors.hpp"

namespace bitsplit {

Volume::Volume(std::size_t slices, std::size_t height, std::size_t width, int bit_depth)
    : Volume(slices, height, width, bit_depth, std::vector<std::uint16_t>(slices * height * width, 0)) {}

Volume::Volume(std::size_t slices, std::size_t height, std::size_t width, int bit_depth,
               std::vector<std::uint16_t> samples, std::int32_t offset)
    : slices_(slices), height_(height), width_(width), bit_depth_(bit_depth), offset_(offset),
      samples_(std::move(samples)) {
  if (slices == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("volume dimensions must be positive");
  }
  if (bit_depth < 0 || bit_depth > 16) {
    throw std::invalid_argument("bit depth must lie in [0, 16]");
  }
  if (samples_.size() != slices * height * width) {
    throw std::invalid_argument("sample count " + std::to_string(samples_.size()) +
                                " does not match dimensions");
  }
  const std::uint32_t limit = max_value();
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (samples_[i] > limit) {
      throw std::invalid_argument("sample " + std::to_string(i) + " exceeds " +
                                  std::to_string(bit_depth) + "-bit range");
    }
  }
}

int default_division(int bit_depth) { return bit_depth == 8 ? 6 : 8; }

SubvolumePair split(const Volume& volume, int d) {
  if (d < 1 || d > volume.bit_depth()) {
    throw std::invalid_argument("cut position d=" + std::to_string(d) + " outside [1, " +
                                std::to_string(volume.bit_depth()) + "]");
  }
  const std::uint32_t low_mask = (1u << d) - 1u;
  std::vector<std::uint16_t> high(volume.size());
  std::vector<std::uint16_t> low(volume.size());
  const auto src = volume.samples();
  for (std::size_t i = 0; i < src.size(); ++i) {
    high[i] = static_cast<std::uint16_t>(src[i] >> d);
    low[i] = static_cast<std::uint16_t>(src[i] & low_mask);
  }
  const BitDivision div{d, volume.bit_depth()};
  return SubvolumePair{
      Volume(volume.slices(), volume.height(), volume.width(), div.msb_depth(), std::move(high)),
      Volume(volume.slices(), volume.height(), volume.width(), div.lsb_depth(), std::move(low)),
      div};
}

Volume merge(const SubvolumePair& pair) {
  const auto& div = pair.division;
  if (!pair.msbv.same_shape(pair.lsbv)) {
    throw std::invalid_argument("msbv and lsbv dimensions differ");
  }
  if (div.d < 1 || div.d > div.bit_depth || div.bit_depth > 16) {
    throw std::invalid_argument("invalid bit division");
  }
  if (pair.msbv.bit_depth() != div.msb_depth() || pair.lsbv.bit_depth() != div.lsb_depth()) {
    throw std::invalid_argument("subvolume depths disagree with the bit division");
  }
  std::vector<std::uint16_t> out(pair.msbv.size());
  const auto hi = pair.msbv.samples();
  const auto lo = pair.lsbv.samples();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint16_t>((std::uint32_t{hi[i]} << div.d) | lo[i]);
  }
  return Volume(pair.msbv.slices(), pair.msbv.height(), pair.msbv.width(), div.bit_depth,
                std::move(out));
}

Volume apply_offset(const Volume& volume, std::int32_t offset) {
  std::vector<std::uint16_t> out(volume.size());
  const auto src = volume.samples();
  const std::int64_t limit = volume.max_value();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::int64_t v = std::int64_t{src[i]} + offset;
    if (v < 0 || v > limit) {
      throw std::range_error("offset " + std::to_string(offset) + " moves voxel " + std::to_string(i) +
                             " to " + std::to_string(v) + ", outside [0, " + std::to_string(limit) + "]");
    }
    out[i] = static_cast<std::uint16_t>(v);
  }
  return Volume(volume.slices(), volume.height(), volume.width(), volume.bit_depth(), std::move(out),
                volume.offset() + offset);
}

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc{} || ptr != end) {
    throw FormatError("descriptor key '" + key + "' has non-numeric value '" + value + "'");
  }
  return out;
}

}  // namespace

std::string RawDescriptor::to_text() const {
  std::ostringstream os;
  os << "dims=" << slices << "," << height << "," << width << "\n"
     << "depth=" << bit_depth << "\n"
     << "endianness=" << (endianness == Endianness::little ? "little" : "big") << "\n"
     << "signed=" << (is_signed ? 1 : 0) << "\n"
     << "offset=" << offset << "\n";
  return os.str();
}

RawDescriptor RawDescriptor::parse(const std::string& text) {
  RawDescriptor d;
  bool have_dims = false;
  bool have_depth = false;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("descriptor line without '=': " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "dims") {
      std::size_t parts[3];
      std::istringstream ds(value);
      std::string item;
      int n = 0;
      while (std::getline(ds, item, ',')) {
        if (n == 3) throw FormatError("dims needs exactly three values");
        parts[n++] = parse_number<std::size_t>(key, trim(item));
      }
      if (n != 3) throw FormatError("dims needs exactly three values");
      d.slices = parts[0];
      d.height = parts[1];
      d.width = parts[2];
      have_dims = true;
    } else if (key == "depth") {
      d.bit_depth = parse_number<int>(key, value);
      have_depth = true;
    } else if (key == "endianness") {
      if (value == "little") d.endianness = Endianness::little;
      else if (value == "big") d.endianness = Endianness::big;
      else throw FormatError("unknown endianness '" + value + "'");
    } else if (key == "signed") {
      d.is_signed = parse_number<int>(key, value) != 0;
    } else if (key == "offset") {
      d.offset = parse_number<std::int32_t>(key, value);
    } else {
      throw FormatError("unknown descriptor key '" + key + "'");
    }
  }
  if (!have_dims || !have_depth) throw FormatError("descriptor requires dims and depth");
  if (d.bit_depth != 8 && d.bit_depth != 16) throw FormatError("depth must be 8 or 16");
  if (d.slices == 0 || d.height == 0 || d.width == 0) throw FormatError("dims must be positive");
  return d;
}

RawDescriptor RawDescriptor::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open descriptor " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RawDescriptor::save(const std::string& path) const {
  const std::string text = to_text();
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Volume ingest_raw(std::span<const std::uint8_t> bytes, const RawDescriptor& desc) {
  if (desc.bit_depth != 8 && desc.bit_depth != 16) throw FormatError("depth must be 8 or 16");
  if (bytes.size() != desc.expected_bytes()) {
    throw FormatError("raw size " + std::to_string(bytes.size()) + " bytes, descriptor expects " +
                      std::to_string(desc.expected_bytes()));
  }
  const std::size_t count = desc.slices * desc.height * desc.width;
  const std::int64_t limit = (std::int64_t{1} << desc.bit_depth) - 1;
  std::vector<std::uint16_t> samples(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::int64_t v;
    if (desc.bit_depth == 8) {
      v = desc.is_signed ? std::int64_t{static_cast<std::int8_t>(bytes[i])} : std::int64_t{bytes[i]};
    } else {
      const std::uint8_t b0 = bytes[2 * i];
      const std::uint8_t b1 = bytes[2 * i + 1];
      const auto raw = static_cast<std::uint16_t>(desc.endianness == Endianness::little ? (b0 | (b1 << 8))
                                                                                         : ((b0 << 8) | b1));
      v = desc.is_signed ? std::int64_t{static_cast<std::int16_t>(raw)} : std::int64_t{raw};
    }
    v += desc.offset;
    if (v < 0 || v > limit) {
      throw std::range_error("voxel " + std::to_string(i) + " becomes " + std::to_string(v) +
                             " after offset " + std::to_string(desc.offset) + "; outside [0, " +
                             std::to_string(limit) + "]");
    }
    samples[i] = static_cast<std::uint16_t>(v);
  }
  return Volume(desc.slices, desc.height, desc.width, desc.bit_depth, std::move(samples), desc.offset);
}

std::vector<std::uint8_t> export_raw(const Volume& volume, bool as_signed, RawDescriptor* descriptor,
                                     Endianness endianness) {
  const int depth = volume.bit_depth() <= 8 ? 8 : 16;
  const std::int64_t lo = as_signed ? -(std::int64_t{1} << (depth - 1)) : 0;
  const std::int64_t hi = as_signed ? (std::int64_t{1} << (depth - 1)) - 1 : (std::int64_t{1} << depth) - 1;
  std::vector<std::uint8_t> out(volume.size() * (depth / 8));
  const auto src = volume.samples();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::int64_t v = std::int64_t{src[i]} - volume.offset();
    if (v < lo || v > hi) {
      throw std::range_error("voxel " + std::to_string(i) + " value " + std::to_string(v) +
                             " does not fit the output sample type");
    }
    const auto raw = static_cast<std::uint16_t>(v);
    if (depth == 8) {
      out[i] = static_cast<std::uint8_t>(raw);
    } else if (endianness == Endianness::little) {
      out[2 * i] = static_cast<std::uint8_t>(raw & 0xFF);
      out[2 * i + 1] = static_cast<std::uint8_t>(raw >> 8);
    } else {
      out[2 * i] = static_cast<std::uint8_t>(raw >> 8);
      out[2 * i + 1] = static_cast<std::uint8_t>(raw & 0xFF);
    }
  }
  if (descriptor != nullptr) {
    descriptor->slices = volume.slices();
    descriptor->height = volume.height();
    descriptor->width = volume.width();
    descriptor->bit_depth = depth;
    descriptor->endianness = endianness;
    descriptor->is_signed = as_signed;
    descriptor->offset = volume.offset();
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot create " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::remove(tmp.c_str());
      throw std::runtime_error("write failed for " + tmp);
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace bitsplit
