#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "bitsplit/codec.hpp"
#include "bitsplit/errors.hpp"
#include "bitsplit/synthetic.hpp"
#include "bitsplit/train.hpp"

namespace py = pybind11;
using namespace bitsplit;

namespace {

using Array = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;

Volume to_volume(const Array& a, int bit_depth, std::int32_t offset = 0) {
  if (a.ndim() != 3) throw std::invalid_argument("expected a (T, H, W) array");
  std::vector<std::uint16_t> samples(a.data(), a.data() + a.size());
  const std::uint32_t limit = bit_depth == 16 ? 0xFFFFu : (1u << bit_depth) - 1u;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i] > limit) throw std::invalid_argument("sample " + std::to_string(i) + " exceeds the bit depth");
  }
  return Volume(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                static_cast<std::size_t>(a.shape(2)), bit_depth, std::move(samples), offset);
}

Array to_array(const Volume& v) {
  Array out({v.slices(), v.height(), v.width()});
  std::copy(v.samples().begin(), v.samples().end(), out.mutable_data());
  return out;
}

py::bytes to_bytes(const std::vector<std::uint8_t>& b) {
  return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
}

std::vector<std::uint8_t> from_bytes(const py::bytes& b) {
  const std::string s = b;
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

}  // namespace

PYBIND11_MODULE(_bitsplit, m) {
  m.doc() = "Bit-division lossless volume codec";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<DecodeError>(m, "DecodeError", PyExc_ValueError);
  py::register_exception<Unsupported>(m, "Unsupported", PyExc_ValueError);

  m.def(
      "split",
      [](const Array& volume, int bit_depth, int d) {
        const SubvolumePair p = split(to_volume(volume, bit_depth), d);
        return py::make_tuple(to_array(p.msbv), to_array(p.lsbv));
      },
      py::arg("volume"), py::arg("bit_depth"), py::arg("d"), "Returns (high part, low part).");
  m.def(
      "merge",
      [](const Array& msbv, const Array& lsbv, int bit_depth, int d) {
        SubvolumePair p{to_volume(msbv, bit_depth - d), to_volume(lsbv, d), BitDivision{d, bit_depth}};
        return to_array(merge(p));
      },
      py::arg("msbv"), py::arg("lsbv"), py::arg("bit_depth"), py::arg("d"));

  m.def(
      "total_steps",
      [](const std::string& b, std::uint32_t h, std::uint32_t w) { return total_steps(ScanRational::parse(b), h, w); },
      py::arg("b"), py::arg("patch_height"), py::arg("patch_width"));
  m.def(
      "b_from_angle",
      [](double phi, std::uint32_t w) { return b_from_angle(phi, w).to_string(); }, py::arg("degrees"),
      py::arg("patch_width"));

  m.def(
      "generate",
      [](const std::string& kind, std::tuple<std::size_t, std::size_t, std::size_t> dims, int bit_depth,
         std::uint64_t seed, double smoothness, double amplitude, double noise, double drift) {
        SyntheticSpec s;
        s.kind = parse_generator_kind(kind);
        std::tie(s.slices, s.height, s.width) = dims;
        s.bit_depth = bit_depth;
        s.seed = seed;
        s.smoothness = smoothness;
        s.amplitude = amplitude;
        s.noise = noise;
        s.drift = drift;
        return to_array(generate_synthetic(s));
      },
      py::arg("kind") = "blurred-noise", py::arg("dims") = std::make_tuple(4, 64, 64), py::arg("bit_depth") = 16,
      py::arg("seed") = 1, py::arg("smoothness") = 4.0, py::arg("amplitude") = 0.0, py::arg("noise") = 1.0,
      py::arg("drift") = 0.05);

  py::class_<Model>(m, "Model")
      .def_static("load", &Model::load, py::arg("path"))
      .def_static(
          "random",
          [](std::uint64_t seed, const std::string& profile, bool intra) {
            ModelConfig c = profile == "full" ? ModelConfig::full() : ModelConfig::tiny();
            if (profile != "full" && profile != "tiny") throw std::invalid_argument("profile must be tiny or full");
            c.intra = intra;
            return Model::random(c, seed);
          },
          py::arg("seed"), py::arg("profile") = "tiny", py::arg("intra") = false)
      .def("save", &Model::save, py::arg("path"))
      .def_property_readonly("hash", [](const Model& m) { return to_hex(m.hash()); })
      .def_property_readonly("config", [](const Model& m) { return m.config().describe(); })
      .def_property_readonly("parameter_count", [](const Model& m) { return m.params().scalar_count(); });

  m.def(
      "encode",
      [](const Array& volume, const Model& model, int bit_depth, int d, const std::string& b,
         std::pair<std::uint32_t, std::uint32_t> patch, std::int32_t offset) {
        EncodeOptions o;
        o.d = d == 0 ? default_division(bit_depth) : d;
        o.b = ScanRational::parse(b);
        o.patch_height = patch.first;
        o.patch_width = patch.second;
        Volume v = to_volume(volume, bit_depth);
        if (offset != 0) v = apply_offset(v, offset);
        std::vector<std::uint8_t> bytes;
        {
          py::gil_scoped_release release;
          bytes = encode_volume(v, model, o).serialize();
        }
        return to_bytes(bytes);
      },
      py::arg("volume"), py::arg("model"), py::arg("bit_depth") = 16, py::arg("d") = 0, py::arg("b") = "2/1",
      py::arg("patch") = std::make_pair(32u, 32u), py::arg("offset") = 0,
      "Returns the container bytes. d = 0 picks the default cut for the depth.");
  m.def(
      "decode",
      [](const py::bytes& data, const Model& model) {
        const Container c = Container::parse(from_bytes(data));
        Volume v;
        {
          py::gil_scoped_release release;
          v = decode_volume(c, model);
        }
        return py::make_tuple(to_array(v), v.offset());
      },
      py::arg("data"), py::arg("model"), "Returns (volume, offset); subtract offset to get the original values.");
  m.def(
      "inspect",
      [](const py::bytes& data) {
        const Container c = Container::parse(from_bytes(data));
        const ContainerHeader& h = c.header;
        const RateBreakdown r = rate_breakdown(c);
        py::dict d;
        d["dims"] = py::make_tuple(h.slices, h.height, h.width);
        d["bit_depth"] = h.bit_depth;
        d["d"] = h.d;
        d["patch"] = py::make_tuple(h.patch_height, h.patch_width);
        d["b"] = h.b.to_string();
        d["kernel"] = h.kernel;
        d["mixtures"] = h.mixtures;
        d["flags"] = h.flags;
        d["offset"] = h.offset;
        d["model_hash"] = to_hex(h.model_hash);
        d["header_bits"] = r.header_bits;
        d["msbv_bits"] = r.msbv_bits;
        d["lsbv_bits"] = r.lsbv_bits;
        d["slice_bits"] = r.slice_bits;
        d["bpv"] = r.bpv();
        return d;
      },
      py::arg("data"));

  m.def(
      "pmf_bench",
      [](const std::vector<int>& depths, const std::vector<std::size_t>& pixels) {
        py::list out;
        for (const auto& r : pmf_bench(depths, pixels)) {
          py::dict d;
          d["bit_depth"] = r.bit_depth;
          d["pixels"] = r.pixels;
          d["table_entries"] = r.table_entries;
          d["seconds"] = r.seconds;
          out.append(d);
        }
        return out;
      },
      py::arg("depths"), py::arg("pixels"));
}
