#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "bitsplit/codec.hpp"
#include "bitsplit/errors.hpp"
#include "bitsplit/synthetic.hpp"
#include "bitsplit/train.hpp"

namespace bitsplit {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct CodingFlags {
  int d = 0;  // 0: default for the bit depth
  std::string b;
  double angle = 0.0;
  std::string patch = "32";
  std::string weights;
  std::optional<std::int32_t> offset;
  std::vector<std::string> external;
  std::uint64_t random_weights = 0;

  void add_to(CLI::App* app, bool encoding) {
    app->add_option("--weights", weights, "Weight file (default: $BITSPLIT_WEIGHTS)");
    app->add_option("--random-weights", random_weights, "Use untrained tiny weights from this seed instead");
    app->add_option("--external-msbv-codec", external, "External MSBV encode and decode commands (%in, %out)")
        ->expected(encoding ? 2 : 1, 2);
    if (!encoding) return;
    app->add_option("--d", d, "Bit division position (default 8 for 16-bit, 6 for 8-bit data)");
    auto* b_opt = app->add_option("--b", b, "Wavefront slope p/q (default 2/1)");
    auto* a_opt = app->add_option("--angle", angle, "Scan angle in degrees; b = min(W', 1/tan)");
    b_opt->excludes(a_opt);
    app->add_option("--patch", patch, "Patch size N or HxW (default 32)");
    app->add_option("--offset", offset, "Value added to every sample before coding");
  }

  std::optional<ExternalCodecHook> hook() const {
    if (external.empty()) return std::nullopt;
    // Decoding needs only the decode command; it may be given alone.
    if (external.size() == 1) return ExternalCodecHook{"", external[0]};
    return ExternalCodecHook{external[0], external[1]};
  }

  Model model() const {
    if (random_weights != 0) return Model::random(ModelConfig::tiny(), random_weights);
    std::string path = weights;
    if (path.empty()) {
      if (const char* env = std::getenv("BITSPLIT_WEIGHTS")) path = env;
    }
    if (path.empty()) throw CLI::ValidationError("--weights", "no weight file given and BITSPLIT_WEIGHTS is unset");
    return Model::load(path);
  }

  EncodeOptions encode_options(int bit_depth) const {
    EncodeOptions o;
    o.d = d == 0 ? default_division(bit_depth) : d;
    const auto x = patch.find('x');
    try {
      o.patch_height = static_cast<std::uint32_t>(std::stoul(patch.substr(0, x)));
      o.patch_width = x == std::string::npos ? o.patch_height : static_cast<std::uint32_t>(std::stoul(patch.substr(x + 1)));
    } catch (const std::logic_error&) {
      throw CLI::ValidationError("--patch", "expected N or HxW, got '" + patch + "'");
    }
    if (!b.empty()) {
      o.b = ScanRational::parse(b);
    } else if (angle != 0.0) {
      o.b = b_from_angle(angle, o.patch_width);
    }
    o.external_msbv = hook();
    return o;
  }
};

std::string descriptor_path(const std::string& raw, const std::string& given) {
  return given.empty() ? raw + ".desc" : given;
}

Volume load_raw(const std::string& path, const std::string& desc_path, std::optional<std::int32_t> offset) {
  RawDescriptor desc = RawDescriptor::load(desc_path);
  if (offset) desc.offset = *offset;
  return ingest_raw(read_file(path), desc);
}

void save_raw(const Volume& v, const std::string& path, std::optional<bool> as_signed) {
  RawDescriptor desc;
  std::vector<std::uint8_t> bytes;
  // An offset usually comes from shifting signed data; fall back to unsigned if it does not fit.
  const bool try_signed = as_signed.value_or(v.offset() != 0);
  try {
    bytes = export_raw(v, try_signed, &desc);
  } catch (const std::range_error&) {
    if (as_signed) throw;
    bytes = export_raw(v, !try_signed, &desc);
  }
  write_file_atomic(path, bytes);
  desc.save(path + ".desc");
}

std::vector<Volume> load_corpus(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".raw") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Volume> out;
  for (const auto& f : files) out.push_back(load_raw(f.string(), f.string() + ".desc", std::nullopt));
  if (out.empty()) throw std::runtime_error("no .raw volumes in " + dir);
  return out;
}

void print_rate(std::ostream& out, const Container& c) {
  const RateBreakdown r = rate_breakdown(c);
  out << std::fixed << std::setprecision(4);
  out << "voxels " << r.voxels << "\n"
      << "total_bits " << r.total_bits() << " bpv " << r.bpv() << "\n"
      << "header_bits " << r.header_bits << "\n"
      << "msbv_bits " << r.msbv_bits << " bpv " << static_cast<double>(r.msbv_bits) / static_cast<double>(r.voxels)
      << " share " << 100.0 * r.msbv_share() << "%\n"
      << "lsbv_bits " << r.lsbv_bits << " bpv " << static_cast<double>(r.lsbv_bits) / static_cast<double>(r.voxels)
      << " share " << 100.0 * r.lsbv_share() << "%\n";
  const double per_slice = static_cast<double>(c.header.height) * c.header.width;
  for (std::size_t t = 0; t < r.slice_bits.size(); ++t) {
    out << "slice " << t << " lsbv_bits " << r.slice_bits[t] << " bpv "
        << static_cast<double>(r.slice_bits[t]) / per_slice << "\n";
  }
  out.unsetf(std::ios::floatfield);
}

SyntheticSpec parse_spec(const std::string& kind, const std::string& dims, int depth, std::uint64_t seed,
                         double smoothness, double amplitude, double noise, double drift) {
  SyntheticSpec s;
  s.kind = parse_generator_kind(kind);
  std::size_t t = 0, h = 0, w = 0;
  char x1 = 0, x2 = 0;
  std::istringstream is(dims);
  if (!(is >> t >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x' || !is.eof()) {
    throw CLI::ValidationError("--dims", "expected TxHxW, got '" + dims + "'");
  }
  s.slices = t;
  s.height = h;
  s.width = w;
  s.bit_depth = depth;
  s.seed = seed;
  s.smoothness = smoothness;
  s.amplitude = amplitude;
  s.noise = noise;
  s.drift = drift;
  s.validate();
  return s;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bit-division lossless volume codec"};
  app.require_subcommand(1);

  // encode
  auto* enc = app.add_subcommand("encode", "Compress a raw volume into a container");
  std::string in_path, out_path, desc_in;
  CodingFlags enc_flags;
  enc->add_option("input", in_path, "Raw volume")->required();
  enc->add_option("output", out_path, "Container to write")->required();
  enc->add_option("--desc", desc_in, "Descriptor (default: <input>.desc)");
  enc_flags.add_to(enc, true);

  // decode
  auto* dec = app.add_subcommand("decode", "Restore a raw volume and descriptor from a container");
  CodingFlags dec_flags;
  bool force_signed = false, force_unsigned = false;
  dec->add_option("input", in_path, "Container")->required();
  dec->add_option("output", out_path, "Raw volume to write (descriptor goes to <output>.desc)")->required();
  auto* s_opt = dec->add_flag("--signed", force_signed, "Write signed samples");
  dec->add_flag("--unsigned", force_unsigned, "Write unsigned samples")->excludes(s_opt);
  dec_flags.add_to(dec, false);

  // verify
  auto* ver = app.add_subcommand("verify", "Encode, decode and compare; non-zero exit on mismatch");
  CodingFlags ver_flags;
  ver->add_option("input", in_path, "Raw volume")->required();
  ver->add_option("--desc", desc_in, "Descriptor (default: <input>.desc)");
  ver_flags.add_to(ver, true);

  // inspect
  auto* ins = app.add_subcommand("inspect", "Print a container header and its rate split");
  bool show_scan = false;
  ins->add_option("input", in_path, "Container")->required();
  ins->add_flag("--scan", show_scan, "Also print the wavefront schedule and masks of a full patch");

  // gen
  auto* gen = app.add_subcommand("gen", "Write a synthetic raw volume");
  std::string kind = "blurred-noise", dims = "4x64x64";
  int depth = 16;
  std::uint64_t seed = 1;
  double smoothness = 4.0, amplitude = 0.0, noise = 1.0, drift = 0.05;
  gen->add_option("output", out_path, "Raw volume to write (descriptor goes to <output>.desc)")->required();
  gen->add_option("--kind", kind, "blurred-noise | ramp+noise | sparse-structures");
  gen->add_option("--dims", dims, "TxHxW");
  gen->add_option("--depth", depth, "8 or 16");
  gen->add_option("--seed", seed);
  gen->add_option("--smoothness", smoothness, "Blur sigma in pixels; 0 gives i.i.d. noise");
  gen->add_option("--amplitude", amplitude, "Structure standard deviation in sample units (0: 2^depth/16)");
  gen->add_option("--noise", noise, "Per-voxel noise standard deviation");
  gen->add_option("--drift", drift, "Slice-to-slice perturbation relative to the amplitude");

  // train
  auto* tr = app.add_subcommand("train", "Train model weights on a directory of raw volumes");
  std::string corpus_dir, profile = "tiny", log_path, init_path;
  TrainOptions topt;
  std::string slopes = "2/1";
  bool intra = false;
  tr->add_option("corpus", corpus_dir, "Directory of .raw volumes with .desc sidecars")->required();
  tr->add_option("output", out_path, "Weight file to write")->required();
  tr->add_option("--profile", profile, "tiny | full");
  tr->add_option("--seed", topt.seed);
  tr->add_option("--iters", topt.iterations);
  tr->add_option("--batch", topt.batch);
  tr->add_option("--lr", topt.learning_rate, "Base learning rate");
  tr->add_option("--crop", topt.crop);
  tr->add_option("--d", topt.d);
  tr->add_option("--slopes", slopes, "Comma-separated slopes drawn per iteration, e.g. 2/1,32/1");
  tr->add_option("--log", log_path, "Training log file");
  tr->add_option("--log-every", topt.log_every);
  tr->add_option("--init", init_path, "Start from these weights");
  tr->add_flag("--intra", intra, "Ignore previous slices");

  // bench
  auto* be = app.add_subcommand("bench", "PMF table scaling and per-stage timing");
  CodingFlags bench_flags;
  bench_flags.random_weights = 1;
  std::string bench_dims = "2x64x64";
  be->add_option("--dims", bench_dims, "TxHxW of the timed synthetic volume");
  be->add_option("--weights", bench_flags.weights, "Weight file (default: untrained tiny weights)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*enc) {
      const Volume v = load_raw(in_path, descriptor_path(in_path, desc_in), enc_flags.offset);
      const Model model = enc_flags.model();
      const auto t0 = Clock::now();
      const Container c = encode_volume(v, model, enc_flags.encode_options(v.bit_depth()));
      write_container(out_path, c);
      out << "wrote " << out_path << " (" << c.byte_size() << " bytes, " << std::fixed << std::setprecision(4)
          << rate_breakdown(c).bpv() << " bpv, " << std::setprecision(2) << seconds_since(t0) << " s)\n";
      return 0;
    }
    if (*dec) {
      const Container c = read_container(in_path);
      const Model model = dec_flags.model();
      const Volume v = decode_volume(c, model, dec_flags.hook());
      std::optional<bool> as_signed;
      if (force_signed) as_signed = true;
      if (force_unsigned) as_signed = false;
      save_raw(v, out_path, as_signed);
      out << "wrote " << out_path << " and " << out_path << ".desc\n";
      return 0;
    }
    if (*ver) {
      const Volume v = load_raw(in_path, descriptor_path(in_path, desc_in), ver_flags.offset);
      const Model model = ver_flags.model();
      const EncodeOptions o = ver_flags.encode_options(v.bit_depth());
      const Container c = Container::parse(encode_volume(v, model, o).serialize());
      const Volume back = decode_volume(c, model, o.external_msbv);
      if (!(back == v)) {
        err << "verify: decoded volume differs from the input\n";
        return 1;
      }
      out << "ok " << std::fixed << std::setprecision(4) << rate_breakdown(c).bpv() << " bpv\n";
      return 0;
    }
    if (*ins) {
      const Container c = read_container(in_path);
      out << describe(c.header);
      print_rate(out, c);
      if (show_scan) {
        const ScanSchedule s = build_schedule(c.header.b, c.header.patch_height, c.header.patch_width);
        out << "steps " << s.total_steps() << "\n" << s.dump() << build_masks(c.header.b, c.header.kernel).dump();
      }
      return 0;
    }
    if (*gen) {
      const Volume v = generate_synthetic(parse_spec(kind, dims, depth, seed, smoothness, amplitude, noise, drift));
      save_raw(v, out_path, false);
      out << "wrote " << out_path << "\n";
      return 0;
    }
    if (*tr) {
      ModelConfig cfg;
      if (profile == "tiny") {
        cfg = ModelConfig::tiny();
      } else if (profile == "full") {
        cfg = ModelConfig::full();
      } else {
        throw CLI::ValidationError("--profile", "expected tiny or full");
      }
      cfg.intra = intra;
      topt.slopes.clear();
      std::istringstream ss(slopes);
      for (std::string item; std::getline(ss, item, ',');) topt.slopes.push_back(ScanRational::parse(item));
      const auto corpus = load_corpus(corpus_dir);
      std::ofstream log;
      if (!log_path.empty()) log.open(log_path);
      log << "# " << cfg.describe() << " iters " << topt.iterations << " batch " << topt.batch << " lr "
          << topt.learning_rate << " crop " << topt.crop << " d " << topt.d << " slopes " << slopes << " seed "
          << topt.seed << " volumes " << corpus.size() << "\n";
      topt.on_log = [&](const std::string& line) {
        out << line << std::endl;
        if (log) log << line << std::endl;
      };
      std::optional<Model> init;
      if (!init_path.empty()) init = Model::load(init_path);
      const TrainResult r = train(corpus, cfg, topt, init ? &*init : nullptr);
      r.model.save(out_path);
      out << "wrote " << out_path << " hash " << to_hex(r.model.hash()) << "\n";
      return 0;
    }
    if (*be) {
      const int depths[] = {8, 16};
      const std::size_t pixels[] = {60 * 60, 120 * 120};
      const auto rows = pmf_bench(depths, pixels);
      out << format_pmf_bench(rows);
      const Model model = bench_flags.weights.empty() ? bench_flags.model() : Model::load(bench_flags.weights);
      const Volume v = generate_synthetic(parse_spec("blurred-noise", bench_dims, 16, 1, 4.0, 0.0, 1.0, 0.05));
      auto t0 = Clock::now();
      const SubvolumePair parts = split(v, 8);
      const double t_split = seconds_since(t0);
      t0 = Clock::now();
      const Bitstream m = encode_msbv(concat(parts.msbv));
      const double t_msbv = seconds_since(t0);
      t0 = Clock::now();
      const Container c = encode_volume(v, model, EncodeOptions{});
      const double t_enc = seconds_since(t0);
      t0 = Clock::now();
      const Volume back = decode_volume(c, model);
      const double t_dec = seconds_since(t0);
      out << std::fixed << std::setprecision(6) << "split " << t_split << " s\n"
          << "msbv_encode " << t_msbv << " s (" << m.bytes.size() << " bytes)\n"
          << "encode " << t_enc << " s\n"
          << "decode " << t_dec << " s\n"
          << "lossless " << (back == v ? "yes" : "no") << "\n";
      return back == v ? 0 : 1;
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace bitsplit
