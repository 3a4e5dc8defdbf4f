// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: bitsplit_acceptance [model dir] [criterion numbers...]

#include <algorithm>
#include <cctype>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bitsplit/codec.hpp"
#include "bitsplit/entropy.hpp"
#include "bitsplit/model.hpp"
#include "bitsplit/msbv.hpp"
#include "bitsplit/scan.hpp"
#include "bitsplit/synthetic.hpp"
#include "bitsplit/train.hpp"
#include "bitsplit/volume.hpp"

using namespace bitsplit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double limit_seconds;  // 0: no runtime bound
  std::function<Outcome(double& extra_seconds)> run;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

// Held-out data follows the desk training corpus recipe (tools/train_desk.sh)
// with seeds the training never saw.
std::vector<Volume> held_out_volumes() {
  std::vector<Volume> out;
  for (int i = 0; i < 4; ++i) {
    SyntheticSpec s;
    s.kind = i % 2 == 0 ? GeneratorKind::blurred_noise : GeneratorKind::ramp_noise;
    s.slices = 6;
    s.height = 64;
    s.width = 64;
    s.bit_depth = 16;
    s.seed = 9001 + static_cast<std::uint64_t>(i);
    s.smoothness = 6;
    s.amplitude = 300;
    s.noise = 2;
    s.drift = 0.02;
    out.push_back(generate_synthetic(s));
  }
  return out;
}

// Seconds of the last logged iteration; the trainer is single-threaded, so
// wall time bounds CPU time from above.
double training_seconds(const std::filesystem::path& log, std::uint64_t* iterations) {
  std::ifstream in(log);
  std::string line, last;
  while (std::getline(in, line)) {
    if (line.rfind("iter ", 0) == 0) last = line;
  }
  if (last.empty()) return -1.0;
  std::istringstream ss(last);
  std::string word;
  double seconds = -1.0;
  while (ss >> word) {
    if (word == "iter") ss >> *iterations;
    if (word == "seconds") ss >> seconds;
  }
  return seconds;
}

struct CodedRate {
  double lsbv_bpv = 0.0;
  double total_bpv = 0.0;
};

CodedRate coded_rate(const std::vector<Volume>& volumes, const Model& model, ScanRational b, bool check) {
  std::uint64_t voxels = 0, lsbv = 0, total = 0;
  EncodeOptions o;
  o.d = 8;
  o.b = b;
  for (const Volume& v : volumes) {
    const Container c = encode_volume(v, model, o);
    if (check && !(decode_volume(Container::parse(c.serialize()), model) == v)) {
      throw std::runtime_error("round trip mismatch");
    }
    const RateBreakdown r = rate_breakdown(c);
    voxels += r.voxels;
    lsbv += r.lsbv_bits;
    total += r.total_bits();
  }
  return {static_cast<double>(lsbv) / static_cast<double>(voxels),
          static_cast<double>(total) / static_cast<double>(voxels)};
}

// Same weights, previous-slice inputs forced to zero.
Model without_previous_slices(const Model& m) {
  ModelConfig c = m.config();
  c.intra = true;
  Model out(c);
  out.params() = m.params();
  return out;
}

// ---------------------------------------------------------------------------

Outcome scan_table(double&) {
  const std::vector<std::pair<ScanRational, std::uint64_t>> expected{
      {ScanRational(0, 1), 32}, {ScanRational(2, 3), 53}, {ScanRational(1, 1), 63},
      {ScanRational(3, 2), 79}, {ScanRational(2, 1), 94}};
  std::string got;
  bool ok = true;
  for (const auto& [b, m] : expected) {
    const std::uint64_t formula = total_steps(b, 32, 32);
    const std::uint64_t built = build_schedule(b, 32, 32).total_steps();
    ok = ok && formula == m && built == m;
    got += (got.empty() ? "" : " ") + b.to_string() + ":" + std::to_string(built);
  }
  return {ok, "steps " + got};
}

Outcome raster_limit(double&) {
  std::uint64_t bad = 0;
  for (std::uint32_t h = 1; h <= 64; ++h) {
    for (std::uint32_t w = 1; w <= 64; ++w) {
      const ScanRational b(w, 1);
      const ScanSchedule s = build_schedule(b, h, w);
      bool raster = total_steps(b, h, w) == std::uint64_t{h} * w && s.total_steps() == std::uint64_t{h} * w;
      for (std::uint32_t y = 0; y < h && raster; ++y) {
        for (std::uint32_t x = 0; x < w; ++x) raster = raster && s.step_of(y, x) == y * w + x;
      }
      if (!raster) ++bad;
    }
  }
  return {bad == 0, fmt("4096 patch shapes, %llu not raster", static_cast<unsigned long long>(bad))};
}

// Mask for rows with h mod q = r, from the step formula on the unbounded plane.
std::vector<std::uint8_t> plane_mask(const ScanRational& b, int kernel, std::uint32_t r) {
  const int rad = kernel / 2;
  const std::int64_t h = r + 64 * std::int64_t{b.q};
  std::vector<std::uint8_t> m(static_cast<std::size_t>(kernel * kernel), 0);
  for (int dy = -rad; dy <= rad; ++dy) {
    for (int dx = -rad; dx <= rad; ++dx) {
      const std::int64_t rel = ceil_scaled(b, h + dy) - ceil_scaled(b, h) + dx;
      m[static_cast<std::size_t>((dy + rad) * kernel + dx + rad)] = rel < 0 ? 1 : 0;
    }
  }
  return m;
}

Outcome mask_law(double&) {
  std::mt19937_64 rng(3);
  std::uint64_t bad_count = 0, bad_mask = 0, violations = 0, taps = 0;
  int draws = 0;
  while (draws < 50) {
    const auto q = static_cast<std::uint32_t>(1 + rng() % 8);
    const auto p = static_cast<std::uint32_t>(rng() % (2 * q + 1));
    const ScanRational b(p, q);
    ++draws;
    const ScanSchedule sched = build_schedule(b, 64, 64);
    for (int k : {3, 5, 7, 9, 11}) {
      const MaskSet m = build_masks(b, k);
      std::set<std::vector<std::uint8_t>> distinct;
      for (std::uint32_t r = 0; r < b.q; ++r) {
        const auto oracle = plane_mask(b, k, r);
        if (m.mask(r) != oracle) ++bad_mask;
        distinct.insert(oracle);
      }
      const std::size_t n = m.distinct_count();
      if (n != distinct.size() || n > b.q || (k / 2 >= static_cast<int>(b.q) && n != b.q)) ++bad_count;
      const CausalityReport rep = verify_causality(sched, m);
      taps += rep.taps_checked;
      if (!rep.ok()) ++violations;
    }
  }
  return {bad_count == 0 && bad_mask == 0 && violations == 0,
          fmt("50 slopes in [0,2] x 5 kernels: %llu count errors, %llu masks off the plane oracle, "
              "%llu causality violations over %llu taps",
              static_cast<unsigned long long>(bad_count), static_cast<unsigned long long>(bad_mask),
              static_cast<unsigned long long>(violations), static_cast<unsigned long long>(taps))};
}

Sample random_sample(std::mt19937_64& rng, Grid g, int msb_depth, int lsb_depth) {
  Sample s;
  s.grid = g;
  s.msb_depth = msb_depth;
  s.lsb_depth = lsb_depth;
  const auto fill = [&](std::vector<std::uint16_t>& v, int depth) {
    v.resize(static_cast<std::size_t>(g.n()));
    for (auto& x : v) x = static_cast<std::uint16_t>(rng() % (1u << depth));
  };
  fill(s.xm_t, msb_depth);
  fill(s.xm_prev, msb_depth);
  fill(s.xl_prev, lsb_depth);
  fill(s.xl_t, lsb_depth);
  return s;
}

// Random weights plus random biases and gains so that no parameter is inert.
Model dense_random(const ModelConfig& c, std::uint64_t seed) {
  Model m = Model::random(c, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> normal(0.0, 0.2);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& name = m.params().name(i);
    const bool bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    if (!bias && name.find(".gamma") == std::string::npos) continue;
    for (Eigen::Index k = 0; k < m.params()[i].size(); ++k) m.params()[i].data()[k] += normal(rng);
  }
  return m;
}

Outcome model_causality(double&) {
  const ScanRational slopes[] = {ScanRational(2, 1), ScanRational(3, 2), ScanRational(1, 1), ScanRational(0, 1),
                                 ScanRational(2, 3), ScanRational(32, 1)};
  const Grid g{32, 32};
  std::uint64_t violations = 0, later_changes = 0, comparisons = 0;
  for (int draw = 0; draw < 10; ++draw) {
    const Model m = dense_random(ModelConfig::tiny(), 100 + static_cast<std::uint64_t>(draw));
    std::mt19937_64 rng(200 + static_cast<std::uint64_t>(draw));
    const Sample s = random_sample(rng, g, 8, 8);
    const ScanRational b = slopes[draw % 6];
    const MaskSet masks = build_masks(b, static_cast<int>(m.config().kernel));
    const ScanSchedule sched = build_schedule(b, 32, 32);
    const Mat ca = tfam_forward(m, normalize_symbols(s.xm_t, 8), normalize_symbols(s.xm_prev, 8),
                                normalize_symbols(s.xl_prev, 8), g);
    Mat xl = normalize_symbols(s.xl_t, 8);
    const MixtureField ref = pacm_forward(m, xl, ca, g, masks, 8);
    for (int p = 0; p < g.n(); ++p) {
      const double keep = xl(0, p);
      xl(0, p) = keep > 0 ? keep - 0.75 : keep + 0.75;
      const MixtureField f = pacm_forward(m, xl, ca, g, masks, 8);
      xl(0, p) = keep;
      const auto ps = sched.step_of(static_cast<std::uint32_t>(p / g.w), static_cast<std::uint32_t>(p % g.w));
      for (int o = 0; o < g.n(); ++o) {
        const bool same = f.means.col(o) == ref.means.col(o) && f.scales.col(o) == ref.scales.col(o) &&
                          f.weights.col(o) == ref.weights.col(o);
        const auto os = sched.step_of(static_cast<std::uint32_t>(o / g.w), static_cast<std::uint32_t>(o % g.w));
        ++comparisons;
        if (os <= ps && !same) ++violations;
        if (os > ps && !same) ++later_changes;
      }
    }
  }
  // A sweep that changes nothing would prove nothing.
  return {violations == 0 && later_changes > 0,
          fmt("10 draws x 1024 perturbed pixels: %llu violations, %llu later pixels affected of %llu pairs",
              static_cast<unsigned long long>(violations), static_cast<unsigned long long>(later_changes),
              static_cast<unsigned long long>(comparisons))};
}

Outcome gradients(double&) {
  Model m = dense_random(ModelConfig::tiny(), 7);
  std::mt19937_64 rng(8);
  const Sample s = random_sample(rng, Grid{9, 8}, 8, 8);
  const MaskSet masks = build_masks(ScanRational(3, 2), static_cast<int>(m.config().kernel));
  ParameterSet grads = m.params().zeros_like();
  loss_and_gradients(m, s, masks, &grads);
  std::map<std::string, std::pair<double, double>> err;
  const double h = 1e-5;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    auto& group = err[parameter_group(m.params().name(i))];
    for (Eigen::Index k = 0; k < m.params()[i].size(); ++k) {
      double& w = m.params()[i].data()[k];
      const double keep = w;
      w = keep + h;
      const double up = loss_and_gradients(m, s, masks, nullptr);
      w = keep - h;
      const double down = loss_and_gradients(m, s, masks, nullptr);
      w = keep;
      const double fd = (up - down) / (2 * h);
      const double an = grads[i].data()[k];
      group.first += (an - fd) * (an - fd);
      group.second += std::max(an * an, fd * fd);
    }
  }
  bool ok = err.count("other") == 0;
  std::string detail;
  double worst = 0.0;
  for (const char* name : {"stem", "cpe", "embedding", "block1", "block2", "convffn", "projection", "masked_conv", "ppn"}) {
    const auto it = err.find(name);
    if (it == err.end() || it->second.second == 0.0) {
      ok = false;
      detail += std::string(" ") + name + "=missing";
      continue;
    }
    const double rel = std::sqrt(it->second.first / it->second.second);
    worst = std::max(worst, rel);
    ok = ok && rel < 1e-4;
    detail += fmt(" %s=%.1e", name, rel);
  }
  return {ok, fmt("%zu scalars, worst %.2e;", m.params().scalar_count(), worst) + detail};
}

LogisticMixtureParams random_mixture(std::mt19937_64& rng, int d) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double top = std::ldexp(1.0, d) - 1.0;
  LogisticMixtureParams p;
  const auto n = 1 + rng() % 10;
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    p.weights.push_back(u(rng) + 1e-6);
    sum += p.weights.back();
    p.means.push_back(-0.2 * top + 1.4 * top * u(rng));
    p.scales.push_back(kSigmaMin * std::pow(1e4 * std::max(1.0, top), u(rng)));
  }
  for (double& w : p.weights) w /= sum;
  return p;
}

Outcome entropy_fidelity(double&) {
  std::mt19937_64 rng(11);
  double worst_sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const int d = i % 500 == 0 ? 16 : 1 + static_cast<int>(rng() % 12);
    const Pmf pmf = discretize(random_mixture(rng, d), d);
    double sum = 0.0;
    for (double x : pmf.probabilities) sum += x;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }

  const int d = 8;
  std::vector<Pmf> tables;
  for (int i = 0; i < 1000; ++i) tables.push_back(quantize(discretize(random_mixture(rng, d), d)));
  const std::size_t count = 1000000;
  std::vector<std::uint32_t> symbols(count);
  double cross_entropy = 0.0;
  RangeEncoder enc;
  for (std::size_t i = 0; i < count; ++i) {
    const Pmf& t = tables[i % tables.size()];
    std::discrete_distribution<std::uint32_t> pick(t.probabilities.begin(), t.probabilities.end());
    symbols[i] = pick(rng);
    cross_entropy += quantized_cost_bits(t, symbols[i]);
    encode_symbol(enc, t.frequencies, symbols[i], t.precision);
  }
  const Bitstream bs = enc.finish();
  RangeDecoder dec(bs.bytes);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const Pmf& t = tables[i % tables.size()];
    if (decode_symbol(dec, t.frequencies, t.precision) != symbols[i]) ++mismatches;
  }
  const double bits = static_cast<double>(bs.bit_length());
  const bool ok = worst_sum < 1e-9 && mismatches == 0 && bits <= 1.01 * cross_entropy + 512.0;
  return {ok, fmt("max |sum-1| %.2e; 1e6 symbols, %zu mismatches; %.0f coded vs %.0f ideal bits (%+.4f%%)", worst_sum,
                  mismatches, bits, cross_entropy, 100.0 * (bits - cross_entropy) / cross_entropy)};
}

Outcome end_to_end(double&) {
  const std::uint32_t ts[] = {1, 2, 5};
  const std::uint32_t sizes[] = {32, 70, 96};
  const int ds[] = {4, 6, 8, 12};
  const ScanRational bs[] = {ScanRational(0, 1), ScanRational(1, 1), ScanRational(3, 2), ScanRational(2, 1)};
  const GeneratorKind kinds[] = {GeneratorKind::blurred_noise, GeneratorKind::ramp_noise,
                                 GeneratorKind::sparse_structures};
  const Model model = Model::random(ModelConfig::tiny(), 5);
  std::mt19937_64 rng(12);
  int failures = 0, ragged = 0;
  std::string first_failure;
  for (int i = 0; i < 100; ++i) {
    SyntheticSpec s;
    // Cycle every axis so each value appears; the draw mixes the combinations.
    s.kind = kinds[i % 3];
    s.slices = ts[(i + rng() % 3) % 3];
    s.height = sizes[i % 3];
    s.width = sizes[(i / 3 + rng() % 3) % 3];
    s.bit_depth = i % 2 == 0 ? 8 : 16;
    s.seed = 1000 + static_cast<std::uint64_t>(i);
    s.smoothness = static_cast<double>(rng() % 6);
    s.noise = static_cast<double>(rng() % 4);
    int d = ds[(i / 2 + rng() % 4) % 4];
    if (d > s.bit_depth) d = ds[rng() % 3];
    EncodeOptions o;
    o.d = d;
    o.b = bs[(i / 4 + rng() % 4) % 4];
    const Volume v = generate_synthetic(s);
    if (s.height % 32 != 0 || s.width % 32 != 0) ++ragged;
    const std::vector<std::uint8_t> bytes = encode_volume(v, model, o).serialize();
    const Volume back = decode_volume(Container::parse(bytes), model);
    if (!(back == v)) {
      ++failures;
      if (first_failure.empty()) {
        first_failure = fmt(" first: %zux%zux%zu depth %d d %d b %s", s.slices, s.height, s.width, s.bit_depth, d,
                            o.b.to_string().c_str());
      }
    }
  }
  return {failures == 0, fmt("100 volumes (%d with ragged patches), %d mismatches", ragged, failures) + first_failure};
}

Outcome learning_effect(const std::filesystem::path& dir, double& extra) {
  const auto weights = dir / "tiny.bspw";
  if (!std::filesystem::exists(weights)) return {false, "missing " + weights.string()};
  const Model model = Model::load(weights.string());
  std::uint64_t iters = 0;
  const double train_s = training_seconds(dir / "tiny.log", &iters);
  if (train_s > 0) extra += train_s;

  const auto volumes = held_out_volumes();
  const CodedRate inter = coded_rate(volumes, model, ScanRational(2, 1), true);
  const CodedRate zeroed = coded_rate(volumes, without_previous_slices(model), ScanRational(2, 1), false);
  const double bound = 0.95 * 8;
  std::string detail = fmt("%llu iterations; held-out LSBV %.4f bits/voxel (bound %.2f); previous slices zeroed %.4f "
                           "(%+.4f)",
                           static_cast<unsigned long long>(iters), inter.lsbv_bpv, bound, zeroed.lsbv_bpv,
                           zeroed.lsbv_bpv - inter.lsbv_bpv);
  const auto intra_weights = dir / "tiny-intra.bspw";
  if (std::filesystem::exists(intra_weights)) {
    const CodedRate intra = coded_rate(volumes, Model::load(intra_weights.string()), ScanRational(2, 1), false);
    std::uint64_t intra_iters = 0;
    const double intra_s = training_seconds(dir / "tiny-intra.log", &intra_iters);
    detail += fmt("; separately trained intra model %.4f (%+.4f, %.0f s training)", intra.lsbv_bpv,
                  intra.lsbv_bpv - inter.lsbv_bpv, intra_s);
  }
  const bool ok = iters >= 20000 && inter.lsbv_bpv <= bound && zeroed.lsbv_bpv - inter.lsbv_bpv > 0.0;
  return {ok, detail};
}

Outcome rate_parity(const std::filesystem::path& dir, double&) {
  const auto weights = dir / "tiny.bspw";
  if (!std::filesystem::exists(weights)) return {false, "missing " + weights.string()};
  const Model model = Model::load(weights.string());
  const auto volumes = held_out_volumes();
  const CodedRate parallel = coded_rate(volumes, model, ScanRational(2, 1), true);
  const CodedRate raster = coded_rate(volumes, model, ScanRational(32, 1), true);
  const double rel = std::abs(parallel.total_bpv - raster.total_bpv) / raster.total_bpv;
  return {rel <= 0.02, fmt("b=2 %.4f bpv, b=32 %.4f bpv, difference %.3f%%", parallel.total_bpv, raster.total_bpv,
                           100.0 * rel)};
}

Outcome pmf_scaling(double&) {
  const int depths[] = {8, 16};
  const std::size_t pixels[] = {60 * 60, 120 * 120};
  const auto rows = pmf_bench(depths, pixels);
  std::map<std::pair<int, std::size_t>, PmfBenchRow> at;
  for (const auto& r : rows) at[{r.bit_depth, r.pixels}] = r;
  bool ok = rows.size() == 4;
  for (std::size_t px : pixels) ok = ok && at[{16, px}].table_entries == 256 * at[{8, px}].table_entries;
  for (int d : depths) ok = ok && at[{d, 14400}].table_entries == 4 * at[{d, 3600}].table_entries;
  std::string timing;
  for (const auto& r : rows) {
    timing += fmt(" %d-bit/%zu px %llu entries %.3f s;", r.bit_depth, r.pixels,
                  static_cast<unsigned long long>(r.table_entries), r.seconds);
  }
  return {ok, "entry ratios 256 and 4;" + timing};
}

double order0_bits(const ConcatImage& img) {
  std::map<std::uint16_t, std::size_t> hist;
  for (auto x : img.samples) ++hist[x];
  double h = 0.0;
  const auto n = static_cast<double>(img.samples.size());
  for (const auto& [sym, c] : hist) h -= static_cast<double>(c) / n * std::log2(static_cast<double>(c) / n);
  return h;
}

Outcome msbv_coder(double&) {
  const auto bpv = [](const Bitstream& s, const ConcatImage& img) {
    return static_cast<double>(s.bit_length()) / static_cast<double>(img.samples.size());
  };
  bool round_trips = true;
  const auto code = [&](const ConcatImage& img) {
    const Bitstream s = encode_msbv(img);
    round_trips = round_trips && decode_msbv(s, img.height, img.width, img.bit_depth) == img;
    return s;
  };

  const ConcatImage zero{256, 256, 8, std::vector<std::uint16_t>(256 * 256, 0)};
  const Bitstream zs = code(zero);
  const double zero_bound = 0.02 * static_cast<double>(zero.samples.size()) + 256.0;

  SyntheticSpec spec;
  spec.slices = 4;
  spec.height = 128;
  spec.width = 128;
  spec.bit_depth = 16;
  spec.smoothness = 6;
  spec.amplitude = 4096;
  spec.seed = 21;
  const ConcatImage smooth = concat(split(generate_synthetic(spec), 8).msbv);
  const Bitstream ss = code(smooth);
  const double h0 = order0_bits(smooth);

  std::mt19937_64 rng(22);
  ConcatImage random{256, 256, 8, std::vector<std::uint16_t>(256 * 256)};
  for (auto& x : random.samples) x = static_cast<std::uint16_t>(rng() & 0xFF);
  const Bitstream rs = code(random);

  const bool ok = round_trips && static_cast<double>(zs.bit_length()) < zero_bound && bpv(ss, smooth) < h0 &&
                  std::abs(bpv(rs, random) - 8.0) <= 0.1;
  return {ok, fmt("zero plane %zu bits (bound %.0f); smooth %.4f bpv vs order-0 %.4f; random %.4f bpv vs 8; "
                  "round trips %s",
                  zs.bit_length(), zero_bound, bpv(ss, smooth), h0, bpv(rs, random), round_trips ? "exact" : "BROKEN")};
}

Outcome bit_division(double&) {
  std::vector<std::uint16_t> all(65536);
  for (std::uint32_t x = 0; x < 65536; ++x) all[x] = static_cast<std::uint16_t>(x);
  const Volume v(1, 256, 256, 16, all);
  std::uint64_t bad = 0;
  for (int d = 1; d <= 16; ++d) {
    const SubvolumePair p = split(v, d);
    const Volume back = merge(p);
    for (std::uint32_t x = 0; x < 65536; ++x) {
      const std::uint32_t hi = p.msbv.samples()[x], lo = p.lsbv.samples()[x];
      if (back.samples()[x] != x || (hi << d) + lo != x || lo >= (1u << d)) ++bad;
    }
  }
  return {bad == 0, fmt("65536 values x 16 cuts, %llu failures", static_cast<unsigned long long>(bad))};
}

}  // namespace

int main(int argc, char** argv) {
  pin_eigen_blocking();
  std::filesystem::path model_dir = BITSPLIT_MODEL_DIR;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (!a.empty() && std::isdigit(static_cast<unsigned char>(a[0]))) only.insert(std::stoi(a));
    else model_dir = a;
  }

  const std::vector<Criterion> criteria{
      {1, "scan-step table", 1, scan_table},
      {2, "raster limit", 0, raster_limit},
      {3, "mask-period law", 30, mask_law},
      {4, "model causality", 300, model_causality},
      {5, "gradient correctness", 600, gradients},
      {6, "entropy-coder fidelity", 60, entropy_fidelity},
      {7, "end-to-end losslessness", 1800, end_to_end},
      {8, "learning effect", 4 * 3600, [&](double& e) { return learning_effect(model_dir, e); }},
      {9, "parallel-vs-raster parity", 1200, [&](double& e) { return rate_parity(model_dir, e); }},
      {10, "PMF scaling bench", 0, pmf_scaling},
      {11, "MSBV coder", 120, msbv_coder},
      {12, "bit-division exhaustive", 1, bit_division},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && only.count(c.id) == 0) continue;
    double extra = 0.0;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(extra);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double own = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double seconds = own + extra;
    std::string timing = fmt("%.2f s", own);
    if (extra > 0) timing += fmt(" + %.0f s training", extra);
    if (c.limit_seconds > 0) {
      timing += fmt(", limit %.0f s", c.limit_seconds);
      if (seconds >= c.limit_seconds) {
        o.pass = false;
        timing += " EXCEEDED";
      }
    }
    if (!o.pass) ++failed;
    std::printf("%s %2d %s: %s [%s]\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, only.empty() ? criteria.size() : only.size());
  return failed == 0 ? 0 : 1;
}
