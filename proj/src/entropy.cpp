#include "bitsplit/entropy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "bitsplit/errors.hpp"

namespace bitsplit {

namespace {

constexpr double kProbabilityFloor = 1e-30;

struct SigmoidPair {
  double pos;  // S(t)
  double neg;  // S(-t)
};

// One exp per evaluation; both halves stay accurate deep in either tail.
SigmoidPair sigmoid_pair(double t) {
  const double e = std::exp(-std::abs(t));
  const double big = 1.0 / (1.0 + e);
  const double small = e / (1.0 + e);
  return t >= 0.0 ? SigmoidPair{big, small} : SigmoidPair{small, big};
}

// Mass between two boundaries given their sigmoid pairs; uses the upper tail form
// when the bin lies right of the mean so that nearly-equal values are not subtracted.
double mass_between(const SigmoidPair* lo, const SigmoidPair* hi, double t_lo) {
  if (lo == nullptr) return hi == nullptr ? 1.0 : hi->pos;
  if (hi == nullptr) return lo->neg;
  return t_lo > 0.0 ? lo->neg - hi->neg : hi->pos - lo->pos;
}

double boundary(double edge, double mean, double scale) { return (edge - mean) / scale; }

}  // namespace

double logistic_sigmoid(double x) { return sigmoid_pair(x).pos; }

void LogisticMixtureParams::validate() const {
  const std::size_t n = weights.size();
  if (n == 0) throw std::invalid_argument("mixture needs at least one component");
  if (means.size() != n || scales.size() != n) throw std::invalid_argument("mixture parameter sizes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(scales[i] >= kSigmaMin)) {
      throw std::invalid_argument("mixture scale " + std::to_string(scales[i]) + " below floor");
    }
    if (!(weights[i] >= 0.0) || !std::isfinite(means[i])) throw std::invalid_argument("invalid mixture parameter");
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture weights do not sum to one");
}

double logistic_bin_mass(double mean, double scale, std::uint32_t symbol, std::uint32_t last_symbol) {
  const double k = static_cast<double>(symbol);
  const double t_lo = boundary(k - 0.5, mean, scale);
  const double t_hi = boundary(k + 0.5, mean, scale);
  const SigmoidPair lo = sigmoid_pair(t_lo);
  const SigmoidPair hi = sigmoid_pair(t_hi);
  return mass_between(symbol == 0 ? nullptr : &lo, symbol == last_symbol ? nullptr : &hi, t_lo);
}

double mixture_probability(const LogisticMixtureParams& params, std::uint32_t symbol, int d) {
  const std::uint32_t last = (1u << d) - 1u;
  double p = 0.0;
  for (std::size_t n = 0; n < params.components(); ++n) {
    p += params.weights[n] * logistic_bin_mass(params.means[n], params.scales[n], symbol, last);
  }
  return p;
}

MixtureNllGrad mixture_nll_with_grad(const LogisticMixtureParams& params, std::uint32_t symbol, int d) {
  const std::size_t n_comp = params.components();
  const std::uint32_t last = (1u << d) - 1u;
  const double k = static_cast<double>(symbol);
  MixtureNllGrad g;
  g.d_weights.resize(n_comp);
  g.d_means.resize(n_comp);
  g.d_scales.resize(n_comp);
  std::vector<double> mass(n_comp);
  double p = 0.0;
  for (std::size_t n = 0; n < n_comp; ++n) {
    const double mu = params.means[n];
    const double sigma = params.scales[n];
    const double t_lo = boundary(k - 0.5, mu, sigma);
    const double t_hi = boundary(k + 0.5, mu, sigma);
    const SigmoidPair lo = sigmoid_pair(t_lo);
    const SigmoidPair hi = sigmoid_pair(t_hi);
    const bool has_lo = symbol != 0;
    const bool has_hi = symbol != last;
    mass[n] = mass_between(has_lo ? &lo : nullptr, has_hi ? &hi : nullptr, t_lo);
    p += params.weights[n] * mass[n];
    // d/dt S(t) = S(t) S(-t); boundaries move with -1/sigma in mu and -t/sigma in sigma.
    const double dens_hi = has_hi ? hi.pos * hi.neg : 0.0;
    const double dens_lo = has_lo ? lo.pos * lo.neg : 0.0;
    g.d_means[n] = -(dens_hi - dens_lo) / sigma;
    g.d_scales[n] = -((has_hi ? dens_hi * t_hi : 0.0) - (has_lo ? dens_lo * t_lo : 0.0)) / sigma;
  }
  const double p_eff = std::max(p, kProbabilityFloor);
  g.bits = -std::log2(p_eff);
  const double dbits_dp = -1.0 / (p_eff * std::numbers::ln2);
  for (std::size_t n = 0; n < n_comp; ++n) {
    g.d_weights[n] = dbits_dp * mass[n];
    g.d_means[n] *= dbits_dp * params.weights[n];
    g.d_scales[n] *= dbits_dp * params.weights[n];
  }
  return g;
}

Pmf discretize(const LogisticMixtureParams& params, int d) {
  if (d < 1 || d > 16) throw std::invalid_argument("symbol depth must lie in [1, 16]");
  params.validate();
  const std::uint32_t count = 1u << d;
  const std::uint32_t last = count - 1u;
  Pmf pmf;
  pmf.probabilities.assign(count, 0.0);
  std::vector<SigmoidPair> edges(last);
  std::vector<double> t(last);
  for (std::size_t n = 0; n < params.components(); ++n) {
    const double mu = params.means[n];
    const double sigma = params.scales[n];
    const double pi = params.weights[n];
    // Boundary j sits at j + 0.5, shared by bins j and j + 1.
    for (std::uint32_t j = 0; j < last; ++j) {
      t[j] = boundary(static_cast<double>(j + 1) - 0.5, mu, sigma);
      edges[j] = sigmoid_pair(t[j]);
    }
    for (std::uint32_t k = 0; k < count; ++k) {
      const SigmoidPair* lo = k == 0 ? nullptr : &edges[k - 1];
      const SigmoidPair* hi = k == last ? nullptr : &edges[k];
      const double t_lo = k == 0 ? 0.0 : t[k - 1];
      pmf.probabilities[k] += pi * mass_between(lo, hi, t_lo);
    }
  }
  return pmf;
}

void quantize_into(std::span<const double> probabilities, int precision, std::vector<std::uint32_t>& out) {
  if (precision < 8 || precision > 16) throw std::invalid_argument("precision must lie in [8, 16]");
  const std::size_t count = probabilities.size();
  const std::uint64_t total = std::uint64_t{1} << precision;
  if (count == 0 || count > total) {
    throw std::invalid_argument("cannot quantize " + std::to_string(count) + " symbols to 2^" +
                                std::to_string(precision));
  }
  out.assign(count, 1);
  const std::uint64_t spare = total - count;
  double mass = 0.0;
  for (double p : probabilities) mass += std::max(p, 0.0);
  if (spare == 0) return;
  std::vector<double> remainder(count, 0.0);
  std::uint64_t assigned = 0;
  if (mass > 0.0) {
    const double scale = static_cast<double>(spare) / mass;
    for (std::size_t k = 0; k < count; ++k) {
      const double share = std::max(probabilities[k], 0.0) * scale;
      const double whole = std::floor(share);
      out[k] += static_cast<std::uint32_t>(whole);
      assigned += static_cast<std::uint64_t>(whole);
      remainder[k] = share - whole;
    }
  } else {
    std::fill(remainder.begin(), remainder.end(), 1.0);
  }
  // Rounding can push the floored sum one past spare when the shares are near-integers.
  while (assigned > spare) {
    const auto it = std::max_element(out.begin(), out.end());
    --*it;
    --assigned;
  }
  std::uint64_t leftover = spare - assigned;
  if (leftover == 0) return;
  std::vector<std::uint32_t> order(count);
  std::iota(order.begin(), order.end(), 0u);
  const auto by_remainder = [&](std::uint32_t a, std::uint32_t b) {
    return remainder[a] != remainder[b] ? remainder[a] > remainder[b] : a < b;
  };
  while (leftover > 0) {
    const std::size_t take = std::min<std::uint64_t>(leftover, count);
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take - 1), order.end(),
                     by_remainder);
    for (std::size_t i = 0; i < take; ++i) ++out[order[i]];
    leftover -= take;
  }
}

Pmf quantize(const Pmf& pmf, int precision) {
  Pmf out = pmf;
  out.precision = precision;
  quantize_into(pmf.probabilities, precision, out.frequencies);
  return out;
}

void RangeEncoder::shift_low() {
  if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t pending = cache_;
    do {
      out_.push_back(static_cast<std::uint8_t>(pending + carry));
      pending = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void RangeEncoder::encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total) {
  const std::uint32_t r = range_ / total;
  low_ += static_cast<std::uint64_t>(r) * cum;
  range_ = r * freq;
  while (range_ < (1u << 24)) {
    range_ <<= 8;
    shift_low();
  }
}

Bitstream RangeEncoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  Bitstream bs{std::move(out_)};
  out_.clear();
  low_ = 0;
  range_ = 0xFFFFFFFFu;
  cache_ = 0;
  cache_size_ = 1;
  return bs;
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  if (next_byte() != 0) throw DecodeError("range-coded stream must start with a zero byte");
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ >= bytes_.size()) {
    throw DecodeError("range-coded stream truncated after " + std::to_string(bytes_.size()) + " bytes");
  }
  return bytes_[pos_++];
}

std::uint32_t RangeDecoder::decode_target(std::uint32_t total) {
  step_ = range_ / total;
  const std::uint32_t v = code_ / step_;
  if (v >= total) throw DecodeError("range-coded stream is corrupt");
  return v;
}

void RangeDecoder::consume(std::uint32_t cum, std::uint32_t freq) {
  code_ -= step_ * cum;
  range_ = step_ * freq;
  while (range_ < (1u << 24)) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

std::uint32_t RangeDecoder::decode_bits(int bits) {
  const std::uint32_t v = decode_target(1u << bits);
  consume(v, 1);
  return v;
}

void encode_symbol(RangeEncoder& enc, std::span<const std::uint32_t> frequencies, std::uint32_t symbol,
                   int precision) {
  if (symbol >= frequencies.size()) {
    throw std::invalid_argument("symbol " + std::to_string(symbol) + " outside alphabet of " +
                                std::to_string(frequencies.size()));
  }
  std::uint32_t cum = 0;
  for (std::uint32_t k = 0; k < symbol; ++k) cum += frequencies[k];
  enc.encode(cum, frequencies[symbol], 1u << precision);
}

std::uint32_t decode_symbol(RangeDecoder& dec, std::span<const std::uint32_t> frequencies, int precision) {
  const std::uint32_t target = dec.decode_target(1u << precision);
  std::uint32_t cum = 0;
  for (std::uint32_t k = 0; k < frequencies.size(); ++k) {
    if (target < cum + frequencies[k]) {
      dec.consume(cum, frequencies[k]);
      return k;
    }
    cum += frequencies[k];
  }
  throw DecodeError("frequency table does not cover the decoded target");
}

namespace {
const Pmf& pmf_for(std::span<const Pmf> pmfs, std::size_t i) {
  const Pmf& p = pmfs.size() == 1 ? pmfs[0] : pmfs[i];
  if (!p.quantized()) throw std::invalid_argument("PMF must be quantized before coding");
  return p;
}
}  // namespace

Bitstream encode(std::span<const std::uint32_t> symbols, std::span<const Pmf> pmfs) {
  if (pmfs.size() != 1 && pmfs.size() != symbols.size()) {
    throw std::invalid_argument("need one PMF per symbol (or a single shared PMF)");
  }
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const Pmf& p = pmf_for(pmfs, i);
    encode_symbol(enc, p.frequencies, symbols[i], p.precision);
  }
  return enc.finish();
}

std::vector<std::uint32_t> decode(const Bitstream& stream, std::span<const Pmf> pmfs, std::size_t count) {
  if (pmfs.size() != 1 && pmfs.size() != count) {
    throw std::invalid_argument("need one PMF per symbol (or a single shared PMF)");
  }
  RangeDecoder dec(stream.bytes);
  std::vector<std::uint32_t> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Pmf& p = pmf_for(pmfs, i);
    out[i] = decode_symbol(dec, p.frequencies, p.precision);
  }
  if (!dec.exhausted()) throw DecodeError("range-coded stream has trailing bytes");
  return out;
}

double quantized_cost_bits(const Pmf& pmf, std::uint32_t symbol) {
  return static_cast<double>(pmf.precision) - std::log2(static_cast<double>(pmf.frequencies.at(symbol)));
}

std::vector<PmfBenchRow> pmf_bench(std::span<const int> bit_depths, std::span<const std::size_t> pixel_counts,
                                   int components, std::uint64_t seed) {
  std::vector<PmfBenchRow> rows;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int depth : bit_depths) {
    if (depth < 1 || depth > 16) throw std::invalid_argument("bench depth must lie in [1, 16]");
    for (std::size_t pixels : pixel_counts) {
      const double top = static_cast<double>((1u << depth) - 1u);
      std::vector<LogisticMixtureParams> params(pixels);
      for (auto& pr : params) {
        pr.weights.resize(components);
        pr.means.resize(components);
        pr.scales.resize(components);
        double sum = 0.0;
        for (int n = 0; n < components; ++n) {
          pr.weights[n] = unit(rng) + 1e-3;
          sum += pr.weights[n];
          pr.means[n] = unit(rng) * top;
          pr.scales[n] = kSigmaMin + unit(rng) * top / 8.0;
        }
        for (auto& w : pr.weights) w /= sum;
      }
      volatile double sink = 0.0;
      const auto start = std::chrono::steady_clock::now();
      for (const auto& pr : params) sink = sink + discretize(pr, depth).probabilities.back();
      const auto stop = std::chrono::steady_clock::now();
      PmfBenchRow row;
      row.bit_depth = depth;
      row.pixels = pixels;
      row.table_entries = static_cast<std::uint64_t>(pixels) << depth;
      row.seconds = std::chrono::duration<double>(stop - start).count();
      rows.push_back(row);
    }
  }
  return rows;
}

std::string format_pmf_bench(std::span<const PmfBenchRow> rows) {
  std::ostringstream os;
  os << "depth  pixels  table_entries  seconds\n";
  for (const auto& r : rows) {
    os << std::setw(5) << r.bit_depth << "  " << std::setw(6) << r.pixels << "  " << std::setw(13)
       << r.table_entries << "  " << std::fixed << std::setprecision(6) << r.seconds << "\n";
  }
  return os.str();
}

}  // namespace bitsplit
