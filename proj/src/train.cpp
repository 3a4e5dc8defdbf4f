#include "bitsplit/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace bitsplit {

double learning_rate_at(double base, std::uint64_t iteration, std::uint64_t iterations) {
  // Integer comparisons so the boundaries land on exact iterations.
  double lr = base;
  for (std::uint64_t pct : {40u, 60u, 80u}) {
    if (iteration * 100 >= pct * iterations) lr *= 0.5;
  }
  return lr;
}

Adam::Adam(const ParameterSet& shape) : m_(shape.zeros_like()), v_(shape.zeros_like()) {}

void Adam::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto m = m_[i].array();
    auto v = v_[i].array();
    const auto g = grads[i].array();
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.square();
    if (lr != 0.0) params[i].array() -= lr * (m / c1) / ((v / c2).sqrt() + kEpsilon);
  }
}

std::string format_log_entry(const TrainLogEntry& e) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "iter %llu loss_bits %.6f lr %.6g seconds %.1f",
                static_cast<unsigned long long>(e.iteration), e.loss_bits, e.lr, e.seconds);
  return buf;
}

std::string TrainResult::log_text() const {
  std::string out;
  for (const auto& e : log) out += format_log_entry(e) + "\n";
  return out;
}

Sample make_sample(const Volume& volume, int d, std::size_t t, std::size_t h0, std::size_t w0, std::size_t crop_h,
                   std::size_t crop_w, bool flip_rows, bool flip_cols) {
  if (d < 1 || d > volume.bit_depth()) throw std::invalid_argument("cut position outside the sample depth");
  if (t >= volume.slices() || h0 + crop_h > volume.height() || w0 + crop_w > volume.width()) {
    throw std::invalid_argument("crop outside the volume");
  }
  Sample s;
  s.grid = Grid{static_cast<int>(crop_h), static_cast<int>(crop_w)};
  s.lsb_depth = d;
  s.msb_depth = volume.bit_depth() - d;
  const std::size_t n = crop_h * crop_w;
  s.xm_t.resize(n);
  s.xl_t.resize(n);
  s.xm_prev.assign(n, 0);
  s.xl_prev.assign(n, 0);
  const std::uint16_t low_mask = static_cast<std::uint16_t>((1u << d) - 1u);
  for (std::size_t h = 0; h < crop_h; ++h) {
    for (std::size_t w = 0; w < crop_w; ++w) {
      const std::size_t sh = h0 + (flip_rows ? crop_h - 1 - h : h);
      const std::size_t sw = w0 + (flip_cols ? crop_w - 1 - w : w);
      const std::size_t i = h * crop_w + w;
      const std::uint16_t x = volume.at(t, sh, sw);
      s.xm_t[i] = static_cast<std::uint16_t>(x >> d);
      s.xl_t[i] = static_cast<std::uint16_t>(x & low_mask);
      if (t > 0) {
        const std::uint16_t p = volume.at(t - 1, sh, sw);
        s.xm_prev[i] = static_cast<std::uint16_t>(p >> d);
        s.xl_prev[i] = static_cast<std::uint16_t>(p & low_mask);
      }
    }
  }
  return s;
}

Sample random_sample(const std::vector<Volume>& corpus, int d, std::uint32_t crop, std::mt19937_64& rng) {
  const Volume& v = corpus[rng() % corpus.size()];
  const std::size_t ch = std::min<std::size_t>(crop, v.height());
  const std::size_t cw = std::min<std::size_t>(crop, v.width());
  const std::size_t t = rng() % v.slices();
  const std::size_t h0 = rng() % (v.height() - ch + 1);
  const std::size_t w0 = rng() % (v.width() - cw + 1);
  const auto flips = rng();
  return make_sample(v, d, t, h0, w0, ch, cw, (flips & 1) != 0, (flips & 2) != 0);
}

TrainResult train(const std::vector<Volume>& corpus, const ModelConfig& config, const TrainOptions& options,
                  const Model* init) {
  if (corpus.empty()) throw std::invalid_argument("training corpus is empty");
  if (options.batch == 0 || options.crop == 0 || options.slopes.empty()) {
    throw std::invalid_argument("batch, crop and slopes must be non-empty");
  }
  for (const Volume& v : corpus) {
    if (options.d < 1 || options.d > v.bit_depth()) throw std::invalid_argument("cut position outside a corpus volume");
  }
  pin_eigen_blocking();

  TrainResult result{init ? *init : Model::random(config, options.seed), {}};
  Model& model = result.model;
  if (model.config() != config) throw std::invalid_argument("initial model has a different config");

  std::vector<MaskSet> masks;
  for (const auto& b : options.slopes) masks.push_back(build_masks(b, static_cast<int>(config.kernel)));

  std::mt19937_64 rng(options.seed ^ 0x5eedf00dULL);
  Adam adam(model.params());
  ParameterSet grads = model.params().zeros_like();
  const auto start = std::chrono::steady_clock::now();
  double window_bits = 0.0;
  double window_pixels = 0.0;

  for (std::uint64_t it = 0; it < options.iterations; ++it) {
    const double lr = learning_rate_at(options.learning_rate, it, options.iterations);
    const MaskSet& mk = masks[rng() % masks.size()];
    grads.set_zero();
    double bits = 0.0;
    double pixels = 0.0;
    for (std::uint32_t k = 0; k < options.batch; ++k) {
      const Sample s = random_sample(corpus, options.d, options.crop, rng);
      bits += loss_and_gradients(model, s, mk, &grads);
      pixels += s.grid.n();
    }
    if (!std::isfinite(bits) || !grads.all_finite()) {
      std::ostringstream os;
      os << "training diverged at iteration " << it << " (lr " << lr << ", batch loss " << bits << " bits";
      for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].allFinite()) {
          os << ", first non-finite gradient in " << grads.name(i);
          break;
        }
      }
      if (!result.log.empty()) os << ", last logged loss " << result.log.back().loss_bits << " bits/pixel";
      os << ")";
      throw TrainingError(os.str());
    }
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] /= pixels;
    adam.step(model.params(), grads, lr);
    window_bits += bits;
    window_pixels += pixels;

    if ((it + 1) % options.log_every == 0 || it + 1 == options.iterations) {
      TrainLogEntry e;
      e.iteration = it + 1;
      e.loss_bits = window_bits / window_pixels;
      e.lr = lr;
      e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.log.push_back(e);
      if (options.on_log) options.on_log(format_log_entry(e));
      window_bits = 0.0;
      window_pixels = 0.0;
    }
  }
  return result;
}

double evaluate_bits_per_pixel(const Model& model, const std::vector<Volume>& volumes, int d, const ScanRational& b,
                               std::uint32_t patch) {
  pin_eigen_blocking();
  const MaskSet masks = build_masks(b, static_cast<int>(model.config().kernel));
  double bits = 0.0;
  double pixels = 0.0;
  for (const Volume& v : volumes) {
    for (std::size_t t = 0; t < v.slices(); ++t) {
      for (std::size_t h0 = 0; h0 < v.height(); h0 += patch) {
        for (std::size_t w0 = 0; w0 < v.width(); w0 += patch) {
          const std::size_t ch = std::min<std::size_t>(patch, v.height() - h0);
          const std::size_t cw = std::min<std::size_t>(patch, v.width() - w0);
          const Sample s = make_sample(v, d, t, h0, w0, ch, cw, false, false);
          bits += nll_loss(predict_field(model, s, masks), s.xl_t);
          pixels += static_cast<double>(ch * cw);
        }
      }
    }
  }
  return bits / pixels;
}

}  // namespace bitsplit
