#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "bitsplit/model.hpp"
#include "bitsplit/volume.hpp"

namespace bitsplit {

/// Training diverged (non-finite loss or gradient).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainOptions {
  std::uint64_t iterations = 20000;
  std::uint32_t batch = 32;
  double learning_rate = 5e-5;
  std::uint32_t crop = 32;
  /// Cut position; every corpus volume is split at d.
  int d = 8;
  /// One slope is drawn per iteration; the masks of that slope are used for the whole batch.
  std::vector<ScanRational> slopes = {ScanRational(2, 1)};
  std::uint64_t seed = 1;
  std::uint64_t log_every = 100;
  /// Called with every log line as it is produced.
  std::function<void(const std::string&)> on_log;
};

/// Base rate halved at 40%, 60% and 80% of the iteration budget.
double learning_rate_at(double base, std::uint64_t iteration, std::uint64_t iterations);

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  explicit Adam(const ParameterSet& shape);
  void step(ParameterSet& params, const ParameterSet& grads, double lr);
  std::uint64_t steps() const { return t_; }

 private:
  ParameterSet m_, v_;
  std::uint64_t t_ = 0;
};

struct TrainLogEntry {
  std::uint64_t iteration = 0;
  double loss_bits = 0.0;  // per pixel, averaged over the entries since the previous line
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<TrainLogEntry> log;
  std::string log_text() const;
};

/// Line format "iter <i> loss_bits <b> lr <r> seconds <s>".
std::string format_log_entry(const TrainLogEntry& entry);

/// Crop of slice t starting at (h0, w0), optionally flipped. Slice 0 gets zero
/// previous slices.
Sample make_sample(const Volume& volume, int d, std::size_t t, std::size_t h0, std::size_t w0, std::size_t crop_h,
                   std::size_t crop_w, bool flip_rows, bool flip_cols);

/// Random crop with random flips from a random volume and slice.
Sample random_sample(const std::vector<Volume>& corpus, int d, std::uint32_t crop, std::mt19937_64& rng);

/// Adam on the summed bits of each batch. Starts from `init` when given,
/// otherwise from Model::random(config, seed).
TrainResult train(const std::vector<Volume>& corpus, const ModelConfig& config, const TrainOptions& options,
                  const Model* init = nullptr);

/// Mean bits per pixel of `model` over every full-slice tiling of `volumes`,
/// using the masks of `b`. Matches the LSBV rate of the codec up to coder overhead.
double evaluate_bits_per_pixel(const Model& model, const std::vector<Volume>& volumes, int d, const ScanRational& b,
                               std::uint32_t patch);

}  // namespace bitsplit
