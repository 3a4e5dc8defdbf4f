#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bitsplit/entropy.hpp"
#include "bitsplit/scan.hpp"

namespace bitsplit {

/// Feature maps are channels x (H*W) with pixel index h*W + w.
using Mat = Eigen::MatrixXd;

struct Grid {
  int h = 0;
  int w = 0;
  int n() const { return h * w; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

struct ModelConfig {
  std::uint32_t fe_channels = 8;
  std::uint32_t embed_channels = 16;
  std::uint32_t heads = 2;
  std::uint32_t head_dim = 8;
  std::uint32_t attn_stride = 4;
  std::uint32_t mixtures = 5;
  std::uint32_t masked_channels = 16;
  std::uint32_t align_out_channels = 8;
  std::uint32_t ppn_hidden = 24;
  std::uint32_t ffn_hidden = 32;
  std::uint32_t kernel = 9;
  /// Previous-slice inputs are always zero (single-slice conditioning).
  bool intra = false;

  std::uint32_t inner_channels() const { return heads * head_dim; }
  std::uint32_t ppn_in() const { return masked_channels + align_out_channels; }
  std::uint32_t ppn_out() const { return 3 * mixtures; }

  /// Throws std::invalid_argument on zero widths or an even kernel.
  void validate() const;

  static ModelConfig tiny();
  static ModelConfig full();
  std::string describe() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Ordered, named parameter tensors. Biases are stored as c x 1 matrices.
class ParameterSet {
 public:
  std::size_t add(const std::string& name, Eigen::Index rows, Eigen::Index cols);

  std::size_t size() const { return values_.size(); }
  Mat& operator[](std::size_t i) { return values_[i]; }
  const Mat& operator[](std::size_t i) const { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t at(const std::string& name) const;

  std::size_t scalar_count() const;
  ParameterSet zeros_like() const;
  void set_zero();
  bool all_finite() const;

 private:
  std::vector<std::string> names_;
  std::vector<Mat> values_;
};

using Sha256 = std::array<std::uint8_t, 32>;
std::string to_hex(const Sha256& digest);

namespace detail {
struct Network;
}

class Model {
 public:
  /// All parameters zero.
  explicit Model(const ModelConfig& config);
  /// Fan-in scaled Gaussian weights, zero biases.
  static Model random(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const detail::Network& network() const { return *net_; }

  /// Weight file: "BSPW", version, config, named tensors (f64 LE, row-major),
  /// trailing SHA-256 of everything before it. That digest is the model hash.
  std::vector<std::uint8_t> serialize() const;
  static Model deserialize(std::span<const std::uint8_t> bytes);
  void save(const std::string& path) const;
  static Model load(const std::string& path);
  Sha256 hash() const;

 private:
  ModelConfig config_;
  ParameterSet params_;
  std::shared_ptr<const detail::Network> net_;
};

/// Coarse component a parameter belongs to ("stem", "cpe", "block1", ...), used
/// to report gradient checks per group.
std::string parameter_group(const std::string& name);

/// Fixes Eigen's cache-size dependent GEMM blocking so products are evaluated
/// in the same order on every machine.
void pin_eigen_blocking();

/// 2x/R - 1 with R = 2^depth - 1; every value maps to 0 when depth is 0.
Mat normalize_symbols(std::span<const std::uint16_t> symbols, int depth);

/// Per-pixel mixture parameters, N x n each; weights already softmaxed and
/// means/scales in symbol units.
struct MixtureField {
  Grid grid;
  int lsb_depth = 0;
  Mat weights;
  Mat means;
  Mat scales;

  LogisticMixtureParams at(int pixel) const;
};

/// Aligned feature C^a (align_out_channels x n).
Mat tfam_forward(const Model& model, const Mat& xm_t, const Mat& xm_prev, const Mat& xl_prev, Grid grid);

/// Masked context plus parameter prediction over a whole patch. `xl_t` is the
/// normalized current low-bit slice; masks select the causal taps per row.
MixtureField pacm_forward(const Model& model, const Mat& xl_t, const Mat& aligned, Grid grid, const MaskSet& masks,
                          int lsb_depth);

/// Sum over pixels of -log2 p(symbol), in bits.
double nll_loss(const MixtureField& field, std::span<const std::uint16_t> symbols);

/// One training example: a patch of the four slices in symbol units.
struct Sample {
  Grid grid;
  int msb_depth = 8;
  int lsb_depth = 8;
  std::vector<std::uint16_t> xm_t;
  std::vector<std::uint16_t> xm_prev;
  std::vector<std::uint16_t> xl_prev;
  std::vector<std::uint16_t> xl_t;
};

/// Forward pass in symbol space including the previous-slice zeroing of intra models.
MixtureField predict_field(const Model& model, const Sample& sample, const MaskSet& masks);

/// Loss in bits; when `grads` is given the exact gradient is added to it.
double loss_and_gradients(const Model& model, const Sample& sample, const MaskSet& masks, ParameterSet* grads);

/// Stride-s depthwise pooling of a map (kernel = stride, zero padding at the
/// bottom/right up to a multiple of s). Weights are c x s^2, bias c x 1.
Mat depthwise_pool(const Mat& x, Grid grid, int stride, const Mat& weight, const Mat& bias, Grid* pooled);

/// softmax(Q_h^T K'_h / sqrt(dh)) applied to V'_h for each head; Q is
/// (heads*dh) x n and K', V' are (heads*dh) x m.
Mat eattn(const Mat& q, const Mat& k_pooled, const Mat& v_pooled, int heads);

/// The ConvFFN whose parameters carry `prefix` (e.g. "tfam.cross1.ffn").
Mat conv_ffn(const Model& model, const std::string& prefix, const Mat& x, Grid grid);

/// Per-pixel evaluation used by the codec. The aligned feature is folded into
/// the first PPN layer once per patch; predict() then reads only the causal
/// taps of the normalized low-bit buffer.
class PixelPredictor {
 public:
  PixelPredictor(const Model& model, const Mat& aligned, Grid grid, const MaskSet& masks, int lsb_depth);

  void predict(std::span<const double> xl_norm, std::uint32_t h, std::uint32_t w, LogisticMixtureParams& out);

 private:
  const Model& model_;
  Grid grid_;
  const MaskSet& masks_;
  int lsb_depth_;
  Mat base_;  // W1_a * C^a + b1 per pixel
  Eigen::VectorXd cl_, h1_, h2_, raw_;
};

}  // namespace bitsplit
