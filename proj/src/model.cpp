#include "bitsplit/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "network.hpp"
#include "nn.hpp"

namespace bitsplit {

void ModelConfig::validate() const {
  const std::uint32_t widths[] = {fe_channels, embed_channels,     heads,      head_dim,   attn_stride, mixtures,
                                  masked_channels, align_out_channels, ppn_hidden, ffn_hidden, kernel};
  for (auto v : widths) {
    if (v == 0) throw std::invalid_argument("model widths must be positive");
  }
  if (kernel % 2 == 0) throw std::invalid_argument("masked kernel size must be odd");
  if (attn_stride > 64 || kernel > 31) throw std::invalid_argument("stride or kernel out of range");
}

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.fe_channels = 96;
  c.embed_channels = 192;
  c.heads = 8;
  c.head_dim = 32;
  c.attn_stride = 4;
  c.mixtures = 10;
  c.masked_channels = 160;
  c.align_out_channels = 96;
  c.ppn_hidden = 256;
  c.ffn_hidden = 768;
  c.kernel = 9;
  return c;
}

std::string ModelConfig::describe() const {
  std::ostringstream os;
  os << "fe=" << fe_channels << " embed=" << embed_channels << " heads=" << heads << "x" << head_dim
     << " stride=" << attn_stride << " N=" << mixtures << " masked=" << masked_channels
     << " align=" << align_out_channels << " ppn_hidden=" << ppn_hidden << " ffn_hidden=" << ffn_hidden
     << " K=" << kernel << (intra ? " intra" : "");
  return os.str();
}

std::size_t ParameterSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (find(name)) throw std::logic_error("duplicate parameter " + name);
  names_.push_back(name);
  values_.push_back(Mat::Zero(rows, cols));
  return values_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t ParameterSet::at(const std::string& name) const {
  const auto i = find(name);
  if (!i) throw std::invalid_argument("unknown parameter " + name);
  return *i;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out = *this;
  out.set_zero();
  return out;
}

void ParameterSet::set_zero() {
  for (auto& v : values_) v.setZero();
}

bool ParameterSet::all_finite() const {
  for (const auto& v : values_) {
    if (!v.allFinite()) return false;
  }
  return true;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  net_ = std::make_shared<const detail::Network>(params_, config_);
}

Model Model::random(const ModelConfig& config, std::uint64_t seed) {
  Model m(config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto& p = m.params_;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::string& name = p.name(i);
    const bool is_bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    if (is_bias) continue;
    if (name.size() > 6 && name.compare(name.size() - 6, 6, ".gamma") == 0) {
      p[i].setOnes();
      continue;
    }
    const double fan_in = static_cast<double>(m.net_->fan_in(i, p));
    const double std = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index k = 0; k < p[i].size(); ++k) p[i].data()[k] = std * normal(rng);
  }
  // Start the head near a broad unimodal prediction.
  p[m.net_->pacm.out.w] *= 0.1;
  return m;
}

std::string parameter_group(const std::string& name) {
  const auto has = [&](const char* s) { return name.find(s) != std::string::npos; };
  if (has(".stem_")) return "stem";
  if (has(".cpe.")) return "cpe";
  if (has(".ffn.")) return "convffn";
  if (has(".emb_")) return "embedding";
  if (has("tfam.cross1.") || has("tfam.self1.")) return "block1";
  if (has("tfam.cross2.") || has("tfam.self2.")) return "block2";
  if (has("tfam.align.")) return "projection";
  if (has("pacm.masked.")) return "masked_conv";
  if (has("pacm.")) return "ppn";
  return "other";
}

void pin_eigen_blocking() { Eigen::setCpuCacheSizes(32 * 1024, 256 * 1024, 2 * 1024 * 1024); }

Mat normalize_symbols(std::span<const std::uint16_t> symbols, int depth) {
  Mat out(1, static_cast<Eigen::Index>(symbols.size()));
  if (depth == 0) {
    out.setZero();
    return out;
  }
  const double range = std::ldexp(1.0, depth) - 1.0;
  for (std::size_t i = 0; i < symbols.size(); ++i) out(0, static_cast<Eigen::Index>(i)) = 2.0 * symbols[i] / range - 1.0;
  return out;
}

LogisticMixtureParams MixtureField::at(int pixel) const {
  LogisticMixtureParams p;
  const auto n = static_cast<std::size_t>(weights.rows());
  p.weights.resize(n);
  p.means.resize(n);
  p.scales.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    p.weights[k] = weights(static_cast<Eigen::Index>(k), pixel);
    p.means[k] = means(static_cast<Eigen::Index>(k), pixel);
    p.scales[k] = scales(static_cast<Eigen::Index>(k), pixel);
  }
  return p;
}

namespace detail {

// ---- primitive modules ----

void Linear::init(ParameterSet& p, const std::string& name, int in, int out) {
  w = p.add(name + ".w", out, in);
  b = p.add(name + ".b", out, 1);
}

Mat Linear::forward(const ParameterSet& p, const Mat& x) const {
  Mat y = p[w] * x;
  nn::add_bias(y, p[b]);
  return y;
}

Mat Linear::backward(const ParameterSet& p, ParameterSet& g, const Mat& x, const Mat& dy) const {
  g[w].noalias() += dy * x.transpose();
  g[b] += dy.rowwise().sum();
  return p[w].transpose() * dy;
}

void Conv::init(ParameterSet& p, const std::string& name, int in, int out, int k) {
  kernel = k;
  w = p.add(name + ".w", out, in * k * k);
  b = p.add(name + ".b", out, 1);
}

Mat Conv::forward(const ParameterSet& p, const Mat& x, Grid g, Mat* cols) const {
  Mat c = nn::im2col(x, g, kernel);
  Mat y = p[w] * c;
  nn::add_bias(y, p[b]);
  if (cols) *cols = std::move(c);
  return y;
}

Mat Conv::backward(const ParameterSet& p, ParameterSet& g, const Mat& cols, Grid grid, int in_channels,
                   const Mat& dy) const {
  g[w].noalias() += dy * cols.transpose();
  g[b] += dy.rowwise().sum();
  const Mat dcols = p[w].transpose() * dy;
  return nn::col2im(dcols, grid, in_channels, kernel);
}

void Depthwise::init(ParameterSet& p, const std::string& name, int channels) {
  w = p.add(name + ".w", channels, 9);
  b = p.add(name + ".b", channels, 1);
}

void Pool::init(ParameterSet& p, const std::string& name, int channels, int s) {
  stride = s;
  w = p.add(name + ".w", channels, s * s);
  b = p.add(name + ".b", channels, 1);
}

void Norm::init(ParameterSet& p, const std::string& name, int channels) {
  gamma = p.add(name + ".gamma", channels, 1);
  beta = p.add(name + ".b", channels, 1);
}

// ---- composite modules ----

void Embed::init(ParameterSet& p, const std::string& name, int in, int out) {
  proj.init(p, name + ".proj", in, out);
  cpe.init(p, name + ".cpe", out);
}

Mat Embed::forward(const ParameterSet& p, const Mat& x, Grid g, Cache* c) const {
  Mat e = proj.forward(p, x);
  Mat y = e + nn::depthwise3(e, g, p[cpe.w], p[cpe.b]);
  if (c) {
    c->x = x;
    c->p = std::move(e);
  }
  return y;
}

Mat Embed::backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dy) const {
  Mat dp = dy + nn::depthwise3_backward(dy, c.p, grid, p[cpe.w], g[cpe.w], g[cpe.b]);
  return proj.backward(p, g, c.x, dp);
}

void Attention::init(ParameterSet& p, const std::string& name, const ModelConfig& cfg) {
  heads = static_cast<int>(cfg.heads);
  const int e = static_cast<int>(cfg.embed_channels);
  const int inner = static_cast<int>(cfg.inner_channels());
  q.init(p, name + ".q", e, inner);
  k.init(p, name + ".k", e, inner);
  v.init(p, name + ".v", e, inner);
  pool_k.init(p, name + ".pool_k", inner, static_cast<int>(cfg.attn_stride));
  pool_v.init(p, name + ".pool_v", inner, static_cast<int>(cfg.attn_stride));
  out.init(p, name + ".out", inner, e);
}

Mat Attention::forward(const ParameterSet& p, const Mat& xq, const Mat& xk, const Mat& xv, Grid g, Cache* c) const {
  Mat qq = q.forward(p, xq);
  Mat kf = k.forward(p, xk);
  Mat vf = v.forward(p, xv);
  Mat kp = nn::pool(kf, g, pool_k.stride, p[pool_k.w], p[pool_k.b]);
  Mat vp = nn::pool(vf, g, pool_v.stride, p[pool_v.w], p[pool_v.b]);
  nn::AttentionCache* ac = c ? &c->attn : nullptr;
  Mat o = nn::eattn(qq, kp, vp, heads, ac);
  Mat y = out.forward(p, o);
  if (c) {
    c->xq = xq;
    c->xk = xk;
    c->xv = xv;
    c->q = std::move(qq);
    c->kf = std::move(kf);
    c->vf = std::move(vf);
    c->kp = std::move(kp);
    c->vp = std::move(vp);
    c->o = std::move(o);
  }
  return y;
}

void Attention::backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dy, Mat& dxq,
                         Mat& dxk, Mat& dxv) const {
  const Mat d_o = out.backward(p, g, c.o, dy);
  Mat dq, dkp, dvp;
  nn::eattn_backward(d_o, c.q, c.kp, c.vp, heads, c.attn, dq, dkp, dvp);
  const Mat dkf = nn::pool_backward(dkp, c.kf, grid, pool_k.stride, p[pool_k.w], g[pool_k.w], g[pool_k.b]);
  const Mat dvf = nn::pool_backward(dvp, c.vf, grid, pool_v.stride, p[pool_v.w], g[pool_v.w], g[pool_v.b]);
  dxq = q.backward(p, g, c.xq, dq);
  dxk = k.backward(p, g, c.xk, dkf);
  dxv = v.backward(p, g, c.xv, dvf);
}

void Ffn::init(ParameterSet& p, const std::string& name, int channels, int hidden) {
  dw.init(p, name + ".dw", channels);
  norm.init(p, name + ".norm", channels);
  fc1.init(p, name + ".fc1", channels, hidden);
  fc2.init(p, name + ".fc2", hidden, channels);
}

Mat Ffn::forward(const ParameterSet& p, const Mat& x, Grid g, Cache* c) const {
  Mat a = nn::depthwise3(x, g, p[dw.w], p[dw.b]);
  nn::LayerNormCache lc;
  Mat l = nn::layer_norm(a, p[norm.gamma], p[norm.beta], c ? &lc : nullptr);
  Mat h = fc1.forward(p, l);
  Mat act = nn::gelu(h);
  Mat y = x + fc2.forward(p, act);
  if (c) {
    c->x = x;
    c->ln = std::move(lc);
    c->l = std::move(l);
    c->h = std::move(h);
    c->act = std::move(act);
  }
  return y;
}

Mat Ffn::backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dy) const {
  const Mat dact = fc2.backward(p, g, c.act, dy);
  const Mat dh = nn::gelu_backward(dact, c.h);
  const Mat dl = fc1.backward(p, g, c.l, dh);
  const Mat da = nn::layer_norm_backward(dl, c.ln, p[norm.gamma], g[norm.gamma], g[norm.beta]);
  return dy + nn::depthwise3_backward(da, c.x, grid, p[dw.w], g[dw.w], g[dw.b]);
}

void Block::init(ParameterSet& p, const std::string& name, const ModelConfig& cfg) {
  attn.init(p, name + ".attn", cfg);
  ffn.init(p, name + ".ffn", static_cast<int>(cfg.embed_channels), static_cast<int>(cfg.ffn_hidden));
}

Mat Block::forward(const ParameterSet& p, const Mat& xq, const Mat& xk, const Mat& xv, Grid g, Cache* c) const {
  Mat y = xv + attn.forward(p, xq, xk, xv, g, c ? &c->attn : nullptr);
  return ffn.forward(p, y, g, c ? &c->ffn : nullptr);
}

void Block::backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dz, Mat& dxq,
                     Mat& dxk, Mat& dxv) const {
  const Mat dy = ffn.backward(p, g, c.ffn, grid, dz);
  attn.backward(p, g, c.attn, grid, dy, dxq, dxk, dxv);
  dxv += dy;
}

Mat Block::self_backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dz) const {
  Mat dq, dk, dv;
  backward(p, g, c, grid, dz, dq, dk, dv);
  return dq + dk + dv;
}

void Stem::init(ParameterSet& p, const std::string& name, int in, int out) {
  in_channels = in;
  conv1.init(p, name + ".conv1", in, out, 3);
  conv2.init(p, name + ".conv2", out, out, 3);
}

Mat Stem::forward(const ParameterSet& p, const Mat& x, Grid g, Cache* c) const {
  Mat cols1, cols2;
  Mat h1 = conv1.forward(p, x, g, c ? &cols1 : nullptr);
  Mat a1 = nn::gelu(h1);
  Mat h2 = conv2.forward(p, a1, g, c ? &cols2 : nullptr);
  Mat y = nn::gelu(h2);
  if (c) {
    c->cols1 = std::move(cols1);
    c->cols2 = std::move(cols2);
    c->h1 = std::move(h1);
    c->h2 = std::move(h2);
  }
  return y;
}

void Stem::backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dy) const {
  const Mat dh2 = nn::gelu_backward(dy, c.h2);
  const Mat da1 = conv2.backward(p, g, c.cols2, grid, static_cast<int>(c.h1.rows()), dh2);
  const Mat dh1 = nn::gelu_backward(da1, c.h1);
  g[conv1.w].noalias() += dh1 * c.cols1.transpose();
  g[conv1.b] += dh1.rowwise().sum();
}

// ---- network ----

Network::Network(ParameterSet& p, const ModelConfig& cfg) : config(cfg) {
  const int fe = static_cast<int>(cfg.fe_channels);
  const int e = static_cast<int>(cfg.embed_channels);
  stem_m.init(p, "tfam.stem_m", 2, fe);
  stem_l.init(p, "tfam.stem_l", 1, fe);
  emb_a1.init(p, "tfam.emb_a1", fe, e);
  emb_b.init(p, "tfam.emb_b", fe, e);
  cross1.init(p, "tfam.cross1", cfg);
  self1.init(p, "tfam.self1", cfg);
  emb_v2.init(p, "tfam.emb_v2", e, e);
  emb_a2.init(p, "tfam.emb_a2", fe, e);
  cross2.init(p, "tfam.cross2", cfg);
  self2.init(p, "tfam.self2", cfg);
  align.init(p, "tfam.align", e, static_cast<int>(cfg.align_out_channels));

  const int k = static_cast<int>(cfg.kernel);
  const int h = static_cast<int>(cfg.ppn_hidden);
  pacm.masked_w = p.add("pacm.masked.w", cfg.masked_channels, k * k);
  pacm.masked_b = p.add("pacm.masked.b", cfg.masked_channels, 1);
  pacm.fc1.init(p, "pacm.fc1", static_cast<int>(cfg.ppn_in()), h);
  pacm.fc2.init(p, "pacm.fc2", h, h);
  pacm.out.init(p, "pacm.out", h, static_cast<int>(cfg.ppn_out()));
}

std::size_t Network::fan_in(std::size_t index, const ParameterSet& p) const {
  const std::string& name = p.name(index);
  const auto ends_with = [&](const std::string& suffix) {
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".cpe.w") || ends_with(".dw.w")) return 9;
  if (ends_with("pool_k.w") || ends_with("pool_v.w")) return static_cast<std::size_t>(p[index].cols());
  return static_cast<std::size_t>(p[index].cols());
}

Mat Network::tfam(const ParameterSet& p, const Mat& xm_t, const Mat& xm_prev, const Mat& xl_prev, Grid g,
                  TfamCache* c) const {
  Mat in_m(2, g.n());
  in_m.row(0) = xm_t.row(0);
  in_m.row(1) = xm_prev.row(0);
  const Mat a = stem_m.forward(p, in_m, g, c ? &c->stem_m : nullptr);
  const Mat b = stem_l.forward(p, xl_prev, g, c ? &c->stem_l : nullptr);
  const Mat ea1 = emb_a1.forward(p, a, g, c ? &c->emb_a1 : nullptr);
  const Mat eb = emb_b.forward(p, b, g, c ? &c->emb_b : nullptr);
  const Mat y1 = cross1.forward(p, ea1, ea1, eb, g, c ? &c->cross1 : nullptr);
  const Mat z1 = self1.forward(p, y1, y1, y1, g, c ? &c->self1 : nullptr);
  const Mat v2 = emb_v2.forward(p, z1, g, c ? &c->emb_v2 : nullptr);
  const Mat ea2 = emb_a2.forward(p, a, g, c ? &c->emb_a2 : nullptr);
  const Mat y2 = cross2.forward(p, ea2, ea2, v2, g, c ? &c->cross2 : nullptr);
  const Mat z2 = self2.forward(p, y2, y2, y2, g, c ? &c->self2 : nullptr);
  if (c) c->z2 = z2;
  return align.forward(p, z2);
}

void Network::tfam_backward(const ParameterSet& p, ParameterSet& g, const TfamCache& c, Grid grid,
                            const Mat& dca) const {
  const Mat dz2 = align.backward(p, g, c.z2, dca);
  const Mat dy2 = self2.self_backward(p, g, c.self2, grid, dz2);
  Mat dq2, dk2, dv2;
  cross2.backward(p, g, c.cross2, grid, dy2, dq2, dk2, dv2);
  Mat da = emb_a2.backward(p, g, c.emb_a2, grid, dq2 + dk2);
  const Mat dz1 = emb_v2.backward(p, g, c.emb_v2, grid, dv2);
  const Mat dy1 = self1.self_backward(p, g, c.self1, grid, dz1);
  Mat dq1, dk1, dv1;
  cross1.backward(p, g, c.cross1, grid, dy1, dq1, dk1, dv1);
  da += emb_a1.backward(p, g, c.emb_a1, grid, dq1 + dk1);
  const Mat db = emb_b.backward(p, g, c.emb_b, grid, dv1);
  stem_m.backward(p, g, c.stem_m, grid, da);
  stem_l.backward(p, g, c.stem_l, grid, db);
}

Mat Network::pacm_raw(const ParameterSet& p, const Mat& xl_t, const Mat& ca, Grid g, const MaskSet& masks,
                      PacmCache* c) const {
  if (masks.kernel() != static_cast<int>(config.kernel)) {
    throw std::invalid_argument("mask kernel does not match the model kernel");
  }
  Mat cols = nn::masked_im2col(xl_t, g, masks);
  Mat fused(config.ppn_in(), g.n());
  fused.topRows(config.masked_channels).noalias() = p[pacm.masked_w] * cols;
  fused.topRows(config.masked_channels).colwise() += p[pacm.masked_b].col(0);
  fused.bottomRows(config.align_out_channels) = ca;
  Mat h1 = pacm.fc1.forward(p, fused);
  Mat a1 = nn::gelu(h1);
  Mat h2 = pacm.fc2.forward(p, a1);
  Mat a2 = nn::gelu(h2);
  Mat raw = pacm.out.forward(p, a2);
  if (c) {
    c->cols = std::move(cols);
    c->fused = std::move(fused);
    c->h1 = std::move(h1);
    c->a1 = std::move(a1);
    c->h2 = std::move(h2);
    c->a2 = std::move(a2);
  }
  return raw;
}

Mat Network::pacm_backward(const ParameterSet& p, ParameterSet& g, const PacmCache& c, const Mat& draw) const {
  const Mat da2 = pacm.out.backward(p, g, c.a2, draw);
  const Mat dh2 = nn::gelu_backward(da2, c.h2);
  const Mat da1 = pacm.fc2.backward(p, g, c.a1, dh2);
  const Mat dh1 = nn::gelu_backward(da1, c.h1);
  const Mat dfused = pacm.fc1.backward(p, g, c.fused, dh1);
  const auto dcl = dfused.topRows(config.masked_channels);
  g[pacm.masked_w].noalias() += dcl * c.cols.transpose();
  g[pacm.masked_b] += dcl.rowwise().sum();
  return dfused.bottomRows(config.align_out_channels);
}

}  // namespace detail

namespace {

constexpr double kMaxLogScale = 12.0;
constexpr double kMinLogScale = -40.0;

// Converts the 3N raw channels of one pixel into mixture parameters. Returns
// whether each scale sits on a clamp (zero gradient there).
template <typename Raw>
void head_params(const Raw& raw, int n, double range, double* weights, double* means, double* scales,
                 bool* clamped) {
  double mx = raw[0];
  for (int k = 1; k < n; ++k) mx = std::max(mx, raw[k]);
  double total = 0.0;
  for (int k = 0; k < n; ++k) {
    weights[k] = std::exp(raw[k] - mx);
    total += weights[k];
  }
  for (int k = 0; k < n; ++k) {
    weights[k] /= total;
    means[k] = (raw[n + k] + 1.0) * 0.5 * range;
    const double ls = raw[2 * n + k];
    const double s = std::exp(std::clamp(ls, kMinLogScale, kMaxLogScale)) * 0.5 * range;
    const bool at_floor = s < kSigmaMin;
    scales[k] = at_floor ? kSigmaMin : s;
    if (clamped) clamped[k] = at_floor || ls > kMaxLogScale || ls < kMinLogScale;
  }
}

MixtureField field_from_raw(const Mat& raw, Grid grid, int n, int lsb_depth) {
  const double range = std::ldexp(1.0, lsb_depth) - 1.0;
  MixtureField f;
  f.grid = grid;
  f.lsb_depth = lsb_depth;
  f.weights.resize(n, grid.n());
  f.means.resize(n, grid.n());
  f.scales.resize(n, grid.n());
  for (int px = 0; px < grid.n(); ++px) {
    head_params(raw.col(px).data(), n, range, f.weights.col(px).data(), f.means.col(px).data(),
                f.scales.col(px).data(), nullptr);
  }
  return f;
}

void check_grid(const Mat& m, Grid g, const char* what) {
  if (m.rows() != 1 || m.cols() != g.n()) throw std::invalid_argument(std::string(what) + " does not match the grid");
}

struct SampleMaps {
  Mat xm_t, xm_prev, xl_prev, xl_t;
};

SampleMaps sample_maps(const Model& model, const Sample& s) {
  const auto n = static_cast<std::size_t>(s.grid.n());
  if (s.xm_t.size() != n || s.xm_prev.size() != n || s.xl_prev.size() != n || s.xl_t.size() != n) {
    throw std::invalid_argument("sample slices do not match the grid");
  }
  SampleMaps m;
  m.xm_t = normalize_symbols(s.xm_t, s.msb_depth);
  m.xl_t = normalize_symbols(s.xl_t, s.lsb_depth);
  if (model.config().intra) {
    const std::vector<std::uint16_t> zero(n, 0);
    m.xm_prev = normalize_symbols(zero, s.msb_depth);
    m.xl_prev = normalize_symbols(zero, s.lsb_depth);
  } else {
    m.xm_prev = normalize_symbols(s.xm_prev, s.msb_depth);
    m.xl_prev = normalize_symbols(s.xl_prev, s.lsb_depth);
  }
  return m;
}

}  // namespace

Mat tfam_forward(const Model& model, const Mat& xm_t, const Mat& xm_prev, const Mat& xl_prev, Grid grid) {
  check_grid(xm_t, grid, "x_m_t");
  check_grid(xm_prev, grid, "x_m_prev");
  check_grid(xl_prev, grid, "x_l_prev");
  return model.network().tfam(model.params(), xm_t, xm_prev, xl_prev, grid, nullptr);
}

MixtureField pacm_forward(const Model& model, const Mat& xl_t, const Mat& aligned, Grid grid, const MaskSet& masks,
                          int lsb_depth) {
  check_grid(xl_t, grid, "x_l_t");
  if (aligned.rows() != model.config().align_out_channels || aligned.cols() != grid.n()) {
    throw std::invalid_argument("aligned feature does not match the model or grid");
  }
  const Mat raw = model.network().pacm_raw(model.params(), xl_t, aligned, grid, masks, nullptr);
  return field_from_raw(raw, grid, static_cast<int>(model.config().mixtures), lsb_depth);
}

double nll_loss(const MixtureField& field, std::span<const std::uint16_t> symbols) {
  if (symbols.size() != static_cast<std::size_t>(field.grid.n())) throw std::invalid_argument("symbol count mismatch");
  double bits = 0.0;
  for (int px = 0; px < field.grid.n(); ++px) {
    bits += -std::log2(std::max(mixture_probability(field.at(px), symbols[static_cast<std::size_t>(px)], field.lsb_depth),
                                1e-30));
  }
  return bits;
}

MixtureField predict_field(const Model& model, const Sample& sample, const MaskSet& masks) {
  const SampleMaps m = sample_maps(model, sample);
  const Mat ca = tfam_forward(model, m.xm_t, m.xm_prev, m.xl_prev, sample.grid);
  return pacm_forward(model, m.xl_t, ca, sample.grid, masks, sample.lsb_depth);
}

double loss_and_gradients(const Model& model, const Sample& sample, const MaskSet& masks, ParameterSet* grads) {
  const auto& net = model.network();
  const auto& p = model.params();
  const SampleMaps m = sample_maps(model, sample);
  const Grid g = sample.grid;
  const int n = static_cast<int>(model.config().mixtures);
  const double range = std::ldexp(1.0, sample.lsb_depth) - 1.0;

  detail::TfamCache tc;
  detail::PacmCache pc;
  const Mat ca = net.tfam(p, m.xm_t, m.xm_prev, m.xl_prev, g, grads ? &tc : nullptr);
  const Mat raw = net.pacm_raw(p, m.xl_t, ca, g, masks, grads ? &pc : nullptr);

  Mat draw(raw.rows(), raw.cols());
  LogisticMixtureParams mp;
  mp.weights.resize(static_cast<std::size_t>(n));
  mp.means.resize(static_cast<std::size_t>(n));
  mp.scales.resize(static_cast<std::size_t>(n));
  std::unique_ptr<bool[]> clamped(new bool[static_cast<std::size_t>(n)]);
  double bits = 0.0;
  for (int px = 0; px < g.n(); ++px) {
    head_params(raw.col(px).data(), n, range, mp.weights.data(), mp.means.data(), mp.scales.data(),
                clamped.get());
    const auto nll = mixture_nll_with_grad(mp, sample.xl_t[static_cast<std::size_t>(px)], sample.lsb_depth);
    bits += nll.bits;
    if (!grads) continue;
    double inner = 0.0;
    for (int k = 0; k < n; ++k) inner += mp.weights[static_cast<std::size_t>(k)] * nll.d_weights[static_cast<std::size_t>(k)];
    for (int k = 0; k < n; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      draw(k, px) = mp.weights[uk] * (nll.d_weights[uk] - inner);
      draw(n + k, px) = nll.d_means[uk] * 0.5 * range;
      draw(2 * n + k, px) = clamped[uk] ? 0.0 : nll.d_scales[uk] * mp.scales[uk];
    }
  }
  if (grads) {
    const Mat dca = net.pacm_backward(p, *grads, pc, draw);
    net.tfam_backward(p, *grads, tc, g, dca);
  }
  return bits;
}

Mat depthwise_pool(const Mat& x, Grid grid, int stride, const Mat& weight, const Mat& bias, Grid* pooled) {
  if (stride < 1 || weight.cols() != stride * stride || weight.rows() != x.rows() || bias.rows() != x.rows()) {
    throw std::invalid_argument("pooling weights do not match");
  }
  if (pooled) *pooled = nn::pooled_grid(grid, stride);
  return nn::pool(x, grid, stride, weight, bias);
}

Mat eattn(const Mat& q, const Mat& k_pooled, const Mat& v_pooled, int heads) {
  if (heads < 1 || q.rows() % heads != 0 || k_pooled.rows() != q.rows() || v_pooled.rows() != q.rows() ||
      k_pooled.cols() != v_pooled.cols()) {
    throw std::invalid_argument("attention operands do not match");
  }
  return nn::eattn(q, k_pooled, v_pooled, heads, nullptr);
}

Mat conv_ffn(const Model& model, const std::string& prefix, const Mat& x, Grid grid) {
  const auto& p = model.params();
  detail::Ffn f;
  f.dw.w = p.at(prefix + ".dw.w");
  f.dw.b = p.at(prefix + ".dw.b");
  f.norm.gamma = p.at(prefix + ".norm.gamma");
  f.norm.beta = p.at(prefix + ".norm.b");
  f.fc1.w = p.at(prefix + ".fc1.w");
  f.fc1.b = p.at(prefix + ".fc1.b");
  f.fc2.w = p.at(prefix + ".fc2.w");
  f.fc2.b = p.at(prefix + ".fc2.b");
  if (x.rows() != p[f.dw.w].rows() || x.cols() != grid.n()) throw std::invalid_argument("ConvFFN input mismatch");
  return f.forward(p, x, grid, nullptr);
}

PixelPredictor::PixelPredictor(const Model& model, const Mat& aligned, Grid grid, const MaskSet& masks, int lsb_depth)
    : model_(model), grid_(grid), masks_(masks), lsb_depth_(lsb_depth) {
  const auto& cfg = model.config();
  const auto& net = model.network();
  const auto& p = model.params();
  if (masks.kernel() != static_cast<int>(cfg.kernel)) throw std::invalid_argument("mask kernel does not match the model kernel");
  const Mat& w1 = p[net.pacm.fc1.w];
  base_ = w1.rightCols(cfg.align_out_channels) * aligned;
  nn::add_bias(base_, p[net.pacm.fc1.b]);
  cl_.resize(cfg.masked_channels);
  h1_.resize(cfg.ppn_hidden);
  h2_.resize(cfg.ppn_hidden);
  raw_.resize(cfg.ppn_out());
}

void PixelPredictor::predict(std::span<const double> xl_norm, std::uint32_t h, std::uint32_t w,
                             LogisticMixtureParams& out) {
  const auto& cfg = model_.config();
  const auto& net = model_.network();
  const auto& p = model_.params();
  const Mat& mw = p[net.pacm.masked_w];
  const int k = masks_.kernel();
  const int r = masks_.radius();
  cl_ = p[net.pacm.masked_b].col(0);
  for (int dy = -r; dy <= r; ++dy) {
    const int nh = static_cast<int>(h) + dy;
    if (nh < 0 || nh >= grid_.h) continue;
    for (int dx = -r; dx <= r; ++dx) {
      const int nw = static_cast<int>(w) + dx;
      if (nw < 0 || nw >= grid_.w || !masks_.allows(h, dy, dx)) continue;
      cl_ += mw.col((dy + r) * k + dx + r) * xl_norm[static_cast<std::size_t>(nh * grid_.w + nw)];
    }
  }
  const int px = static_cast<int>(h) * grid_.w + static_cast<int>(w);
  h1_ = base_.col(px);
  h1_.noalias() += p[net.pacm.fc1.w].leftCols(cfg.masked_channels) * cl_;
  for (Eigen::Index i = 0; i < h1_.size(); ++i) h1_[i] = nn::gelu(h1_[i]);
  h2_ = p[net.pacm.fc2.b].col(0);
  h2_.noalias() += p[net.pacm.fc2.w] * h1_;
  for (Eigen::Index i = 0; i < h2_.size(); ++i) h2_[i] = nn::gelu(h2_[i]);
  raw_ = p[net.pacm.out.b].col(0);
  raw_.noalias() += p[net.pacm.out.w] * h2_;
  const int n = static_cast<int>(cfg.mixtures);
  out.weights.resize(static_cast<std::size_t>(n));
  out.means.resize(static_cast<std::size_t>(n));
  out.scales.resize(static_cast<std::size_t>(n));
  head_params(raw_.data(), n, std::ldexp(1.0, lsb_depth_) - 1.0, out.weights.data(), out.means.data(),
              out.scales.data(), nullptr);
}

}  // namespace bitsplit
