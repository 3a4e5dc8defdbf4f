#pragma once

// Module layout of the LSBV model. Each module stores indices into the
// ParameterSet and exposes forward (optionally filling a cache) and backward.

#include "bitsplit/model.hpp"
#include "nn.hpp"

namespace bitsplit::detail {

struct Linear {
  std::size_t w = 0, b = 0;
  void init(ParameterSet& p, const std::string& name, int in, int out);
  Mat forward(const ParameterSet& p, const Mat& x) const;
  Mat backward(const ParameterSet& p, ParameterSet& g, const Mat& x, const Mat& dy) const;
};

struct Conv {
  std::size_t w = 0, b = 0;
  int kernel = 3;
  void init(ParameterSet& p, const std::string& name, int in, int out, int k);
  Mat forward(const ParameterSet& p, const Mat& x, Grid g, Mat* cols) const;
  Mat backward(const ParameterSet& p, ParameterSet& g, const Mat& cols, Grid grid, int in_channels,
               const Mat& dy) const;
};

struct Depthwise {
  std::size_t w = 0, b = 0;
  void init(ParameterSet& p, const std::string& name, int channels);
};

struct Pool {
  std::size_t w = 0, b = 0;
  int stride = 1;
  void init(ParameterSet& p, const std::string& name, int channels, int s);
};

struct Norm {
  std::size_t gamma = 0, beta = 0;
  void init(ParameterSet& p, const std::string& name, int channels);
};

struct Embed {
  struct Cache {
    Mat x, p;
  };
  Linear proj;
  Depthwise cpe;
  void init(ParameterSet& p, const std::string& name, int in, int out);
  Mat forward(const ParameterSet& p, const Mat& x, Grid g, Cache* c) const;
  Mat backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dy) const;
};

struct Attention {
  struct Cache {
    Mat xq, xk, xv, q, kf, vf, kp, vp, o;
    nn::AttentionCache attn;
  };
  Linear q, k, v, out;
  Pool pool_k, pool_v;
  int heads = 1;
  void init(ParameterSet& p, const std::string& name, const ModelConfig& cfg);
  Mat forward(const ParameterSet& p, const Mat& xq, const Mat& xk, const Mat& xv, Grid g, Cache* c) const;
  void backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dy, Mat& dxq,
                Mat& dxk, Mat& dxv) const;
};

struct Ffn {
  struct Cache {
    Mat x, l, h, act;
    nn::LayerNormCache ln;
  };
  Depthwise dw;
  Norm norm;
  Linear fc1, fc2;
  void init(ParameterSet& p, const std::string& name, int channels, int hidden);
  Mat forward(const ParameterSet& p, const Mat& x, Grid g, Cache* c) const;
  Mat backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dy) const;
};

/// z = ConvFFN(x_v + EMHSA(x_q, x_k, x_v)).
struct Block {
  struct Cache {
    Attention::Cache attn;
    Ffn::Cache ffn;
  };
  Attention attn;
  Ffn ffn;
  void init(ParameterSet& p, const std::string& name, const ModelConfig& cfg);
  Mat forward(const ParameterSet& p, const Mat& xq, const Mat& xk, const Mat& xv, Grid g, Cache* c) const;
  void backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dz, Mat& dxq,
                Mat& dxk, Mat& dxv) const;
  Mat self_backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dz) const;
};

/// Two 3x3 convolutions, each followed by GELU.
struct Stem {
  struct Cache {
    Mat cols1, cols2, h1, h2;
  };
  Conv conv1, conv2;
  int in_channels = 1;
  void init(ParameterSet& p, const std::string& name, int in, int out);
  Mat forward(const ParameterSet& p, const Mat& x, Grid g, Cache* c) const;
  void backward(const ParameterSet& p, ParameterSet& g, const Cache& c, Grid grid, const Mat& dy) const;
};

struct TfamCache {
  Stem::Cache stem_m, stem_l;
  Embed::Cache emb_a1, emb_b, emb_v2, emb_a2;
  Block::Cache cross1, self1, cross2, self2;
  Mat z2;
};

struct PacmCache {
  Mat cols, fused, h1, a1, h2, a2;
};

struct Pacm {
  std::size_t masked_w = 0, masked_b = 0;
  Linear fc1, fc2, out;
};

struct Network {
  Network(ParameterSet& p, const ModelConfig& cfg);

  ModelConfig config;
  Stem stem_m, stem_l;
  Embed emb_a1, emb_b, emb_v2, emb_a2;
  Block cross1, self1, cross2, self2;
  Linear align;
  Pacm pacm;

  std::size_t fan_in(std::size_t index, const ParameterSet& p) const;

  Mat tfam(const ParameterSet& p, const Mat& xm_t, const Mat& xm_prev, const Mat& xl_prev, Grid g,
           TfamCache* c) const;
  void tfam_backward(const ParameterSet& p, ParameterSet& g, const TfamCache& c, Grid grid, const Mat& dca) const;
  /// 3N raw head channels per pixel.
  Mat pacm_raw(const ParameterSet& p, const Mat& xl_t, const Mat& ca, Grid g, const MaskSet& masks,
               PacmCache* c) const;
  /// Returns the gradient with respect to C^a.
  Mat pacm_backward(const ParameterSet& p, ParameterSet& g, const PacmCache& c, const Mat& draw) const;
};

}  // namespace bitsplit::detail
