#include "nn.hpp"

#include <cmath>
#include <numbers>

namespace bitsplit::nn {

void add_bias(Mat& y, const Mat& bias) { y.colwise() += bias.col(0); }

Mat im2col(const Mat& x, Grid g, int k) {
  const int cin = static_cast<int>(x.rows());
  const int r = k / 2;
  const int taps = k * k;
  Mat cols = Mat::Zero(cin * taps, g.n());
  for (int h = 0; h < g.h; ++h) {
    for (int w = 0; w < g.w; ++w) {
      double* out = cols.col(h * g.w + w).data();
      for (int ky = 0; ky < k; ++ky) {
        const int nh = h + ky - r;
        if (nh < 0 || nh >= g.h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int nw = w + kx - r;
          if (nw < 0 || nw >= g.w) continue;
          const double* src = x.col(nh * g.w + nw).data();
          for (int c = 0; c < cin; ++c) out[c * taps + ky * k + kx] = src[c];
        }
      }
    }
  }
  return cols;
}

Mat col2im(const Mat& cols, Grid g, int channels, int k) {
  const int r = k / 2;
  const int taps = k * k;
  Mat x = Mat::Zero(channels, g.n());
  for (int h = 0; h < g.h; ++h) {
    for (int w = 0; w < g.w; ++w) {
      const double* in = cols.col(h * g.w + w).data();
      for (int ky = 0; ky < k; ++ky) {
        const int nh = h + ky - r;
        if (nh < 0 || nh >= g.h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int nw = w + kx - r;
          if (nw < 0 || nw >= g.w) continue;
          double* dst = x.col(nh * g.w + nw).data();
          for (int c = 0; c < channels; ++c) dst[c] += in[c * taps + ky * k + kx];
        }
      }
    }
  }
  return x;
}

Mat masked_im2col(const Mat& x, Grid g, const MaskSet& masks) {
  const int k = masks.kernel();
  const int r = masks.radius();
  Mat cols = Mat::Zero(k * k, g.n());
  for (int h = 0; h < g.h; ++h) {
    for (int w = 0; w < g.w; ++w) {
      double* out = cols.col(h * g.w + w).data();
      for (int dy = -r; dy <= r; ++dy) {
        const int nh = h + dy;
        if (nh < 0 || nh >= g.h) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int nw = w + dx;
          if (nw < 0 || nw >= g.w || !masks.allows(static_cast<std::uint32_t>(h), dy, dx)) continue;
          out[(dy + r) * k + dx + r] = x(0, nh * g.w + nw);
        }
      }
    }
  }
  return cols;
}

Mat depthwise3(const Mat& x, Grid g, const Mat& w, const Mat& b) {
  const Eigen::Index c = x.rows();
  Mat y(c, g.n());
  for (int h = 0; h < g.h; ++h) {
    for (int ww = 0; ww < g.w; ++ww) {
      auto out = y.col(h * g.w + ww);
      out = b.col(0);
      for (int ky = 0; ky < 3; ++ky) {
        const int nh = h + ky - 1;
        if (nh < 0 || nh >= g.h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int nw = ww + kx - 1;
          if (nw < 0 || nw >= g.w) continue;
          out.array() += w.col(ky * 3 + kx).array() * x.col(nh * g.w + nw).array();
        }
      }
    }
  }
  return y;
}

Mat depthwise3_backward(const Mat& dy, const Mat& x, Grid g, const Mat& w, Mat& dw, Mat& db) {
  Mat dx = Mat::Zero(x.rows(), x.cols());
  db += dy.rowwise().sum();
  for (int h = 0; h < g.h; ++h) {
    for (int ww = 0; ww < g.w; ++ww) {
      const auto grad = dy.col(h * g.w + ww);
      for (int ky = 0; ky < 3; ++ky) {
        const int nh = h + ky - 1;
        if (nh < 0 || nh >= g.h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int nw = ww + kx - 1;
          if (nw < 0 || nw >= g.w) continue;
          const int t = ky * 3 + kx;
          const int src = nh * g.w + nw;
          dw.col(t).array() += grad.array() * x.col(src).array();
          dx.col(src).array() += grad.array() * w.col(t).array();
        }
      }
    }
  }
  return dx;
}

Grid pooled_grid(Grid g, int s) { return Grid{(g.h + s - 1) / s, (g.w + s - 1) / s}; }

Mat pool(const Mat& x, Grid g, int s, const Mat& w, const Mat& b) {
  const Grid pg = pooled_grid(g, s);
  Mat y(x.rows(), pg.n());
  for (int i = 0; i < pg.h; ++i) {
    for (int j = 0; j < pg.w; ++j) {
      auto out = y.col(i * pg.w + j);
      out = b.col(0);
      for (int ky = 0; ky < s; ++ky) {
        const int h = i * s + ky;
        if (h >= g.h) break;
        for (int kx = 0; kx < s; ++kx) {
          const int ww = j * s + kx;
          if (ww >= g.w) break;
          out.array() += w.col(ky * s + kx).array() * x.col(h * g.w + ww).array();
        }
      }
    }
  }
  return y;
}

Mat pool_backward(const Mat& dy, const Mat& x, Grid g, int s, const Mat& w, Mat& dw, Mat& db) {
  const Grid pg = pooled_grid(g, s);
  Mat dx = Mat::Zero(x.rows(), x.cols());
  db += dy.rowwise().sum();
  for (int i = 0; i < pg.h; ++i) {
    for (int j = 0; j < pg.w; ++j) {
      const auto grad = dy.col(i * pg.w + j);
      for (int ky = 0; ky < s; ++ky) {
        const int h = i * s + ky;
        if (h >= g.h) break;
        for (int kx = 0; kx < s; ++kx) {
          const int ww = j * s + kx;
          if (ww >= g.w) break;
          const int t = ky * s + kx;
          const int src = h * g.w + ww;
          dw.col(t).array() += grad.array() * x.col(src).array();
          dx.col(src).array() += grad.array() * w.col(t).array();
        }
      }
    }
  }
  return dx;
}

Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, LayerNormCache* cache) {
  const double c = static_cast<double>(x.rows());
  const Eigen::RowVectorXd mean = x.colwise().sum() / c;
  Mat centered = x.rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / c;
  const Eigen::RowVectorXd inv_std = (var.array() + kLayerNormEps).rsqrt();
  Mat xhat = centered.array().rowwise() * inv_std.array();
  Mat y = (xhat.array().colwise() * gamma.col(0).array()).colwise() + beta.col(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const Mat& gamma, Mat& dgamma, Mat& dbeta) {
  const double c = static_cast<double>(dy.rows());
  dgamma += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
  dbeta += dy.rowwise().sum();
  const Mat dxhat = dy.array().colwise() * gamma.col(0).array();
  const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
  const Eigen::RowVectorXd sum_dx = (dxhat.array() * cache.xhat.array()).colwise().sum();
  Mat dx = (c * dxhat.array()).rowwise() - sum_d.array();
  dx -= (cache.xhat.array().rowwise() * sum_dx.array()).matrix();
  dx = dx.array().rowwise() * (cache.inv_std.array() / c);
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

Mat gelu(const Mat& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

Mat gelu_backward(const Mat& dy, const Mat& x) {
  return dy.array() * x.unaryExpr([](double v) { return gelu_grad(v); }).array();
}

Mat eattn(const Mat& q, const Mat& kp, const Mat& vp, int heads, AttentionCache* cache) {
  const Eigen::Index dh = q.rows() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Mat out(q.rows(), q.cols());
  if (cache) cache->probs.resize(static_cast<std::size_t>(heads));
  for (int head = 0; head < heads; ++head) {
    Mat s = (kp.middleRows(head * dh, dh).transpose() * q.middleRows(head * dh, dh)) * scale;
    const Eigen::RowVectorXd mx = s.colwise().maxCoeff();
    s = (s.rowwise() - mx).array().exp();
    const Eigen::RowVectorXd total = s.colwise().sum();
    s = s.array().rowwise() / total.array();
    out.middleRows(head * dh, dh).noalias() = vp.middleRows(head * dh, dh) * s;
    if (cache) cache->probs[static_cast<std::size_t>(head)] = std::move(s);
  }
  return out;
}

void eattn_backward(const Mat& dout, const Mat& q, const Mat& kp, const Mat& vp, int heads,
                    const AttentionCache& cache, Mat& dq, Mat& dkp, Mat& dvp) {
  const Eigen::Index dh = q.rows() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  dq = Mat::Zero(q.rows(), q.cols());
  dkp = Mat::Zero(kp.rows(), kp.cols());
  dvp = Mat::Zero(vp.rows(), vp.cols());
  for (int head = 0; head < heads; ++head) {
    const Mat& p = cache.probs[static_cast<std::size_t>(head)];
    const auto d_o = dout.middleRows(head * dh, dh);
    dvp.middleRows(head * dh, dh).noalias() = d_o * p.transpose();
    const Mat dp = vp.middleRows(head * dh, dh).transpose() * d_o;
    const Eigen::RowVectorXd inner = (p.array() * dp.array()).colwise().sum();
    const Mat ds = (p.array() * (dp.rowwise() - inner).array()) * scale;
    dq.middleRows(head * dh, dh).noalias() = kp.middleRows(head * dh, dh) * ds;
    dkp.middleRows(head * dh, dh).noalias() = q.middleRows(head * dh, dh) * ds.transpose();
  }
}

}  // namespace bitsplit::nn
