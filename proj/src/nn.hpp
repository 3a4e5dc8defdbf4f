#pragma once

// Layer primitives with hand-written backward passes. Backward functions add
// parameter gradients into the given accumulators and return the input gradient.

#include <vector>

#include "bitsplit/model.hpp"

namespace bitsplit::nn {

void add_bias(Mat& y, const Mat& bias);

/// (cin*k*k) x n patch matrix for a same-padded k x k convolution.
Mat im2col(const Mat& x, Grid g, int k);
Mat col2im(const Mat& cols, Grid g, int channels, int k);
/// Single-channel patch matrix with causally masked taps zeroed.
Mat masked_im2col(const Mat& x, Grid g, const MaskSet& masks);

Mat depthwise3(const Mat& x, Grid g, const Mat& w, const Mat& b);
Mat depthwise3_backward(const Mat& dy, const Mat& x, Grid g, const Mat& w, Mat& dw, Mat& db);

Grid pooled_grid(Grid g, int s);
Mat pool(const Mat& x, Grid g, int s, const Mat& w, const Mat& b);
Mat pool_backward(const Mat& dy, const Mat& x, Grid g, int s, const Mat& w, Mat& dw, Mat& db);

inline constexpr double kLayerNormEps = 1e-6;
struct LayerNormCache {
  Mat xhat;
  Eigen::RowVectorXd inv_std;
};
Mat layer_norm(const Mat& x, const Mat& gamma, const Mat& beta, LayerNormCache* cache);
Mat layer_norm_backward(const Mat& dy, const LayerNormCache& cache, const Mat& gamma, Mat& dgamma, Mat& dbeta);

double gelu(double x);
double gelu_grad(double x);
Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& dy, const Mat& x);

struct AttentionCache {
  std::vector<Mat> probs;  // per head, m x n
};
Mat eattn(const Mat& q, const Mat& kp, const Mat& vp, int heads, AttentionCache* cache);
void eattn_backward(const Mat& dout, const Mat& q, const Mat& kp, const Mat& vp, int heads,
                    const AttentionCache& cache, Mat& dq, Mat& dkp, Mat& dvp);

}  // namespace bitsplit::nn
