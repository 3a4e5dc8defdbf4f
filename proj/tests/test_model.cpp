#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "bitsplit/errors.hpp"
#include "bitsplit/model.hpp"

using namespace bitsplit;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.fe_channels = 3;
  c.embed_channels = 4;
  c.heads = 2;
  c.head_dim = 2;
  c.attn_stride = 2;
  c.mixtures = 3;
  c.masked_channels = 4;
  c.align_out_channels = 3;
  c.ppn_hidden = 5;
  c.ffn_hidden = 6;
  c.kernel = 5;
  return c;
}

// Random weights including biases and norm gains, so every parameter matters.
Model dense_random(const ModelConfig& c, std::uint64_t seed) {
  Model m = Model::random(c, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> normal(0.0, 0.2);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& name = m.params().name(i);
    const bool bias = name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
    const bool gain = name.find(".gamma") != std::string::npos;
    if (!bias && !gain) continue;
    for (Eigen::Index k = 0; k < m.params()[i].size(); ++k) m.params()[i].data()[k] += normal(rng);
  }
  return m;
}

Sample random_sample(Grid g, int msb_depth, int lsb_depth, std::uint32_t seed) {
  std::mt19937 rng(seed);
  Sample s;
  s.grid = g;
  s.msb_depth = msb_depth;
  s.lsb_depth = lsb_depth;
  const auto fill = [&](std::vector<std::uint16_t>& v, int depth) {
    v.resize(static_cast<std::size_t>(g.n()));
    for (auto& x : v) x = static_cast<std::uint16_t>(depth == 0 ? 0 : rng() % (1u << depth));
  };
  fill(s.xm_t, msb_depth);
  fill(s.xm_prev, msb_depth);
  fill(s.xl_prev, lsb_depth);
  fill(s.xl_t, lsb_depth);
  return s;
}

Mat random_map(std::mt19937& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

}  // namespace

TEST_CASE("config arithmetic") {
  const ModelConfig p = ModelConfig::full();
  CHECK(p.ppn_out() == 30);
  CHECK(p.ppn_in() == 256);
  CHECK(p.align_out_channels == 96);
  const ModelConfig t = ModelConfig::tiny();
  CHECK(t.inner_channels() == t.embed_channels);
  ModelConfig bad = t;
  bad.kernel = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("zero weights give a zero aligned feature of the right shape") {
  const Model m(ModelConfig::tiny());
  std::mt19937 rng(1);
  const Grid g{13, 10};
  const Mat ca = tfam_forward(m, random_map(rng, 1, g.n()), random_map(rng, 1, g.n()), random_map(rng, 1, g.n()), g);
  CHECK(ca.rows() == m.config().align_out_channels);
  CHECK(ca.cols() == g.n());
  CHECK(ca.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(tfam_forward(m, random_map(rng, 1, 5), random_map(rng, 1, g.n()), random_map(rng, 1, g.n()), g),
                  std::invalid_argument);
}

TEST_CASE("random model gives finite output of the right shape") {
  const Model m = Model::random(ModelConfig::tiny(), 3);
  std::mt19937 rng(2);
  for (Grid g : {Grid{32, 32}, Grid{6, 32}, Grid{5, 3}, Grid{1, 1}}) {
    const Mat ca = tfam_forward(m, random_map(rng, 1, g.n()), random_map(rng, 1, g.n()), random_map(rng, 1, g.n()), g);
    CHECK(ca.rows() == 8);
    CHECK(ca.cols() == g.n());
    CHECK(ca.allFinite());
  }
}

TEST_CASE("attention with zero queries averages the pooled values") {
  std::mt19937 rng(4);
  const Mat q = Mat::Zero(4, 6);
  const Mat k = random_map(rng, 4, 3);
  const Mat v = random_map(rng, 4, 3);
  const Mat out = eattn(q, k, v, 2);
  for (Eigen::Index t = 0; t < 6; ++t) {
    for (Eigen::Index c = 0; c < 4; ++c) CHECK(out(c, t) == doctest::Approx(v.row(c).mean()).epsilon(1e-14));
  }
}

TEST_CASE("single token with identity pooling returns V") {
  std::mt19937 rng(5);
  const Mat q = random_map(rng, 4, 1);
  const Mat k = random_map(rng, 4, 1);
  const Mat v = random_map(rng, 4, 1);
  Grid pooled;
  const Mat kp = depthwise_pool(k, Grid{1, 1}, 1, Mat::Ones(4, 1), Mat::Zero(4, 1), &pooled);
  const Mat vp = depthwise_pool(v, Grid{1, 1}, 1, Mat::Ones(4, 1), Mat::Zero(4, 1), nullptr);
  CHECK(pooled == Grid{1, 1});
  CHECK((eattn(q, kp, vp, 2) - v).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("pooled attention matches a dense re-implementation") {
  std::mt19937 rng(6);
  const int heads = 2, dh = 3, c = heads * dh, s = 4;
  for (Grid g : {Grid{4, 4}, Grid{6, 5}}) {
    const Mat q = random_map(rng, c, g.n());
    const Mat k = random_map(rng, c, g.n());
    const Mat v = random_map(rng, c, g.n());
    const Mat wk = random_map(rng, c, s * s), bk = random_map(rng, c, 1);
    const Mat wv = random_map(rng, c, s * s), bv = random_map(rng, c, 1);
    Grid pg;
    const Mat out = eattn(q, depthwise_pool(k, g, s, wk, bk, &pg), depthwise_pool(v, g, s, wv, bv, nullptr), heads);

    // Oracle: explicit zero padding, explicit per-token softmax.
    const int ph = (g.h + s - 1) / s, pw = (g.w + s - 1) / s;
    REQUIRE(pg == Grid{ph, pw});
    const auto pooled = [&](const Mat& x, const Mat& w, const Mat& b, int ch, int i, int j) {
      double acc = b(ch, 0);
      for (int ky = 0; ky < s; ++ky)
        for (int kx = 0; kx < s; ++kx) {
          const int h = i * s + ky, ww = j * s + kx;
          const double val = (h < g.h && ww < g.w) ? x(ch, h * g.w + ww) : 0.0;
          acc += w(ch, ky * s + kx) * val;
        }
      return acc;
    };
    for (int head = 0; head < heads; ++head) {
      for (int t = 0; t < g.n(); ++t) {
        std::vector<double> score;
        for (int i = 0; i < ph; ++i)
          for (int j = 0; j < pw; ++j) {
            double dot = 0.0;
            for (int d = 0; d < dh; ++d) dot += q(head * dh + d, t) * pooled(k, wk, bk, head * dh + d, i, j);
            score.push_back(dot / std::sqrt(static_cast<double>(dh)));
          }
        double z = 0.0;
        for (double sc : score) z += std::exp(sc);
        for (int d = 0; d < dh; ++d) {
          double expect = 0.0;
          int idx = 0;
          for (int i = 0; i < ph; ++i)
            for (int j = 0; j < pw; ++j) expect += std::exp(score[static_cast<std::size_t>(idx++)]) / z * pooled(v, wv, bv, head * dh + d, i, j);
          REQUIRE(std::abs(out(head * dh + d, t) - expect) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("ConvFFN is the identity with zero weights and keeps shape") {
  const Model zero(ModelConfig::tiny());
  std::mt19937 rng(7);
  const Grid g{5, 9};
  const Mat x = random_map(rng, 16, g.n());
  CHECK((conv_ffn(zero, "tfam.cross1.ffn", x, g) - x).cwiseAbs().maxCoeff() == 0.0);
  const Model m = Model::random(ModelConfig::tiny(), 8);
  const Mat y = conv_ffn(m, "tfam.self2.ffn", x, g);
  CHECK(y.rows() == 16);
  CHECK(y.cols() == g.n());
  CHECK_THROWS_AS(conv_ffn(m, "tfam.nothing", x, g), std::invalid_argument);
}

TEST_CASE("mixture field is normalized") {
  const Model m = Model::random(ModelConfig::tiny(), 9);
  const Sample s = random_sample(Grid{12, 12}, 8, 8, 10);
  const MaskSet masks = build_masks(ScanRational(2, 1), 9);
  const MixtureField f = predict_field(m, s, masks);
  CHECK(f.weights.rows() == 5);
  for (int px = 0; px < s.grid.n(); ++px) {
    CHECK(std::abs(f.weights.col(px).sum() - 1.0) < 1e-12);
    CHECK(f.scales.col(px).minCoeff() >= kSigmaMin);
  }
  const MaskSet wrong = build_masks(ScanRational(2, 1), 7);
  CHECK_THROWS_AS(predict_field(m, s, wrong), std::invalid_argument);
}

TEST_CASE("zero masked convolution makes the output ignore the current slice") {
  Model m = Model::random(ModelConfig::tiny(), 11);
  m.params()[m.params().at("pacm.masked.w")].setZero();
  Sample s = random_sample(Grid{10, 10}, 8, 8, 12);
  const MaskSet masks = build_masks(ScanRational(1, 1), 9);
  const MixtureField a = predict_field(m, s, masks);
  for (auto& v : s.xl_t) v = static_cast<std::uint16_t>(255 - v);
  const MixtureField b = predict_field(m, s, masks);
  CHECK(a.means == b.means);
  CHECK(a.scales == b.scales);
  CHECK(a.weights == b.weights);
}

TEST_CASE("perturbing a pixel never changes earlier or same-step predictions") {
  const Model m = Model::random(ModelConfig::tiny(), 13);
  for (const ScanRational b : {ScanRational(2, 1), ScanRational(3, 2), ScanRational(16, 1)}) {
    const Grid g{16, 16};
    const Sample base = random_sample(g, 8, 8, 14);
    const MaskSet masks = build_masks(b, 9);
    const ScanSchedule sched = build_schedule(b, 16, 16);
    const MixtureField ref = predict_field(m, base, masks);
    std::size_t changed_later = 0;
    for (int p = 0; p < g.n(); p += 3) {
      Sample s = base;
      s.xl_t[static_cast<std::size_t>(p)] ^= 0x5A;
      const MixtureField f = predict_field(m, s, masks);
      const auto ps = sched.step_of(static_cast<std::uint32_t>(p / g.w), static_cast<std::uint32_t>(p % g.w));
      for (int o = 0; o < g.n(); ++o) {
        const bool same = f.means.col(o) == ref.means.col(o) && f.scales.col(o) == ref.scales.col(o) &&
                          f.weights.col(o) == ref.weights.col(o);
        const auto os = sched.step_of(static_cast<std::uint32_t>(o / g.w), static_cast<std::uint32_t>(o % g.w));
        if (os <= ps) REQUIRE(same);
        else if (!same) ++changed_later;
      }
    }
    CHECK(changed_later > 0);
  }
}

TEST_CASE("per-pixel predictor agrees with the patch forward pass") {
  const Model m = Model::random(ModelConfig::tiny(), 15);
  const Sample s = random_sample(Grid{9, 11}, 6, 8, 16);
  const MaskSet masks = build_masks(ScanRational(3, 2), 9);
  const MixtureField f = predict_field(m, s, masks);
  const Mat xm_t = normalize_symbols(s.xm_t, 6), xm_p = normalize_symbols(s.xm_prev, 6);
  const Mat xl_p = normalize_symbols(s.xl_prev, 8), xl_t = normalize_symbols(s.xl_t, 8);
  const Mat ca = tfam_forward(m, xm_t, xm_p, xl_p, s.grid);
  PixelPredictor pred(m, ca, s.grid, masks, 8);
  const std::vector<double> buf(xl_t.data(), xl_t.data() + xl_t.size());
  LogisticMixtureParams mp;
  for (int h = 0; h < 9; ++h) {
    for (int w = 0; w < 11; ++w) {
      pred.predict(buf, static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(w), mp);
      const auto ref = f.at(h * 11 + w);
      for (std::size_t k = 0; k < mp.weights.size(); ++k) {
        REQUIRE(mp.weights[k] == doctest::Approx(ref.weights[k]).epsilon(1e-12));
        REQUIRE(mp.means[k] == doctest::Approx(ref.means[k]).epsilon(1e-12));
        REQUIRE(mp.scales[k] == doctest::Approx(ref.scales[k]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("loss of uniform and near-certain fields") {
  const Grid g{3, 4};
  std::vector<std::uint16_t> symbols(12);
  for (std::size_t i = 0; i < symbols.size(); ++i) symbols[i] = static_cast<std::uint16_t>(i % 8);

  // Eight needle components, one per symbol, spread the mass evenly.
  MixtureField uniform{g, 3, Mat::Constant(8, 12, 1.0 / 8), Mat(8, 12), Mat::Constant(8, 12, kSigmaMin)};
  for (int k = 0; k < 8; ++k) uniform.means.row(k).setConstant(k);
  CHECK(nll_loss(uniform, symbols) == doctest::Approx(3.0 * 12).epsilon(1e-12));

  MixtureField certain{g, 3, Mat::Ones(1, 12), Mat(1, 12), Mat::Constant(1, 12, kSigmaMin)};
  for (int px = 0; px < 12; ++px) certain.means(0, px) = symbols[static_cast<std::size_t>(px)];
  CHECK(nll_loss(certain, symbols) < 1e-9);
}

TEST_CASE("loss tracks the coded length of the same field") {
  const Model m = Model::random(ModelConfig::tiny(), 17);
  const Sample s = random_sample(Grid{32, 32}, 8, 8, 18);
  const MaskSet masks = build_masks(ScanRational(2, 1), 9);
  const MixtureField f = predict_field(m, s, masks);
  std::vector<Pmf> pmfs;
  std::vector<std::uint32_t> symbols(s.xl_t.begin(), s.xl_t.end());
  for (int px = 0; px < s.grid.n(); ++px) pmfs.push_back(quantize(discretize(f.at(px), 8)));
  const double loss = nll_loss(f, s.xl_t);
  const Bitstream bs = encode(symbols, pmfs);
  CHECK(static_cast<double>(bs.bit_length()) <= 1.01 * loss + 64.0);
  CHECK(static_cast<double>(bs.bit_length()) >= 0.99 * loss - 64.0);
  CHECK(loss == doctest::Approx(loss_and_gradients(m, s, masks, nullptr)).epsilon(1e-9));
}

TEST_CASE("analytic gradients match central differences for every group") {
  const ModelConfig cfg = small_config();
  Model m = dense_random(cfg, 19);
  const Sample s = random_sample(Grid{7, 6}, 4, 5, 20);
  const MaskSet masks = build_masks(ScanRational(3, 2), 5);
  ParameterSet grads = m.params().zeros_like();
  const double base = loss_and_gradients(m, s, masks, &grads);
  CHECK(std::isfinite(base));

  std::map<std::string, std::pair<double, double>> err;  // group -> (|a-f|^2, max(|a|,|f|)^2)
  const double h = 1e-5;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    auto& group = err[parameter_group(m.params().name(i))];
    double diff2 = 0.0, a2 = 0.0, f2 = 0.0;
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
      diff2 += (an - fd) * (an - fd);
      a2 += an * an;
      f2 += fd * fd;
    }
    group.first += diff2;
    group.second += std::max(a2, f2);
  }
  for (const char* name : {"stem", "cpe", "embedding", "block1", "block2", "convffn", "projection", "masked_conv", "ppn"}) {
    REQUIRE(err.count(name) == 1);
    const auto [d2, n2] = err[name];
    INFO(name);
    CHECK(n2 > 0.0);
    CHECK(std::sqrt(d2 / n2) < 1e-4);
  }
  CHECK(err.count("other") == 0);
}

TEST_CASE("softmax logits receive gradients that sum to zero per pixel") {
  const Model m = Model::random(ModelConfig::tiny(), 21);
  const MaskSet masks = build_masks(ScanRational(2, 1), 9);
  // One pixel makes the bias gradient equal to the per-pixel logit gradient.
  const Sample s = random_sample(Grid{1, 1}, 8, 8, 22);
  ParameterSet g = m.params().zeros_like();
  loss_and_gradients(m, s, masks, &g);
  const Mat& db = g[m.params().at("pacm.out.b")];
  CHECK(std::abs(db.topRows(5).sum()) < 1e-12);
  CHECK(db.topRows(5).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("a zero-loss configuration has zero gradients") {
  Model m = Model::random(ModelConfig::tiny(), 23);
  // Means pushed far below symbol 0 put all mass on symbol 0.
  m.params()[m.params().at("pacm.out.w")].setZero();
  auto& b = m.params()[m.params().at("pacm.out.b")];
  b.setZero();
  b.middleRows(5, 5).setConstant(-1e4);
  Sample s = random_sample(Grid{6, 6}, 8, 8, 24);
  std::fill(s.xl_t.begin(), s.xl_t.end(), 0);
  ParameterSet g = m.params().zeros_like();
  const double loss = loss_and_gradients(m, s, MaskSet(ScanRational(2, 1), 9), &g);
  CHECK(loss < 1e-12);
  double norm = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) norm += g[i].squaredNorm();
  CHECK(std::sqrt(norm) < 1e-12);
}

TEST_CASE("intra models ignore the previous slices") {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.intra = true;
  const Model m = Model::random(cfg, 25);
  Sample s = random_sample(Grid{8, 8}, 8, 8, 26);
  const MaskSet masks = build_masks(ScanRational(2, 1), 9);
  const MixtureField a = predict_field(m, s, masks);
  for (auto& v : s.xm_prev) v = static_cast<std::uint16_t>(v ^ 0xFF);
  for (auto& v : s.xl_prev) v = static_cast<std::uint16_t>(v ^ 0xFF);
  const MixtureField b = predict_field(m, s, masks);
  CHECK(a.means == b.means);
}

TEST_CASE("weights survive serialization and carry a stable hash") {
  const Model m = Model::random(ModelConfig::tiny(), 27);
  const auto bytes = m.serialize();
  const Model back = Model::deserialize(bytes);
  CHECK(back.config() == m.config());
  CHECK(back.hash() == m.hash());
  CHECK(back.serialize() == bytes);
  for (std::size_t i = 0; i < m.params().size(); ++i) CHECK(back.params()[i] == m.params()[i]);
  CHECK(to_hex(m.hash()).size() == 64);
  CHECK(Model::random(ModelConfig::tiny(), 28).hash() != m.hash());

  auto tampered = bytes;
  tampered[100] ^= 1;
  CHECK_THROWS_AS(Model::deserialize(tampered), FormatError);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 50);
  CHECK_THROWS_AS(Model::deserialize(cut), FormatError);
}
