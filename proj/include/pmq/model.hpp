#pragma once

// U-Net encoder/decoder with three parallel quantile heads sharing one trunk.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pmq/errors.hpp"
#include "pmq/losses.hpp"
#include "pmq/nn.hpp"
#include "pmq/tensor.hpp"

namespace pmq {

struct ModelConfig {
  int depth = 3;
  int base_features = 32;
  int kernel_size = 3;
  double dropout_rate = 0.5;
  int in_bands = 0;
  QuantileSpec quantiles;
  std::string activation = "relu";  // recorded in checkpoints

  void validate() const {
    if (depth < 1) throw ConfigError("ModelConfig: depth must be >= 1");
    if (base_features < 1) throw ConfigError("ModelConfig: base_features must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0)
      throw ConfigError("ModelConfig: kernel_size must be odd and positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("ModelConfig: dropout_rate must lie in [0, 1)");
    if (in_bands < 1) throw ConfigError("ModelConfig: in_bands must be >= 1");
    quantiles.validate();
  }

  bool compatible_with(const ModelConfig& o) const {
    return depth == o.depth && base_features == o.base_features &&
           kernel_size == o.kernel_size && in_bands == o.in_bands &&
           activation == o.activation;
  }
};

// Cached activations for one forward pass; owned per worker.
struct UNetTrace {
  Tensor3 input;
  std::vector<Tensor3> enc_a1, enc_a2, pooled;
  std::vector<std::vector<int32_t>> pool_arg;
  Tensor3 bot_a1, bot_a2, bot_out;
  std::vector<uint8_t> drop_mask;
  bool dropout_applied = false;
  std::vector<Tensor3> up_a, cat, dec_a1, dec_a2;
  std::array<Tensor3, 3> head_a1, head_a2;
};

class UNet {
public:
  UNet(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    build_layers();
    std::mt19937 rng(static_cast<uint32_t>(seed ^ (seed >> 32)));
    for (int i = 0; i < cfg_.depth; ++i) {
      enc1_[i].init_he(ps_, rng);
      enc2_[i].init_he(ps_, rng);
    }
    bot1_.init_he(ps_, rng);
    bot2_.init_he(ps_, rng);
    for (int i = 0; i < cfg_.depth; ++i) {
      up_[i].init_he(ps_, rng);
      dec1_[i].init_he(ps_, rng);
      dec2_[i].init_he(ps_, rng);
    }
    const std::array<double, 3> head_bias = {cfg_.quantiles.lower, cfg_.quantiles.median,
                                             cfg_.quantiles.upper};
    for (int h = 0; h < 3; ++h) {
      hc1_[h].init_he(ps_, rng);
      hc2_[h].init_he(ps_, rng);
      hout_[h].init_he(ps_, rng);
      // break head symmetry at step 0: bias = the head's quantile level
      ps_[hout_[h].b_idx].v[0] = static_cast<float>(head_bias[static_cast<size_t>(h)]);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  int spatial_multiple() const { return 1 << cfg_.depth; }

  // Forward on a tile whose sides are multiples of 2^depth. Returns [3,H,W]
  // channels ordered (lower, median, upper). rng drives dropout and must be
  // non-null when training is set and dropout_rate > 0.
  Tensor3 forward(const Tensor3& x, bool training, std::mt19937* rng,
                  UNetTrace* trace) const {
    if (x.channels != cfg_.in_bands) throw ShapeError("UNet: input band count mismatch");
    const int m = spatial_multiple();
    if (x.height % m != 0 || x.width % m != 0)
      throw ShapeError("UNet: tile sides must be multiples of " + std::to_string(m));

    UNetTrace local;
    UNetTrace& t = trace ? *trace : local;
    t.enc_a1.resize(cfg_.depth);
    t.enc_a2.resize(cfg_.depth);
    t.pooled.resize(cfg_.depth);
    t.pool_arg.resize(cfg_.depth);
    t.up_a.resize(cfg_.depth);
    t.cat.resize(cfg_.depth);
    t.dec_a1.resize(cfg_.depth);
    t.dec_a2.resize(cfg_.depth);
    t.input = x;

    const Tensor3* cur = &t.input;
    for (int i = 0; i < cfg_.depth; ++i) {
      t.enc_a1[i] = enc1_[i].forward(*cur, ps_);
      nn::relu_inplace(t.enc_a1[i]);
      t.enc_a2[i] = enc2_[i].forward(t.enc_a1[i], ps_);
      nn::relu_inplace(t.enc_a2[i]);
      t.pooled[i] = nn::maxpool2(t.enc_a2[i], t.pool_arg[i]);
      cur = &t.pooled[i];
    }

    t.bot_a1 = bot1_.forward(*cur, ps_);
    nn::relu_inplace(t.bot_a1);
    t.bot_a2 = bot2_.forward(t.bot_a1, ps_);
    nn::relu_inplace(t.bot_a2);
    t.bot_out = t.bot_a2;
    t.dropout_applied = training && cfg_.dropout_rate > 0.0;
    if (t.dropout_applied) {
      if (!rng) throw ConfigError("UNet: training forward requires an rng for dropout");
      nn::dropout_inplace(t.bot_out, cfg_.dropout_rate, *rng, t.drop_mask);
    }

    cur = &t.bot_out;
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      t.up_a[i] = up_[i].forward(*cur, ps_);
      nn::relu_inplace(t.up_a[i]);
      t.cat[i] = nn::concat_channels(t.up_a[i], t.enc_a2[i]);
      t.dec_a1[i] = dec1_[i].forward(t.cat[i], ps_);
      nn::relu_inplace(t.dec_a1[i]);
      t.dec_a2[i] = dec2_[i].forward(t.dec_a1[i], ps_);
      nn::relu_inplace(t.dec_a2[i]);
      cur = &t.dec_a2[i];
    }

    const Tensor3& trunk = *cur;
    Tensor3 out(3, x.height, x.width);
    for (int h = 0; h < 3; ++h) {
      t.head_a1[h] = hc1_[h].forward(trunk, ps_);
      nn::relu_inplace(t.head_a1[h]);
      t.head_a2[h] = hc2_[h].forward(t.head_a1[h], ps_);
      nn::relu_inplace(t.head_a2[h]);
      Tensor3 ho = hout_[h].forward(t.head_a2[h], ps_);
      std::copy(ho.values.begin(), ho.values.end(),
                out.values.begin() + static_cast<size_t>(h) * x.height * x.width);
    }
    return out;
  }

  // Backpropagates d_out (gradient at the [3,H,W] output) through the trace,
  // accumulating parameter gradients into gs.
  void backward(const UNetTrace& t, const Tensor3& d_out, nn::GradStore& gs) const {
    const int h = t.input.height, w = t.input.width;
    const int f0 = cfg_.base_features;

    Tensor3 d_trunk(f0, h, w);
    for (int hd = 0; hd < 3; ++hd) {
      Tensor3 d_ho(1, h, w);
      std::copy(d_out.values.begin() + static_cast<size_t>(hd) * h * w,
                d_out.values.begin() + static_cast<size_t>(hd + 1) * h * w,
                d_ho.values.begin());
      Tensor3 d_a2 = hout_[hd].backward(t.head_a2[hd], d_ho, ps_, gs);
      Tensor3 d_pre = nn::relu_backward(t.head_a2[hd], d_a2);
      Tensor3 d_a1 = hc2_[hd].backward(t.head_a1[hd], d_pre, ps_, gs);
      d_pre = nn::relu_backward(t.head_a1[hd], d_a1);
      const Tensor3& trunk = cfg_.depth > 0 ? t.dec_a2[0] : t.bot_out;
      Tensor3 d_tr = hc1_[hd].backward(trunk, d_pre, ps_, gs);
      for (size_t i = 0; i < d_trunk.values.size(); ++i) d_trunk.values[i] += d_tr.values[i];
    }

    std::vector<Tensor3> d_skip(static_cast<size_t>(cfg_.depth));
    Tensor3 cur_d = std::move(d_trunk);
    for (int i = 0; i < cfg_.depth; ++i) {
      const int fi = cfg_.base_features << i;
      Tensor3 d_pre = nn::relu_backward(t.dec_a2[i], cur_d);
      Tensor3 d_a1 = dec2_[i].backward(t.dec_a1[i], d_pre, ps_, gs);
      d_pre = nn::relu_backward(t.dec_a1[i], d_a1);
      Tensor3 d_cat = dec1_[i].backward(t.cat[i], d_pre, ps_, gs);
      auto [d_u, d_s] = nn::split_channels(d_cat, fi, fi);
      d_skip[static_cast<size_t>(i)] = std::move(d_s);
      Tensor3 d_upre = nn::relu_backward(t.up_a[i], d_u);
      const Tensor3& up_in = (i == cfg_.depth - 1) ? t.bot_out : t.dec_a2[i + 1];
      cur_d = up_[i].backward(up_in, d_upre, ps_, gs);
    }

    if (t.dropout_applied) cur_d = nn::dropout_backward(cur_d, t.drop_mask, cfg_.dropout_rate);
    Tensor3 d_pre = nn::relu_backward(t.bot_a2, cur_d);
    Tensor3 d_b1 = bot2_.backward(t.bot_a1, d_pre, ps_, gs);
    d_pre = nn::relu_backward(t.bot_a1, d_b1);
    cur_d = bot1_.backward(t.pooled[static_cast<size_t>(cfg_.depth - 1)], d_pre, ps_, gs);

    for (int i = cfg_.depth - 1; i >= 0; --i) {
      Tensor3 d_a2 = nn::maxpool2_backward(t.enc_a2[i], cur_d, t.pool_arg[i]);
      for (size_t j = 0; j < d_a2.values.size(); ++j)
        d_a2.values[j] += d_skip[static_cast<size_t>(i)].values[j];
      d_pre = nn::relu_backward(t.enc_a2[i], d_a2);
      Tensor3 d_a1 = enc2_[i].backward(t.enc_a1[i], d_pre, ps_, gs);
      d_pre = nn::relu_backward(t.enc_a1[i], d_a1);
      const Tensor3& in = (i == 0) ? t.input : t.pooled[i - 1];
      cur_d = enc1_[i].backward(in, d_pre, ps_, gs);
    }
  }

  // Inference on arbitrary spatial dims: reflect-pad to the next multiple of
  // 2^depth, run, crop back.
  QuantileTriple predict(const Tensor3& x) const {
    const int m = spatial_multiple();
    const int ph = (x.height + m - 1) / m * m;
    const int pw = (x.width + m - 1) / m * m;
    Tensor3 padded = (ph == x.height && pw == x.width) ? x : reflect_pad(x, ph, pw);
    Tensor3 out = forward(padded, false, nullptr, nullptr);
    QuantileTriple triple;
    triple.lower = crop_channel(out, 0, x.height, x.width);
    triple.median = crop_channel(out, 1, x.height, x.width);
    triple.upper = crop_channel(out, 2, x.height, x.width);
    return triple;
  }

  static Tensor3 reflect_pad(const Tensor3& x, int ph, int pw) {
    Tensor3 out(x.channels, ph, pw);
    for (int c = 0; c < x.channels; ++c)
      for (int y = 0; y < ph; ++y)
        for (int xx = 0; xx < pw; ++xx)
          out.at(c, y, xx) = x.at(c, reflect_index(y, x.height), reflect_index(xx, x.width));
    return out;
  }

private:
  static int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    int j = i % period;
    return j < n ? j : period - j;
  }

  static Plane crop_channel(const Tensor3& t, int c, int h, int w) {
    Plane p(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) p.at(y, x) = t.at(c, y, x);
    return p;
  }

  void build_layers() {
    const int f = cfg_.base_features;
    const int k = cfg_.kernel_size;
    enc1_.reserve(cfg_.depth);
    for (int i = 0; i < cfg_.depth; ++i) {
      const int fi = f << i;
      const int cin = i == 0 ? cfg_.in_bands : (f << (i - 1));
      enc1_.push_back(nn::Conv2D::create(ps_, "enc" + std::to_string(i) + ".conv1", cin, fi, k));
      enc2_.push_back(nn::Conv2D::create(ps_, "enc" + std::to_string(i) + ".conv2", fi, fi, k));
    }
    const int fb = f << cfg_.depth;
    bot1_ = nn::Conv2D::create(ps_, "bottleneck.conv1", f << (cfg_.depth - 1), fb, k);
    bot2_ = nn::Conv2D::create(ps_, "bottleneck.conv2", fb, fb, k);
    up_.resize(cfg_.depth);
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      const int fi = f << i;
      up_[i] = nn::UpConv2x2::create(ps_, "dec" + std::to_string(i) + ".up", fi * 2, fi);
      dec1_.insert(dec1_.begin(), nn::Conv2D());  // placeholder, filled below
      dec2_.insert(dec2_.begin(), nn::Conv2D());
      dec1_[0] = nn::Conv2D::create(ps_, "dec" + std::to_string(i) + ".conv1", fi * 2, fi, k);
      dec2_[0] = nn::Conv2D::create(ps_, "dec" + std::to_string(i) + ".conv2", fi, fi, k);
    }
    static const char* head_names[3] = {"head_lower", "head_median", "head_upper"};
    for (int h = 0; h < 3; ++h) {
      const std::string n = head_names[h];
      hc1_[h] = nn::Conv2D::create(ps_, n + ".conv1", f, f, k);
      hc2_[h] = nn::Conv2D::create(ps_, n + ".conv2", f, f, k);
      hout_[h] = nn::Conv2D::create(ps_, n + ".out", f, 1, 1);
    }
  }

  ModelConfig cfg_;
  nn::ParamStore ps_;
  std::vector<nn::Conv2D> enc1_, enc2_;
  nn::Conv2D bot1_, bot2_;
  std::vector<nn::UpConv2x2> up_;
  std::vector<nn::Conv2D> dec1_, dec2_;
  std::array<nn::Conv2D, 3> hc1_, hc2_, hout_;
};

}  // namespace pmq
