#pragma once

// Minimal CNN building blocks with explicit backward passes. Convolutions go
// through im2col + Eigen GEMM; all layers are stateless over a ParamStore so
// inference can share parameters across threads.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pmq/errors.hpp"
#include "pmq/tensor.hpp"

namespace pmq::nn {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> v;

  size_t count() const {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
  }
};

class ParamStore {
public:
  int add(std::string name, std::vector<int> shape) {
    ParamTensor t;
    t.name = std::move(name);
    t.shape = std::move(shape);
    t.v.assign(t.count(), 0.0f);
    tensors_.push_back(std::move(t));
    return static_cast<int>(tensors_.size()) - 1;
  }

  ParamTensor& operator[](int i) { return tensors_[static_cast<size_t>(i)]; }
  const ParamTensor& operator[](int i) const { return tensors_[static_cast<size_t>(i)]; }
  size_t count() const { return tensors_.size(); }
  std::vector<ParamTensor>& tensors() { return tensors_; }
  const std::vector<ParamTensor>& tensors() const { return tensors_; }

  size_t total_scalars() const {
    size_t n = 0;
    for (const auto& t : tensors_) n += t.v.size();
    return n;
  }

private:
  std::vector<ParamTensor> tensors_;
};

// One gradient buffer per parameter tensor, same layout as the store.
class GradStore {
public:
  explicit GradStore(const ParamStore& ps) {
    grads_.reserve(ps.count());
    for (const auto& t : ps.tensors()) grads_.emplace_back(t.v.size(), 0.0f);
  }

  std::vector<float>& operator[](int i) { return grads_[static_cast<size_t>(i)]; }
  const std::vector<float>& operator[](int i) const { return grads_[static_cast<size_t>(i)]; }
  size_t count() const { return grads_.size(); }

  void zero() {
    for (auto& g : grads_) std::fill(g.begin(), g.end(), 0.0f);
  }

  void add(const GradStore& other) {
    for (size_t i = 0; i < grads_.size(); ++i)
      for (size_t j = 0; j < grads_[i].size(); ++j) grads_[i][j] += other.grads_[i][j];
  }

  void scale(float s) {
    for (auto& g : grads_)
      for (auto& x : g) x *= s;
  }

private:
  std::vector<std::vector<float>> grads_;
};

namespace detail {

// Zero-padded im2col for a KxK same convolution.
inline void im2col(const Tensor3& x, int k, MatrixRM& cols) {
  const int pad = k / 2;
  const int hw = x.height * x.width;
  cols.resize(x.channels * k * k, hw);
  for (int c = 0; c < x.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int y = 0; y < x.height; ++y) {
          const int sy = y + ky - pad;
          const bool in_y = sy >= 0 && sy < x.height;
          for (int xx = 0; xx < x.width; ++xx) {
            const int sx = xx + kx - pad;
            cols(row, y * x.width + xx) =
                (in_y && sx >= 0 && sx < x.width) ? x.at(c, sy, sx) : 0.0f;
          }
        }
      }
    }
  }
}

inline void col2im_add(const MatrixRM& cols, int k, Tensor3& dx) {
  const int pad = k / 2;
  for (int c = 0; c < dx.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (c * k + ky) * k + kx;
        for (int y = 0; y < dx.height; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= dx.height) continue;
          for (int xx = 0; xx < dx.width; ++xx) {
            const int sx = xx + kx - pad;
            if (sx < 0 || sx >= dx.width) continue;
            dx.at(c, sy, sx) += cols(row, y * dx.width + xx);
          }
        }
      }
    }
  }
}

}  // namespace detail

// Same-padding KxK convolution. Weight layout [cout][cin][ky][kx], bias [cout].
struct Conv2D {
  int w_idx = -1;
  int b_idx = -1;
  int cin = 0;
  int cout = 0;
  int k = 3;

  static Conv2D create(ParamStore& ps, const std::string& name, int cin, int cout, int k) {
    Conv2D c;
    c.cin = cin;
    c.cout = cout;
    c.k = k;
    c.w_idx = ps.add(name + ".w", {cout, cin, k, k});
    c.b_idx = ps.add(name + ".b", {cout});
    return c;
  }

  void init_he(ParamStore& ps, std::mt19937& rng) const {
    const double fan_in = static_cast<double>(cin) * k * k;
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
    for (auto& w : ps[w_idx].v) w = dist(rng);
    std::fill(ps[b_idx].v.begin(), ps[b_idx].v.end(), 0.0f);
  }

  Tensor3 forward(const Tensor3& x, const ParamStore& ps) const {
    if (x.channels != cin) throw ShapeError("Conv2D: channel mismatch");
    MatrixRM cols;
    detail::im2col(x, k, cols);
    ConstMapRM w(ps[w_idx].v.data(), cout, cin * k * k);
    Tensor3 out(cout, x.height, x.width);
    MapRM om(out.values.data(), cout, x.height * x.width);
    om.noalias() = w * cols;
    const auto& b = ps[b_idx].v;
    for (int c = 0; c < cout; ++c) om.row(c).array() += b[static_cast<size_t>(c)];
    return out;
  }

  // d_pre is the gradient at the conv output (pre-activation).
  Tensor3 backward(const Tensor3& x, const Tensor3& d_pre, const ParamStore& ps,
                   GradStore& gs) const {
    MatrixRM cols;
    detail::im2col(x, k, cols);
    ConstMapRM dm(d_pre.values.data(), cout, x.height * x.width);
    MapRM dw(gs[w_idx].data(), cout, cin * k * k);
    dw.noalias() += dm * cols.transpose();
    auto& db = gs[b_idx];
    for (int c = 0; c < cout; ++c) db[static_cast<size_t>(c)] += dm.row(c).sum();
    ConstMapRM w(ps[w_idx].v.data(), cout, cin * k * k);
    MatrixRM dcols = w.transpose() * dm;
    Tensor3 dx(cin, x.height, x.width);
    detail::col2im_add(dcols, k, dx);
    return dx;
  }
};

// 2x2 stride-2 transposed convolution (the upsampling step).
// Weight layout [cin][cout][dy][dx], bias [cout].
struct UpConv2x2 {
  int w_idx = -1;
  int b_idx = -1;
  int cin = 0;
  int cout = 0;

  static UpConv2x2 create(ParamStore& ps, const std::string& name, int cin, int cout) {
    UpConv2x2 u;
    u.cin = cin;
    u.cout = cout;
    u.w_idx = ps.add(name + ".w", {cin, cout, 2, 2});
    u.b_idx = ps.add(name + ".b", {cout});
    return u;
  }

  void init_he(ParamStore& ps, std::mt19937& rng) const {
    const double fan_in = static_cast<double>(cin);
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(2.0 / fan_in)));
    for (auto& w : ps[w_idx].v) w = dist(rng);
    std::fill(ps[b_idx].v.begin(), ps[b_idx].v.end(), 0.0f);
  }

  Tensor3 forward(const Tensor3& x, const ParamStore& ps) const {
    if (x.channels != cin) throw ShapeError("UpConv2x2: channel mismatch");
    const int hw = x.height * x.width;
    ConstMapRM w(ps[w_idx].v.data(), cin, cout * 4);
    ConstMapRM xm(x.values.data(), cin, hw);
    MatrixRM oc = w.transpose() * xm;  // (cout*4) x hw
    Tensor3 out(cout, x.height * 2, x.width * 2);
    const auto& b = ps[b_idx].v;
    for (int c = 0; c < cout; ++c) {
      for (int y = 0; y < x.height; ++y) {
        for (int xx = 0; xx < x.width; ++xx) {
          const int col = y * x.width + xx;
          out.at(c, 2 * y, 2 * xx) = oc((c * 2 + 0) * 2 + 0, col) + b[static_cast<size_t>(c)];
          out.at(c, 2 * y, 2 * xx + 1) = oc((c * 2 + 0) * 2 + 1, col) + b[static_cast<size_t>(c)];
          out.at(c, 2 * y + 1, 2 * xx) = oc((c * 2 + 1) * 2 + 0, col) + b[static_cast<size_t>(c)];
          out.at(c, 2 * y + 1, 2 * xx + 1) = oc((c * 2 + 1) * 2 + 1, col) + b[static_cast<size_t>(c)];
        }
      }
    }
    return out;
  }

  Tensor3 backward(const Tensor3& x, const Tensor3& d_pre, const ParamStore& ps,
                   GradStore& gs) const {
    const int hw = x.height * x.width;
    MatrixRM doc(cout * 4, hw);
    auto& db = gs[b_idx];
    for (int c = 0; c < cout; ++c) {
      double bsum = 0.0;
      for (int y = 0; y < x.height; ++y) {
        for (int xx = 0; xx < x.width; ++xx) {
          const int col = y * x.width + xx;
          doc((c * 2 + 0) * 2 + 0, col) = d_pre.at(c, 2 * y, 2 * xx);
          doc((c * 2 + 0) * 2 + 1, col) = d_pre.at(c, 2 * y, 2 * xx + 1);
          doc((c * 2 + 1) * 2 + 0, col) = d_pre.at(c, 2 * y + 1, 2 * xx);
          doc((c * 2 + 1) * 2 + 1, col) = d_pre.at(c, 2 * y + 1, 2 * xx + 1);
        }
      }
      for (int i = 0; i < d_pre.height * d_pre.width; ++i)
        bsum += d_pre.values[static_cast<size_t>(c) * d_pre.height * d_pre.width + i];
      db[static_cast<size_t>(c)] += static_cast<float>(bsum);
    }
    ConstMapRM xm(x.values.data(), cin, hw);
    MapRM dw(gs[w_idx].data(), cin, cout * 4);
    dw.noalias() += xm * doc.transpose();
    ConstMapRM w(ps[w_idx].v.data(), cin, cout * 4);
    Tensor3 dx(cin, x.height, x.width);
    MapRM dxm(dx.values.data(), cin, hw);
    dxm.noalias() = w * doc;
    return dx;
  }
};

inline void relu_inplace(Tensor3& t) {
  for (auto& v : t.values) v = v > 0.0f ? v : 0.0f;
}

// Gradient through relu given the post-activation values.
inline Tensor3 relu_backward(const Tensor3& post, const Tensor3& d_post) {
  Tensor3 d(post.channels, post.height, post.width);
  for (size_t i = 0; i < post.values.size(); ++i)
    d.values[i] = post.values[i] > 0.0f ? d_post.values[i] : 0.0f;
  return d;
}

// 2x2 stride-2 max pool; argmax recorded as flat input index per output cell.
inline Tensor3 maxpool2(const Tensor3& x, std::vector<int32_t>& argmax) {
  if (x.height % 2 != 0 || x.width % 2 != 0)
    throw ShapeError("maxpool2: dimensions must be even");
  Tensor3 out(x.channels, x.height / 2, x.width / 2);
  argmax.assign(out.size(), 0);
  size_t o = 0;
  for (int c = 0; c < x.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int xx = 0; xx < out.width; ++xx) {
        float best = -std::numeric_limits<float>::infinity();
        int32_t best_idx = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int32_t idx = static_cast<int32_t>(
                (static_cast<size_t>(c) * x.height + 2 * y + dy) * x.width + 2 * xx + dx);
            const float v = x.values[static_cast<size_t>(idx)];
            if (v > best) {
              best = v;
              best_idx = idx;
            }
          }
        }
        out.values[o] = best;
        argmax[o] = best_idx;
        ++o;
      }
    }
  }
  return out;
}

inline Tensor3 maxpool2_backward(const Tensor3& x, const Tensor3& d_out,
                                 const std::vector<int32_t>& argmax) {
  Tensor3 dx(x.channels, x.height, x.width);
  for (size_t i = 0; i < d_out.values.size(); ++i)
    dx.values[static_cast<size_t>(argmax[i])] += d_out.values[i];
  return dx;
}

inline Tensor3 concat_channels(const Tensor3& a, const Tensor3& b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("concat_channels: spatial mismatch");
  Tensor3 out(a.channels + b.channels, a.height, a.width);
  std::copy(a.values.begin(), a.values.end(), out.values.begin());
  std::copy(b.values.begin(), b.values.end(), out.values.begin() + a.values.size());
  return out;
}

inline std::pair<Tensor3, Tensor3> split_channels(const Tensor3& d, int ca, int cb) {
  Tensor3 da(ca, d.height, d.width), db(cb, d.height, d.width);
  std::copy(d.values.begin(), d.values.begin() + da.values.size(), da.values.begin());
  std::copy(d.values.begin() + da.values.size(), d.values.end(), db.values.begin());
  return {std::move(da), std::move(db)};
}

// Inverted dropout; mask entries are the keep flags.
inline void dropout_inplace(Tensor3& t, double rate, std::mt19937& rng,
                            std::vector<uint8_t>& mask) {
  mask.assign(t.size(), 1);
  if (rate <= 0.0) return;
  std::bernoulli_distribution keep(1.0 - rate);
  const float scale = static_cast<float>(1.0 / (1.0 - rate));
  for (size_t i = 0; i < t.values.size(); ++i) {
    if (keep(rng)) {
      t.values[i] *= scale;
    } else {
      t.values[i] = 0.0f;
      mask[i] = 0;
    }
  }
}

inline Tensor3 dropout_backward(const Tensor3& d_out, const std::vector<uint8_t>& mask,
                                double rate) {
  Tensor3 d = d_out;
  if (rate <= 0.0) return d;
  const float scale = static_cast<float>(1.0 / (1.0 - rate));
  for (size_t i = 0; i < d.values.size(); ++i)
    d.values[i] = mask[i] ? d.values[i] * scale : 0.0f;
  return d;
}

}  // namespace pmq::nn
