#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "pmq/checkpoint.hpp"
#include "pmq/model.hpp"

using namespace pmq;

namespace {

ModelConfig tiny_config(int depth = 1, int base = 2, int bands = 1) {
  ModelConfig cfg;
  cfg.depth = depth;
  cfg.base_features = base;
  cfg.in_bands = bands;
  cfg.dropout_rate = 0.0;
  return cfg;
}

Tensor3 random_input(int c, int h, int w, uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Tensor3 x(c, h, w);
  for (auto& v : x.values) v = dist(rng);
  return x;
}

std::filesystem::path temp_path(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("forward preserves spatial shape") {
  UNet small(tiny_config(1, 4, 1), 1);
  Tensor3 x = random_input(1, 8, 8, 0);
  Tensor3 out = small.forward(x, false, nullptr, nullptr);
  CHECK(out.channels == 3);
  CHECK(out.height == 8);
  CHECK(out.width == 8);

  UNet deep(tiny_config(3, 4, 10), 1);
  Tensor3 x2 = random_input(10, 64, 64, 1);
  Tensor3 out2 = deep.forward(x2, false, nullptr, nullptr);
  CHECK(out2.height == 64);
  CHECK(out2.width == 64);
}

TEST_CASE("deeper model has strictly more parameters") {
  UNet d1(tiny_config(1, 4, 10), 1);
  UNet d3(tiny_config(3, 4, 10), 1);
  CHECK(d3.params().total_scalars() > d1.params().total_scalars());
}

TEST_CASE("identical config and seed give identical parameters") {
  UNet a(tiny_config(2, 4, 3), 77);
  UNet b(tiny_config(2, 4, 3), 77);
  REQUIRE(a.params().count() == b.params().count());
  for (size_t i = 0; i < a.params().count(); ++i)
    CHECK(a.params()[int(i)].v == b.params()[int(i)].v);
  UNet c(tiny_config(2, 4, 3), 78);
  bool any_diff = false;
  for (size_t i = 0; i < a.params().count(); ++i)
    if (a.params()[int(i)].v != c.params()[int(i)].v) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("inference is deterministic") {
  UNet model(tiny_config(2, 4, 2), 5);
  Tensor3 x = random_input(2, 16, 16, 3);
  Tensor3 a = model.forward(x, false, nullptr, nullptr);
  Tensor3 b = model.forward(x, false, nullptr, nullptr);
  CHECK(a.values == b.values);
}

TEST_CASE("band mismatch throws") {
  UNet model(tiny_config(1, 2, 3), 1);
  Tensor3 x = random_input(2, 8, 8, 0);
  CHECK_THROWS_AS(model.forward(x, false, nullptr, nullptr), ShapeError);
}

TEST_CASE("zeroed final layers output exactly the head biases") {
  ModelConfig cfg = tiny_config(1, 2, 1);
  UNet model(cfg, 9);
  // zero the 1x1 output weights; biases stay at the quantile levels
  for (auto& t : model.params().tensors())
    if (t.name.find(".out.w") != std::string::npos) std::fill(t.v.begin(), t.v.end(), 0.0f);
  Tensor3 x = random_input(1, 8, 8, 4);
  Tensor3 out = model.forward(x, false, nullptr, nullptr);
  for (int y = 0; y < 8; ++y) {
    for (int xx = 0; xx < 8; ++xx) {
      CHECK(out.at(0, y, xx) == doctest::Approx(cfg.quantiles.lower));
      CHECK(out.at(1, y, xx) == doctest::Approx(cfg.quantiles.median));
      CHECK(out.at(2, y, xx) == doctest::Approx(cfg.quantiles.upper));
    }
  }
}

TEST_CASE("head independence: perturbing lower-head parameters moves only the lower map") {
  UNet model(tiny_config(2, 4, 2), 13);
  Tensor3 x = random_input(2, 16, 16, 6);
  Tensor3 before = model.forward(x, false, nullptr, nullptr);
  for (auto& t : model.params().tensors())
    if (t.name.rfind("head_lower.", 0) == 0)
      for (auto& v : t.v) v += 0.25f;
  Tensor3 after = model.forward(x, false, nullptr, nullptr);
  bool lower_changed = false;
  for (int y = 0; y < 16; ++y) {
    for (int xx = 0; xx < 16; ++xx) {
      if (before.at(0, y, xx) != after.at(0, y, xx)) lower_changed = true;
      CHECK(before.at(1, y, xx) == after.at(1, y, xx));
      CHECK(before.at(2, y, xx) == after.at(2, y, xx));
    }
  }
  CHECK(lower_changed);
}

TEST_CASE("predict pads and crops inputs not divisible by 2^depth") {
  UNet model(tiny_config(2, 2, 1), 3);
  Tensor3 x = random_input(1, 13, 9, 8);
  QuantileTriple t = model.predict(x);
  CHECK(t.lower.height == 13);
  CHECK(t.lower.width == 9);
  CHECK(t.median.height == 13);
  CHECK(t.upper.width == 9);
  for (float v : t.median.values) CHECK(std::isfinite(v));
}

TEST_CASE("backward gradients match finite differences on a tiny network") {
  ModelConfig cfg = tiny_config(1, 2, 2);
  UNet model(cfg, 21);
  // nudge every parameter off zero so relu inputs do not sit exactly on the kink
  // (zero-initialized biases otherwise make the finite-difference probe one-sided)
  std::mt19937 jitter(7);
  std::uniform_real_distribution<float> jd(0.01f, 0.05f);
  for (auto& t : model.params().tensors())
    for (auto& v : t.v) v += jd(jitter) * ((jitter() & 1u) ? 1.0f : -1.0f);
  Tensor3 x = random_input(2, 8, 8, 10);
  std::mt19937 rng(99);
  std::uniform_real_distribution<float> tdist(-0.5f, 0.5f);
  Plane target(8, 8);
  for (auto& v : target.values) v = tdist(rng);
  LossConfig lc;
  lc.smoothing = Smoothing::smoothed;
  lc.alpha = 2.0;

  auto loss_of = [&]() {
    Tensor3 out = model.forward(x, false, nullptr, nullptr);
    double sum = 0.0;
    const double qs[3] = {lc.quantiles.lower, 0.5, lc.quantiles.upper};
    for (int h = 0; h < 3; ++h)
      for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 8; ++xx)
          sum += pointwise_loss(target.at(y, xx) - out.at(h, y, xx), qs[h], lc);
    return sum / 64.0;
  };

  UNetTrace trace;
  Tensor3 out = model.forward(x, false, nullptr, &trace);
  Tensor3 d_out(3, 8, 8);
  const double qs[3] = {lc.quantiles.lower, 0.5, lc.quantiles.upper};
  for (int h = 0; h < 3; ++h)
    for (int y = 0; y < 8; ++y)
      for (int xx = 0; xx < 8; ++xx)
        d_out.at(h, y, xx) = static_cast<float>(
            -loss_gradient(target.at(y, xx) - out.at(h, y, xx), qs[h], lc) / 64.0);
  nn::GradStore grads(model.params());
  model.backward(trace, d_out, grads);

  // spot-check parameters across every tensor; a second step size flags points
  // where a relu flips inside the probe interval, which are skipped
  auto fd_at = [&](nn::ParamTensor& tensor, size_t j, float h) {
    const float orig = tensor.v[j];
    tensor.v[j] = orig + h;
    const double lp = loss_of();
    tensor.v[j] = orig - h;
    const double lm = loss_of();
    tensor.v[j] = orig;
    return (lp - lm) / (2.0 * h);
  };
  size_t checked = 0;
  for (size_t ti = 0; ti < model.params().count(); ++ti) {
    auto& tensor = model.params()[int(ti)];
    for (size_t j = 0; j < tensor.v.size(); j += std::max<size_t>(1, tensor.v.size() / 4)) {
      const double fd1 = fd_at(tensor, j, 1e-3f);
      const double fd2 = fd_at(tensor, j, 2e-3f);
      const double an = grads[int(ti)][j];
      if (std::abs(fd1) < 1e-5 && std::abs(an) < 1e-5) continue;
      if (std::abs(fd1 - fd2) > 0.02 * std::max(std::abs(fd1), 1e-2)) continue;
      CHECK(std::abs(fd1 - an) / std::max({std::abs(fd1), std::abs(an), 1e-3}) < 8e-2);
      ++checked;
    }
  }
  CHECK(checked > 50);
}

TEST_CASE("checkpoint round-trip reproduces forward outputs bit-exactly") {
  const auto path = temp_path("pmq_test_ckpt.pmq");
  UNet model(tiny_config(2, 4, 3), 17);
  save_model(model, path, {{"note", "unit-test"}});
  UNet loaded = load_model(path);
  Tensor3 x = random_input(3, 16, 16, 2);
  Tensor3 a = model.forward(x, false, nullptr, nullptr);
  Tensor3 b = loaded.forward(x, false, nullptr, nullptr);
  CHECK(a.values == b.values);
  std::filesystem::remove(path);
}

TEST_CASE("truncated checkpoint raises a format error") {
  const auto path = temp_path("pmq_test_trunc.pmq");
  UNet model(tiny_config(1, 2, 1), 1);
  save_model(model, path);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full / 2);
  CHECK_THROWS_AS(load_model(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint with mismatched band count is incompatible") {
  const auto path = temp_path("pmq_test_mismatch.pmq");
  UNet model(tiny_config(1, 2, 3), 1);
  save_model(model, path);
  ModelConfig other = tiny_config(1, 2, 5);
  CHECK_THROWS_AS(load_model(path, &other), IncompatibleCheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("garbage file raises a format error") {
  const auto path = temp_path("pmq_test_garbage.pmq");
  std::ofstream os(path, std::ios::binary);
  os << "this is not a checkpoint at all";
  os.close();
  CHECK_THROWS_AS(load_model(path), FormatError);
  std::filesystem::remove(path);
}
