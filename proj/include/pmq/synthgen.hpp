#pragma once

// Synthetic multispectral scenes with analytically known conditional target
// quantiles: target = latent + sigma(p) * N(0,1), where the latent field and
// the noise-scale field are smooth, seeded random surfaces also visible to
// the network through the input bands.

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pmq/errors.hpp"
#include "pmq/losses.hpp"
#include "pmq/raster.hpp"

namespace pmq {

// Acklam's rational approximation with one Halley refinement step.
inline double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("inverse_normal_cdf: p must lie in (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p > phigh) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

struct SynthSpec {
  int height = 64;
  int width = 64;
  int band_count = 4;
  double latent_mean = 30.0;      // baseline concentration level
  double latent_amplitude = 15.0; // spatial variation of the latent field
  int harmonics = 4;              // smoothness of the random surfaces
  double sigma_base = 1.0;        // noise scale floor
  double sigma_gain = 3.0;        // noise scale span tied to the sigma band
  double cloud_radius_frac = 0.2; // synthetic cloud disk radius / min(h, w)
  uint64_t seed = 0;

  void validate() const {
    if (height < 4 || width < 4) throw ConfigError("SynthSpec: grid too small");
    if (band_count < 2) throw ConfigError("SynthSpec: need at least 2 bands");
    if (!(latent_amplitude > 0.0))
      throw ConfigError("SynthSpec: degenerate latent field (zero variance)");
    if (sigma_base < 0.0 || sigma_gain < 0.0)
      throw ConfigError("SynthSpec: noise scales must be nonnegative");
    if (harmonics < 1) throw ConfigError("SynthSpec: harmonics must be >= 1");
  }
};

namespace detail {

// Random band-limited surface scaled to [-1, 1].
inline Plane smooth_field(int h, int w, int harmonics, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp(0.3, 1.0);
  std::uniform_int_distribution<int> freq(1, 3);
  struct Wave {
    double a, fx, fy, ph;
  };
  std::vector<Wave> waves(static_cast<size_t>(harmonics));
  for (auto& wv : waves) wv = {amp(rng), double(freq(rng)), double(freq(rng)), phase(rng)};
  Plane f(h, w);
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (const auto& wv : waves)
        v += wv.a * std::cos(2.0 * std::numbers::pi *
                                 (wv.fx * x / double(w) + wv.fy * y / double(h)) +
                             wv.ph);
      f.at(y, x) = static_cast<float>(v);
      peak = std::max(peak, std::abs(v));
    }
  }
  if (peak > 0.0)
    for (auto& v : f.values) v = static_cast<float>(v / peak);
  return f;
}

}  // namespace detail

// The deterministic per-pixel fields a sample is built from.
struct SynthFields {
  Plane latent;  // true conditional median
  Plane sigma;   // per-pixel noise scale
};

inline SynthFields synth_fields(const SynthSpec& spec, std::mt19937_64& rng) {
  SynthFields f;
  Plane g = detail::smooth_field(spec.height, spec.width, spec.harmonics, rng);
  Plane s = detail::smooth_field(spec.height, spec.width, spec.harmonics, rng);
  f.latent = Plane(spec.height, spec.width);
  f.sigma = Plane(spec.height, spec.width);
  for (size_t p = 0; p < g.size(); ++p) {
    f.latent.values[p] =
        static_cast<float>(spec.latent_mean + spec.latent_amplitude * g.values[p]);
    // map the sigma surface to [0, 1] before applying the gain
    f.sigma.values[p] =
        static_cast<float>(spec.sigma_base + spec.sigma_gain * 0.5 * (s.values[p] + 1.0));
  }
  return f;
}

// Generates n samples. Band 0 carries the latent field, band 1 the noise
// scale surface (so the upper/lower heads have something to learn from);
// remaining bands are smooth nuisance transforms. True quantile planes for
// (q_l, 0.5, q_u) ride along on each sample.
inline std::vector<Sample> generate(const SynthSpec& spec, int n_samples,
                                    const QuantileSpec& quantiles) {
  spec.validate();
  quantiles.validate();
  if (n_samples < 1) throw ConfigError("generate: n_samples must be positive");
  const double z_lo = inverse_normal_cdf(quantiles.lower);
  const double z_hi = inverse_normal_cdf(quantiles.upper);

  std::vector<std::string> band_ids;
  for (int b = 0; b < spec.band_count; ++b) band_ids.push_back("B" + std::to_string(b + 1));

  std::mt19937_64 rng(spec.seed);
  std::vector<Sample> samples;
  samples.reserve(static_cast<size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    RasterGrid grid;
    grid.width = spec.width;
    grid.height = spec.height;
    grid.pixel_size = 0.01;
    grid.origin_lon = -120.0 + (i % 16) * 1.0;
    grid.origin_lat = 40.0 - (i / 16) * 1.0;

    SynthFields f = synth_fields(spec, rng);

    Sample s;
    s.id = "synth_" + std::to_string(i);
    s.month = {2013 + i / 12, 1 + i % 12};
    s.location = "scene_" + std::to_string(i);
    s.input = BandStack(grid, band_ids);
    s.input.acquired = s.month;
    s.input.location = s.location;

    s.input.bands[0] = f.latent;
    s.input.bands[1] = f.sigma;
    for (int b = 2; b < spec.band_count; ++b) {
      Plane nuisance = detail::smooth_field(spec.height, spec.width, spec.harmonics, rng);
      for (size_t p = 0; p < nuisance.size(); ++p)
        s.input.bands[static_cast<size_t>(b)].values[p] = static_cast<float>(
            std::cos(0.1 * b * f.latent.values[p]) + 0.5 * nuisance.values[p]);
    }

    s.target = Raster(grid);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (size_t p = 0; p < f.latent.size(); ++p)
      s.target.values.values[p] =
          static_cast<float>(f.latent.values[p] + f.sigma.values[p] * noise(rng));

    // synthetic cloud: one random disk of invalid pixels
    s.mask = MaskRaster(grid, true);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double cy = u01(rng) * spec.height, cx = u01(rng) * spec.width;
    const double radius = spec.cloud_radius_frac * std::min(spec.height, spec.width);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) < radius * radius)
          s.mask.valid.at(y, x) = 0;

    s.true_median = f.latent;
    s.true_lower = Plane(spec.height, spec.width);
    s.true_upper = Plane(spec.height, spec.width);
    for (size_t p = 0; p < f.latent.size(); ++p) {
      s.true_lower->values[p] =
          static_cast<float>(f.latent.values[p] + f.sigma.values[p] * z_lo);
      s.true_upper->values[p] =
          static_cast<float>(f.latent.values[p] + f.sigma.values[p] * z_hi);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace pmq
