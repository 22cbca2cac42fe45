#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "pmq/synthgen.hpp"

using namespace pmq;

TEST_CASE("inverse normal cdf hits tabulated values") {
  CHECK(inverse_normal_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(inverse_normal_cdf(0.975) == doctest::Approx(1.959963985).epsilon(1e-7));
  CHECK(inverse_normal_cdf(0.9) == doctest::Approx(1.281551566).epsilon(1e-7));
  CHECK(inverse_normal_cdf(0.1) == doctest::Approx(-1.281551566).epsilon(1e-7));
  CHECK(inverse_normal_cdf(0.001) == doctest::Approx(-3.090232306).epsilon(1e-7));
  // symmetry
  for (double p : {0.01, 0.2, 0.35, 0.49})
    CHECK(inverse_normal_cdf(p) == doctest::Approx(-inverse_normal_cdf(1.0 - p)).epsilon(1e-9));
  CHECK_THROWS_AS(inverse_normal_cdf(0.0), DomainError);
  CHECK_THROWS_AS(inverse_normal_cdf(1.0), DomainError);
  CHECK_THROWS_AS(inverse_normal_cdf(-0.2), DomainError);
}

TEST_CASE("inverse normal cdf is consistent with erfc round-trip") {
  for (double p = 0.005; p < 1.0; p += 0.015) {
    const double z = inverse_normal_cdf(p);
    const double back = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    CHECK(back == doctest::Approx(p).epsilon(1e-10));
  }
}

TEST_CASE("zero noise collapses target onto the latent field") {
  SynthSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.sigma_base = 0.0;
  spec.sigma_gain = 0.0;
  spec.seed = 3;
  auto samples = generate(spec, 2, QuantileSpec{});
  for (const auto& s : samples) {
    REQUIRE(s.true_median.has_value());
    for (size_t p = 0; p < s.target.values.size(); ++p) {
      CHECK(s.target.values.values[p] == s.true_median->values[p]);
      CHECK(s.true_lower->values[p] == s.true_median->values[p]);
      CHECK(s.true_upper->values[p] == s.true_median->values[p]);
    }
  }
}

TEST_CASE("generation is reproducible from the seed") {
  SynthSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.seed = 11;
  auto a = generate(spec, 3, QuantileSpec{});
  auto b = generate(spec, 3, QuantileSpec{});
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].target.values.values == b[i].target.values.values);
    CHECK(a[i].mask.valid.valid == b[i].mask.valid.valid);
    for (size_t bd = 0; bd < a[i].input.bands.size(); ++bd)
      CHECK(a[i].input.bands[bd].values == b[i].input.bands[bd].values);
  }
  spec.seed = 12;
  auto c = generate(spec, 3, QuantileSpec{});
  CHECK(a[0].target.values.values != c[0].target.values.values);
}

TEST_CASE("claimed quantiles match a Monte Carlo oracle") {
  // the generator claims q-quantile(target | pixel) = latent + sigma * z_q;
  // draw the same noise model many times and compare empirical quantiles
  const double latent = 30.0, sigma = 2.5;
  const QuantileSpec qs{};
  const int n = 100000;
  std::mt19937_64 rng(99);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> draws(n);
  for (auto& d : draws) d = latent + sigma * noise(rng);
  std::sort(draws.begin(), draws.end());

  auto empirical = [&](double q) {
    return draws[static_cast<size_t>(std::ceil(q * n)) - 1];
  };
  auto se = [&](double q) {
    const double z = inverse_normal_cdf(q);
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
    return sigma * std::sqrt(q * (1.0 - q) / n) / pdf;
  };
  for (double q : {qs.lower, qs.median, qs.upper}) {
    const double claimed = latent + sigma * inverse_normal_cdf(q);
    CHECK(std::abs(empirical(q) - claimed) < 3.0 * se(q));
  }
}

TEST_CASE("pixelwise interval coverage matches the nominal level") {
  SynthSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.seed = 5;
  const QuantileSpec qs{};
  auto samples = generate(spec, 40, qs);
  size_t covered = 0, total = 0;
  for (const auto& s : samples) {
    for (size_t p = 0; p < s.target.values.size(); ++p) {
      ++total;
      if (s.target.values.values[p] >= s.true_lower->values[p] &&
          s.target.values.values[p] <= s.true_upper->values[p])
        ++covered;
    }
  }
  const double nominal = qs.upper - qs.lower;
  const double rate = double(covered) / double(total);
  const double slack = 3.0 * std::sqrt(nominal * (1.0 - nominal) / double(total)) + 0.01;
  CHECK(std::abs(rate - nominal) < slack);
}

TEST_CASE("synthetic clouds invalidate a disk but not the whole scene") {
  SynthSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.seed = 7;
  auto samples = generate(spec, 8, QuantileSpec{});
  for (const auto& s : samples) {
    const size_t valid = s.mask.valid.count_valid();
    CHECK(valid > 0);
    CHECK(valid < s.mask.valid.size());
  }
}

TEST_CASE("inputs expose the fields the heads must learn") {
  SynthSpec spec;
  spec.height = 16;
  spec.width = 16;
  spec.seed = 13;
  auto samples = generate(spec, 1, QuantileSpec{});
  const Sample& s = samples[0];
  REQUIRE(s.input.band_count() == 4);
  CHECK(s.input.bands[0].values == s.true_median->values);
  // band 1 carries the noise scale: reconstructing the upper quantile from it
  // must reproduce the stored plane
  const double z_hi = inverse_normal_cdf(QuantileSpec{}.upper);
  for (size_t p = 0; p < s.input.bands[1].size(); ++p)
    CHECK(s.true_upper->values[p] ==
          doctest::Approx(s.input.bands[0].values[p] + s.input.bands[1].values[p] * z_hi)
              .epsilon(1e-5));
}

TEST_CASE("degenerate specs are rejected") {
  SynthSpec spec;
  spec.latent_amplitude = 0.0;
  CHECK_THROWS_AS(generate(spec, 1, QuantileSpec{}), ConfigError);
  SynthSpec tiny;
  tiny.height = 2;
  CHECK_THROWS_AS(generate(tiny, 1, QuantileSpec{}), ConfigError);
  SynthSpec bands;
  bands.band_count = 1;
  CHECK_THROWS_AS(generate(bands, 1, QuantileSpec{}), ConfigError);
  SynthSpec ok;
  CHECK_THROWS_AS(generate(ok, 0, QuantileSpec{}), ConfigError);
}
