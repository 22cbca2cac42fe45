#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "pmq/datapipe.hpp"

using namespace pmq;

namespace {

RasterGrid grid_of(int h, int w, double px = 0.01, double lon = 10.0, double lat = 50.0) {
  RasterGrid g;
  g.origin_lon = lon;
  g.origin_lat = lat;
  g.pixel_size = px;
  g.width = w;
  g.height = h;
  return g;
}

BandStack random_stack(const RasterGrid& g, MonthKey month, uint32_t seed,
                       const std::vector<std::string>& ids = {"B1", "B2"}) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(0.0f, 100.0f);
  std::bernoulli_distribution miss(0.2);
  BandStack s(g, ids);
  s.acquired = month;
  for (auto& b : s.bands)
    for (auto& v : b.values) v = dist(rng);
  for (auto& m : s.valid.valid) m = miss(rng) ? 0 : 1;
  return s;
}

}  // namespace

TEST_CASE("nearest-rank quantiles") {
  std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  CHECK(nearest_rank_quantile(v, 0.5) == 5.0);
  CHECK(nearest_rank_quantile(v, 0.9) == 9.0);
  CHECK(nearest_rank_quantile(v, 0.91) == 10.0);
  CHECK(nearest_rank_quantile(v, 0.05) == 1.0);
  CHECK(nearest_rank_quantile({42.0}, 0.5) == 42.0);
  CHECK_THROWS_AS(nearest_rank_quantile({}, 0.5), EmptySampleError);
  CHECK_THROWS_AS(nearest_rank_quantile(v, 0.0), DomainError);
  CHECK_THROWS_AS(nearest_rank_quantile(v, 1.0), DomainError);
}

TEST_CASE("regrid downsamples by area-weighted averaging") {
  Raster src(grid_of(4, 4, 0.01));
  float v = 1.0f;
  for (auto& x : src.values.values) x = v++;  // 1..16 row-major

  Raster out = regrid(src, grid_of(2, 2, 0.02));
  // each coarse pixel averages a 2x2 block of equally sized fine pixels
  CHECK(out.values.at(0, 0) == doctest::Approx((1 + 2 + 5 + 6) / 4.0));
  CHECK(out.values.at(0, 1) == doctest::Approx((3 + 4 + 7 + 8) / 4.0));
  CHECK(out.values.at(1, 0) == doctest::Approx((9 + 10 + 13 + 14) / 4.0));
  CHECK(out.values.at(1, 1) == doctest::Approx((11 + 12 + 15 + 16) / 4.0));
  CHECK(out.valid.count_valid() == 4);
}

TEST_CASE("regrid skips invalid source pixels and flags uncovered targets") {
  Raster src(grid_of(2, 2, 0.01));
  src.values.at(0, 0) = 10.0f;
  src.values.at(0, 1) = 20.0f;
  src.values.at(1, 0) = 30.0f;
  src.values.at(1, 1) = 40.0f;
  src.valid.at(1, 1) = 0;

  Raster out = regrid(src, grid_of(1, 1, 0.02));
  CHECK(out.values.at(0, 0) == doctest::Approx((10 + 20 + 30) / 3.0));

  // a target cell fully outside the source footprint is nodata
  Raster far = regrid(src, grid_of(1, 1, 0.02, 11.0, 50.0));
  CHECK(far.valid.at(0, 0) == 0);
}

TEST_CASE("regrid upsamples bilinearly between pixel centers") {
  Raster src(grid_of(2, 2, 0.1));
  src.values.at(0, 0) = 0.0f;
  src.values.at(0, 1) = 10.0f;
  src.values.at(1, 0) = 20.0f;
  src.values.at(1, 1) = 30.0f;

  Raster out = regrid(src, grid_of(4, 4, 0.05));
  // interior fine centers sit exactly 1/4 and 3/4 of the way between coarse centers
  CHECK(out.values.at(1, 1) == doctest::Approx(0.75 * (0.75 * 0 + 0.25 * 10) +
                                               0.25 * (0.75 * 20 + 0.25 * 30)));
  CHECK(out.values.at(2, 2) == doctest::Approx(0.25 * (0.25 * 0 + 0.75 * 10) +
                                               0.75 * (0.25 * 20 + 0.75 * 30)));
  CHECK(out.valid.count_valid() == 16);
}

TEST_CASE("regrid rejects CRS mismatch") {
  Raster src(grid_of(2, 2));
  RasterGrid target = grid_of(1, 1, 0.02);
  target.crs = "EPSG:3857";
  CHECK_THROWS_AS(regrid(src, target), MetadataError);
}

TEST_CASE("monthly composite matches a brute-force per-pixel mean") {
  RasterGrid g = grid_of(6, 7);
  std::vector<BandStack> scenes;
  const MonthKey jan{2014, 1}, feb{2014, 2};
  scenes.push_back(random_stack(g, jan, 1));
  scenes.push_back(random_stack(g, jan, 2));
  scenes.push_back(random_stack(g, feb, 3));
  scenes.push_back(random_stack(g, jan, 4));

  auto result = monthly_composite(scenes);
  REQUIRE(result.size() == 2);
  REQUIRE(result.count(jan) == 1);
  REQUIRE(result.count(feb) == 1);

  const BandStack& cjan = result.at(jan);
  for (size_t p = 0; p < cjan.valid.size(); ++p) {
    for (size_t b = 0; b < 2; ++b) {
      double sum = 0.0;
      int cnt = 0;
      for (const auto& s : scenes) {
        if (!(s.acquired == jan) || !s.valid.valid[p]) continue;
        sum += s.bands[b].values[p];
        ++cnt;
      }
      if (cnt == 0) {
        CHECK(cjan.valid.valid[p] == 0);
      } else {
        CHECK(cjan.valid.valid[p] == 1);
        CHECK(cjan.bands[b].values[p] == doctest::Approx(sum / cnt).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("monthly composite validates inputs") {
  CHECK_THROWS_AS(monthly_composite({}), EmptySampleError);
  RasterGrid g = grid_of(4, 4);
  std::vector<BandStack> mixed{random_stack(g, {2014, 1}, 1),
                               random_stack(grid_of(5, 4), {2014, 1}, 2)};
  CHECK_THROWS_AS(monthly_composite(mixed), ShapeError);
  std::vector<BandStack> bands{random_stack(g, {2014, 1}, 1),
                               random_stack(g, {2014, 1}, 2, {"B1", "B3"})};
  CHECK_THROWS_AS(monthly_composite(bands), ShapeError);
}

TEST_CASE("cloud mask prefers per-pixel confidence") {
  RasterGrid g = grid_of(2, 3);
  BandStack scene = random_stack(g, {2014, 5}, 9);
  QaInfo qa;
  qa.cirrus_confidence = Plane(2, 3, 0.1f);
  qa.cirrus_confidence->at(0, 1) = 0.9f;
  qa.cirrus_confidence->at(1, 2) = 0.51f;
  qa.scene_cloud_percent = 95.0;  // would zero the scene, must be ignored

  MaskRaster m = cloud_mask(scene, qa);
  CHECK(m.valid.at(0, 1) == 0);
  CHECK(m.valid.at(1, 2) == 0);
  CHECK(m.valid.count_valid() == 4);
}

TEST_CASE("cloud mask falls back to the scene-level percentage") {
  RasterGrid g = grid_of(2, 2);
  BandStack scene = random_stack(g, {2014, 5}, 9);
  QaInfo qa;
  qa.scene_cloud_percent = 81.0;
  CHECK(cloud_mask(scene, qa).valid.count_valid() == 0);
  qa.scene_cloud_percent = 80.0;  // at the threshold the scene survives
  CHECK(cloud_mask(scene, qa).valid.count_valid() == 4);
  QaInfo none;
  CHECK_THROWS_AS(cloud_mask(scene, none), MetadataError);
}

TEST_CASE("outlier mask trims the strict tails of the pooled distribution") {
  RasterGrid g = grid_of(10, 10);
  Raster t(g);
  float v = 1.0f;
  for (auto& x : t.values.values) x = v++;  // 1..100

  auto masks = outlier_mask({t}, 0.01);
  REQUIRE(masks.size() == 1);
  size_t masked = 0;
  for (size_t p = 0; p < masks[0].valid.size(); ++p)
    if (!masks[0].valid.valid[p]) ++masked;
  CHECK(masked == 2);
  CHECK(masks[0].valid.valid[0] == 0);   // value 1
  CHECK(masks[0].valid.valid[99] == 0);  // value 100
}

TEST_CASE("outlier mask pools across rasters and never fires on constants") {
  RasterGrid g = grid_of(4, 4);
  Raster lo(g, 5.0f), hi(g, 5.0f);
  hi.values.at(0, 0) = 500.0f;  // single extreme value in the pool
  auto masks = outlier_mask({lo, hi}, 0.05);
  CHECK(masks[0].valid.count_valid() == 16);
  CHECK(masks[1].valid.at(0, 0) == 0);

  Raster flat(g, 3.0f);
  auto none = outlier_mask({flat}, 0.1);
  CHECK(none[0].valid.count_valid() == 16);

  CHECK_THROWS_AS(outlier_mask({flat}, 0.5), DomainError);
  Raster empty(g);
  std::fill(empty.valid.valid.begin(), empty.valid.valid.end(), uint8_t{0});
  CHECK_THROWS_AS(outlier_mask({empty}), EmptySampleError);
}

TEST_CASE("combining masks is a logical AND") {
  RasterGrid g = grid_of(2, 2);
  MaskRaster a(g, true), b(g, true), c(g, true);
  a.valid.at(0, 0) = 0;
  b.valid.at(1, 1) = 0;
  c.valid.at(0, 0) = 0;

  MaskRaster all = combine_masks({a, b, c});
  CHECK(all.valid.at(0, 0) == 0);
  CHECK(all.valid.at(1, 1) == 0);
  CHECK(all.valid.at(0, 1) == 1);
  CHECK(all.valid.at(1, 0) == 1);
  CHECK_THROWS_AS(combine_masks({}), EmptySampleError);
  MaskRaster other(grid_of(3, 2), true);
  CHECK_THROWS_AS(combine_masks({a, other}), ShapeError);
}

TEST_CASE("band statistics come from the training split only") {
  RasterGrid g = grid_of(3, 3);
  Sample train;
  train.input = random_stack(g, {2014, 1}, 11);
  std::fill(train.input.valid.valid.begin(), train.input.valid.valid.end(), uint8_t{1});
  std::fill(train.input.bands[0].values.begin(), train.input.bands[0].values.end(), 10.0f);
  train.input.bands[0].at(0, 0) = -5.0f;
  train.input.bands[0].at(2, 2) = 50.0f;

  BandStats stats = fit_band_stats({train});
  CHECK(stats.min_max[0].first == doctest::Approx(-5.0));
  CHECK(stats.min_max[0].second == doctest::Approx(50.0));

  // invalid pixels do not move the fit
  Sample censored = train;
  censored.input.bands[0].at(0, 0) = -1000.0f;
  censored.input.valid.at(0, 0) = 0;
  BandStats s2 = fit_band_stats({censored});
  CHECK(s2.min_max[0].first > -1000.0);
}

TEST_CASE("normalize maps the fitted range onto [0,1] and round-trips") {
  RasterGrid g = grid_of(4, 4);
  Sample train;
  train.input = random_stack(g, {2014, 1}, 21);
  std::fill(train.input.valid.valid.begin(), train.input.valid.valid.end(), uint8_t{1});
  BandStats stats = fit_band_stats({train});

  BandStack norm = normalize(train.input, stats);
  for (const auto& b : norm.bands)
    for (float v : b.values) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  BandStack back = denormalize(norm, stats);
  for (size_t b = 0; b < back.bands.size(); ++b)
    for (size_t p = 0; p < back.bands[b].size(); ++p)
      CHECK(back.bands[b].values[p] ==
            doctest::Approx(train.input.bands[b].values[p]).epsilon(1e-5));
}

TEST_CASE("normalize clamps values outside the fitted range") {
  BandStats stats;
  stats.band_ids = {"B1"};
  stats.min_max = {{0.0, 10.0}};
  BandStack s(grid_of(1, 3), {"B1"});
  s.bands[0].values = {-5.0f, 5.0f, 25.0f};
  BandStack n = normalize(s, stats);
  CHECK(n.bands[0].values[0] == 0.0f);
  CHECK(n.bands[0].values[1] == 0.5f);
  CHECK(n.bands[0].values[2] == 1.0f);

  BandStats degenerate;
  degenerate.band_ids = {"B1"};
  degenerate.min_max = {{3.0, 3.0}};
  CHECK_THROWS_AS(normalize(s, degenerate), DegenerateBandError);
  BandStats wrong;
  wrong.band_ids = {"B9"};
  wrong.min_max = {{0.0, 1.0}};
  CHECK_THROWS_AS(normalize(s, wrong), ShapeError);
}

TEST_CASE("dataset split is disjoint, exhaustive and deterministic") {
  auto [train, test] = split_dataset(133, 106.0 / 133.0, 7);
  CHECK(train.size() == 106);
  CHECK(test.size() == 27);
  std::set<size_t> seen(train.begin(), train.end());
  seen.insert(test.begin(), test.end());
  CHECK(seen.size() == 133);
  CHECK(*seen.rbegin() == 132);

  auto [train2, test2] = split_dataset(133, 106.0 / 133.0, 7);
  CHECK(train == train2);
  CHECK(test == test2);
  auto [train3, test3] = split_dataset(133, 106.0 / 133.0, 8);
  CHECK(train != train3);
  (void)test3;
}

TEST_CASE("split rejects empty sides") {
  CHECK_THROWS_AS(split_dataset(1, 0.5, 0), SizeError);
  CHECK_THROWS_AS(split_dataset(10, 1.0, 0), SizeError);
  CHECK_THROWS_AS(split_dataset(10, 0.0, 0), SizeError);
}
