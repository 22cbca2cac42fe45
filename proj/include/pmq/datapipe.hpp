#pragma once

// Preprocessing chain: regridding, monthly composites, cloud/outlier masks,
// per-band normalization, and the train/test split.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <utility>
#include <vector>

#include "pmq/errors.hpp"
#include "pmq/raster.hpp"

namespace pmq {

// Nearest-rank empirical quantile of a sorted sample: element of 1-based
// rank ceil(q*n).
inline double nearest_rank_quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw EmptySampleError("nearest_rank_quantile: empty sample");
  if (!(q > 0.0 && q < 1.0)) throw DomainError("nearest_rank_quantile: q must lie in (0,1)");
  const size_t n = sorted.size();
  size_t rank = static_cast<size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<size_t>(rank, 1, n);
  return sorted[rank - 1];
}

namespace detail {

inline double overlap_1d(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace detail

// Resamples onto a target grid: area-weighted averaging when target pixels
// are at least as coarse as the source, bilinear otherwise. Out-of-footprint
// or fully-invalid target pixels come back flagged nodata.
inline Raster regrid(const Raster& src, const RasterGrid& target) {
  src.grid.validate();
  target.validate();
  if (src.grid.crs != target.crs)
    throw MetadataError("regrid: CRS mismatch (" + src.grid.crs + " vs " + target.crs + ")");
  Raster out(target);
  const bool downsample = target.pixel_size >= src.grid.pixel_size;
  for (int y = 0; y < target.height; ++y) {
    for (int x = 0; x < target.width; ++x) {
      if (downsample) {
        const double w0 = target.west_of(x), w1 = target.west_of(x + 1);
        const double n0 = target.north_of(y), n1 = target.north_of(y + 1);  // n1 < n0
        // source pixel index range overlapping the target cell
        int sx0 = static_cast<int>(std::floor((w0 - src.grid.origin_lon) / src.grid.pixel_size));
        int sx1 = static_cast<int>(std::ceil((w1 - src.grid.origin_lon) / src.grid.pixel_size));
        int sy0 = static_cast<int>(std::floor((src.grid.origin_lat - n0) / src.grid.pixel_size));
        int sy1 = static_cast<int>(std::ceil((src.grid.origin_lat - n1) / src.grid.pixel_size));
        sx0 = std::max(sx0, 0);
        sy0 = std::max(sy0, 0);
        sx1 = std::min(sx1, src.grid.width);
        sy1 = std::min(sy1, src.grid.height);
        double wsum = 0.0, vsum = 0.0;
        for (int sy = sy0; sy < sy1; ++sy) {
          const double oy = detail::overlap_1d(n1, n0, src.grid.north_of(sy + 1),
                                               src.grid.north_of(sy));
          if (oy <= 0.0) continue;
          for (int sx = sx0; sx < sx1; ++sx) {
            if (!src.valid.at(sy, sx)) continue;
            const double ox =
                detail::overlap_1d(w0, w1, src.grid.west_of(sx), src.grid.west_of(sx + 1));
            if (ox <= 0.0) continue;
            wsum += ox * oy;
            vsum += ox * oy * src.values.at(sy, sx);
          }
        }
        if (wsum > 0.0) {
          out.values.at(y, x) = static_cast<float>(vsum / wsum);
        } else {
          out.valid.at(y, x) = 0;
        }
      } else {
        const double lon = target.lon_of_center(x);
        const double lat = target.lat_of_center(y);
        const double fx = (lon - src.grid.origin_lon) / src.grid.pixel_size - 0.5;
        const double fy = (src.grid.origin_lat - lat) / src.grid.pixel_size - 0.5;
        const int x0 = static_cast<int>(std::floor(fx));
        const int y0 = static_cast<int>(std::floor(fy));
        const double ax = fx - x0, ay = fy - y0;
        double wsum = 0.0, vsum = 0.0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const int sx = x0 + dx, sy = y0 + dy;
            if (sx < 0 || sx >= src.grid.width || sy < 0 || sy >= src.grid.height) continue;
            if (!src.valid.at(sy, sx)) continue;
            const double w = (dx ? ax : 1.0 - ax) * (dy ? ay : 1.0 - ay);
            wsum += w;
            vsum += w * src.values.at(sy, sx);
          }
        }
        if (wsum > 1e-12) {
          out.values.at(y, x) = static_cast<float>(vsum / wsum);
        } else {
          out.valid.at(y, x) = 0;
        }
      }
    }
  }
  return out;
}

// Per (year, month), per band, per pixel mean over scenes where the pixel is
// valid. Zero valid observations -> nodata.
inline std::map<MonthKey, BandStack> monthly_composite(const std::vector<BandStack>& scenes) {
  if (scenes.empty()) throw EmptySampleError("monthly_composite: no scenes");
  const RasterGrid& grid = scenes.front().grid;
  const auto& ids = scenes.front().band_ids;
  for (const auto& s : scenes) {
    s.require_consistent();
    if (s.grid != grid) throw ShapeError("monthly_composite: scenes on different grids");
    if (s.band_ids != ids) throw ShapeError("monthly_composite: inconsistent band sets");
  }
  const size_t npix = static_cast<size_t>(grid.height) * grid.width;
  const size_t nbands = ids.size();

  std::map<MonthKey, BandStack> result;
  std::map<MonthKey, std::vector<std::vector<double>>> sums;  // [band][pixel]
  std::map<MonthKey, std::vector<uint32_t>> counts;           // [pixel]
  for (const auto& s : scenes) {
    auto [it, fresh] = sums.try_emplace(s.acquired, nbands, std::vector<double>(npix, 0.0));
    auto& cnt = counts.try_emplace(s.acquired, npix, 0).first->second;
    (void)fresh;
    for (size_t p = 0; p < npix; ++p) {
      if (!s.valid.valid[p]) continue;
      ++cnt[p];
      for (size_t b = 0; b < nbands; ++b) it->second[b][p] += s.bands[b].values[p];
    }
  }
  for (const auto& [key, bsums] : sums) {
    BandStack out(grid, ids);
    out.acquired = key;
    out.location = scenes.front().location;
    const auto& cnt = counts[key];
    for (size_t p = 0; p < npix; ++p) {
      if (cnt[p] == 0) {
        out.valid.valid[p] = 0;
        continue;
      }
      for (size_t b = 0; b < nbands; ++b)
        out.bands[b].values[p] = static_cast<float>(bsums[b][p] / cnt[p]);
    }
    result.emplace(key, std::move(out));
  }
  return result;
}

struct CloudMaskConfig {
  double pixel_confidence_threshold = 0.5;  // cirrus confidence above -> invalid
  double scene_percent_threshold = 80.0;    // scene-level cover above -> whole scene invalid
};

inline MaskRaster cloud_mask(const BandStack& scene, const QaInfo& qa,
                             const CloudMaskConfig& cfg = {}) {
  MaskRaster out(scene.grid, true);
  if (qa.cirrus_confidence.has_value()) {
    const Plane& conf = *qa.cirrus_confidence;
    if (conf.height != scene.grid.height || conf.width != scene.grid.width)
      throw ShapeError("cloud_mask: confidence plane does not match scene grid");
    for (size_t p = 0; p < out.valid.size(); ++p)
      if (conf.values[p] > cfg.pixel_confidence_threshold) out.valid.valid[p] = 0;
    return out;
  }
  if (qa.scene_cloud_percent >= 0.0) {
    if (qa.scene_cloud_percent > cfg.scene_percent_threshold)
      std::fill(out.valid.valid.begin(), out.valid.valid.end(), uint8_t{0});
    return out;
  }
  throw MetadataError("cloud_mask: scene carries no quality information");
}

// Marks pixels in the strict tails of the pooled target distribution.
// Cut points: with k = ceil(fraction * n) the lower cut is the (k+1)-th
// smallest and the upper cut the (k+1)-th largest pooled value; pixels
// strictly outside [lower_cut, upper_cut] are invalid. Constant rasters are
// untouched (strict inequality never fires).
inline std::vector<MaskRaster> outlier_mask(const std::vector<Raster>& targets,
                                            double fraction = 0.01) {
  if (!(fraction >= 0.0 && fraction < 0.5))
    throw DomainError("outlier_mask: fraction must lie in [0, 0.5)");
  std::vector<double> pooled;
  for (const auto& t : targets)
    for (size_t p = 0; p < t.values.size(); ++p)
      if (t.valid.valid[p]) pooled.push_back(t.values.values[p]);
  if (pooled.empty()) throw EmptySampleError("outlier_mask: no valid target pixels");
  std::sort(pooled.begin(), pooled.end());
  const size_t n = pooled.size();
  size_t k = static_cast<size_t>(std::ceil(fraction * static_cast<double>(n)));
  if (2 * k >= n) k = (n - 1) / 2;
  const double lower_cut = pooled[k];
  const double upper_cut = pooled[n - 1 - k];

  std::vector<MaskRaster> out;
  out.reserve(targets.size());
  for (const auto& t : targets) {
    MaskRaster m(t.grid, true);
    for (size_t p = 0; p < t.values.size(); ++p) {
      if (!t.valid.valid[p]) continue;
      const double v = t.values.values[p];
      if (v < lower_cut || v > upper_cut) m.valid.valid[p] = 0;
    }
    out.push_back(std::move(m));
  }
  return out;
}

// Logical AND of validity planes.
inline MaskRaster combine_masks(const std::vector<MaskRaster>& masks) {
  if (masks.empty()) throw EmptySampleError("combine_masks: no masks");
  MaskRaster out = masks.front();
  for (size_t i = 1; i < masks.size(); ++i) {
    if (masks[i].grid != out.grid) throw ShapeError("combine_masks: grid mismatch");
    for (size_t p = 0; p < out.valid.size(); ++p)
      out.valid.valid[p] = out.valid.valid[p] && masks[i].valid.valid[p];
  }
  return out;
}

struct BandStats {
  std::vector<std::string> band_ids;
  std::vector<std::pair<double, double>> min_max;

  void validate() const {
    if (band_ids.size() != min_max.size()) throw ShapeError("BandStats: inconsistent sizes");
    for (size_t b = 0; b < min_max.size(); ++b)
      if (!(min_max[b].second > min_max[b].first))
        throw DegenerateBandError("BandStats: degenerate band '" + band_ids[b] + "'");
  }
};

// Per-band min/max over valid pixels of the training split only.
inline BandStats fit_band_stats(const std::vector<Sample>& train) {
  if (train.empty()) throw EmptySampleError("fit_band_stats: empty training split");
  const auto& ids = train.front().input.band_ids;
  BandStats stats;
  stats.band_ids = ids;
  stats.min_max.assign(ids.size(), {std::numeric_limits<double>::infinity(),
                                    -std::numeric_limits<double>::infinity()});
  for (const auto& s : train) {
    if (s.input.band_ids != ids) throw ShapeError("fit_band_stats: inconsistent band sets");
    for (size_t b = 0; b < ids.size(); ++b) {
      const auto& plane = s.input.bands[b];
      for (size_t p = 0; p < plane.size(); ++p) {
        if (!s.input.valid.valid[p]) continue;
        stats.min_max[b].first = std::min(stats.min_max[b].first, double(plane.values[p]));
        stats.min_max[b].second = std::max(stats.min_max[b].second, double(plane.values[p]));
      }
    }
  }
  stats.validate();
  return stats;
}

// v -> (v - min) / (max - min), clamped to [0, 1].
inline BandStack normalize(const BandStack& stack, const BandStats& stats) {
  stats.validate();
  if (stack.band_ids != stats.band_ids)
    throw ShapeError("normalize: band set does not match fitted stats");
  BandStack out = stack;
  for (size_t b = 0; b < stats.min_max.size(); ++b) {
    const double lo = stats.min_max[b].first;
    const double range = stats.min_max[b].second - lo;
    for (auto& v : out.bands[b].values)
      v = static_cast<float>(std::clamp((static_cast<double>(v) - lo) / range, 0.0, 1.0));
  }
  return out;
}

inline BandStack denormalize(const BandStack& stack, const BandStats& stats) {
  stats.validate();
  if (stack.band_ids != stats.band_ids)
    throw ShapeError("denormalize: band set does not match fitted stats");
  BandStack out = stack;
  for (size_t b = 0; b < stats.min_max.size(); ++b) {
    const double lo = stats.min_max[b].first;
    const double range = stats.min_max[b].second - lo;
    for (auto& v : out.bands[b].values) v = static_cast<float>(lo + range * v);
  }
  return out;
}

// Uniform random image-level partition; round(n * ratio) samples train.
inline std::pair<std::vector<size_t>, std::vector<size_t>> split_dataset(size_t n, double ratio,
                                                                         uint64_t seed) {
  if (n < 2) throw SizeError("split_dataset: need at least 2 samples");
  const size_t ntrain = static_cast<size_t>(std::lround(ratio * static_cast<double>(n)));
  if (ntrain == 0 || ntrain >= n)
    throw SizeError("split_dataset: ratio leaves one side empty");
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(ntrain));
  std::vector<size_t> test(idx.begin() + static_cast<std::ptrdiff_t>(ntrain), idx.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

}  // namespace pmq
