#pragma once

// Evaluation over masked rasters: MAE, interval coverage/width statistics,
// empirical quantiles of prediction maps, and paired scatter extraction.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "pmq/datapipe.hpp"
#include "pmq/errors.hpp"
#include "pmq/losses.hpp"
#include "pmq/tensor.hpp"

namespace pmq {

struct MetricsReport {
  double masked_mae = 0.0;
  double interval_coverage = 0.0;
  double median_interval_width = 0.0;
  double frac_above_lower = 0.0;
  double frac_below_upper = 0.0;
  double crossing_rate = 0.0;
  size_t valid_pixel_count = 0;

  static std::string csv_header() {
    return "masked_mae,interval_coverage,median_interval_width,frac_above_lower,"
           "frac_below_upper,crossing_rate,valid_pixel_count";
  }

  std::string csv_row() const {
    std::ostringstream os;
    os.precision(10);
    os << masked_mae << ',' << interval_coverage << ',' << median_interval_width << ','
       << frac_above_lower << ',' << frac_below_upper << ',' << crossing_rate << ','
       << valid_pixel_count;
    return os.str();
  }
};

inline double masked_mae(const Plane& pred, const Plane& target, const Mask& mask) {
  require_same_shape(pred, target, "masked_mae");
  require_same_shape(pred, mask, "masked_mae");
  double sum = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < mask.valid.size(); ++i) {
    if (!mask.valid[i]) continue;
    sum += std::abs(static_cast<double>(pred.values[i]) - target.values[i]);
    ++n;
  }
  if (n == 0) throw EmptySampleError("masked_mae: no valid pixels");
  return sum / static_cast<double>(n);
}

struct IntervalMetrics {
  double coverage = 0.0;         // lower <= target <= upper (closed interval)
  double median_width = 0.0;     // median of upper - lower
  double frac_above_lower = 0.0;
  double frac_below_upper = 0.0;
  double crossing_rate = 0.0;    // upper < lower
  size_t valid_pixel_count = 0;
};

inline IntervalMetrics interval_metrics(const QuantileTriple& triple, const Plane& target,
                                        const Mask& mask) {
  require_same_shape(triple.lower, target, "interval_metrics");
  require_same_shape(triple.median, target, "interval_metrics");
  require_same_shape(triple.upper, target, "interval_metrics");
  require_same_shape(target, mask, "interval_metrics");
  size_t n = 0, covered = 0, above_lower = 0, below_upper = 0, crossed = 0;
  std::vector<double> widths;
  for (size_t i = 0; i < mask.valid.size(); ++i) {
    if (!mask.valid[i]) continue;
    const double lo = triple.lower.values[i];
    const double hi = triple.upper.values[i];
    const double y = target.values[i];
    ++n;
    widths.push_back(hi - lo);
    if (hi < lo) {
      ++crossed;  // crossed intervals never cover
    } else if (y >= lo && y <= hi) {
      ++covered;
    }
    if (y >= lo) ++above_lower;
    if (y <= hi) ++below_upper;
  }
  if (n == 0) throw EmptySampleError("interval_metrics: no valid pixels");
  IntervalMetrics m;
  m.valid_pixel_count = n;
  m.coverage = static_cast<double>(covered) / static_cast<double>(n);
  m.frac_above_lower = static_cast<double>(above_lower) / static_cast<double>(n);
  m.frac_below_upper = static_cast<double>(below_upper) / static_cast<double>(n);
  m.crossing_rate = static_cast<double>(crossed) / static_cast<double>(n);
  std::sort(widths.begin(), widths.end());
  m.median_width = nearest_rank_quantile(widths, 0.5);
  return m;
}

inline MetricsReport metrics_report(const QuantileTriple& triple, const Plane& target,
                                    const Mask& mask) {
  MetricsReport r;
  r.masked_mae = masked_mae(triple.median, target, mask);
  const IntervalMetrics im = interval_metrics(triple, target, mask);
  r.interval_coverage = im.coverage;
  r.median_interval_width = im.median_width;
  r.frac_above_lower = im.frac_above_lower;
  r.frac_below_upper = im.frac_below_upper;
  r.crossing_rate = im.crossing_rate;
  r.valid_pixel_count = im.valid_pixel_count;
  return r;
}

// Nearest-rank empirical q-quantile of the valid pixel values.
inline double prediction_quantile(const Plane& raster, const Mask& mask, double q) {
  require_same_shape(raster, mask, "prediction_quantile");
  std::vector<double> vals;
  for (size_t i = 0; i < mask.valid.size(); ++i)
    if (mask.valid[i]) vals.push_back(raster.values[i]);
  if (vals.empty()) throw EmptySampleError("prediction_quantile: no valid pixels");
  std::sort(vals.begin(), vals.end());
  return nearest_rank_quantile(vals, q);
}

struct ScatterRow {
  double value_a = 0.0;
  double value_b = 0.0;
  std::string region;
};

// Paired per-pixel values with region labels, for identity-line scatter
// plots. Region labels are integer codes resolved through `region_names`;
// an empty label raster puts everything in "unlabeled".
inline std::vector<ScatterRow> paired_scatter(const Plane& map_a, const Plane& map_b,
                                              const std::vector<int>& region_labels,
                                              const std::vector<std::string>& region_names,
                                              const Mask& mask) {
  require_same_shape(map_a, map_b, "paired_scatter");
  require_same_shape(map_a, mask, "paired_scatter");
  if (!region_labels.empty() && region_labels.size() != mask.valid.size())
    throw ShapeError("paired_scatter: region label plane mismatch");
  std::vector<ScatterRow> rows;
  for (size_t i = 0; i < mask.valid.size(); ++i) {
    if (!mask.valid[i]) continue;
    ScatterRow row;
    row.value_a = map_a.values[i];
    row.value_b = map_b.values[i];
    if (region_labels.empty()) {
      row.region = "unlabeled";
    } else {
      const int code = region_labels[i];
      row.region = (code >= 0 && static_cast<size_t>(code) < region_names.size())
                       ? region_names[static_cast<size_t>(code)]
                       : "unlabeled";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace pmq
