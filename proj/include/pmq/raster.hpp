#pragma once

// Georeferenced raster types. Grid origin is the top-left corner of the
// top-left pixel; rows run north to south, columns west to east.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pmq/errors.hpp"
#include "pmq/tensor.hpp"

namespace pmq {

struct RasterGrid {
  double origin_lon = 0.0;  // west edge
  double origin_lat = 0.0;  // north edge
  double pixel_size = 0.01;  // degrees per pixel, square pixels
  int width = 0;
  int height = 0;
  std::string crs = "EPSG:4326";

  void validate() const {
    if (!(pixel_size > 0.0)) throw MetadataError("RasterGrid: pixel_size must be positive");
    if (width <= 0 || height <= 0) throw MetadataError("RasterGrid: empty grid");
  }

  bool operator==(const RasterGrid& o) const {
    return origin_lon == o.origin_lon && origin_lat == o.origin_lat &&
           pixel_size == o.pixel_size && width == o.width && height == o.height &&
           crs == o.crs;
  }
  bool operator!=(const RasterGrid& o) const { return !(*this == o); }

  double lon_of_center(int x) const { return origin_lon + (x + 0.5) * pixel_size; }
  double lat_of_center(int y) const { return origin_lat - (y + 0.5) * pixel_size; }
  double west_of(int x) const { return origin_lon + x * pixel_size; }
  double north_of(int y) const { return origin_lat - y * pixel_size; }
};

// Single-band raster with an explicit validity plane (no sentinel values).
struct Raster {
  RasterGrid grid;
  Plane values;
  Mask valid;

  Raster() = default;
  explicit Raster(const RasterGrid& g, float fill = 0.0f)
      : grid(g), values(g.height, g.width, fill), valid(g.height, g.width, true) {}
};

struct MaskRaster {
  RasterGrid grid;
  Mask valid;

  MaskRaster() = default;
  explicit MaskRaster(const RasterGrid& g, bool fill = true)
      : grid(g), valid(g.height, g.width, fill) {}
};

struct MonthKey {
  int year = 0;
  int month = 0;  // 1..12

  bool operator==(const MonthKey& o) const { return year == o.year && month == o.month; }
  bool operator<(const MonthKey& o) const {
    return year != o.year ? year < o.year : month < o.month;
  }
  std::string str() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d", year, month);
    return buf;
  }
};

// Multi-band raster stack; one shared validity plane (data availability).
struct BandStack {
  RasterGrid grid;
  std::vector<std::string> band_ids;
  std::vector<Plane> bands;
  Mask valid;
  MonthKey acquired;
  std::string location;

  BandStack() = default;
  BandStack(const RasterGrid& g, std::vector<std::string> ids)
      : grid(g), band_ids(std::move(ids)), valid(g.height, g.width, true) {
    bands.assign(band_ids.size(), Plane(g.height, g.width));
  }

  size_t band_count() const { return bands.size(); }

  void require_consistent() const {
    for (const auto& b : bands)
      if (b.height != grid.height || b.width != grid.width)
        throw ShapeError("BandStack: band plane does not match grid");
    if (valid.height != grid.height || valid.width != grid.width)
      throw ShapeError("BandStack: validity plane does not match grid");
    if (band_ids.size() != bands.size())
      throw ShapeError("BandStack: band id count mismatch");
  }
};

// Scene quality information used for cloud masking. Per-pixel cirrus
// confidence (in [0,1]) is preferred; otherwise the scene-level cloud cover
// percentage decides for the whole scene.
struct QaInfo {
  std::optional<Plane> cirrus_confidence;
  double scene_cloud_percent = -1.0;
};

// One aligned training sample.
struct Sample {
  std::string id;
  BandStack input;
  Raster target;
  MaskRaster mask;
  MonthKey month;
  std::string location;
  // Present only for synthetic data: analytically known conditional quantiles.
  std::optional<Plane> true_lower, true_median, true_upper;
};

}  // namespace pmq
