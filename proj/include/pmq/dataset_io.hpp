#pragma once

// Prepared-dataset directory layout shared by the preprocessing pipeline and
// the synthetic generator:
//
//   <dir>/manifest.json            format tag, band ids, ordered sample ids
//   <dir>/band_stats.json          per-band training min/max
//   <dir>/split.json               train/test sample ids
//   <dir>/samples/<id>/input.tif   multiband predictor stack
//                     target.tif   ground-truth concentrations
//                     mask.tif     combined validity (1 = valid)
//                     meta.json    month/location keys
//                     true_*.tif   known conditional quantiles (synthetic only)

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmq/datapipe.hpp"
#include "pmq/errors.hpp"
#include "pmq/geotiff.hpp"
#include "pmq/raster.hpp"

namespace pmq {

inline constexpr const char* kDatasetFormatTag = "pmq-dataset-1";
inline constexpr const char* kToolVersion = "0.1.0";

struct DatasetSplit {
  double ratio = 0.8;
  uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

struct Dataset {
  std::vector<Sample> samples;
  std::optional<BandStats> stats;
  std::optional<DatasetSplit> split;

  const Sample& by_id(const std::string& id) const {
    for (const auto& s : samples)
      if (s.id == id) return s;
    throw IoError("dataset: unknown sample id " + id);
  }

  std::vector<const Sample*> subset(const std::vector<std::string>& ids) const {
    std::vector<const Sample*> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(&by_id(id));
    return out;
  }
};

inline void to_json(nlohmann::json& j, const BandStats& s) {
  j = nlohmann::json::object();
  j["band_ids"] = s.band_ids;
  std::vector<double> mins, maxs;
  for (const auto& [lo, hi] : s.min_max) {
    mins.push_back(lo);
    maxs.push_back(hi);
  }
  j["min"] = mins;
  j["max"] = maxs;
}

inline void from_json(const nlohmann::json& j, BandStats& s) {
  s.band_ids = j.at("band_ids").get<std::vector<std::string>>();
  const auto mins = j.at("min").get<std::vector<double>>();
  const auto maxs = j.at("max").get<std::vector<double>>();
  if (mins.size() != maxs.size() || mins.size() != s.band_ids.size())
    throw FormatError("band_stats: inconsistent arrays");
  s.min_max.clear();
  for (size_t i = 0; i < mins.size(); ++i) s.min_max.emplace_back(mins[i], maxs[i]);
}

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot open for writing " + p.string());
  os << j.dump(2) << '\n';
}

inline Plane mask_to_plane(const Mask& m) {
  Plane p(m.height, m.width);
  for (size_t i = 0; i < m.valid.size(); ++i) p.values[i] = m.valid[i] ? 1.0f : 0.0f;
  return p;
}

inline Mask plane_to_mask(const Plane& p) {
  Mask m(p.height, p.width);
  for (size_t i = 0; i < p.values.size(); ++i) m.valid[i] = p.values[i] > 0.5f ? 1 : 0;
  return m;
}

}  // namespace detail

// Samples are written in (month key, location key) order regardless of the
// order they arrive in, so the manifest is byte-stable.
inline void write_dataset(const std::filesystem::path& dir, std::vector<Sample> samples,
                          const std::optional<BandStats>& stats,
                          const std::optional<DatasetSplit>& split) {
  if (samples.empty()) throw EmptySampleError("write_dataset: no samples");
  std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
    if (!(a.month == b.month)) return a.month < b.month;
    if (a.location != b.location) return a.location < b.location;
    return a.id < b.id;
  });
  namespace fs = std::filesystem;
  fs::create_directories(dir / "samples");

  std::vector<std::string> ids;
  bool has_truth = true;
  for (const auto& s : samples) {
    ids.push_back(s.id);
    has_truth = has_truth && s.true_lower.has_value();
    const fs::path sdir = dir / "samples" / s.id;
    fs::create_directories(sdir);
    write_geotiff(sdir / "input.tif", s.input.grid, s.input.bands, s.input.valid);
    write_geotiff(sdir / "target.tif", s.target.grid, {s.target.values}, s.target.valid);
    write_geotiff(sdir / "mask.tif", s.mask.grid, {detail::mask_to_plane(s.mask.valid)});
    if (s.true_lower) {
      write_geotiff(sdir / "true_lower.tif", s.target.grid, {*s.true_lower});
      write_geotiff(sdir / "true_median.tif", s.target.grid, {*s.true_median});
      write_geotiff(sdir / "true_upper.tif", s.target.grid, {*s.true_upper});
    }
    detail::write_json_file(sdir / "meta.json",
                            {{"id", s.id},
                             {"year", s.month.year},
                             {"month", s.month.month},
                             {"location", s.location},
                             {"band_ids", s.input.band_ids}});
  }

  detail::write_json_file(dir / "manifest.json",
                          {{"format", kDatasetFormatTag},
                           {"tool_version", kToolVersion},
                           {"band_ids", samples.front().input.band_ids},
                           {"sample_ids", ids},
                           {"has_true_quantiles", has_truth}});
  if (stats) detail::write_json_file(dir / "band_stats.json", *stats);
  if (split) {
    detail::write_json_file(dir / "split.json", {{"ratio", split->ratio},
                                                 {"seed", split->seed},
                                                 {"train", split->train_ids},
                                                 {"test", split->test_ids}});
  }
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "manifest.json"))
    throw IoError("read_dataset: no manifest.json in " + dir.string());
  const nlohmann::json manifest = detail::read_json_file(dir / "manifest.json");
  if (manifest.value("format", "") != kDatasetFormatTag)
    throw FormatError("read_dataset: unsupported dataset format in " + dir.string());

  Dataset ds;
  const auto ids = manifest.at("sample_ids").get<std::vector<std::string>>();
  const auto band_ids = manifest.at("band_ids").get<std::vector<std::string>>();
  for (const auto& id : ids) {
    const fs::path sdir = dir / "samples" / id;
    const nlohmann::json meta = detail::read_json_file(sdir / "meta.json");
    Sample s;
    s.id = id;
    s.month = {meta.at("year").get<int>(), meta.at("month").get<int>()};
    s.location = meta.value("location", "");

    GeoTiffImage input = read_geotiff(sdir / "input.tif");
    if (input.bands.size() != band_ids.size())
      throw FormatError("read_dataset: band count mismatch for sample " + id);
    s.input.grid = input.grid;
    s.input.band_ids = band_ids;
    s.input.bands = std::move(input.bands);
    s.input.valid = std::move(input.valid);
    s.input.acquired = s.month;
    s.input.location = s.location;

    GeoTiffImage target = read_geotiff(sdir / "target.tif");
    s.target.grid = target.grid;
    s.target.values = std::move(target.bands.at(0));
    s.target.valid = std::move(target.valid);

    GeoTiffImage mask = read_geotiff(sdir / "mask.tif");
    s.mask.grid = mask.grid;
    s.mask.valid = detail::plane_to_mask(mask.bands.at(0));

    if (fs::exists(sdir / "true_lower.tif")) {
      s.true_lower = read_geotiff(sdir / "true_lower.tif").bands.at(0);
      s.true_median = read_geotiff(sdir / "true_median.tif").bands.at(0);
      s.true_upper = read_geotiff(sdir / "true_upper.tif").bands.at(0);
    }
    ds.samples.push_back(std::move(s));
  }

  if (fs::exists(dir / "band_stats.json"))
    ds.stats = detail::read_json_file(dir / "band_stats.json").get<BandStats>();
  if (fs::exists(dir / "split.json")) {
    const nlohmann::json j = detail::read_json_file(dir / "split.json");
    DatasetSplit sp;
    sp.ratio = j.value("ratio", 0.8);
    sp.seed = j.value("seed", uint64_t{0});
    sp.train_ids = j.at("train").get<std::vector<std::string>>();
    sp.test_ids = j.at("test").get<std::vector<std::string>>();
    ds.split = std::move(sp);
  }
  return ds;
}

}  // namespace pmq
