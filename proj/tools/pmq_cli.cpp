// Command-line front end: preprocess | synth | train | predict | evaluate | report.

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <thread>

#include "pmq/dataset_io.hpp"
#include "pmq/metrics.hpp"
#include "pmq/synthgen.hpp"
#include "pmq/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

int worker_count() {
  if (const char* env = std::getenv("PMQ_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

void write_manifest(const fs::path& dir, const std::string& command, json details,
                    const std::string& started) {
  details["command"] = command;
  details["tool_version"] = pmq::kToolVersion;
  details["workers"] = worker_count();
  details["started"] = started;
  details["finished"] = iso_now();
  pmq::detail::write_json_file(dir / "run_manifest.json", details);
}

pmq::QuantileSpec parse_quantiles(const std::string& s) {
  pmq::QuantileSpec q;
  if (s.empty()) return q;
  const auto comma = s.find(',');
  if (comma == std::string::npos)
    throw pmq::ConfigError("--quantiles expects \"lower,upper\", got " + s);
  try {
    q.lower = std::stod(s.substr(0, comma));
    q.upper = std::stod(s.substr(comma + 1));
  } catch (const std::exception&) {
    throw pmq::ConfigError("--quantiles expects numbers, got " + s);
  }
  q.validate();
  return q;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Run fn(i) for i in [0, n) on up to worker_count() threads.
void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  const size_t workers = std::min<size_t>(static_cast<size_t>(worker_count()), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

pmq::Mask training_mask(const pmq::Sample& s) {
  pmq::Mask m(s.target.values.height, s.target.values.width);
  for (size_t p = 0; p < m.valid.size(); ++p)
    m.valid[p] = s.mask.valid.valid[p] && s.target.valid.valid[p] && s.input.valid.valid[p];
  return m;
}

struct LoadedModel {
  pmq::UNet model;
  pmq::BandStats stats;
  pmq::TargetRange range;
};

LoadedModel load_model_with_normalization(const fs::path& ckpt_path) {
  pmq::Checkpoint ckpt = pmq::load_checkpoint_file(ckpt_path);
  const auto stats_it = ckpt.metadata.find("band_stats");
  const auto min_it = ckpt.metadata.find("target_min");
  const auto max_it = ckpt.metadata.find("target_max");
  if (stats_it == ckpt.metadata.end() || min_it == ckpt.metadata.end() ||
      max_it == ckpt.metadata.end())
    throw pmq::IncompatibleCheckpointError(
        "checkpoint carries no normalization metadata: " + ckpt_path.string());
  pmq::BandStats stats = json::parse(stats_it->second).get<pmq::BandStats>();
  pmq::TargetRange range{std::stod(min_it->second), std::stod(max_it->second)};
  return {pmq::load_model(ckpt), std::move(stats), range};
}

void attach_split(pmq::Dataset& ds, std::vector<pmq::Sample>& samples, double ratio,
                  uint64_t seed, std::optional<pmq::DatasetSplit>& out_split,
                  std::optional<pmq::BandStats>& out_stats) {
  auto [tr_idx, te_idx] = pmq::split_dataset(samples.size(), ratio, seed);
  pmq::DatasetSplit split;
  split.ratio = ratio;
  split.seed = seed;
  for (size_t i : tr_idx) split.train_ids.push_back(samples[i].id);
  for (size_t i : te_idx) split.test_ids.push_back(samples[i].id);
  std::vector<pmq::Sample> train;
  for (size_t i : tr_idx) train.push_back(samples[i]);
  out_stats = pmq::fit_band_stats(train);
  out_split = std::move(split);
  (void)ds;
}

// ---- synth ----------------------------------------------------------------

int cmd_synth(const fs::path& out, int count, int size, int bands, uint64_t seed,
              const std::string& quantiles, double ratio) {
  const std::string started = iso_now();
  pmq::SynthSpec spec;
  spec.height = size;
  spec.width = size;
  spec.band_count = bands;
  spec.seed = seed;
  const pmq::QuantileSpec qs = parse_quantiles(quantiles);
  std::vector<pmq::Sample> samples = pmq::generate(spec, count, qs);

  pmq::Dataset ds;
  std::optional<pmq::DatasetSplit> split;
  std::optional<pmq::BandStats> stats;
  attach_split(ds, samples, ratio, seed, split, stats);
  pmq::write_dataset(out, samples, stats, split);
  write_manifest(out, "synth",
                 {{"seed", seed},
                  {"count", count},
                  {"size", size},
                  {"bands", bands},
                  {"split_ratio", ratio},
                  {"quantiles", json{{"lower", qs.lower}, {"upper", qs.upper}}},
                  {"output", out.string()}},
                 started);
  std::cout << "wrote " << samples.size() << " synthetic samples to " << out.string() << "\n";
  return 0;
}

// ---- preprocess -----------------------------------------------------------

struct SceneFile {
  fs::path tif;
  fs::path meta;
  fs::path qa;  // optional per-pixel cirrus confidence
};

int cmd_preprocess(const fs::path& config_path, const fs::path& out, uint64_t seed) {
  const std::string started = iso_now();
  const json cfg = pmq::detail::read_json_file(config_path);
  const fs::path scenes_dir = cfg.at("scenes_dir").get<std::string>();
  const fs::path targets_dir = cfg.at("targets_dir").get<std::string>();
  const double ratio = cfg.value("split_ratio", 0.8);
  const double outlier_fraction = cfg.value("outlier_fraction", 0.01);
  pmq::CloudMaskConfig cloud_cfg;
  if (cfg.contains("cloud")) {
    cloud_cfg.pixel_confidence_threshold =
        cfg["cloud"].value("pixel_confidence_threshold", 0.5);
    cloud_cfg.scene_percent_threshold = cfg["cloud"].value("scene_percent_threshold", 80.0);
  }
  pmq::RasterGrid grid;
  {
    const json& g = cfg.at("grid");
    grid.origin_lon = g.at("origin_lon").get<double>();
    grid.origin_lat = g.at("origin_lat").get<double>();
    grid.pixel_size = g.at("pixel_size").get<double>();
    grid.width = g.at("width").get<int>();
    grid.height = g.at("height").get<int>();
    grid.validate();
  }

  std::vector<SceneFile> files;
  if (fs::is_directory(scenes_dir)) {
    for (const auto& e : fs::directory_iterator(scenes_dir)) {
      if (e.path().extension() != ".tif") continue;
      const std::string stem = e.path().stem().string();
      if (stem.size() > 3 && stem.substr(stem.size() - 3) == ".qa") continue;
      SceneFile f;
      f.tif = e.path();
      f.meta = e.path().parent_path() / (stem + ".json");
      const fs::path qa = e.path().parent_path() / (stem + ".qa.tif");
      if (fs::exists(qa)) f.qa = qa;
      files.push_back(std::move(f));
    }
  }
  if (files.empty())
    throw pmq::IoError("preprocess: no scene rasters in " + scenes_dir.string());
  std::sort(files.begin(), files.end(),
            [](const SceneFile& a, const SceneFile& b) { return a.tif < b.tif; });

  // per-location scene stacks on the target grid, cloud-masked
  std::map<std::string, std::vector<pmq::BandStack>> by_location;
  std::vector<std::string> band_ids;
  for (const auto& f : files) {
    const json meta = pmq::detail::read_json_file(f.meta);
    pmq::GeoTiffImage img = pmq::read_geotiff(f.tif);
    pmq::BandStack scene(img.grid, meta.at("band_ids").get<std::vector<std::string>>());
    if (scene.band_count() != img.bands.size())
      throw pmq::FormatError("preprocess: band id count mismatch for " + f.tif.string());
    scene.bands = std::move(img.bands);
    scene.valid = std::move(img.valid);
    scene.acquired = {meta.at("year").get<int>(), meta.at("month").get<int>()};
    scene.location = meta.value("location", "site");
    if (band_ids.empty()) band_ids = scene.band_ids;

    pmq::QaInfo qa;
    if (!f.qa.empty()) qa.cirrus_confidence = pmq::read_geotiff(f.qa).bands.at(0);
    qa.scene_cloud_percent = meta.value("scene_cloud_percent", -1.0);
    pmq::MaskRaster clouds = pmq::cloud_mask(scene, qa, cloud_cfg);
    for (size_t p = 0; p < scene.valid.size(); ++p)
      scene.valid.valid[p] = scene.valid.valid[p] && clouds.valid.valid[p];

    // resample every band onto the analysis grid
    pmq::BandStack on_grid(grid, scene.band_ids);
    on_grid.acquired = scene.acquired;
    on_grid.location = scene.location;
    pmq::Mask merged(grid.height, grid.width, true);
    for (size_t b = 0; b < scene.band_count(); ++b) {
      pmq::Raster src;
      src.grid = scene.grid;
      src.values = scene.bands[b];
      src.valid = scene.valid;
      pmq::Raster dst = pmq::regrid(src, grid);
      on_grid.bands[b] = std::move(dst.values);
      for (size_t p = 0; p < merged.valid.size(); ++p)
        merged.valid[p] = merged.valid[p] && dst.valid.valid[p];
    }
    on_grid.valid = std::move(merged);
    by_location[on_grid.location].push_back(std::move(on_grid));
  }

  // composite per month and pair with ground truth rasters
  std::vector<pmq::Sample> samples;
  std::vector<pmq::Raster> targets;
  for (auto& [location, scenes] : by_location) {
    auto monthly = pmq::monthly_composite(scenes);
    for (auto& [month, stack] : monthly) {
      const fs::path tpath = targets_dir / (location + "_" + month.str() + ".tif");
      if (!fs::exists(tpath))
        throw pmq::IoError("preprocess: missing ground truth " + tpath.string());
      pmq::GeoTiffImage timg = pmq::read_geotiff(tpath);
      pmq::Raster target;
      target.grid = timg.grid;
      target.values = timg.bands.at(0);
      target.valid = timg.valid;
      if (target.grid != grid) target = pmq::regrid(target, grid);

      pmq::Sample s;
      s.id = location + "_" + month.str();
      s.month = month;
      s.location = location;
      s.input = std::move(stack);
      s.target = std::move(target);
      targets.push_back(s.target);
      samples.push_back(std::move(s));
    }
  }

  const auto outliers = pmq::outlier_mask(targets, outlier_fraction);
  for (size_t i = 0; i < samples.size(); ++i) {
    samples[i].mask.grid = grid;
    samples[i].mask.valid = outliers[i].valid;
  }

  pmq::Dataset ds;
  std::optional<pmq::DatasetSplit> split;
  std::optional<pmq::BandStats> stats;
  attach_split(ds, samples, ratio, seed, split, stats);
  pmq::write_dataset(out, samples, stats, split);
  write_manifest(out, "preprocess",
                 {{"config", config_path.string()},
                  {"seed", seed},
                  {"scenes_dir", scenes_dir.string()},
                  {"targets_dir", targets_dir.string()},
                  {"samples", samples.size()},
                  {"train", split->train_ids.size()},
                  {"test", split->test_ids.size()},
                  {"output", out.string()}},
                 started);
  std::cout << "prepared " << samples.size() << " samples (" << split->train_ids.size()
            << " train / " << split->test_ids.size() << " test) in " << out.string() << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const fs::path& dataset_dir, const fs::path& out, const fs::path& config_path,
              const fs::path& resume, uint64_t seed, int epochs, double alpha,
              const std::string& quantiles, int steps, int batch, int tile, double lr,
              int depth, int base_features, double dropout) {
  const std::string started = iso_now();
  pmq::TrainConfig tc;  // defaults reproduce the reference protocol
  pmq::ModelConfig mc;
  if (!config_path.empty()) {
    const json cfg = pmq::detail::read_json_file(config_path);
    if (cfg.contains("train")) tc = cfg.at("train").get<pmq::TrainConfig>();
    if (cfg.contains("model")) {
      const json& m = cfg.at("model");
      mc.depth = m.value("depth", mc.depth);
      mc.base_features = m.value("base_features", mc.base_features);
      mc.kernel_size = m.value("kernel_size", mc.kernel_size);
      mc.dropout_rate = m.value("dropout_rate", mc.dropout_rate);
    }
  }
  // command-line overrides
  if (seed != static_cast<uint64_t>(-1)) tc.seed = seed;
  if (epochs > 0) tc.epochs = epochs;
  if (alpha > 0.0) tc.loss.alpha = alpha;
  if (!quantiles.empty()) tc.loss.quantiles = parse_quantiles(quantiles);
  if (steps > 0) tc.steps_per_epoch = steps;
  if (batch > 0) tc.minibatch_size = batch;
  if (tile > 0) tc.tile_size = tile;
  if (lr >= 0.0) tc.adam.lr = lr;
  if (depth > 0) mc.depth = depth;
  if (base_features > 0) mc.base_features = base_features;
  if (dropout >= 0.0) tc.dropout = dropout;
  mc.dropout_rate = tc.dropout;
  mc.quantiles = tc.loss.quantiles;

  pmq::Dataset ds = pmq::read_dataset(dataset_dir);
  std::vector<const pmq::Sample*> train_set, val_set;
  if (ds.split) {
    train_set = ds.subset(ds.split->train_ids);
    val_set = ds.subset(ds.split->test_ids);
  } else {
    for (const auto& s : ds.samples) train_set.push_back(&s);
  }
  if (train_set.empty()) throw pmq::EmptySampleError("train: dataset has no training split");

  mc.in_bands = static_cast<int>(train_set.front()->input.band_count());
  const pmq::BandStats stats = ds.stats ? *ds.stats : [&] {
    std::vector<pmq::Sample> tmp;
    for (const auto* s : train_set) tmp.push_back(*s);
    return pmq::fit_band_stats(tmp);
  }();
  const pmq::TargetRange range = pmq::fit_target_range(train_set);

  pmq::UNet model(mc, tc.seed);
  pmq::Trainer trainer(model, tc, stats, range);
  if (!resume.empty()) trainer.restore(pmq::load_checkpoint_file(resume));

  fs::create_directories(out);
  trainer.run(train_set, val_set, out, &std::cout);

  json tc_json = tc;
  write_manifest(out, "train",
                 {{"dataset", dataset_dir.string()},
                  {"config", config_path.empty() ? "" : config_path.string()},
                  {"resumed_from", resume.empty() ? "" : resume.string()},
                  {"seed", tc.seed},
                  {"epochs", trainer.completed_epochs()},
                  {"train_samples", train_set.size()},
                  {"val_samples", val_set.size()},
                  {"train_config", tc_json},
                  {"output", out.string()}},
                 started);
  std::cout << "training finished after " << trainer.completed_epochs() << " epochs; run dir "
            << out.string() << "\n";
  return 0;
}

// ---- predict --------------------------------------------------------------

int cmd_predict(const fs::path& ckpt_path, const fs::path& input_path, const fs::path& out) {
  const std::string started = iso_now();
  LoadedModel lm = load_model_with_normalization(ckpt_path);

  pmq::GeoTiffImage img = pmq::read_geotiff(input_path);
  pmq::BandStack stack(img.grid, lm.stats.band_ids);
  if (img.bands.size() != lm.stats.band_ids.size())
    throw pmq::ShapeError("predict: input has " + std::to_string(img.bands.size()) +
                          " bands, model expects " + std::to_string(lm.stats.band_ids.size()));
  stack.bands = std::move(img.bands);
  stack.valid = img.valid;

  pmq::QuantileTriple t = pmq::predict_physical(lm.model, stack, lm.stats, lm.range);
  fs::create_directories(out);
  pmq::write_geotiff(out / "lower.tif", stack.grid, {t.lower}, stack.valid);
  pmq::write_geotiff(out / "median.tif", stack.grid, {t.median}, stack.valid);
  pmq::write_geotiff(out / "upper.tif", stack.grid, {t.upper}, stack.valid);
  pmq::write_geotiff(out / "mask.tif", stack.grid,
                     {pmq::detail::mask_to_plane(stack.valid)});
  write_manifest(out, "predict",
                 {{"checkpoint", ckpt_path.string()},
                  {"input", input_path.string()},
                  {"quantiles", json{{"lower", lm.model.config().quantiles.lower},
                                     {"upper", lm.model.config().quantiles.upper}}},
                  {"output", out.string()}},
                 started);
  std::cout << "wrote quantile rasters to " << out.string() << "\n";
  return 0;
}

// ---- evaluate -------------------------------------------------------------

int cmd_evaluate(const fs::path& ckpt_path, const fs::path& dataset_dir,
                 const std::string& which, const fs::path& out) {
  const std::string started = iso_now();
  LoadedModel lm = load_model_with_normalization(ckpt_path);
  pmq::Dataset ds = pmq::read_dataset(dataset_dir);

  std::vector<const pmq::Sample*> set;
  if (which == "all" || !ds.split) {
    for (const auto& s : ds.samples) set.push_back(&s);
  } else if (which == "train") {
    set = ds.subset(ds.split->train_ids);
  } else if (which == "test") {
    set = ds.subset(ds.split->test_ids);
  } else {
    throw pmq::ConfigError("evaluate: --split must be train, test or all");
  }
  if (set.empty()) throw pmq::EmptySampleError("evaluate: selected split is empty");

  std::vector<pmq::MetricsReport> reports(set.size());
  std::vector<std::vector<double>> widths(set.size());
  std::vector<std::array<double, 4>> sums(set.size());  // abs_err, covered, crossed, n
  parallel_for(set.size(), [&](size_t i) {
    const pmq::Sample& s = *set[i];
    pmq::QuantileTriple t = pmq::predict_physical(lm.model, s.input, lm.stats, lm.range);
    const pmq::Mask m = training_mask(s);
    reports[i] = pmq::metrics_report(t, s.target.values, m);
    double abs_err = 0.0, covered = 0.0, crossed = 0.0, n = 0.0;
    for (size_t p = 0; p < m.valid.size(); ++p) {
      if (!m.valid[p]) continue;
      const double y = s.target.values.values[p];
      const double lo = t.lower.values[p], hi = t.upper.values[p];
      abs_err += std::abs(t.median.values[p] - y);
      if (hi < lo)
        crossed += 1.0;
      else if (y >= lo && y <= hi)
        covered += 1.0;
      widths[i].push_back(hi - lo);
      n += 1.0;
    }
    sums[i] = {abs_err, covered, crossed, n};
  });

  fs::create_directories(out);
  std::ofstream os(out / "metrics.csv");
  if (!os) throw pmq::IoError("evaluate: cannot write " + (out / "metrics.csv").string());
  os << "sample," << pmq::MetricsReport::csv_header() << '\n';
  double abs_err = 0.0, covered = 0.0, crossed = 0.0, n = 0.0;
  std::vector<double> pooled_widths;
  for (size_t i = 0; i < set.size(); ++i) {
    os << set[i]->id << ',' << reports[i].csv_row() << '\n';
    abs_err += sums[i][0];
    covered += sums[i][1];
    crossed += sums[i][2];
    n += sums[i][3];
    pooled_widths.insert(pooled_widths.end(), widths[i].begin(), widths[i].end());
  }
  std::sort(pooled_widths.begin(), pooled_widths.end());
  pmq::MetricsReport pooled;
  pooled.masked_mae = abs_err / n;
  pooled.interval_coverage = covered / n;
  pooled.crossing_rate = crossed / n;
  pooled.median_interval_width = pmq::nearest_rank_quantile(pooled_widths, 0.5);
  pooled.frac_above_lower = 0.0;
  pooled.frac_below_upper = 0.0;
  for (size_t i = 0; i < set.size(); ++i) {
    pooled.frac_above_lower += reports[i].frac_above_lower * sums[i][3];
    pooled.frac_below_upper += reports[i].frac_below_upper * sums[i][3];
  }
  pooled.frac_above_lower /= n;
  pooled.frac_below_upper /= n;
  pooled.valid_pixel_count = static_cast<size_t>(n);
  os << "POOLED," << pooled.csv_row() << '\n';
  os.close();

  write_manifest(out, "evaluate",
                 {{"checkpoint", ckpt_path.string()},
                  {"dataset", dataset_dir.string()},
                  {"split", which},
                  {"samples", set.size()},
                  {"pooled_mae", pooled.masked_mae},
                  {"pooled_coverage", pooled.interval_coverage},
                  {"output", out.string()}},
                 started);
  std::cout << "pooled mae " << pooled.masked_mae << " coverage " << pooled.interval_coverage
            << " over " << set.size() << " samples; wrote " << (out / "metrics.csv").string()
            << "\n";
  return 0;
}

// ---- report ---------------------------------------------------------------

int cmd_report(const fs::path& map_a, const fs::path& map_b, const fs::path& regions,
               const std::string& region_names_csv, const fs::path& ckpt_path,
               const fs::path& dataset_dir, const std::string& which, const fs::path& out) {
  const std::string started = iso_now();
  fs::create_directories(out);
  json details;
  bool did_anything = false;

  if (!map_a.empty() || !map_b.empty()) {
    if (map_a.empty() || map_b.empty())
      throw pmq::ConfigError("report: --map-a and --map-b must be given together");
    pmq::GeoTiffImage a = pmq::read_geotiff(map_a);
    pmq::GeoTiffImage b = pmq::read_geotiff(map_b);
    if (a.grid != b.grid) throw pmq::MetadataError("report: map grids differ");
    pmq::Mask both(a.grid.height, a.grid.width);
    for (size_t p = 0; p < both.valid.size(); ++p)
      both.valid[p] = a.valid.valid[p] && b.valid.valid[p];
    std::vector<int> labels;
    std::vector<std::string> names = split_csv(region_names_csv);
    if (!regions.empty()) {
      pmq::GeoTiffImage r = pmq::read_geotiff(regions);
      for (float v : r.bands.at(0).values) labels.push_back(static_cast<int>(v));
    }
    const auto rows = pmq::paired_scatter(a.bands.at(0), b.bands.at(0), labels, names, both);
    std::ofstream os(out / "scatter.csv");
    if (!os) throw pmq::IoError("report: cannot write " + (out / "scatter.csv").string());
    os << "value_a,value_b,region\n";
    os.precision(10);
    for (const auto& row : rows)
      os << row.value_a << ',' << row.value_b << ',' << row.region << '\n';
    details["scatter_rows"] = rows.size();
    details["map_a"] = map_a.string();
    details["map_b"] = map_b.string();
    did_anything = true;
  }

  if (!ckpt_path.empty()) {
    if (dataset_dir.empty())
      throw pmq::ConfigError("report: --checkpoint requires --dataset");
    LoadedModel lm = load_model_with_normalization(ckpt_path);
    pmq::Dataset ds = pmq::read_dataset(dataset_dir);
    std::vector<const pmq::Sample*> set;
    if (which == "train" && ds.split)
      set = ds.subset(ds.split->train_ids);
    else if (which == "test" && ds.split)
      set = ds.subset(ds.split->test_ids);
    else
      for (const auto& s : ds.samples) set.push_back(&s);
    if (set.empty()) throw pmq::EmptySampleError("report: selected split is empty");

    // pooled predicted values per head for the density table
    std::array<std::vector<double>, 3> pooled;
    for (const auto* s : set) {
      pmq::QuantileTriple t = pmq::predict_physical(lm.model, s->input, lm.stats, lm.range);
      const pmq::Mask m = training_mask(*s);
      for (size_t p = 0; p < m.valid.size(); ++p) {
        if (!m.valid[p]) continue;
        pooled[0].push_back(t.lower.values[p]);
        pooled[1].push_back(t.median.values[p]);
        pooled[2].push_back(t.upper.values[p]);
      }
    }
    for (auto& v : pooled) std::sort(v.begin(), v.end());
    std::ofstream os(out / "density.csv");
    if (!os) throw pmq::IoError("report: cannot write " + (out / "density.csv").string());
    os << "head,level,value\n";
    os.precision(10);
    const char* heads[3] = {"lower", "median", "upper"};
    for (int h = 0; h < 3; ++h)
      for (int pct = 5; pct <= 95; pct += 5)
        os << heads[h] << ',' << pct / 100.0 << ','
           << pmq::nearest_rank_quantile(pooled[size_t(h)], pct / 100.0) << '\n';
    details["density_heads"] = 3;
    details["checkpoint"] = ckpt_path.string();
    details["dataset"] = dataset_dir.string();
    did_anything = true;
  }

  if (!did_anything)
    throw pmq::ConfigError("report: nothing to do (give --map-a/--map-b or --checkpoint)");
  details["output"] = out.string();
  write_manifest(out, "report", details, started);
  std::cout << "wrote report tables to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense per-pixel quantile prediction for PM2.5 rasters"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with known quantiles");
  std::string synth_out;
  int synth_count = 200, synth_size = 64, synth_bands = 4;
  uint64_t synth_seed = 0;
  std::string synth_quantiles;
  double synth_ratio = 0.8;
  synth->add_option("--out", synth_out, "Output dataset directory")->required();
  synth->add_option("--count", synth_count, "Number of samples");
  synth->add_option("--size", synth_size, "Scene side length in pixels");
  synth->add_option("--bands", synth_bands, "Number of input bands");
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--quantiles", synth_quantiles, "lower,upper quantile levels");
  synth->add_option("--ratio", synth_ratio, "Train split ratio");

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "Build a prepared dataset from raw scenes");
  std::string prep_config, prep_out;
  uint64_t prep_seed = 0;
  prep->add_option("--config", prep_config, "Preprocessing config (JSON)")->required();
  prep->add_option("--out", prep_out, "Output dataset directory")->required();
  prep->add_option("--seed", prep_seed, "Split seed");

  // train
  auto* train = app.add_subcommand("train", "Train the three-head quantile model");
  std::string train_dataset, train_out, train_config, train_resume, train_quantiles;
  uint64_t train_seed = static_cast<uint64_t>(-1);
  int train_epochs = 0, train_steps = 0, train_batch = 0, train_tile = 0;
  int train_depth = 0, train_base = 0;
  double train_alpha = 0.0, train_lr = -1.0, train_dropout = -1.0;
  train->add_option("--dataset", train_dataset, "Prepared dataset directory")->required();
  train->add_option("--out", train_out, "Run directory for checkpoints/history")->required();
  train->add_option("--config", train_config, "Training config (JSON)");
  train->add_option("--checkpoint", train_resume, "Resume from a resumable checkpoint");
  train->add_option("--seed", train_seed, "Training seed");
  train->add_option("--epochs", train_epochs, "Override epoch count");
  train->add_option("--alpha", train_alpha, "Override smoothing sharpness");
  train->add_option("--quantiles", train_quantiles, "lower,upper quantile levels");
  train->add_option("--steps", train_steps, "Override steps per epoch");
  train->add_option("--batch", train_batch, "Override minibatch size");
  train->add_option("--tile", train_tile, "Override training tile size");
  train->add_option("--lr", train_lr, "Override learning rate");
  train->add_option("--depth", train_depth, "Override model depth");
  train->add_option("--base-features", train_base, "Override first-level feature count");
  train->add_option("--dropout", train_dropout, "Override dropout rate");

  // predict
  auto* predict = app.add_subcommand("predict", "Predict quantile maps for one scene");
  std::string pred_ckpt, pred_input, pred_out;
  predict->add_option("--checkpoint", pred_ckpt, "Model checkpoint")->required();
  predict->add_option("--input", pred_input, "Input multiband GeoTIFF")->required();
  predict->add_option("--out", pred_out, "Output directory")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint against a dataset");
  std::string eval_ckpt, eval_dataset, eval_split = "test", eval_out;
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--dataset", eval_dataset, "Prepared dataset directory")->required();
  eval->add_option("--split", eval_split, "Which split: train, test or all");
  eval->add_option("--out", eval_out, "Output directory")->required();

  // report
  auto* report = app.add_subcommand("report", "Emit plot-ready CSV tables");
  std::string rep_a, rep_b, rep_regions, rep_names, rep_ckpt, rep_dataset;
  std::string rep_split = "test", rep_out;
  report->add_option("--map-a", rep_a, "First raster for the paired scatter");
  report->add_option("--map-b", rep_b, "Second raster for the paired scatter");
  report->add_option("--regions", rep_regions, "Integer region-code raster");
  report->add_option("--region-names", rep_names, "Comma-separated region names");
  report->add_option("--checkpoint", rep_ckpt, "Checkpoint for the density table");
  report->add_option("--dataset", rep_dataset, "Dataset for the density table");
  report->add_option("--split", rep_split, "Which split for the density table");
  report->add_option("--out", rep_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed())
      return cmd_synth(synth_out, synth_count, synth_size, synth_bands, synth_seed,
                       synth_quantiles, synth_ratio);
    if (prep->parsed()) return cmd_preprocess(prep_config, prep_out, prep_seed);
    if (train->parsed())
      return cmd_train(train_dataset, train_out, train_config, train_resume, train_seed,
                       train_epochs, train_alpha, train_quantiles, train_steps, train_batch,
                       train_tile, train_lr, train_depth, train_base, train_dropout);
    if (predict->parsed()) return cmd_predict(pred_ckpt, pred_input, pred_out);
    if (eval->parsed()) return cmd_evaluate(eval_ckpt, eval_dataset, eval_split, eval_out);
    if (report->parsed())
      return cmd_report(rep_a, rep_b, rep_regions, rep_names, rep_ckpt, rep_dataset, rep_split,
                        rep_out);
  } catch (const pmq::ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const pmq::DomainError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const pmq::DivergenceError& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  } catch (const pmq::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
