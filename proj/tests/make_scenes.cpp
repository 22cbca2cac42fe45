// Test helper: writes a small raw-scene corpus (scenes + QA + ground truth +
// preprocessing config) for exercising the preprocess command end to end.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "pmq/geotiff.hpp"

using namespace pmq;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_scenes <out_dir>\n";
    return 1;
  }
  const fs::path root = argv[1];
  fs::create_directories(root / "scenes");
  fs::create_directories(root / "targets");

  RasterGrid src;
  src.origin_lon = -100.0;
  src.origin_lat = 40.0;
  src.pixel_size = 0.01;
  src.width = 24;
  src.height = 24;

  RasterGrid analysis;
  analysis.origin_lon = -100.0;
  analysis.origin_lat = 40.0;
  analysis.pixel_size = 0.015;
  analysis.width = 16;
  analysis.height = 16;

  const char* locations[2] = {"east", "west"};
  int scene_no = 0;
  for (int li = 0; li < 2; ++li) {
    for (int month = 1; month <= 3; ++month) {
      // two scenes per month so the composite actually averages
      for (int rep = 0; rep < 2; ++rep) {
        std::vector<Plane> bands(2, Plane(src.height, src.width));
        for (int y = 0; y < src.height; ++y) {
          for (int x = 0; x < src.width; ++x) {
            const double base = 20.0 + 5.0 * li + 2.0 * month + 0.3 * rep;
            bands[0].at(y, x) = static_cast<float>(base + 0.1 * x + 0.05 * y);
            bands[1].at(y, x) = static_cast<float>(0.5 * base + 0.2 * std::sin(0.3 * x));
          }
        }
        const std::string stem =
            std::string(locations[li]) + "_m" + std::to_string(month) + "_s" +
            std::to_string(rep);
        write_geotiff(root / "scenes" / (stem + ".tif"), src, bands);

        nlohmann::json meta = {{"year", 2014},
                               {"month", month},
                               {"location", locations[li]},
                               {"band_ids", {"B1", "B2"}}};
        if (scene_no % 3 == 0) {
          // per-pixel QA plane with a cloudy corner
          Plane conf(src.height, src.width, 0.1f);
          for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) conf.at(y, x) = 0.9f;
          write_geotiff(root / "scenes" / (stem + ".qa.tif"), src, {conf});
        } else {
          meta["scene_cloud_percent"] = 10.0;
        }
        std::ofstream(root / "scenes" / (stem + ".json")) << meta.dump(2) << "\n";
        ++scene_no;
      }

      Plane truth(analysis.height, analysis.width);
      for (int y = 0; y < analysis.height; ++y)
        for (int x = 0; x < analysis.width; ++x)
          truth.at(y, x) = static_cast<float>(15.0 + 4.0 * li + 1.5 * month + 0.2 * x);
      char name[64];
      std::snprintf(name, sizeof(name), "%s_2014-%02d.tif", locations[li], month);
      write_geotiff(root / "targets" / name, analysis, {truth});
    }
  }

  nlohmann::json cfg = {{"scenes_dir", (root / "scenes").string()},
                        {"targets_dir", (root / "targets").string()},
                        {"split_ratio", 0.8},
                        {"outlier_fraction", 0.01},
                        {"grid",
                         {{"origin_lon", analysis.origin_lon},
                          {"origin_lat", analysis.origin_lat},
                          {"pixel_size", analysis.pixel_size},
                          {"width", analysis.width},
                          {"height", analysis.height}}}};
  std::ofstream(root / "preprocess.json") << cfg.dump(2) << "\n";
  std::cout << "wrote raw corpus to " << root.string() << "\n";
  return 0;
}
