#pragma once

// Minimal GeoTIFF I/O: little-endian classic TIFF, uncompressed float32
// planar strips, georeferencing via ModelPixelScale/ModelTiepoint and a
// GeoKey directory carrying the geographic CRS code. The reader additionally
// accepts uint8/uint16 samples and chunky interleave.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pmq/errors.hpp"
#include "pmq/raster.hpp"

namespace pmq {

struct GeoTiffImage {
  RasterGrid grid;
  std::vector<Plane> bands;
  Mask valid;  // false where any band is NaN / the declared nodata value
};

namespace tiffdetail {

enum : uint16_t {
  kTagImageWidth = 256,
  kTagImageLength = 257,
  kTagBitsPerSample = 258,
  kTagCompression = 259,
  kTagPhotometric = 262,
  kTagStripOffsets = 273,
  kTagSamplesPerPixel = 277,
  kTagRowsPerStrip = 278,
  kTagStripByteCounts = 279,
  kTagPlanarConfig = 284,
  kTagSampleFormat = 339,
  kTagModelPixelScale = 33550,
  kTagModelTiepoint = 33922,
  kTagGeoKeyDirectory = 34735,
  kTagGdalNodata = 42113,
};

enum : uint16_t {
  kTypeByte = 1,
  kTypeAscii = 2,
  kTypeShort = 3,
  kTypeLong = 4,
  kTypeFloat = 11,
  kTypeDouble = 12,
};

inline size_t type_size(uint16_t t) {
  switch (t) {
    case kTypeByte:
    case kTypeAscii:
      return 1;
    case kTypeShort:
      return 2;
    case kTypeLong:
    case kTypeFloat:
      return 4;
    case kTypeDouble:
      return 8;
    default:
      throw FormatError("tiff: unsupported field type " + std::to_string(t));
  }
}

struct Entry {
  uint16_t tag = 0;
  uint16_t type = 0;
  uint32_t count = 0;
  std::vector<uint8_t> payload;  // raw little-endian values
};

template <typename T>
void append_le(std::vector<uint8_t>& buf, T v) {
  for (size_t i = 0; i < sizeof(T); ++i)
    buf.push_back(static_cast<uint8_t>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

inline void append_double(std::vector<uint8_t>& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  append_le(buf, bits);
}

}  // namespace tiffdetail

inline void write_geotiff(const std::filesystem::path& path, const RasterGrid& grid,
                          const std::vector<Plane>& bands) {
  using namespace tiffdetail;
  grid.validate();
  if (bands.empty()) throw ShapeError("write_geotiff: no bands");
  for (const auto& b : bands)
    if (b.height != grid.height || b.width != grid.width)
      throw ShapeError("write_geotiff: band does not match grid");
  if (grid.crs != "EPSG:4326")
    throw MetadataError("write_geotiff: only geographic WGS84 output is supported");

  const uint32_t spp = static_cast<uint32_t>(bands.size());
  const uint32_t plane_bytes =
      static_cast<uint32_t>(grid.height) * static_cast<uint32_t>(grid.width) * 4;

  std::vector<Entry> entries;
  auto add = [&entries](uint16_t tag, uint16_t type, uint32_t count,
                        std::vector<uint8_t> payload) {
    entries.push_back({tag, type, count, std::move(payload)});
  };
  auto shorts = [](std::initializer_list<uint16_t> vs) {
    std::vector<uint8_t> p;
    for (uint16_t v : vs) append_le(p, v);
    return p;
  };
  auto longs1 = [](uint32_t v) {
    std::vector<uint8_t> p;
    append_le(p, v);
    return p;
  };

  add(kTagImageWidth, kTypeLong, 1, longs1(static_cast<uint32_t>(grid.width)));
  add(kTagImageLength, kTypeLong, 1, longs1(static_cast<uint32_t>(grid.height)));
  {
    std::vector<uint8_t> p;
    for (uint32_t i = 0; i < spp; ++i) append_le<uint16_t>(p, 32);
    add(kTagBitsPerSample, kTypeShort, spp, std::move(p));
  }
  add(kTagCompression, kTypeShort, 1, shorts({1}));
  add(kTagPhotometric, kTypeShort, 1, shorts({1}));
  add(kTagStripOffsets, kTypeLong, spp, {});  // patched below
  add(kTagSamplesPerPixel, kTypeShort, 1, shorts({static_cast<uint16_t>(spp)}));
  add(kTagRowsPerStrip, kTypeLong, 1, longs1(static_cast<uint32_t>(grid.height)));
  {
    std::vector<uint8_t> p;
    for (uint32_t i = 0; i < spp; ++i) append_le(p, plane_bytes);
    add(kTagStripByteCounts, kTypeLong, spp, std::move(p));
  }
  add(kTagPlanarConfig, kTypeShort, 1, shorts({2}));
  {
    std::vector<uint8_t> p;
    for (uint32_t i = 0; i < spp; ++i) append_le<uint16_t>(p, 3);  // IEEE float
    add(kTagSampleFormat, kTypeShort, spp, std::move(p));
  }
  {
    std::vector<uint8_t> p;
    append_double(p, grid.pixel_size);
    append_double(p, grid.pixel_size);
    append_double(p, 0.0);
    add(kTagModelPixelScale, kTypeDouble, 3, std::move(p));
  }
  {
    std::vector<uint8_t> p;
    append_double(p, 0.0);
    append_double(p, 0.0);
    append_double(p, 0.0);
    append_double(p, grid.origin_lon);
    append_double(p, grid.origin_lat);
    append_double(p, 0.0);
    add(kTagModelTiepoint, kTypeDouble, 6, std::move(p));
  }
  // GeoKey directory: model type geographic, raster type PixelIsArea, EPSG 4326
  add(kTagGeoKeyDirectory, kTypeShort, 16,
      shorts({1, 1, 0, 3, 1024, 0, 1, 2, 1025, 0, 1, 1, 2048, 0, 1, 4326}));
  {
    std::vector<uint8_t> p = {'n', 'a', 'n', 0};
    add(kTagGdalNodata, kTypeAscii, 4, std::move(p));
  }

  const uint32_t ifd_offset = 8;
  const uint32_t ifd_bytes = 2 + 12 * static_cast<uint32_t>(entries.size()) + 4;
  uint32_t aux_offset = ifd_offset + ifd_bytes;
  // lay out out-of-line payloads
  std::vector<uint8_t> aux;
  std::vector<uint32_t> value_words(entries.size(), 0);
  std::vector<std::vector<uint8_t>> inline_payload(entries.size());
  // data strips follow the aux block; strip offsets need the aux size first
  uint32_t aux_size = 0;
  for (const auto& e : entries) {
    const size_t sz = e.tag == kTagStripOffsets ? spp * 4 : e.payload.size();
    if (sz > 4) aux_size += static_cast<uint32_t>(sz);
  }
  const uint32_t data_offset = aux_offset + aux_size;
  for (size_t i = 0; i < entries.size(); ++i) {
    Entry& e = entries[i];
    if (e.tag == kTagStripOffsets) {
      e.payload.clear();
      for (uint32_t s = 0; s < spp; ++s) append_le(e.payload, data_offset + s * plane_bytes);
    }
    if (e.payload.size() > 4) {
      value_words[i] = aux_offset + static_cast<uint32_t>(aux.size());
      aux.insert(aux.end(), e.payload.begin(), e.payload.end());
    } else {
      inline_payload[i] = e.payload;
      inline_payload[i].resize(4, 0);
    }
  }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("write_geotiff: cannot open " + path.string());
  os.write("II", 2);
  uint16_t magic = 42;
  os.write(reinterpret_cast<const char*>(&magic), 2);
  os.write(reinterpret_cast<const char*>(&ifd_offset), 4);
  uint16_t nent = static_cast<uint16_t>(entries.size());
  os.write(reinterpret_cast<const char*>(&nent), 2);
  for (size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    os.write(reinterpret_cast<const char*>(&e.tag), 2);
    os.write(reinterpret_cast<const char*>(&e.type), 2);
    os.write(reinterpret_cast<const char*>(&e.count), 4);
    if (e.payload.size() > 4) {
      os.write(reinterpret_cast<const char*>(&value_words[i]), 4);
    } else {
      os.write(reinterpret_cast<const char*>(inline_payload[i].data()), 4);
    }
  }
  const uint32_t next_ifd = 0;
  os.write(reinterpret_cast<const char*>(&next_ifd), 4);
  os.write(reinterpret_cast<const char*>(aux.data()), static_cast<std::streamsize>(aux.size()));
  for (const auto& b : bands)
    os.write(reinterpret_cast<const char*>(b.values.data()),
             static_cast<std::streamsize>(b.values.size() * 4));
  if (!os) throw IoError("write_geotiff: write failed for " + path.string());
}

// Writes nodata pixels as NaN.
inline void write_geotiff(const std::filesystem::path& path, const RasterGrid& grid,
                          const std::vector<Plane>& bands, const Mask& valid) {
  std::vector<Plane> masked = bands;
  for (auto& b : masked)
    for (size_t p = 0; p < b.values.size(); ++p)
      if (!valid.valid[p]) b.values[p] = std::numeric_limits<float>::quiet_NaN();
  write_geotiff(path, grid, masked);
}

inline GeoTiffImage read_geotiff(const std::filesystem::path& path) {
  using namespace tiffdetail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("read_geotiff: cannot open " + path.string());
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 8) throw FormatError("read_geotiff: file too small");
  if (!(buf[0] == 'I' && buf[1] == 'I'))
    throw FormatError("read_geotiff: only little-endian TIFF is supported");
  auto rd16 = [&buf](size_t off) -> uint16_t {
    if (off + 2 > buf.size()) throw FormatError("read_geotiff: truncated");
    return static_cast<uint16_t>(buf[off] | (buf[off + 1] << 8));
  };
  auto rd32 = [&buf](size_t off) -> uint32_t {
    if (off + 4 > buf.size()) throw FormatError("read_geotiff: truncated");
    return static_cast<uint32_t>(buf[off]) | (static_cast<uint32_t>(buf[off + 1]) << 8) |
           (static_cast<uint32_t>(buf[off + 2]) << 16) |
           (static_cast<uint32_t>(buf[off + 3]) << 24);
  };
  if (rd16(2) != 42) throw FormatError("read_geotiff: bad TIFF magic");
  const uint32_t ifd = rd32(4);
  const uint16_t nent = rd16(ifd);

  struct RawEntry {
    uint16_t type;
    uint32_t count;
    size_t data_off;
  };
  std::map<uint16_t, RawEntry> tags;
  for (uint16_t i = 0; i < nent; ++i) {
    const size_t e = ifd + 2 + static_cast<size_t>(i) * 12;
    const uint16_t tag = rd16(e);
    const uint16_t type = rd16(e + 2);
    const uint32_t count = rd32(e + 4);
    const size_t total = type_size(type) * count;
    const size_t off = total <= 4 ? e + 8 : rd32(e + 8);
    tags[tag] = {type, count, off};
  }

  auto get_values = [&](uint16_t tag) -> std::vector<double> {
    auto it = tags.find(tag);
    if (it == tags.end()) return {};
    const RawEntry& e = it->second;
    std::vector<double> vals;
    vals.reserve(e.count);
    for (uint32_t i = 0; i < e.count; ++i) {
      const size_t o = e.data_off + static_cast<size_t>(i) * type_size(e.type);
      switch (e.type) {
        case kTypeByte:
        case kTypeAscii:
          if (o >= buf.size()) throw FormatError("read_geotiff: truncated tag data");
          vals.push_back(buf[o]);
          break;
        case kTypeShort:
          vals.push_back(rd16(o));
          break;
        case kTypeLong:
          vals.push_back(rd32(o));
          break;
        case kTypeFloat: {
          uint32_t bits = rd32(o);
          float f;
          std::memcpy(&f, &bits, 4);
          vals.push_back(f);
          break;
        }
        case kTypeDouble: {
          if (o + 8 > buf.size()) throw FormatError("read_geotiff: truncated tag data");
          uint64_t bits = 0;
          for (int k = 7; k >= 0; --k) bits = (bits << 8) | buf[o + static_cast<size_t>(k)];
          double d;
          std::memcpy(&d, &bits, 8);
          vals.push_back(d);
          break;
        }
        default:
          throw FormatError("read_geotiff: unsupported tag type");
      }
    }
    return vals;
  };
  auto get_scalar = [&](uint16_t tag, double fallback) -> double {
    auto v = get_values(tag);
    return v.empty() ? fallback : v[0];
  };

  const int width = static_cast<int>(get_scalar(kTagImageWidth, 0));
  const int height = static_cast<int>(get_scalar(kTagImageLength, 0));
  if (width <= 0 || height <= 0) throw FormatError("read_geotiff: missing image dimensions");
  const int spp = static_cast<int>(get_scalar(kTagSamplesPerPixel, 1));
  if (get_scalar(kTagCompression, 1) != 1)
    throw FormatError("read_geotiff: compressed TIFF is not supported");
  const auto bits_v = get_values(kTagBitsPerSample);
  const int bits = bits_v.empty() ? 8 : static_cast<int>(bits_v[0]);
  const auto fmt_v = get_values(kTagSampleFormat);
  const int sample_format = fmt_v.empty() ? 1 : static_cast<int>(fmt_v[0]);
  const int planar = static_cast<int>(get_scalar(kTagPlanarConfig, 1));
  const int rows_per_strip = static_cast<int>(get_scalar(kTagRowsPerStrip, height));
  const auto strip_offsets = get_values(kTagStripOffsets);
  if (strip_offsets.empty()) throw FormatError("read_geotiff: no strip offsets");

  // georeferencing
  const auto scale = get_values(kTagModelPixelScale);
  const auto tiepoint = get_values(kTagModelTiepoint);
  if (scale.size() < 2 || tiepoint.size() < 6)
    throw MetadataError("read_geotiff: missing georeferencing in " + path.string());
  RasterGrid grid;
  grid.width = width;
  grid.height = height;
  grid.pixel_size = scale[0];
  grid.origin_lon = tiepoint[3] - tiepoint[0] * scale[0];
  grid.origin_lat = tiepoint[4] + tiepoint[1] * scale[1];
  const auto geokeys = get_values(kTagGeoKeyDirectory);
  int epsg = 0;
  for (size_t i = 4; i + 3 < geokeys.size(); i += 4)
    if (static_cast<int>(geokeys[i]) == 2048) epsg = static_cast<int>(geokeys[i + 3]);
  grid.crs = epsg > 0 ? "EPSG:" + std::to_string(epsg) : "EPSG:4326";

  double nodata = std::numeric_limits<double>::quiet_NaN();
  {
    auto nd = get_values(kTagGdalNodata);
    std::string s;
    for (double c : nd) {
      if (c == 0) break;
      s.push_back(static_cast<char>(c));
    }
    if (!s.empty() && s != "nan") nodata = std::stod(s);
  }

  GeoTiffImage img;
  img.grid = grid;
  img.bands.assign(static_cast<size_t>(spp), Plane(height, width));
  img.valid = Mask(height, width, true);

  const size_t bytes_per_sample = static_cast<size_t>(bits) / 8;
  auto sample_at = [&](size_t off) -> float {
    if (off + bytes_per_sample > buf.size()) throw FormatError("read_geotiff: truncated data");
    if (bits == 32 && sample_format == 3) {
      uint32_t v = rd32(off);
      float f;
      std::memcpy(&f, &v, 4);
      return f;
    }
    if (bits == 16) return static_cast<float>(rd16(off));
    if (bits == 8) return static_cast<float>(buf[off]);
    throw FormatError("read_geotiff: unsupported sample layout");
  };

  const size_t row_bytes_chunky = static_cast<size_t>(width) * spp * bytes_per_sample;
  const size_t row_bytes_planar = static_cast<size_t>(width) * bytes_per_sample;
  const int strips_per_plane = (height + rows_per_strip - 1) / rows_per_strip;
  for (int y = 0; y < height; ++y) {
    const int strip_in_plane = y / rows_per_strip;
    const int row_in_strip = y % rows_per_strip;
    for (int b = 0; b < spp; ++b) {
      size_t base;
      if (planar == 2) {
        const size_t strip_idx = static_cast<size_t>(b) * strips_per_plane + strip_in_plane;
        if (strip_idx >= strip_offsets.size())
          throw FormatError("read_geotiff: strip index out of range");
        base = static_cast<size_t>(strip_offsets[strip_idx]) +
               static_cast<size_t>(row_in_strip) * row_bytes_planar;
      } else {
        if (static_cast<size_t>(strip_in_plane) >= strip_offsets.size())
          throw FormatError("read_geotiff: strip index out of range");
        base = static_cast<size_t>(strip_offsets[static_cast<size_t>(strip_in_plane)]) +
               static_cast<size_t>(row_in_strip) * row_bytes_chunky;
      }
      for (int x = 0; x < width; ++x) {
        const size_t off = planar == 2
                               ? base + static_cast<size_t>(x) * bytes_per_sample
                               : base + (static_cast<size_t>(x) * spp + b) * bytes_per_sample;
        const float v = sample_at(off);
        img.bands[static_cast<size_t>(b)].at(y, x) = v;
        if (std::isnan(v) || (!std::isnan(nodata) && v == static_cast<float>(nodata)))
          img.valid.at(y, x) = 0;
      }
    }
  }
  return img;
}

}  // namespace pmq
