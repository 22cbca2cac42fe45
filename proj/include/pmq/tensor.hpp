#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "pmq/errors.hpp"

namespace pmq {

// Single-channel 2-D value plane, row-major.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Plane() = default;
  Plane(int h, int w, float fill = 0.0f)
      : height(h), width(w), values(static_cast<size_t>(h) * w, fill) {}

  float& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  float at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return values.size(); }
  bool same_shape(const Plane& o) const { return height == o.height && width == o.width; }
};

// Boolean validity plane (1 = valid).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> valid;

  Mask() = default;
  Mask(int h, int w, bool fill = true)
      : height(h), width(w), valid(static_cast<size_t>(h) * w, fill ? 1 : 0) {}

  uint8_t& at(int y, int x) { return valid[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return valid[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return valid.size(); }

  size_t count_valid() const {
    return static_cast<size_t>(std::count(valid.begin(), valid.end(), uint8_t{1}));
  }
};

// Dense [channels, height, width] activation/parameter block for the network.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Tensor3() = default;
  Tensor3(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w),
        values(static_cast<size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
  size_t size() const { return values.size(); }

  Plane channel(int c) const {
    Plane p(height, width);
    std::copy_n(values.begin() + static_cast<size_t>(c) * height * width,
                static_cast<size_t>(height) * width, p.values.begin());
    return p;
  }
};

inline void require_same_shape(const Plane& a, const Plane& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch (" +
                     std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
}

inline void require_same_shape(const Plane& a, const Mask& m, const char* what) {
  if (a.height != m.height || a.width != m.width)
    throw ShapeError(std::string(what) + ": mask shape mismatch");
}

}  // namespace pmq
