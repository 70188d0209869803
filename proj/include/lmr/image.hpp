#pragma once
#include <vector>

namespace lmr {

// Square RGB raster, values in [0,1], row-major, channel-interleaved.
struct Image {
  int side = 0;
  std::vector<double> rgb;  // side*side*3

  static Image filled(int side, double r, double g, double b);
  double& at(int y, int x, int c) { return rgb[(size_t(y) * side + size_t(x)) * 3 + size_t(c)]; }
  double at(int y, int x, int c) const {
    return rgb[(size_t(y) * side + size_t(x)) * 3 + size_t(c)];
  }
};

// Axis-aligned crop, [x0,x1) x [y0,y1).
Image crop(const Image& img, int x0, int y0, int x1, int y1);

// Bilinear resample to a new side.  Sample coordinates use half-pixel
// centers (src = (dst + 0.5) * scale - 0.5), so scale factor 1 is an exact
// pass-through and the identity test can assert bit equality.
Image bilinear_resize(const Image& img, int out_side);

}  // namespace lmr
