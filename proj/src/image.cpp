#include "lmr/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lmr {

Image Image::filled(int side, double r, double g, double b) {
  Image img;
  img.side = side;
  img.rgb.resize(size_t(side) * size_t(side) * 3);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

Image crop(const Image& img, int x0, int y0, int x1, int y1) {
  if (x0 < 0 || y0 < 0 || x1 > img.side || y1 > img.side || x0 >= x1 || y0 >= y1)
    throw std::runtime_error("crop: box out of bounds");
  if (x1 - x0 != y1 - y0) throw std::runtime_error("crop: box must be square");
  Image out;
  out.side = x1 - x0;
  out.rgb.resize(size_t(out.side) * size_t(out.side) * 3);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < 3; ++c) out.at(y - y0, x - x0, c) = img.at(y, x, c);
  return out;
}

Image bilinear_resize(const Image& img, int out_side) {
  if (out_side <= 0) throw std::runtime_error("bilinear_resize: bad output side");
  if (out_side == img.side) return img;  // scale 1: exact pass-through
  Image out;
  out.side = out_side;
  out.rgb.resize(size_t(out_side) * size_t(out_side) * 3);
  double sc = double(img.side) / double(out_side);
  for (int oy = 0; oy < out_side; ++oy) {
    double sy = std::clamp((oy + 0.5) * sc - 0.5, 0.0, double(img.side - 1));
    int y0 = int(std::floor(sy));
    int y1 = std::min(y0 + 1, img.side - 1);
    double wy = sy - y0;
    for (int ox = 0; ox < out_side; ++ox) {
      double sx = std::clamp((ox + 0.5) * sc - 0.5, 0.0, double(img.side - 1));
      int x0 = int(std::floor(sx));
      int x1 = std::min(x0 + 1, img.side - 1);
      double wx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
        double bot = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
        out.at(oy, ox, c) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

}  // namespace lmr
