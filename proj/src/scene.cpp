#include "lmr/scene.hpp"

#include <cmath>

#include "lmr/errors.hpp"

namespace lmr {
namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kPalette[kNumColors] = {
    {0.90, 0.15, 0.15},  // red
    {0.15, 0.80, 0.20},  // green
    {0.20, 0.35, 0.95},  // blue
    {0.95, 0.90, 0.20},  // yellow
    {0.60, 0.25, 0.85},  // purple
    {0.95, 0.55, 0.10},  // orange
    {0.15, 0.85, 0.85},  // cyan
    {0.92, 0.92, 0.92},  // white
};

const char* kColorNames[kNumColors] = {"red",    "green",  "blue", "yellow",
                                       "purple", "orange", "cyan", "white"};

bool inside_shape(Shape s, double x, double y, double cell) {
  // x, y in [0, cell) local pixel-center coordinates
  double h = cell / 2.0;
  switch (s) {
    case Shape::square:
      return x >= cell * 0.125 && x < cell * 0.875 && y >= cell * 0.125 && y < cell * 0.875;
    case Shape::circle: {
      double dx = x - h, dy = y - h, rad = cell * 0.42;
      return dx * dx + dy * dy <= rad * rad;
    }
    case Shape::triangle: {
      if (y < cell * 0.125 || y >= cell * 0.875) return false;
      double t = (y - cell * 0.125) / (cell * 0.75);  // 0 at apex row, 1 at base
      double half = cell * (0.08 + 0.40 * t);
      return std::abs(x - h) <= half;
    }
  }
  return false;
}

}  // namespace

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::circle: return "circle";
    case Shape::square: return "square";
    case Shape::triangle: return "triangle";
  }
  throw DataError("scene: bad shape value");
}

Shape shape_from_name(const std::string& name) {
  if (name == "circle") return Shape::circle;
  if (name == "square") return Shape::square;
  if (name == "triangle") return Shape::triangle;
  throw DataError("scene: unknown shape '" + name + "'");
}

const char* color_name(int color) {
  if (color < 0 || color >= kNumColors) throw DataError("scene: color index out of range");
  return kColorNames[color];
}

int color_from_name(const std::string& name) {
  for (int i = 0; i < kNumColors; ++i)
    if (name == kColorNames[i]) return i;
  throw DataError("scene: unknown color '" + name + "'");
}

bool Scene::occupied(int r, int c) const { return at(r, c) != nullptr; }

const SceneObject* Scene::at(int r, int c) const {
  for (const auto& o : objects)
    if (o.r == r && o.c == c) return &o;
  return nullptr;
}

Image render_scene(const Scene& s, int image_side) {
  if (s.g <= 0 || image_side <= 0 || image_side % s.g != 0)
    throw DataError("render_scene: image side must be a positive multiple of the scene grid");
  for (const auto& o : s.objects) {
    if (o.r < 0 || o.r >= s.g || o.c < 0 || o.c >= s.g)
      throw DataError("render_scene: object outside the grid");
    if (o.color < 0 || o.color >= kNumColors) throw DataError("render_scene: bad color");
  }
  Image img = Image::filled(image_side, 0.08, 0.08, 0.10);
  double cell = double(image_side) / s.g;
  for (const auto& o : s.objects) {
    const Rgb& col = kPalette[o.color];
    int y0 = int(o.r * cell), x0 = int(o.c * cell);
    for (int y = 0; y < (int)cell; ++y)
      for (int x = 0; x < (int)cell; ++x) {
        if (!inside_shape(o.shape, x + 0.5, y + 0.5, cell)) continue;
        img.at(y0 + y, x0 + x, 0) = col.r;
        img.at(y0 + y, x0 + x, 1) = col.g;
        img.at(y0 + y, x0 + x, 2) = col.b;
      }
  }
  return img;
}

}  // namespace lmr
