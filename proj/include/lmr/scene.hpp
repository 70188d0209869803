#pragma once
#include <string>
#include <vector>

#include "lmr/image.hpp"

namespace lmr {

enum class Shape : int { circle = 0, square = 1, triangle = 2 };

const char* shape_name(Shape s);
Shape shape_from_name(const std::string& name);
const char* color_name(int color);  // 0..7
int color_from_name(const std::string& name);
inline constexpr int kNumColors = 8;

struct SceneObject {
  int r = 0, c = 0;  // cell coordinates on the scene grid
  Shape shape = Shape::circle;
  int color = 0;
};

struct Scene {
  int g = 10;  // scene grid side, independent of the model patch grid
  std::vector<SceneObject> objects;

  bool occupied(int r, int c) const;
  const SceneObject* at(int r, int c) const;  // nullptr when empty
};

// Rasterizes onto a dark background; image_side must be a multiple of g.
Image render_scene(const Scene& s, int image_side);

}  // namespace lmr
