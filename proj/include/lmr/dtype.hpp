#pragma once
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace lmr {

enum class DType : uint8_t { f32 = 0, f64 = 1 };

inline size_t dtype_size(DType dt) { return dt == DType::f32 ? 4 : 8; }

inline const char* dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

inline DType dtype_from_name(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw std::runtime_error("dtype: unknown name '" + s + "'");
}

// Calls f with a value of the element type so generic lambdas can deduce T.
template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::f64) return f(double{});
  return f(float{});
}

}  // namespace lmr
