#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "s2m/core/errors.hpp"

namespace s2m {

using Index = Eigen::Index;

// Spatial dimension sizes, slowest axis first; the flattened layout keeps the
// last axis contiguous. Rank 2 (y, x) or rank 3 (z, y, x).
using Shape = std::vector<Index>;

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, 1>;

inline Index numel(const Shape& s) {
  Index n = s.empty() ? 0 : 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ")";
  return os.str();
}

inline void require_valid_shape(const Shape& s, const char* ctx) {
  if (s.size() != 2 && s.size() != 3)
    throw ValidationError(std::string(ctx) + ": rank must be 2 or 3, got rank " +
                          std::to_string(s.size()));
  for (Index d : s)
    if (d < 1) throw ValidationError(std::string(ctx) + ": non-positive dimension in " + shape_str(s));
}

// Nominal value domain of a field. Unit01 is the file/sketch domain [0,1];
// Model11 is the internal model domain [-1,1]. The tag tracks intent (noisy
// model-domain fields may exceed the interval).
enum class Range { Unit01, Model11 };

// Origin of a field in the two-domain setup: real images vs. mask-derived sketches.
enum class Domain { Image, Sketch };

// Dense scalar intensity field with explicit shape. Flat storage keeps the
// diffusion algebra expression-friendly (all element-wise math runs on `v`).
template <typename S>
struct Field {
  ArrX<S> v;
  Shape shape;
  Range range = Range::Unit01;

  Field() = default;
  Field(Shape sh, Range r = Range::Unit01) : v(numel(sh)), shape(std::move(sh)), range(r) {
    require_valid_shape(shape, "Field");
  }

  static Field zeros(Shape sh, Range r = Range::Unit01) {
    Field f(std::move(sh), r);
    f.v.setZero();
    return f;
  }
  static Field constant(Shape sh, S value, Range r = Range::Unit01) {
    Field f(std::move(sh), r);
    f.v.setConstant(value);
    return f;
  }

  Index rank() const { return static_cast<Index>(shape.size()); }
  Index size() const { return v.size(); }

  template <typename T>
  Field<T> cast() const {
    Field<T> out;
    out.v = v.template cast<T>();
    out.shape = shape;
    out.range = range;
    return out;
  }
};

// Integer instance-label field; 0 is background, instances are 1..K.
struct LabelMask {
  ArrX<std::int32_t> labels;
  Shape shape;

  LabelMask() = default;
  explicit LabelMask(Shape sh) : labels(numel(sh)), shape(std::move(sh)) {
    require_valid_shape(shape, "LabelMask");
    labels.setZero();
  }

  Index rank() const { return static_cast<Index>(shape.size()); }
  Index size() const { return labels.size(); }
};

inline int max_label(const LabelMask& m) {
  return m.size() == 0 ? 0 : static_cast<int>(m.labels.maxCoeff());
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* ctx) {
  if (a.shape != b.shape)
    throw ValidationError(std::string(ctx) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                          shape_str(b.shape));
}

template <typename S>
void require_finite(const Field<S>& f, const char* ctx) {
  if (!f.v.isFinite().all()) throw RuntimeError(std::string(ctx) + ": non-finite values");
}

// Row-major flat index helpers used by the simulators.
inline Index flat_index(const Shape& shape, Index y, Index x) { return y * shape[1] + x; }
inline Index flat_index(const Shape& shape, Index z, Index y, Index x) {
  return (z * shape[1] + y) * shape[2] + x;
}

}  // namespace s2m
