#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "s2m/core/errors.hpp"
#include "s2m/core/field.hpp"
#include "s2m/core/rng.hpp"

// Building blocks for the denoiser: parameter registry, generalized im2col
// convolutions (rank 2 or 3, kernel 3 per axis, zero padding), factor-2
// pooling/upsampling, SiLU, dense layers and the sinusoidal step embedding.
// Forward passes are pure; backward passes accumulate into ParamStore grads.
//
// Feature maps are (channels x batch*numel(dims)) matrices; image b occupies
// the column block [b*N, (b+1)*N) with pixels flattened row-major over dims.

namespace s2m::net {

template <typename S>
struct ParamStore {
  struct Entry {
    std::string name;
    MatX<S> w;
    MatX<S> g;
  };
  std::vector<Entry> entries;

  int add(const std::string& name, Index rows, Index cols) {
    Entry e;
    e.name = name;
    e.w = MatX<S>::Zero(rows, cols);
    e.g = MatX<S>::Zero(rows, cols);
    entries.push_back(std::move(e));
    return static_cast<int>(entries.size()) - 1;
  }

  MatX<S>& w(int h) { return entries[static_cast<std::size_t>(h)].w; }
  const MatX<S>& w(int h) const { return entries[static_cast<std::size_t>(h)].w; }
  MatX<S>& g(int h) { return entries[static_cast<std::size_t>(h)].g; }

  void zero_grads() {
    for (auto& e : entries) e.g.setZero();
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries) n += e.w.size();
    return n;
  }
};

template <typename S>
void init_normal(MatX<S>& w, Rng& rng, double stddev) {
  for (Index c = 0; c < w.cols(); ++c)
    for (Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<S>(rng.normal() * stddev);
}

inline int kernel_taps(int rank) { return rank == 2 ? 9 : 27; }

// Reusable per-thread buffers for the im2col matrices. Large fresh
// allocations go through mmap and pay page faults on every conv call;
// keeping one buffer per (slot, shape) removes that cost. Thread-local, so
// concurrent inference stays safe.
template <typename S>
MatX<S>& conv_scratch(int slot, Index rows, Index cols) {
  static thread_local std::map<std::tuple<int, Index, Index>, MatX<S>> pool;
  MatX<S>& m = pool[{slot, rows, cols}];
  if (m.rows() != rows || m.cols() != cols) m.resize(rows, cols);
  return m;
}

// Offset vector for tap k, row-major over axes, each component in {-1,0,1}.
inline void tap_offset(int rank, int k, int out[3]) {
  if (rank == 2) {
    out[0] = k / 3 - 1;
    out[1] = k % 3 - 1;
    out[2] = 0;
  } else {
    out[0] = k / 9 - 1;
    out[1] = (k / 3) % 3 - 1;
    out[2] = k % 3 - 1;
  }
}

// col(k*C + c, b*N + j) = x(c, b*N + neighbor(j, offset_k)), zero outside.
template <typename S>
void im2col(const MatX<S>& x, const Shape& dims, int batch, MatX<S>& col) {
  const int rank = static_cast<int>(dims.size());
  const Index c = x.rows();
  const Index n = numel(dims);
  const int taps = kernel_taps(rank);
  col.setZero(c * taps, x.cols());

  const Index depth = rank == 3 ? dims[0] : 1;
  const Index height = dims[static_cast<std::size_t>(rank - 2)];
  const Index width = dims[static_cast<std::size_t>(rank - 1)];
  for (int b = 0; b < batch; ++b) {
    const Index base = static_cast<Index>(b) * n;
    for (int k = 0; k < taps; ++k) {
      int off[3];
      tap_offset(rank, k, off);
      const Index dz = rank == 3 ? off[0] : 0;
      const Index dy = off[rank - 2];
      const Index dx = off[rank - 1];
      const Index x0 = std::max<Index>(0, -dx);
      const Index x1 = std::min<Index>(width, width - dx);
      if (x1 <= x0) continue;
      const Index run = x1 - x0;
      for (Index z = std::max<Index>(0, -dz); z < std::min<Index>(depth, depth - dz); ++z) {
        for (Index y = std::max<Index>(0, -dy); y < std::min<Index>(height, height - dy); ++y) {
          const Index dst = base + (z * height + y) * width + x0;
          const Index src = base + ((z + dz) * height + (y + dy)) * width + (x0 + dx);
          col.block(static_cast<Index>(k) * c, dst, c, run) = x.block(0, src, c, run);
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add column gradients back onto the input grid.
template <typename S>
void col2im_add(const MatX<S>& dcol, const Shape& dims, int batch, MatX<S>& dx) {
  const int rank = static_cast<int>(dims.size());
  const Index n = numel(dims);
  const int taps = kernel_taps(rank);
  const Index c = dcol.rows() / taps;

  const Index depth = rank == 3 ? dims[0] : 1;
  const Index height = dims[static_cast<std::size_t>(rank - 2)];
  const Index width = dims[static_cast<std::size_t>(rank - 1)];
  for (int b = 0; b < batch; ++b) {
    const Index base = static_cast<Index>(b) * n;
    for (int k = 0; k < taps; ++k) {
      int off[3];
      tap_offset(rank, k, off);
      const Index dz = rank == 3 ? off[0] : 0;
      const Index dy = off[rank - 2];
      const Index dx_ = off[rank - 1];
      const Index x0 = std::max<Index>(0, -dx_);
      const Index x1 = std::min<Index>(width, width - dx_);
      if (x1 <= x0) continue;
      const Index run = x1 - x0;
      for (Index z = std::max<Index>(0, -dz); z < std::min<Index>(depth, depth - dz); ++z) {
        for (Index y = std::max<Index>(0, -dy); y < std::min<Index>(height, height - dy); ++y) {
          const Index at = base + (z * height + y) * width + x0;
          const Index to = base + ((z + dz) * height + (y + dy)) * width + (x0 + dx_);
          dx.block(0, to, c, run) += dcol.block(static_cast<Index>(k) * c, at, c, run);
        }
      }
    }
  }
}

// Convolution with kernel 1 (pointwise) or 3 per axis, stride 1, zero pad.
template <typename S>
struct ConvSpec {
  int in_c = 0, out_c = 0, kernel = 3;
  int w = -1, b = -1;  // ParamStore handles
};

template <typename S>
ConvSpec<S> make_conv(ParamStore<S>& store, const std::string& name, int rank, int in_c, int out_c,
                      int kernel, Rng& rng, double init_scale) {
  ConvSpec<S> spec;
  spec.in_c = in_c;
  spec.out_c = out_c;
  spec.kernel = kernel;
  const int taps = kernel == 1 ? 1 : kernel_taps(rank);
  spec.w = store.add(name + ".w", out_c, static_cast<Index>(in_c) * taps);
  spec.b = store.add(name + ".b", out_c, 1);
  if (init_scale != 0.0)
    init_normal(store.w(spec.w), rng, init_scale * std::sqrt(2.0 / (in_c * taps)));
  return spec;
}

template <typename S>
MatX<S> conv_forward(const ParamStore<S>& store, const ConvSpec<S>& spec, const MatX<S>& x,
                     const Shape& dims, int batch) {
  MatX<S> y;
  if (spec.kernel == 1) {
    y.noalias() = store.w(spec.w) * x;
  } else {
    MatX<S>& col = conv_scratch<S>(0, x.rows() * kernel_taps(static_cast<int>(dims.size())), x.cols());
    im2col(x, dims, batch, col);
    y.noalias() = store.w(spec.w) * col;
  }
  y.colwise() += store.w(spec.b).col(0);
  return y;
}

template <typename S>
MatX<S> conv_backward(ParamStore<S>& store, const ConvSpec<S>& spec, const MatX<S>& x,
                      const Shape& dims, int batch, const MatX<S>& dy) {
  store.g(spec.b).col(0) += dy.rowwise().sum();
  MatX<S> dx;
  if (spec.kernel == 1) {
    store.g(spec.w).noalias() += dy * x.transpose();
    dx.noalias() = store.w(spec.w).transpose() * dy;
  } else {
    const int taps = kernel_taps(static_cast<int>(dims.size()));
    MatX<S>& col = conv_scratch<S>(0, x.rows() * taps, x.cols());
    im2col(x, dims, batch, col);
    store.g(spec.w).noalias() += dy * col.transpose();
    MatX<S>& dcol = conv_scratch<S>(1, dy.rows() * taps, dy.cols());
    dcol.noalias() = store.w(spec.w).transpose() * dy;
    dx = MatX<S>::Zero(x.rows(), x.cols());
    col2im_add(dcol, dims, batch, dx);
  }
  return dx;
}

template <typename S>
struct DenseSpec {
  int in = 0, out = 0;
  int w = -1, b = -1;
};

template <typename S>
DenseSpec<S> make_dense(ParamStore<S>& store, const std::string& name, int in, int out, Rng& rng,
                        double init_scale) {
  DenseSpec<S> spec;
  spec.in = in;
  spec.out = out;
  spec.w = store.add(name + ".w", out, in);
  spec.b = store.add(name + ".b", out, 1);
  if (init_scale != 0.0) init_normal(store.w(spec.w), rng, init_scale * std::sqrt(1.0 / in));
  return spec;
}

template <typename S>
MatX<S> dense_forward(const ParamStore<S>& store, const DenseSpec<S>& spec, const MatX<S>& x) {
  MatX<S> y;
  y.noalias() = store.w(spec.w) * x;
  y.colwise() += store.w(spec.b).col(0);
  return y;
}

template <typename S>
MatX<S> dense_backward(ParamStore<S>& store, const DenseSpec<S>& spec, const MatX<S>& x,
                       const MatX<S>& dy) {
  store.g(spec.b).col(0) += dy.rowwise().sum();
  store.g(spec.w).noalias() += dy * x.transpose();
  MatX<S> dx;
  dx.noalias() = store.w(spec.w).transpose() * dy;
  return dx;
}

template <typename S>
MatX<S> silu(const MatX<S>& x) {
  return (x.array() / (S(1) + (-x.array()).exp())).matrix();
}

template <typename S>
MatX<S> silu_backward(const MatX<S>& pre, const MatX<S>& dy) {
  auto sig = (S(1) / (S(1) + (-pre.array()).exp())).eval();
  return (dy.array() * sig * (S(1) + pre.array() * (S(1) - sig))).matrix();
}

// Mean over each non-overlapping 2^rank block.
template <typename S>
MatX<S> pool2_forward(const MatX<S>& x, const Shape& dims, int batch, Shape& half_dims) {
  const int rank = static_cast<int>(dims.size());
  half_dims = dims;
  for (auto& d : half_dims) {
    if (d % 2 != 0) throw ValidationError("pool2: dims must be even, got " + shape_str(dims));
    d /= 2;
  }
  const Index n = numel(dims), m = numel(half_dims);
  const Index depth = rank == 3 ? half_dims[0] : 1;
  const Index height = half_dims[static_cast<std::size_t>(rank - 2)];
  const Index width = half_dims[static_cast<std::size_t>(rank - 1)];
  const Index in_h = height * 2, in_w = width * 2;
  const S inv = S(1) / static_cast<S>(rank == 2 ? 4 : 8);

  MatX<S> y(x.rows(), static_cast<Index>(batch) * m);
  for (int b = 0; b < batch; ++b) {
    const Index ib = static_cast<Index>(b) * n, ob = static_cast<Index>(b) * m;
    Index o = 0;
    for (Index z = 0; z < depth; ++z) {
      for (Index y_ = 0; y_ < height; ++y_) {
        for (Index x_ = 0; x_ < width; ++x_, ++o) {
          auto acc = y.col(ob + o);
          acc.setZero();
          const Index zc = rank == 3 ? 2 * z : 0;
          const int zspan = rank == 3 ? 2 : 1;
          for (int az = 0; az < zspan; ++az)
            for (int ay = 0; ay < 2; ++ay)
              for (int ax = 0; ax < 2; ++ax)
                acc += x.col(ib + ((zc + az) * in_h + (2 * y_ + ay)) * in_w + (2 * x_ + ax));
          acc *= inv;
        }
      }
    }
  }
  return y;
}

template <typename S>
MatX<S> pool2_backward(const MatX<S>& dy, const Shape& dims, int batch) {
  const int rank = static_cast<int>(dims.size());
  Shape half_dims = dims;
  for (auto& d : half_dims) d /= 2;
  const Index n = numel(dims), m = numel(half_dims);
  const Index depth = rank == 3 ? half_dims[0] : 1;
  const Index height = half_dims[static_cast<std::size_t>(rank - 2)];
  const Index width = half_dims[static_cast<std::size_t>(rank - 1)];
  const Index in_h = height * 2, in_w = width * 2;
  const S inv = S(1) / static_cast<S>(rank == 2 ? 4 : 8);

  MatX<S> dx = MatX<S>::Zero(dy.rows(), static_cast<Index>(batch) * n);
  for (int b = 0; b < batch; ++b) {
    const Index ib = static_cast<Index>(b) * n, ob = static_cast<Index>(b) * m;
    Index o = 0;
    for (Index z = 0; z < depth; ++z) {
      for (Index y_ = 0; y_ < height; ++y_) {
        for (Index x_ = 0; x_ < width; ++x_, ++o) {
          const Index zc = rank == 3 ? 2 * z : 0;
          const int zspan = rank == 3 ? 2 : 1;
          for (int az = 0; az < zspan; ++az)
            for (int ay = 0; ay < 2; ++ay)
              for (int ax = 0; ax < 2; ++ax)
                dx.col(ib + ((zc + az) * in_h + (2 * y_ + ay)) * in_w + (2 * x_ + ax)) +=
                    inv * dy.col(ob + o);
        }
      }
    }
  }
  return dx;
}

// Nearest-neighbor doubling of every spatial dim.
template <typename S>
MatX<S> up2_forward(const MatX<S>& x, const Shape& dims, int batch, Shape& double_dims) {
  const int rank = static_cast<int>(dims.size());
  double_dims = dims;
  for (auto& d : double_dims) d *= 2;
  const Index n = numel(dims), m = numel(double_dims);
  const Index depth = rank == 3 ? double_dims[0] : 1;
  const Index height = double_dims[static_cast<std::size_t>(rank - 2)];
  const Index width = double_dims[static_cast<std::size_t>(rank - 1)];
  const Index src_h = height / 2, src_w = width / 2;

  MatX<S> y(x.rows(), static_cast<Index>(batch) * m);
  for (int b = 0; b < batch; ++b) {
    const Index ib = static_cast<Index>(b) * n, ob = static_cast<Index>(b) * m;
    Index o = 0;
    for (Index z = 0; z < depth; ++z) {
      for (Index y_ = 0; y_ < height; ++y_) {
        for (Index x_ = 0; x_ < width; ++x_, ++o) {
          const Index src = rank == 3 ? ((z / 2) * src_h + y_ / 2) * src_w + x_ / 2
                                      : (y_ / 2) * src_w + x_ / 2;
          y.col(ob + o) = x.col(ib + src);
        }
      }
    }
  }
  return y;
}

template <typename S>
MatX<S> up2_backward(const MatX<S>& dy, const Shape& dims, int batch) {
  const int rank = static_cast<int>(dims.size());
  Shape double_dims = dims;
  for (auto& d : double_dims) d *= 2;
  const Index n = numel(dims), m = numel(double_dims);
  const Index depth = rank == 3 ? double_dims[0] : 1;
  const Index height = double_dims[static_cast<std::size_t>(rank - 2)];
  const Index width = double_dims[static_cast<std::size_t>(rank - 1)];
  const Index src_h = height / 2, src_w = width / 2;

  MatX<S> dx = MatX<S>::Zero(dy.rows(), static_cast<Index>(batch) * n);
  for (int b = 0; b < batch; ++b) {
    const Index ib = static_cast<Index>(b) * n, ob = static_cast<Index>(b) * m;
    Index o = 0;
    for (Index z = 0; z < depth; ++z) {
      for (Index y_ = 0; y_ < height; ++y_) {
        for (Index x_ = 0; x_ < width; ++x_, ++o) {
          const Index src = rank == 3 ? ((z / 2) * src_h + y_ / 2) * src_w + x_ / 2
                                      : (y_ / 2) * src_w + x_ / 2;
          dx.col(ib + src) += dy.col(ob + o);
        }
      }
    }
  }
  return dx;
}

// Sinusoidal embedding of integer steps: half sin, half cos with geometric
// frequencies from 1 down to 1e-4.
template <typename S>
MatX<S> time_embedding(const std::vector<int>& ts, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ValidationError("time_embedding: dim must be even and >= 2");
  const int half = dim / 2;
  MatX<S> e(dim, static_cast<Index>(ts.size()));
  for (std::size_t b = 0; b < ts.size(); ++b) {
    const double t = static_cast<double>(ts[b]);
    for (int i = 0; i < half; ++i) {
      const double freq =
          half == 1 ? 1.0 : std::exp(-std::log(10000.0) * static_cast<double>(i) / (half - 1));
      e(i, static_cast<Index>(b)) = static_cast<S>(std::sin(t * freq));
      e(half + i, static_cast<Index>(b)) = static_cast<S>(std::cos(t * freq));
    }
  }
  return e;
}

}  // namespace s2m::net
