#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2m/core/errors.hpp"
#include "s2m/core/field.hpp"
#include "s2m/core/rng.hpp"
#include "s2m/net/layers.hpp"

// Noise-prediction network eps_theta(x_t, t): a fully-convolutional U-Net
// with residual blocks, additive skip connections and a sinusoidal step
// embedding projected into every block as a per-channel bias.

namespace s2m::net {

struct DenoiserConfig {
  int rank = 2;
  int in_channels = 1;
  int base_channels = 32;
  int depth = 3;  // number of down/up levels
  int time_embed_dim = 128;
  Shape patch_shape = {64, 64};

  void validate() const {
    if (rank != 2 && rank != 3) throw ValidationError("DenoiserConfig: rank must be 2 or 3");
    if (in_channels < 1 || base_channels < 1 || depth < 1)
      throw ValidationError("DenoiserConfig: counts must be positive");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
      throw ValidationError("DenoiserConfig: time_embed_dim must be even and >= 2");
    require_valid_shape(patch_shape, "DenoiserConfig.patch_shape");
    if (static_cast<int>(patch_shape.size()) != rank)
      throw ValidationError("DenoiserConfig: patch_shape rank does not match rank");
    const Index div = Index(1) << depth;
    for (Index d : patch_shape)
      if (d % div != 0)
        throw ValidationError("DenoiserConfig: patch edge " + std::to_string(d) +
                              " not divisible by 2^depth = " + std::to_string(div));
  }

  // Channel width per level; doubles with depth, capped at 4x base.
  int width(int level) const { return base_channels << std::min(level, 2); }
};

template <typename S>
struct UnetTrace {
  Shape dims;
  int batch = 0;
  MatX<S> x_in;
  MatX<S> e0, z1, e1, emb;
  struct Block {
    MatX<S> x, a, s;  // block input, pre-activation, post-activation
  };
  std::vector<Block> enc, dec;
  Block mid;
  std::vector<MatX<S>> down_in, up_in;  // inputs of the 1x1 projections
  MatX<S> head_in;
};

template <typename S>
class TimeUnet {
 public:
  TimeUnet(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, 0x756e6574ull));  // "unet"
    const int d = cfg_.depth;
    temb1_ = make_dense(store_, "temb.fc1", cfg_.time_embed_dim, cfg_.time_embed_dim, rng, 1.0);
    temb2_ = make_dense(store_, "temb.fc2", cfg_.time_embed_dim, cfg_.time_embed_dim, rng, 1.0);
    stem_ = make_conv(store_, "stem", cfg_.rank, cfg_.in_channels, cfg_.width(0), 3, rng, 1.0);
    for (int l = 0; l < d; ++l) {
      enc_.push_back(make_block("enc" + std::to_string(l), cfg_.width(l), rng));
      down_.push_back(make_conv(store_, "down" + std::to_string(l), cfg_.rank, cfg_.width(l),
                                cfg_.width(l + 1), 1, rng, 1.0));
    }
    mid_ = make_block("mid", cfg_.width(d), rng);
    for (int l = d - 1; l >= 0; --l) {
      up_.push_back(make_conv(store_, "up" + std::to_string(l), cfg_.rank, cfg_.width(l + 1),
                              cfg_.width(l), 1, rng, 1.0));
      dec_.push_back(make_block("dec" + std::to_string(l), cfg_.width(l), rng));
    }
    // Small head so the initial prediction is near zero.
    head_ = make_conv(store_, "head", cfg_.rank, cfg_.width(0), cfg_.in_channels, 3, rng, 0.01);
  }

  const DenoiserConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return store_; }
  const ParamStore<S>& params() const { return store_; }

  // Any spatial dims divisible by 2^depth are accepted (fully convolutional).
  void validate_dims(const Shape& dims) const {
    if (static_cast<int>(dims.size()) != cfg_.rank)
      throw ValidationError("denoiser: input rank " + std::to_string(dims.size()) +
                            " does not match configured rank " + std::to_string(cfg_.rank));
    const Index div = Index(1) << cfg_.depth;
    for (Index d : dims)
      if (d < div || d % div != 0)
        throw ValidationError("denoiser: input shape " + shape_str(dims) +
                              " not divisible by 2^depth = " + std::to_string(div));
  }

  // x: (in_channels x batch*numel(dims)). Returns eps_hat of the same layout.
  MatX<S> forward(const MatX<S>& x, const Shape& dims, int batch, const std::vector<int>& ts,
                  UnetTrace<S>* trace = nullptr) const {
    validate_dims(dims);
    if (batch < 1 || static_cast<int>(ts.size()) != batch)
      throw ValidationError("denoiser: batch/ts mismatch");
    for (int t : ts)
      if (t < 1) throw ValidationError("denoiser: step index must be >= 1");
    if (x.rows() != cfg_.in_channels || x.cols() != static_cast<Index>(batch) * numel(dims))
      throw ValidationError("denoiser: input matrix does not match (channels, batch*numel)");

    if (trace) {
      trace->dims = dims;
      trace->batch = batch;
      trace->x_in = x;
      trace->enc.resize(static_cast<std::size_t>(cfg_.depth));
      trace->dec.resize(static_cast<std::size_t>(cfg_.depth));
      trace->down_in.resize(static_cast<std::size_t>(cfg_.depth));
      trace->up_in.resize(static_cast<std::size_t>(cfg_.depth));
    }

    MatX<S> e0 = time_embedding<S>(ts, cfg_.time_embed_dim);
    MatX<S> z1 = dense_forward(store_, temb1_, e0);
    MatX<S> e1 = silu(z1);
    MatX<S> emb = dense_forward(store_, temb2_, e1);
    if (trace) {
      trace->e0 = e0;
      trace->z1 = z1;
      trace->e1 = e1;
      trace->emb = emb;
    }

    Shape cur = dims;
    MatX<S> h = conv_forward(store_, stem_, x, cur, batch);
    std::vector<MatX<S>> skips(static_cast<std::size_t>(cfg_.depth));
    for (int l = 0; l < cfg_.depth; ++l) {
      h = block_forward(enc_[static_cast<std::size_t>(l)], h, cur, batch, emb,
                        trace ? &trace->enc[static_cast<std::size_t>(l)] : nullptr);
      skips[static_cast<std::size_t>(l)] = h;
      Shape half;
      MatX<S> pooled = pool2_forward(h, cur, batch, half);
      if (trace) trace->down_in[static_cast<std::size_t>(l)] = pooled;
      h = conv_forward(store_, down_[static_cast<std::size_t>(l)], pooled, half, batch);
      cur = half;
    }
    h = block_forward(mid_, h, cur, batch, emb, trace ? &trace->mid : nullptr);
    for (int i = 0; i < cfg_.depth; ++i) {
      const int l = cfg_.depth - 1 - i;
      Shape doubled;
      MatX<S> up = up2_forward(h, cur, batch, doubled);
      cur = doubled;
      if (trace) trace->up_in[static_cast<std::size_t>(l)] = up;
      h = conv_forward(store_, up_[static_cast<std::size_t>(i)], up, cur, batch);
      h += skips[static_cast<std::size_t>(l)];
      h = block_forward(dec_[static_cast<std::size_t>(i)], h, cur, batch, emb,
                        trace ? &trace->dec[static_cast<std::size_t>(i)] : nullptr);
    }
    if (trace) trace->head_in = h;
    return conv_forward(store_, head_, h, cur, batch);
  }

  // Accumulates parameter gradients for d(loss)/d(output) = dout.
  void backward(const UnetTrace<S>& trace, const MatX<S>& dout) {
    const int batch = trace.batch;
    Shape cur = trace.dims;  // full resolution
    MatX<S> demb = MatX<S>::Zero(cfg_.time_embed_dim, batch);

    MatX<S> dh = conv_backward(store_, head_, trace.head_in, cur, batch, dout);
    std::vector<MatX<S>> dskips(static_cast<std::size_t>(cfg_.depth));
    for (int i = cfg_.depth - 1; i >= 0; --i) {
      const int l = cfg_.depth - 1 - i;
      dh = block_backward(dec_[static_cast<std::size_t>(i)],
                          trace.dec[static_cast<std::size_t>(i)], cur, batch, dh, trace.emb, demb);
      dskips[static_cast<std::size_t>(l)] = dh;
      dh = conv_backward(store_, up_[static_cast<std::size_t>(i)],
                         trace.up_in[static_cast<std::size_t>(l)], cur, batch, dh);
      dh = up2_backward(dh, shape_div2(cur), batch);
      cur = shape_div2(cur);
    }
    dh = block_backward(mid_, trace.mid, cur, batch, dh, trace.emb, demb);
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      dh = conv_backward(store_, down_[static_cast<std::size_t>(l)],
                         trace.down_in[static_cast<std::size_t>(l)], cur, batch, dh);
      cur = shape_mul2(cur);
      dh = pool2_backward(dh, cur, batch);
      dh += dskips[static_cast<std::size_t>(l)];
      dh = block_backward(enc_[static_cast<std::size_t>(l)],
                          trace.enc[static_cast<std::size_t>(l)], cur, batch, dh, trace.emb, demb);
    }
    conv_backward(store_, stem_, trace.x_in, cur, batch, dh);

    MatX<S> de1 = dense_backward(store_, temb2_, trace.e1, demb);
    MatX<S> dz1 = silu_backward(trace.z1, de1);
    dense_backward(store_, temb1_, trace.e0, dz1);
  }

  // Inference on one image; pure function of (parameters, x_t, t).
  Field<S> denoise(const Field<S>& x_t, int t) const {
    if (t < 1) throw ValidationError("denoise: step index must be >= 1");
    if (cfg_.in_channels != 1) throw ValidationError("denoise: field entry point is single-channel");
    validate_dims(x_t.shape);
    MatX<S> x(1, x_t.size());
    x.row(0) = x_t.v.matrix().transpose();
    MatX<S> y = forward(x, x_t.shape, 1, {t});
    Field<S> out(x_t.shape, x_t.range);
    out.v = y.row(0).transpose().array();
    return out;
  }

 private:
  struct Block {
    ConvSpec<S> conv1, conv2;
    DenseSpec<S> tproj;
  };

  Block make_block(const std::string& name, int channels, Rng& rng) {
    Block b;
    b.conv1 = make_conv(store_, name + ".conv1", cfg_.rank, channels, channels, 3, rng, 1.0);
    b.tproj = make_dense(store_, name + ".tproj", cfg_.time_embed_dim, channels, rng, 1.0);
    // Zero-init the closing conv so each block starts as the identity.
    b.conv2 = make_conv(store_, name + ".conv2", cfg_.rank, channels, channels, 3, rng, 0.0);
    return b;
  }

  // y = x + conv2(silu(conv1(x) + tproj(emb)))
  MatX<S> block_forward(const Block& blk, const MatX<S>& x, const Shape& dims, int batch,
                        const MatX<S>& emb, typename UnetTrace<S>::Block* tr) const {
    const Index n = numel(dims);
    MatX<S> a = conv_forward(store_, blk.conv1, x, dims, batch);
    MatX<S> tb = dense_forward(store_, blk.tproj, emb);  // (C x batch)
    for (int b = 0; b < batch; ++b)
      a.middleCols(static_cast<Index>(b) * n, n).colwise() += tb.col(b);
    MatX<S> s = silu(a);
    MatX<S> h = conv_forward(store_, blk.conv2, s, dims, batch);
    h += x;
    if (tr) {
      tr->x = x;
      tr->a = a;
      tr->s = s;
    }
    return h;
  }

  MatX<S> block_backward(const Block& blk, const typename UnetTrace<S>::Block& tr,
                         const Shape& dims, int batch, const MatX<S>& dy, const MatX<S>& emb,
                         MatX<S>& demb) {
    const Index n = numel(dims);
    MatX<S> ds = conv_backward(store_, blk.conv2, tr.s, dims, batch, dy);
    MatX<S> da = silu_backward(tr.a, ds);
    MatX<S> dtb(da.rows(), batch);
    for (int b = 0; b < batch; ++b)
      dtb.col(b) = da.middleCols(static_cast<Index>(b) * n, n).rowwise().sum();
    demb += dense_backward(store_, blk.tproj, emb, dtb);
    MatX<S> dx = conv_backward(store_, blk.conv1, tr.x, dims, batch, da);
    dx += dy;  // residual branch
    return dx;
  }

  static Shape shape_div2(Shape s) {
    for (auto& d : s) d /= 2;
    return s;
  }
  static Shape shape_mul2(Shape s) {
    for (auto& d : s) d *= 2;
    return s;
  }

  DenoiserConfig cfg_;
  ParamStore<S> store_;
  DenseSpec<S> temb1_, temb2_;
  ConvSpec<S> stem_, head_;
  std::vector<Block> enc_, dec_;
  Block mid_;
  std::vector<ConvSpec<S>> down_, up_;
};

}  // namespace s2m::net
