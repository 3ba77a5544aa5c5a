#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avgn/nn/params.hpp"
#include "avgn/numeric/ops.hpp"
#include "avgn/numeric/rng.hpp"

namespace avgn::nn {

// y = x W + b. x is [n x in] or [in].
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, const std::string& group, std::size_t in,
         std::size_t out, Rng& rng, bool bias = true);

  Tensor operator()(const Tensor& x) const;
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  std::uint64_t macs(std::size_t rows) const { return static_cast<std::uint64_t>(rows) * in_ * out_; }

  Tensor weight;
  Tensor bias;

 private:
  std::size_t in_ = 0, out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, const std::string& group, std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

  Tensor gain;
  Tensor bias;
};

struct KeyValue {
  Tensor k;
  Tensor v;
};

// Multi-head attention with q/k/v/output projections.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, const std::string& group,
                     std::size_t dim, std::size_t heads, Rng& rng);

  KeyValue project_kv(const Tensor& x) const { return {wk(x), wv(x)}; }
  Tensor attend(const Tensor& xq, const KeyValue& kv) const;
  Tensor operator()(const Tensor& xq, const Tensor& xkv) const { return attend(xq, project_kv(xkv)); }

  std::size_t dim() const { return dim_; }
  std::size_t heads() const { return heads_; }
  // q and output projections plus score/value products for Lq queries over
  // Lk keys, excluding the key/value projections.
  std::uint64_t attend_macs(std::size_t lq, std::size_t lk) const;
  std::uint64_t kv_macs(std::size_t lk) const { return wk.macs(lk) + wv.macs(lk); }

  Linear wq, wk, wv, wo;

 private:
  std::size_t dim_ = 0, heads_ = 1;
};

// Pre-norm encoder layer: x + MHA(LN x), then + FFN(LN x).
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParamStore& store, const std::string& name, const std::string& group,
                   std::size_t dim, std::size_t heads, std::size_t ffn, Rng& rng);

  Tensor operator()(const Tensor& x) const { return forward_with(x, project(x)); }
  // Keys/values of the normalized input, for reuse across queries.
  KeyValue project(const Tensor& x) const { return attn.project_kv(norm1(x)); }
  // Rows of x attend to an externally supplied key/value set.
  Tensor forward_with(const Tensor& x, const KeyValue& kv) const;

  std::uint64_t self_macs(std::size_t n) const;
  std::uint64_t ffn_macs(std::size_t n) const { return fc1.macs(n) + fc2.macs(n); }

  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  Linear fc1, fc2;
};

// Gated recurrent cell over vectors.
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParamStore& store, const std::string& name, const std::string& group, std::size_t in,
          std::size_t hidden, Rng& rng);

  Tensor operator()(const Tensor& x, const Tensor& h) const;
  Tensor initial_state() const { return Tensor(NdArray({hidden_}, 0.0)); }
  std::size_t hidden() const { return hidden_; }
  std::uint64_t macs() const { return 3ULL * (in_ + hidden_) * hidden_; }

 private:
  Linear xr_, xz_, xn_, hr_, hz_, hn_;
  std::size_t in_ = 0, hidden_ = 0;
};

struct ConvStage {
  std::size_t out_channels;
  std::size_t stride;
  std::size_t kernel = 3;
  std::size_t pad = 1;
};

// Conv + ReLU stack.
class ConvStack {
 public:
  ConvStack() = default;
  ConvStack(ParamStore& store, const std::string& name, const std::string& group,
            std::size_t in_channels, const std::vector<ConvStage>& stages, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  // Output shape for an input of [in_channels x h x w]; throws if a stage collapses.
  Shape output_shape(std::size_t h, std::size_t w) const;
  std::uint64_t macs(std::size_t h, std::size_t w) const;
  std::size_t in_channels() const { return in_channels_; }

 private:
  struct Layer {
    Tensor w, b;
    ConvStage stage;
    std::size_t cin;
  };
  std::vector<Layer> layers_;
  std::size_t in_channels_ = 0;
};

// Fixed sinusoidal table [rows x dim] indexed by position.
NdArray sinusoidal_table(std::size_t rows, std::size_t dim);

}  // namespace avgn::nn
