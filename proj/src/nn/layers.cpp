#include "avgn/nn/layers.hpp"

#include <cmath>

#include "avgn/numeric/errors.hpp"

namespace avgn::nn {

Linear::Linear(ParamStore& store, const std::string& name, const std::string& group,
               std::size_t in, std::size_t out, Rng& rng, bool use_bias)
    : in_(in), out_(out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = store.create(name + ".w", group, rng.uniform_array({in, out}, -bound, bound));
  if (use_bias) bias = store.create(name + ".b", group, NdArray({out}, 0.0));
}

Tensor Linear::operator()(const Tensor& x) const {
  if (x.shape().size() == 1) {
    Tensor y = (*this)(reshape(x, {1, x.dim(0)}));
    return reshape(y, {out_});
  }
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_bias(y, bias) : y;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, const std::string& group,
                     std::size_t dim) {
  gain = store.create(name + ".g", group, NdArray({dim}, 1.0));
  bias = store.create(name + ".b", group, NdArray({dim}, 0.0));
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name,
                                       const std::string& group, std::size_t dim,
                                       std::size_t heads, Rng& rng)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError(name + ": width " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  wq = Linear(store, name + ".q", group, dim, dim, rng);
  wk = Linear(store, name + ".k", group, dim, dim, rng);
  wv = Linear(store, name + ".v", group, dim, dim, rng);
  wo = Linear(store, name + ".o", group, dim, dim, rng);
}

Tensor MultiHeadAttention::attend(const Tensor& xq, const KeyValue& kv) const {
  return wo(scaled_dot_product_attention(wq(xq), kv.k, kv.v, heads_));
}

std::uint64_t MultiHeadAttention::attend_macs(std::size_t lq, std::size_t lk) const {
  return wq.macs(lq) + wo.macs(lq) + 2ULL * lq * lk * dim_;
}

TransformerLayer::TransformerLayer(ParamStore& store, const std::string& name,
                                   const std::string& group, std::size_t dim, std::size_t heads,
                                   std::size_t ffn, Rng& rng) {
  norm1 = LayerNorm(store, name + ".ln1", group, dim);
  attn = MultiHeadAttention(store, name + ".attn", group, dim, heads, rng);
  norm2 = LayerNorm(store, name + ".ln2", group, dim);
  fc1 = Linear(store, name + ".fc1", group, dim, ffn, rng);
  fc2 = Linear(store, name + ".fc2", group, ffn, dim, rng);
}

Tensor TransformerLayer::forward_with(const Tensor& x, const KeyValue& kv) const {
  Tensor h = add(x, attn.attend(norm1(x), kv));
  return add(h, fc2(relu(fc1(norm2(h)))));
}

std::uint64_t TransformerLayer::self_macs(std::size_t n) const {
  return attn.kv_macs(n) + attn.attend_macs(n, n) + ffn_macs(n);
}

GruCell::GruCell(ParamStore& store, const std::string& name, const std::string& group,
                 std::size_t in, std::size_t hidden, Rng& rng)
    : in_(in), hidden_(hidden) {
  xr_ = Linear(store, name + ".xr", group, in, hidden, rng);
  xz_ = Linear(store, name + ".xz", group, in, hidden, rng);
  xn_ = Linear(store, name + ".xn", group, in, hidden, rng);
  hr_ = Linear(store, name + ".hr", group, hidden, hidden, rng);
  hz_ = Linear(store, name + ".hz", group, hidden, hidden, rng);
  hn_ = Linear(store, name + ".hn", group, hidden, hidden, rng);
}

Tensor GruCell::operator()(const Tensor& x, const Tensor& h) const {
  Tensor r = sigmoid(add(xr_(x), hr_(h)));
  Tensor z = sigmoid(add(xz_(x), hz_(h)));
  Tensor n = tanh(add(xn_(x), mul(r, hn_(h))));
  // (1 - z) * n + z * h
  return add(mul(add_scalar(scale(z, -1.0), 1.0), n), mul(z, h));
}

ConvStack::ConvStack(ParamStore& store, const std::string& name, const std::string& group,
                     std::size_t in_channels, const std::vector<ConvStage>& stages, Rng& rng)
    : in_channels_(in_channels) {
  std::size_t cin = in_channels;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (s.stride == 0 || s.kernel == 0 || s.out_channels == 0) {
      throw ConfigError(name + ": degenerate conv stage");
    }
    const std::size_t fan_in = cin * s.kernel * s.kernel;
    // He-uniform, suits the ReLU after each stage.
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    const std::string prefix = name + ".conv" + std::to_string(i);
    Layer layer;
    layer.w = store.create(prefix + ".w", group,
                           rng.uniform_array({s.out_channels, cin, s.kernel, s.kernel}, -bound, bound));
    layer.b = store.create(prefix + ".b", group, NdArray({s.out_channels}, 0.0));
    layer.stage = s;
    layer.cin = cin;
    layers_.push_back(std::move(layer));
    cin = s.out_channels;
  }
}

Tensor ConvStack::operator()(const Tensor& x) const {
  if (x.shape().size() != 3 || x.dim(0) != in_channels_) {
    throw DimensionError("conv stack expects [" + std::to_string(in_channels_) +
                         " x H x W], got " + shape_str(x.shape()));
  }
  Tensor h = x;
  for (const auto& l : layers_) h = relu(conv2d(h, l.w, l.b, l.stage.stride, l.stage.pad));
  return h;
}

Shape ConvStack::output_shape(std::size_t h, std::size_t w) const {
  std::size_t c = in_channels_;
  for (const auto& l : layers_) {
    const auto& s = l.stage;
    if (h + 2 * s.pad < s.kernel || w + 2 * s.pad < s.kernel) {
      throw ConfigError("conv stage collapses spatial extent");
    }
    h = (h + 2 * s.pad - s.kernel) / s.stride + 1;
    w = (w + 2 * s.pad - s.kernel) / s.stride + 1;
    c = s.out_channels;
  }
  return {c, h, w};
}

std::uint64_t ConvStack::macs(std::size_t h, std::size_t w) const {
  std::uint64_t total = 0;
  for (const auto& l : layers_) {
    const auto& s = l.stage;
    h = (h + 2 * s.pad - s.kernel) / s.stride + 1;
    w = (w + 2 * s.pad - s.kernel) / s.stride + 1;
    total += static_cast<std::uint64_t>(l.cin) * s.out_channels * s.kernel * s.kernel * h * w;
  }
  return total;
}

NdArray sinusoidal_table(std::size_t rows, std::size_t dim) {
  NdArray table({rows, dim});
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double a = static_cast<double>(p) * freq;
      table.at(p, i) = (i % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  }
  return table;
}

}  // namespace avgn::nn
