#include "avgn/numeric/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "avgn/numeric/errors.hpp"

namespace avgn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_mat(const NdArray& a, std::size_t rows, std::size_t cols) {
  return ConstMatMap(a.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap as_mat(NdArray& a, std::size_t rows, std::size_t cols) {
  return MatMap(a.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Wraps `value` in a Tensor and, if tracked, records `backward(grad_out)`.
template <class F>
Tensor finish(NdArray value, bool track, F&& backward) {
  Tensor out(std::move(value), track);
  if (track) {
    Tape::active()->record([out, fn = std::forward<F>(backward)]() {
      if (out.has_grad()) fn(out.node()->grad);
    });
  }
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Rows/columns view of a rank-1 or rank-2 tensor: rank-1 is one row.
std::pair<std::size_t, std::size_t> as_rows_cols(const Shape& s, const char* op) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(s));
}

template <class F>
Tensor unary(const Tensor& x, F&& f, auto&& df) {
  NdArray out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  const bool track = tracking({&x});
  NdArray saved = track ? out : NdArray();
  return finish(std::move(out), track,
                [x, saved = std::move(saved), df](const NdArray& g) {
                  NdArray dx(x.shape());
                  const auto& xv = x.value();
                  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = g[i] * df(xv[i], saved[i]);
                  x.accumulate_grad(dx);
                });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  NdArray out({m, n});
  as_mat(out, m, n).noalias() = as_mat(a.value(), m, k) * as_mat(b.value(), k, n);
  count_macs(static_cast<std::uint64_t>(m) * k * n);
  return finish(std::move(out), tracking({&a, &b}), [a, b, m, k, n](const NdArray& g) {
    const auto gm = as_mat(g, m, n);
    if (a.requires_grad()) {
      NdArray da({m, k});
      as_mat(da, m, k).noalias() = gm * as_mat(b.value(), k, n).transpose();
      a.accumulate_grad(da);
    }
    if (b.requires_grad()) {
      NdArray db({k, n});
      as_mat(db, k, n).noalias() = as_mat(a.value(), m, k).transpose() * gm;
      b.accumulate_grad(db);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  NdArray out({n, m});
  as_mat(out, n, m) = as_mat(a.value(), m, n).transpose();
  return finish(std::move(out), tracking({&a}), [a, m, n](const NdArray& g) {
    NdArray da({m, n});
    as_mat(da, m, n) = as_mat(g, n, m).transpose();
    a.accumulate_grad(da);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  NdArray out = a.value();
  out += b.value();
  return finish(std::move(out), tracking({&a, &b}), [a, b](const NdArray& g) {
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) b.accumulate_grad(g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  NdArray out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return finish(std::move(out), tracking({&a, &b}), [a, b](const NdArray& g) {
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) {
      NdArray db = g;
      for (auto& v : db.data()) v = -v;
      b.accumulate_grad(db);
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  NdArray out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return finish(std::move(out), tracking({&a, &b}), [a, b](const NdArray& g) {
    if (a.requires_grad()) {
      NdArray da = g;
      for (std::size_t i = 0; i < da.size(); ++i) da[i] *= b.value()[i];
      a.accumulate_grad(da);
    }
    if (b.requires_grad()) {
      NdArray db = g;
      for (std::size_t i = 0; i < db.size(); ++i) db[i] *= a.value()[i];
      b.accumulate_grad(db);
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const auto [rows, cols] = as_rows_cols(x.shape(), "add_bias");
  if (bias.shape() != Shape{cols}) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " for input " +
                         shape_str(x.shape()));
  }
  NdArray out = x.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return finish(std::move(out), tracking({&x, &bias}),
                [x, bias, rows, cols](const NdArray& g) {
                  if (x.requires_grad()) x.accumulate_grad(g);
                  if (bias.requires_grad()) {
                    NdArray db({cols});
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
                    bias.accumulate_grad(db);
                  }
                });
}

Tensor scale(const Tensor& a, double factor) {
  NdArray out = a.value();
  for (auto& v : out.data()) v *= factor;
  return finish(std::move(out), tracking({&a}), [a, factor](const NdArray& g) {
    NdArray da = g;
    for (auto& v : da.data()) v *= factor;
    a.accumulate_grad(da);
  });
}

Tensor add_scalar(const Tensor& a, double offset) {
  NdArray out = a.value();
  for (auto& v : out.data()) v += offset;
  return finish(std::move(out), tracking({&a}), [a](const NdArray& g) { a.accumulate_grad(g); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return finish(NdArray::scalar(total), tracking({&x}), [x](const NdArray& g) {
    x.accumulate_grad(NdArray(x.shape(), g[0]));
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return finish(NdArray::scalar(total / n), tracking({&x}), [x, n](const NdArray& g) {
    x.accumulate_grad(NdArray(x.shape(), g[0] / n));
  });
}

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  NdArray out({cols});
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
  for (auto& v : out.data()) v /= static_cast<double>(rows);
  return finish(std::move(out), tracking({&x}), [x, rows, cols](const NdArray& g) {
    NdArray dx({rows, cols});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] = g[c] / static_cast<double>(rows);
    x.accumulate_grad(dx);
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  NdArray out(s);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  const bool track = tracking({&x});
  NdArray saved = track ? out : NdArray();
  return finish(std::move(out), track,
                [x, y = std::move(saved), outer, inner, len](const NdArray& g) {
                  NdArray dx(x.shape());
                  for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t in = 0; in < inner; ++in) {
                      const std::size_t base = o * len * inner + in;
                      double dot = 0.0;
                      for (std::size_t j = 0; j < len; ++j)
                        dot += g[base + j * inner] * y[base + j * inner];
                      for (std::size_t j = 0; j < len; ++j) {
                        const std::size_t i = base + j * inner;
                        dx[i] = y[i] * (g[i] - dot);
                      }
                    }
                  }
                  x.accumulate_grad(dx);
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto [rows, cols] = as_rows_cols(x.shape(), "layer_norm");
  if (cols < 2) throw DimensionError("layer_norm: normalized axis must have length >= 2");
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols}) {
    throw DimensionError("layer_norm: affine parameters must be [" + std::to_string(cols) + "]");
  }
  NdArray out(x.shape());
  NdArray xhat(x.shape());
  std::vector<double> inv_std(rows);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.raw() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mu) * inv_std[r];
      xhat[r * cols + c] = h;
      out[r * cols + c] = gv[c] * h + bv[c];
    }
  }
  return finish(std::move(out), tracking({&x, &gain, &bias}),
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
                 cols](const NdArray& g) {
                  const auto& gv = gain.value();
                  if (x.requires_grad()) {
                    NdArray dx(x.shape());
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_d = 0.0, mean_dh = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double d = g[r * cols + c] * gv[c];
                        mean_d += d;
                        mean_dh += d * xhat[r * cols + c];
                      }
                      mean_d /= static_cast<double>(cols);
                      mean_dh /= static_cast<double>(cols);
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double d = g[r * cols + c] * gv[c];
                        dx[r * cols + c] = inv_std[r] * (d - mean_d - xhat[r * cols + c] * mean_dh);
                      }
                    }
                    x.accumulate_grad(dx);
                  }
                  if (gain.requires_grad() || bias.requires_grad()) {
                    NdArray dg({cols}), db({cols});
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c) {
                        dg[c] += g[r * cols + c] * xhat[r * cols + c];
                        db[c] += g[r * cols + c];
                      }
                    if (gain.requires_grad()) gain.accumulate_grad(dg);
                    if (bias.requires_grad()) bias.accumulate_grad(db);
                  }
                });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ArgumentError("concat: no inputs");
  const std::size_t rank = parts[0].shape().size();
  if (rank == 0 || rank > 2 || axis >= rank) {
    throw DimensionError("concat: unsupported rank/axis for " + shape_str(parts[0].shape()));
  }
  for (const auto& p : parts) {
    if (p.shape().size() != rank) throw DimensionError("concat: mixed ranks");
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  bool track = false;
  if (Tape::active()) {
    track = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  }
  if (rank == 1 || axis == 0) {
    // Contiguous blocks.
    Shape shape = parts[0].shape();
    std::size_t lead = 0;
    for (const auto& p : parts) {
      if (rank == 2 && p.dim(1) != shape[1]) throw DimensionError("concat rows: column mismatch");
      lead += p.dim(0);
    }
    shape[0] = lead;
    NdArray out(shape);
    std::size_t offset = 0;
    for (const auto& p : parts) {
      std::copy(p.value().data().begin(), p.value().data().end(), out.raw() + offset);
      offset += p.size();
    }
    return finish(std::move(out), track, [inputs](const NdArray& g) {
      std::size_t off = 0;
      for (const auto& p : inputs) {
        if (p.requires_grad()) {
          NdArray d(p.shape(), std::vector<double>(g.raw() + off, g.raw() + off + p.size()));
          p.accumulate_grad(d);
        }
        off += p.size();
      }
    });
  }
  const std::size_t rows = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != rows) throw DimensionError("concat columns: row mismatch");
    cols += p.dim(1);
  }
  NdArray out({rows, cols});
  std::size_t col_off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.value().raw() + r * pc, pc, out.raw() + r * cols + col_off);
    col_off += pc;
  }
  return finish(std::move(out), track, [inputs, rows, cols](const NdArray& g) {
    std::size_t off = 0;
    for (const auto& p : inputs) {
      const std::size_t pc = p.dim(1);
      if (p.requires_grad()) {
        NdArray d({rows, pc});
        for (std::size_t r = 0; r < rows; ++r)
          std::copy_n(g.raw() + r * cols + off, pc, d.raw() + r * pc);
        p.accumulate_grad(d);
      }
      off += pc;
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + shape_str(x.shape()));
  }
  const std::size_t cols = x.dim(1);
  NdArray out({end - begin, cols},
              std::vector<double>(x.value().raw() + begin * cols, x.value().raw() + end * cols));
  return finish(std::move(out), tracking({&x}), [x, begin, cols](const NdArray& g) {
    NdArray dx(x.shape());
    std::copy(g.data().begin(), g.data().end(), dx.raw() + begin * cols);
    x.accumulate_grad(dx);
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  if (rows.empty()) throw ArgumentError("gather_rows: empty index list");
  const std::size_t cols = x.dim(1);
  NdArray out({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) throw DimensionError("gather_rows: index out of range");
    std::copy_n(x.value().raw() + rows[i] * cols, cols, out.raw() + i * cols);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return finish(std::move(out), tracking({&x}), [x, idx, cols](const NdArray& g) {
    NdArray dx(x.shape());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < cols; ++c) dx[idx[i] * cols + c] += g[i * cols + c];
    x.accumulate_grad(dx);
  });
}

Tensor row(const Tensor& x, std::size_t r) {
  require_rank(x, 2, "row");
  if (r >= x.dim(0)) throw DimensionError("row: index out of range");
  const std::size_t cols = x.dim(1);
  NdArray out({cols}, std::vector<double>(x.value().raw() + r * cols,
                                          x.value().raw() + (r + 1) * cols));
  return finish(std::move(out), tracking({&x}), [x, r, cols](const NdArray& g) {
    NdArray dx(x.shape());
    std::copy_n(g.raw(), cols, dx.raw() + r * cols);
    x.accumulate_grad(dx);
  });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ArgumentError("stack_rows: no rows");
  const std::size_t cols = rows[0].size();
  std::vector<Tensor> inputs;
  inputs.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.shape() != Shape{cols}) throw DimensionError("stack_rows: rows must be equal-length vectors");
    inputs.push_back(r);
  }
  NdArray out({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(rows[i].value().raw(), cols, out.raw() + i * cols);
  bool track = Tape::active() &&
               std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  return finish(std::move(out), track, [inputs, cols](const NdArray& g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i].requires_grad()) continue;
      NdArray d({cols}, std::vector<double>(g.raw() + i * cols, g.raw() + (i + 1) * cols));
      inputs[i].accumulate_grad(d);
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  NdArray out = x.value().reshaped(std::move(shape));
  return finish(std::move(out), tracking({&x}), [x](const NdArray& g) {
    x.accumulate_grad(g.reshaped(x.shape()));
  });
}

Tensor cummax_rows(const Tensor& x) {
  require_rank(x, 2, "cummax_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  NdArray out({rows, cols});
  std::vector<std::size_t> arg(rows * cols);
  const auto& xv = x.value();
  for (std::size_t c = 0; c < cols; ++c) {
    out[c] = xv[c];
    arg[c] = 0;
  }
  for (std::size_t r = 1; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c, prev = (r - 1) * cols + c;
      if (xv[i] > out[prev]) {
        out[i] = xv[i];
        arg[i] = r;
      } else {
        out[i] = out[prev];
        arg[i] = arg[prev];
      }
    }
  }
  return finish(std::move(out), tracking({&x}), [x, arg = std::move(arg), rows, cols](const NdArray& g) {
    NdArray dx(x.shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) dx[arg[r * cols + c] * cols + c] += g[r * cols + c];
    x.accumulate_grad(dx);
  });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad) {
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) {
    throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " for input " +
                         shape_str(x.shape()));
  }
  if (b.shape() != Shape{cout}) throw DimensionError("conv2d: bias shape");
  if (stride == 0) throw ArgumentError("conv2d: stride must be positive");
  if (h + 2 * pad < kh || wd + 2 * pad < kw) throw DimensionError("conv2d: kernel larger than input");
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
  const std::size_t patch = cin * kh * kw, npix = ho * wo;

  NdArray cols({patch, npix});
  const auto& xv = x.value();
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const std::size_t prow = (c * kh + ky) * kw + kx;
        double* dst = cols.raw() + prow * npix;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            const bool inside = iy >= 0 && iy < static_cast<long>(h) && ix >= 0 &&
                                ix < static_cast<long>(wd);
            dst[oy * wo + ox] = inside ? xv[(c * h + static_cast<std::size_t>(iy)) * wd +
                                            static_cast<std::size_t>(ix)]
                                       : 0.0;
          }
        }
      }

  NdArray out({cout, ho, wo});
  auto om = as_mat(out, cout, npix);
  om.noalias() = as_mat(w.value(), cout, patch) * as_mat(cols, patch, npix);
  for (std::size_t o = 0; o < cout; ++o) om.row(static_cast<Eigen::Index>(o)).array() += b.value()[o];
  count_macs(static_cast<std::uint64_t>(cout) * patch * npix);

  const bool track = tracking({&x, &w, &b});
  if (!track) cols = NdArray();
  return finish(std::move(out), track,
                [x, w, b, cols = std::move(cols), cin, h, wd, cout, kh, kw, ho, wo, stride, pad,
                 patch, npix](const NdArray& g) {
                  const auto gm = as_mat(g, cout, npix);
                  if (w.requires_grad()) {
                    NdArray dw(w.shape());
                    as_mat(dw, cout, patch).noalias() = gm * as_mat(cols, patch, npix).transpose();
                    w.accumulate_grad(dw);
                  }
                  if (b.requires_grad()) {
                    NdArray db({cout});
                    for (std::size_t o = 0; o < cout; ++o) db[o] = gm.row(static_cast<Eigen::Index>(o)).sum();
                    b.accumulate_grad(db);
                  }
                  if (x.requires_grad()) {
                    NdArray dcols({patch, npix});
                    as_mat(dcols, patch, npix).noalias() =
                        as_mat(w.value(), cout, patch).transpose() * gm;
                    NdArray dx(x.shape());
                    for (std::size_t c = 0; c < cin; ++c)
                      for (std::size_t ky = 0; ky < kh; ++ky)
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                          const std::size_t prow = (c * kh + ky) * kw + kx;
                          const double* src = dcols.raw() + prow * npix;
                          for (std::size_t oy = 0; oy < ho; ++oy) {
                            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                            if (iy < 0 || iy >= static_cast<long>(h)) continue;
                            for (std::size_t ox = 0; ox < wo; ++ox) {
                              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                              if (ix < 0 || ix >= static_cast<long>(wd)) continue;
                              dx[(c * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix)] +=
                                  src[oy * wo + ox];
                            }
                          }
                        }
                    x.accumulate_grad(dx);
                  }
                });
}

Tensor spatial_mean(const Tensor& x) {
  require_rank(x, 3, "spatial_mean");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  NdArray out({c});
  const auto& xv = x.value();
  for (std::size_t i = 0; i < c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += xv[i * hw + j];
    out[i] = s / static_cast<double>(hw);
  }
  return finish(std::move(out), tracking({&x}), [x, c, hw](const NdArray& g) {
    NdArray dx(x.shape());
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < hw; ++j) dx[i * hw + j] = g[i] / static_cast<double>(hw);
    x.accumulate_grad(dx);
  });
}

Tensor map_to_tokens(const Tensor& x) {
  require_rank(x, 3, "map_to_tokens");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  return transpose(reshape(x, {c, hw}));
}

Tensor tokens_to_map(const Tensor& x, std::size_t height, std::size_t width) {
  require_rank(x, 2, "tokens_to_map");
  if (x.dim(0) != height * width) throw DimensionError("tokens_to_map: token count mismatch");
  const std::size_t c = x.dim(1);
  return reshape(transpose(x), {c, height, width});
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    std::size_t heads) {
  require_rank(q, 2, "attention q");
  require_rank(k, 2, "attention k");
  require_rank(v, 2, "attention v");
  const std::size_t lq = q.dim(0), lk = k.dim(0), d = q.dim(1);
  if (k.dim(1) != d || v.dim(1) != d || v.dim(0) != lk) {
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()));
  }
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto qm = as_mat(q.value(), lq, d);
  const auto km = as_mat(k.value(), lk, d);
  const auto vm = as_mat(v.value(), lk, d);
  NdArray out({lq, d});
  auto om = as_mat(out, lq, d);
  std::vector<RowMat> probs(heads);
  const auto ed = static_cast<Eigen::Index>(dh);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const auto c0 = static_cast<Eigen::Index>(hd * dh);
    RowMat scores = (qm.middleCols(c0, ed) * km.middleCols(c0, ed).transpose()) * inv_scale;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      const double mx = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - mx).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    om.middleCols(c0, ed).noalias() = scores * vm.middleCols(c0, ed);
    probs[hd] = std::move(scores);
  }
  count_macs(2ULL * lq * lk * d);
  const bool track = tracking({&q, &k, &v});
  if (!track) probs.clear();
  return finish(std::move(out), track,
                [q, k, v, probs = std::move(probs), heads, lq, lk, d, dh, inv_scale](const NdArray& g) {
                  const auto qm = as_mat(q.value(), lq, d);
                  const auto km = as_mat(k.value(), lk, d);
                  const auto vm = as_mat(v.value(), lk, d);
                  const auto gm = as_mat(g, lq, d);
                  NdArray dq({lq, d}), dk({lk, d}), dv({lk, d});
                  auto dqm = as_mat(dq, lq, d);
                  auto dkm = as_mat(dk, lk, d);
                  auto dvm = as_mat(dv, lk, d);
                  const auto ed = static_cast<Eigen::Index>(dh);
                  for (std::size_t hd = 0; hd < heads; ++hd) {
                    const auto c0 = static_cast<Eigen::Index>(hd * dh);
                    const RowMat& a = probs[hd];
                    dvm.middleCols(c0, ed).noalias() = a.transpose() * gm.middleCols(c0, ed);
                    RowMat da = gm.middleCols(c0, ed) * vm.middleCols(c0, ed).transpose();
                    RowMat ds(a.rows(), a.cols());
                    for (Eigen::Index r = 0; r < a.rows(); ++r) {
                      const double dot = (da.row(r).array() * a.row(r).array()).sum();
                      ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
                    }
                    ds *= inv_scale;
                    dqm.middleCols(c0, ed).noalias() = ds * km.middleCols(c0, ed);
                    dkm.middleCols(c0, ed).noalias() = ds.transpose() * qm.middleCols(c0, ed);
                  }
                  if (q.requires_grad()) q.accumulate_grad(dq);
                  if (k.requires_grad()) k.accumulate_grad(dk);
                  if (v.requires_grad()) v.accumulate_grad(dv);
                });
}

Tensor cross_entropy(const Tensor& probs, std::size_t label) {
  const auto [rows, cols] = as_rows_cols(probs.shape(), "cross_entropy");
  if (label >= cols) throw ArgumentError("cross_entropy: label out of range");
  const auto& pv = probs.value();
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) total -= std::log(std::max(pv[r * cols + label], kProbabilityFloor));
  return finish(NdArray::scalar(total / static_cast<double>(rows)), tracking({&probs}),
                [probs, label, rows, cols](const NdArray& g) {
                  NdArray dp(probs.shape());
                  const auto& pv = probs.value();
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double p = pv[r * cols + label];
                    if (p > kProbabilityFloor) dp[r * cols + label] = -g[0] / (p * static_cast<double>(rows));
                  }
                  probs.accumulate_grad(dp);
                });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.value()[i] - b.value()[i];
    total += d * d;
  }
  return finish(NdArray::scalar(total / n), tracking({&a, &b}), [a, b, n](const NdArray& g) {
    NdArray da(a.shape());
    for (std::size_t i = 0; i < da.size(); ++i) da[i] = 2.0 * g[0] * (a.value()[i] - b.value()[i]) / n;
    if (a.requires_grad()) a.accumulate_grad(da);
    if (b.requires_grad()) {
      for (auto& x : da.data()) x = -x;
      b.accumulate_grad(da);
    }
  });
}

Tensor l1(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1");
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a.value()[i] - b.value()[i]);
  return finish(NdArray::scalar(total / n), tracking({&a, &b}), [a, b, n](const NdArray& g) {
    NdArray da(a.shape());
    for (std::size_t i = 0; i < da.size(); ++i) {
      const double d = a.value()[i] - b.value()[i];
      da[i] = d > 0.0 ? g[0] / n : (d < 0.0 ? -g[0] / n : 0.0);
    }
    if (a.requires_grad()) a.accumulate_grad(da);
    if (b.requires_grad()) {
      for (auto& x : da.data()) x = -x;
      b.accumulate_grad(da);
    }
  });
}

}  // namespace avgn
