#include "asc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace asc {

namespace {

using detail::Node;

std::size_t sz(Index n) { return static_cast<std::size_t>(n); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError(std::string(op) + ": axis out of range");
  return axis;
}

Index prod(const Shape& s, std::size_t begin, std::size_t end) {
  Index n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

// Applies `fn(grad_out, parent_grad)` to parent i when it participates in the graph.
template <typename Fn>
void accumulate(Node& self, std::size_t i, Fn&& fn) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return;
  fn(self.grad, p.ensure_grad());
}

template <typename Fn>
Tensor unary(const Tensor& x, const char* op, Fn&& fn, void (*backward)(Node&)) {
  Buffer out(x.values());
  for (auto& v : out) v = fn(v);
  return Tensor::from_op(x.shape(), std::move(out), {x}, op, backward);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Buffer out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, "add", [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      accumulate(self, k, [](const auto& g, auto& pg) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      });
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Buffer out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, "sub", [](Node& self) {
    accumulate(self, 0, [](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    });
    accumulate(self, 1, [](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Buffer out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return Tensor::from_op(a.shape(), std::move(out), {a, b}, "mul", [](Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    accumulate(self, 0, [&](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * bv[i];
    });
    accumulate(self, 1, [&](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * av[i];
    });
  });
}

Tensor scale(const Tensor& a, Scalar factor) {
  Buffer out(a.values());
  for (auto& v : out) v *= factor;
  return Tensor::from_op(a.shape(), std::move(out), {a}, "scale", [factor](Node& self) {
    accumulate(self, 0, [factor](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += factor * g[i];
    });
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(bias, 1, "add_bias");
  const Index n = bias.dim(0);
  if (x.dim(-1) != n) throw ShapeError("add_bias: last axis " + shape_string(x.shape()) + " vs bias " + shape_string(bias.shape()));
  Buffer out(x.values());
  const auto& bv = bias.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % sz(n)];
  return Tensor::from_op(x.shape(), std::move(out), {x, bias}, "add_bias", [n](Node& self) {
    accumulate(self, 0, [](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    });
    accumulate(self, 1, [n](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) pg[i % sz(n)] += g[i];
    });
  });
}

Tensor relu(const Tensor& x) {
  return unary(x, "relu", [](Scalar v) { return v > 0 ? v : Scalar(0); }, [](Node& self) {
    const auto& in = self.parents[0]->data;
    accumulate(self, 0, [&](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) if (in[i] > 0) pg[i] += g[i];
    });
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", [](Scalar v) {
    return v >= 0 ? 1 / (1 + std::exp(-v)) : std::exp(v) / (1 + std::exp(v));
  }, [](Node& self) {
    const auto& y = self.data;
    accumulate(self, 0, [&](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * y[i] * (1 - y[i]);
    });
  });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](Scalar v) { return std::tanh(v); }, [](Node& self) {
    const auto& y = self.data;
    accumulate(self, 0, [&](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * (1 - y[i] * y[i]);
    });
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Buffer out(sz(m * n));
  MatrixMap(out.data(), m, n).noalias() = a.matrix() * b.matrix();
  return Tensor::from_op({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
    ConstMatrixMap g(self.grad.data(), m, n);
    ConstMatrixMap av(self.parents[0]->data.data(), m, k);
    ConstMatrixMap bv(self.parents[1]->data.data(), k, n);
    accumulate(self, 0, [&](const auto&, auto& pg) { MatrixMap(pg.data(), m, k).noalias() += g * bv.transpose(); });
    accumulate(self, 1, [&](const auto&, auto& pg) { MatrixMap(pg.data(), k, n).noalias() += av.transpose() * g; });
  });
}

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "batched_matmul");
  require_rank(b, 3, "batched_matmul");
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index bk = transpose_b ? b.dim(2) : b.dim(1);
  const Index n = transpose_b ? b.dim(1) : b.dim(2);
  if (b.dim(0) != batch || bk != k) {
    throw ShapeError("batched_matmul: incompatible " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Buffer out(sz(batch * m * n));
  const Index b_rows = transpose_b ? n : k, b_cols = transpose_b ? k : n;
  for (Index i = 0; i < batch; ++i) {
    ConstMatrixMap av(a.values().data() + i * m * k, m, k);
    ConstMatrixMap bv(b.values().data() + i * b_rows * b_cols, b_rows, b_cols);
    MatrixMap o(out.data() + i * m * n, m, n);
    if (transpose_b) o.noalias() = av * bv.transpose();
    else o.noalias() = av * bv;
  }
  return Tensor::from_op({batch, m, n}, std::move(out), {a, b}, "batched_matmul",
                         [=](Node& self) {
    for (Index i = 0; i < batch; ++i) {
      ConstMatrixMap g(self.grad.data() + i * m * n, m, n);
      ConstMatrixMap av(self.parents[0]->data.data() + i * m * k, m, k);
      ConstMatrixMap bv(self.parents[1]->data.data() + i * b_rows * b_cols, b_rows, b_cols);
      accumulate(self, 0, [&](const auto&, auto& pg) {
        MatrixMap ga(pg.data() + i * m * k, m, k);
        if (transpose_b) ga.noalias() += g * bv;
        else ga.noalias() += g * bv.transpose();
      });
      accumulate(self, 1, [&](const auto&, auto& pg) {
        MatrixMap gb(pg.data() + i * b_rows * b_cols, b_rows, b_cols);
        if (transpose_b) gb.noalias() += g.transpose() * av;
        else gb.noalias() += av.transpose() * g;
      });
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const Index n = x.dim(0), in = x.dim(1), out_dim = weight.dim(1);
  if (weight.dim(0) != in) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias " + shape_string(bias.shape()) + " for " + std::to_string(out_dim) + " outputs");
  }
  Buffer out(sz(n * out_dim));
  MatrixMap o(out.data(), n, out_dim);
  o.noalias() = x.matrix() * weight.matrix();
  if (has_bias) o.rowwise() += ConstVectorMap(bias.values().data(), out_dim).transpose();
  std::vector<Tensor> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Tensor::from_op({n, out_dim}, std::move(out), std::move(parents), "linear",
                         [=](Node& self) {
    ConstMatrixMap g(self.grad.data(), n, out_dim);
    ConstMatrixMap xv(self.parents[0]->data.data(), n, in);
    ConstMatrixMap wv(self.parents[1]->data.data(), in, out_dim);
    accumulate(self, 0, [&](const auto&, auto& pg) { MatrixMap(pg.data(), n, in).noalias() += g * wv.transpose(); });
    accumulate(self, 1, [&](const auto&, auto& pg) { MatrixMap(pg.data(), in, out_dim).noalias() += xv.transpose() * g; });
    if (has_bias) {
      accumulate(self, 2, [&](const auto&, auto& pg) {
        VectorMap(pg.data(), out_dim) += g.colwise().sum().transpose();
      });
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const Index m = a.dim(0), n = a.dim(1);
  Buffer out(sz(m * n));
  MatrixMap(out.data(), n, m) = a.matrix().transpose();
  return Tensor::from_op({n, m}, std::move(out), {a}, "transpose", [m, n](Node& self) {
    accumulate(self, 0, [&](const auto& g, auto& pg) {
      MatrixMap(pg.data(), m, n) += ConstMatrixMap(g.data(), n, m).transpose();
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  return Tensor::from_op(std::move(shape), x.values(), {x}, "reshape", [](Node& self) {
    accumulate(self, 0, [](const auto& g, auto& pg) {
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    });
  });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    const Index w = l.back();
    l.pop_back();
    if (l != lead) throw ShapeError("concat: leading dimensions differ");
    widths.push_back(w);
    total += w;
  }
  const Index outer = shape_numel(lead.empty() ? Shape{1} : lead);
  Buffer out(sz(outer * total));
  Index offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& v = parts[p].values();
    for (Index r = 0; r < outer; ++r) {
      std::copy_n(v.begin() + r * widths[p], widths[p], out.begin() + r * total + offset);
    }
    offset += widths[p];
  }
  Shape shape = lead;
  shape.push_back(total);
  return Tensor::from_op(std::move(shape), std::move(out), {parts.begin(), parts.end()}, "concat",
                         [outer, total, widths](Node& self) {
    Index off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const Index w = widths[p];
      accumulate(self, p, [&](const auto& g, auto& pg) {
        for (Index r = 0; r < outer; ++r)
          for (Index c = 0; c < w; ++c) pg[sz(r * w + c)] += g[sz(r * total + off + c)];
      });
      off += w;
    }
  });
}

Tensor slice(const Tensor& x, int axis, Index begin, Index end) {
  axis = normalize_axis(axis, x.rank(), "slice");
  const Shape& s = x.shape();
  const Index extent = s[sz(axis)];
  if (begin < 0 || end > extent || begin >= end) throw ShapeError("slice: range out of bounds");
  const Index outer = prod(s, 0, sz(axis));
  const Index inner = prod(s, sz(axis) + 1, s.size());
  const Index len = end - begin;
  Buffer out(sz(outer * len * inner));
  const auto& v = x.values();
  for (Index o = 0; o < outer; ++o) {
    std::copy_n(v.begin() + (o * extent + begin) * inner, len * inner, out.begin() + o * len * inner);
  }
  Shape shape = s;
  shape[sz(axis)] = len;
  return Tensor::from_op(std::move(shape), std::move(out), {x}, "slice",
                         [=](Node& self) {
    accumulate(self, 0, [&](const auto& g, auto& pg) {
      for (Index o = 0; o < outer; ++o) {
        const Index dst = (o * extent + begin) * inner, src = o * len * inner;
        for (Index i = 0; i < len * inner; ++i) pg[sz(dst + i)] += g[sz(src + i)];
      }
    });
  });
}

Tensor select(const Tensor& x, int axis, Index index) {
  axis = normalize_axis(axis, x.rank(), "select");
  Tensor s = slice(x, axis, index, index + 1);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  if (shape.empty()) shape = {1};
  return reshape(s, std::move(shape));
}

Tensor stack(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape& s = parts[0].shape();
  for (const auto& p : parts) {
    if (p.shape() != s) throw ShapeError("stack: shapes differ");
  }
  if (axis < 0) axis += static_cast<int>(s.size()) + 1;
  if (axis < 0 || axis > static_cast<int>(s.size())) throw ShapeError("stack: axis out of range");
  const Index outer = prod(s, 0, sz(axis));
  const Index inner = prod(s, sz(axis), s.size());
  const Index count = static_cast<Index>(parts.size());
  Buffer out(sz(outer * count * inner));
  for (Index p = 0; p < count; ++p) {
    const auto& v = parts[sz(p)].values();
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * inner, inner, out.begin() + (o * count + p) * inner);
    }
  }
  Shape shape = s;
  shape.insert(shape.begin() + axis, count);
  return Tensor::from_op(std::move(shape), std::move(out), {parts.begin(), parts.end()}, "stack",
                         [=](Node& self) {
    for (Index p = 0; p < count; ++p) {
      accumulate(self, sz(p), [&](const auto& g, auto& pg) {
        for (Index o = 0; o < outer; ++o)
          for (Index i = 0; i < inner; ++i) pg[sz(o * inner + i)] += g[sz((o * count + p) * inner + i)];
      });
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  const Index n = x.dim(-1);
  const Index rows = x.numel() / n;
  Buffer out(x.values());
  for (Index r = 0; r < rows; ++r) {
    Scalar* row = out.data() + r * n;
    const Scalar mx = *std::max_element(row, row + n);
    Scalar total = 0;
    for (Index j = 0; j < n; ++j) total += (row[j] = std::exp(row[j] - mx));
    for (Index j = 0; j < n; ++j) row[j] /= total;
  }
  return Tensor::from_op(x.shape(), std::move(out), {x}, "softmax_rows", [rows, n](Node& self) {
    const auto& y = self.data;
    accumulate(self, 0, [&](const auto& g, auto& pg) {
      for (Index r = 0; r < rows; ++r) {
        const Index base = r * n;
        Scalar dot = 0;
        for (Index j = 0; j < n; ++j) dot += g[sz(base + j)] * y[sz(base + j)];
        for (Index j = 0; j < n; ++j) pg[sz(base + j)] += y[sz(base + j)] * (g[sz(base + j)] - dot);
      }
    });
  });
}

Tensor sum(const Tensor& x) {
  const auto& v = x.values();
  const Scalar total = std::accumulate(v.begin(), v.end(), Scalar(0));
  return Tensor::from_op({1}, {total}, {x}, "sum", [](Node& self) {
    accumulate(self, 0, [](const auto& g, auto& pg) {
      for (auto& p : pg) p += g[0];
    });
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.numel())); }

Tensor cross_entropy_with_logits(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy_with_logits");
  const Index n = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n) throw ShapeError("cross_entropy_with_logits: label count mismatch");
  std::vector<int> target(labels.begin(), labels.end());
  Buffer probs(logits.values());
  Scalar loss = 0;
  for (Index r = 0; r < n; ++r) {
    if (target[sz(r)] < 0 || target[sz(r)] >= c) throw ShapeError("cross_entropy_with_logits: label out of range");
    Scalar* row = probs.data() + r * c;
    const Scalar mx = *std::max_element(row, row + c);
    Scalar total = 0;
    for (Index j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    const Scalar lse = mx + std::log(total);
    loss += lse - row[target[sz(r)]];
    for (Index j = 0; j < c; ++j) row[j] = std::exp(row[j] - lse);
  }
  loss /= static_cast<Scalar>(n);
  return Tensor::from_op({1}, {loss}, {logits}, "cross_entropy",
                         [n, c, target, probs = std::move(probs)](Node& self) {
    accumulate(self, 0, [&](const auto& g, auto& pg) {
      const Scalar s = g[0] / static_cast<Scalar>(n);
      for (Index r = 0; r < n; ++r) {
        for (Index j = 0; j < c; ++j) {
          const Scalar onehot = (j == target[sz(r)]) ? 1 : 0;
          pg[sz(r * c + j)] += s * (probs[sz(r * c + j)] - onehot);
        }
      }
    });
  });
}

namespace {

struct ConvGeometry {
  Index n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  Index patch() const { return cin * kh * kw; }
  Index pixels() const { return ho * wo; }
};

// cols[(c*kh + i)*kw + j][y*wo + x] = input[c][y*stride + i - pad][x*stride + j - pad]
void im2col(const ConvGeometry& g, const Scalar* img, Scalar* cols) {
  for (Index c = 0; c < g.cin; ++c)
    for (Index i = 0; i < g.kh; ++i)
      for (Index j = 0; j < g.kw; ++j) {
        Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (Index y = 0; y < g.ho; ++y) {
          const Index iy = y * g.stride + i - g.pad;
          for (Index x = 0; x < g.wo; ++x) {
            const Index ix = x * g.stride + j - g.pad;
            row[y * g.wo + x] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? img[(c * g.h + iy) * g.w + ix] : 0;
          }
        }
      }
}

void col2im(const ConvGeometry& g, const Scalar* cols, Scalar* img) {
  for (Index c = 0; c < g.cin; ++c)
    for (Index i = 0; i < g.kh; ++i)
      for (Index j = 0; j < g.kw; ++j) {
        const Scalar* row = cols + ((c * g.kh + i) * g.kw + j) * g.pixels();
        for (Index y = 0; y < g.ho; ++y) {
          const Index iy = y * g.stride + i - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (Index x = 0; x < g.wo; ++x) {
            const Index ix = x * g.stride + j - g.pad;
            if (ix >= 0 && ix < g.w) img[(c * g.h + iy) * g.w + ix] += row[y * g.wo + x];
          }
        }
      }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, Index stride, Index padding) {
  require_rank(input, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride must be >= 1 and padding >= 0");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2),
                 weight.dim(3), stride, padding, 0, 0};
  if (weight.dim(1) != g.cin) {
    throw ShapeError("conv2d: input channels " + std::to_string(g.cin) + " vs weight " + shape_string(weight.shape()));
  }
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) throw ShapeError("conv2d: kernel larger than padded input");

  Buffer out(sz(g.n * g.cout * g.pixels()));
  Buffer cols(sz(g.patch() * g.pixels()));
  ConstMatrixMap wmat(weight.values().data(), g.cout, g.patch());
  for (Index b = 0; b < g.n; ++b) {
    im2col(g, input.values().data() + b * g.cin * g.h * g.w, cols.data());
    MatrixMap(out.data() + b * g.cout * g.pixels(), g.cout, g.pixels()).noalias() =
        wmat * ConstMatrixMap(cols.data(), g.patch(), g.pixels());
  }
  return Tensor::from_op({g.n, g.cout, g.ho, g.wo}, std::move(out), {input, weight}, "conv2d",
                         [g](Node& self) {
    const Node& in = *self.parents[0];
    const Node& wt = *self.parents[1];
    Buffer cols(sz(g.patch() * g.pixels()));
    Buffer dcols(sz(g.patch() * g.pixels()));
    ConstMatrixMap wmat(wt.data.data(), g.cout, g.patch());
    for (Index b = 0; b < g.n; ++b) {
      ConstMatrixMap gout(self.grad.data() + b * g.cout * g.pixels(), g.cout, g.pixels());
      accumulate(self, 1, [&](const auto&, auto& pg) {
        im2col(g, in.data.data() + b * g.cin * g.h * g.w, cols.data());
        MatrixMap(pg.data(), g.cout, g.patch()).noalias() +=
            gout * ConstMatrixMap(cols.data(), g.patch(), g.pixels()).transpose();
      });
      accumulate(self, 0, [&](const auto&, auto& pg) {
        MatrixMap(dcols.data(), g.patch(), g.pixels()).noalias() = wmat.transpose() * gout;
        col2im(g, dcols.data(), pg.data() + b * g.cin * g.h * g.w);
      });
    }
  });
}

Tensor max_pool2d(const Tensor& input, Index kernel, Index stride, Index padding) {
  require_rank(input, 4, "max_pool2d");
  if (kernel < 1 || stride < 1 || padding < 0 || padding >= kernel) throw ShapeError("max_pool2d: invalid geometry");
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h + 2 * padding < kernel || w + 2 * padding < kernel) throw ShapeError("max_pool2d: kernel larger than input");
  const Index ho = (h + 2 * padding - kernel) / stride + 1;
  const Index wo = (w + 2 * padding - kernel) / stride + 1;
  Buffer out(sz(n * c * ho * wo));
  std::vector<Index> argmax(out.size());
  const auto& v = input.values();
  for (Index plane = 0; plane < n * c; ++plane) {
    for (Index y = 0; y < ho; ++y)
      for (Index x = 0; x < wo; ++x) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        Index best_at = -1;
        for (Index i = 0; i < kernel; ++i) {
          const Index iy = y * stride + i - padding;
          if (iy < 0 || iy >= h) continue;
          for (Index j = 0; j < kernel; ++j) {
            const Index ix = x * stride + j - padding;
            if (ix < 0 || ix >= w) continue;
            const Index at = (plane * h + iy) * w + ix;
            if (v[sz(at)] > best) {
              best = v[sz(at)];
              best_at = at;
            }
          }
        }
        const Index o = (plane * ho + y) * wo + x;
        out[sz(o)] = best;
        argmax[sz(o)] = best_at;
      }
  }
  return Tensor::from_op({n, c, ho, wo}, std::move(out), {input}, "max_pool2d",
                         [argmax = std::move(argmax)](Node& self) {
    accumulate(self, 0, [&](const auto& g, auto& pg) {
      for (std::size_t o = 0; o < g.size(); ++o) pg[sz(argmax[o])] += g[o];
    });
  });
}

Tensor global_average_pool(const Tensor& input) {
  require_rank(input, 4, "global_average_pool");
  const Index n = input.dim(0), c = input.dim(1), area = input.dim(2) * input.dim(3);
  Buffer out(sz(n * c));
  const auto& v = input.values();
  for (Index p = 0; p < n * c; ++p) {
    out[sz(p)] = std::accumulate(v.begin() + p * area, v.begin() + (p + 1) * area, Scalar(0)) / static_cast<Scalar>(area);
  }
  return Tensor::from_op({n, c}, std::move(out), {input}, "global_average_pool", [area](Node& self) {
    accumulate(self, 0, [&](const auto& g, auto& pg) {
      const Scalar inv = Scalar(1) / static_cast<Scalar>(area);
      for (std::size_t p = 0; p < g.size(); ++p)
        for (Index i = 0; i < area; ++i) pg[p * sz(area) + sz(i)] += g[p] * inv;
    });
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training) {
  if (x.rank() != 2 && x.rank() != 4) throw ShapeError("batch_norm: expected [N,C] or [N,C,H,W]");
  const Index n = x.dim(0), c = x.dim(1);
  const Index area = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  if (gamma.numel() != c || beta.numel() != c || static_cast<Index>(state.running_mean.size()) != c) {
    throw ShapeError("batch_norm: parameter size does not match channels " + std::to_string(c));
  }
  const Index m = n * area;
  const auto& v = x.values();
  auto at = [c, area](Index b, Index ch, Index i) { return sz((b * c + ch) * area + i); };

  Buffer mu(sz(c)), inv_std(sz(c));
  if (training) {
    for (Index ch = 0; ch < c; ++ch) {
      Scalar s = 0;
      for (Index b = 0; b < n; ++b)
        for (Index i = 0; i < area; ++i) s += v[at(b, ch, i)];
      const Scalar mean_c = s / static_cast<Scalar>(m);
      Scalar var = 0;
      for (Index b = 0; b < n; ++b)
        for (Index i = 0; i < area; ++i) var += (v[at(b, ch, i)] - mean_c) * (v[at(b, ch, i)] - mean_c);
      var /= static_cast<Scalar>(m);
      mu[sz(ch)] = mean_c;
      inv_std[sz(ch)] = 1 / std::sqrt(var + state.eps);
      const Scalar unbiased = m > 1 ? var * static_cast<Scalar>(m) / static_cast<Scalar>(m - 1) : var;
      state.running_mean[sz(ch)] = state.momentum * state.running_mean[sz(ch)] + (1 - state.momentum) * mean_c;
      state.running_var[sz(ch)] = state.momentum * state.running_var[sz(ch)] + (1 - state.momentum) * unbiased;
    }
  } else {
    for (Index ch = 0; ch < c; ++ch) {
      mu[sz(ch)] = state.running_mean[sz(ch)];
      inv_std[sz(ch)] = 1 / std::sqrt(state.running_var[sz(ch)] + state.eps);
    }
  }

  Buffer xhat(v.size()), out(v.size());
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (Index b = 0; b < n; ++b)
    for (Index ch = 0; ch < c; ++ch)
      for (Index i = 0; i < area; ++i) {
        const auto k = at(b, ch, i);
        xhat[k] = (v[k] - mu[sz(ch)]) * inv_std[sz(ch)];
        out[k] = gv[sz(ch)] * xhat[k] + bv[sz(ch)];
      }

  return Tensor::from_op(x.shape(), std::move(out), {x, gamma, beta}, "batch_norm",
                         [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    const auto& g = self.grad;
    const auto& gam = self.parents[1]->data;
    Buffer sum_g(sz(c), 0), sum_gx(sz(c), 0);
    for (Index b = 0; b < n; ++b)
      for (Index ch = 0; ch < c; ++ch)
        for (Index i = 0; i < area; ++i) {
          const auto k = at(b, ch, i);
          sum_g[sz(ch)] += g[k];
          sum_gx[sz(ch)] += g[k] * xhat[k];
        }
    accumulate(self, 1, [&](const auto&, auto& pg) {
      for (Index ch = 0; ch < c; ++ch) pg[sz(ch)] += sum_gx[sz(ch)];
    });
    accumulate(self, 2, [&](const auto&, auto& pg) {
      for (Index ch = 0; ch < c; ++ch) pg[sz(ch)] += sum_g[sz(ch)];
    });
    accumulate(self, 0, [&](const auto&, auto& pg) {
      const Scalar mf = static_cast<Scalar>(m);
      for (Index b = 0; b < n; ++b)
        for (Index ch = 0; ch < c; ++ch) {
          const Scalar scale_c = gam[sz(ch)] * inv_std[sz(ch)];
          for (Index i = 0; i < area; ++i) {
            const auto k = at(b, ch, i);
            if (training) {
              pg[k] += scale_c * (g[k] - sum_g[sz(ch)] / mf - xhat[k] * sum_gx[sz(ch)] / mf);
            } else {
              pg[k] += scale_c * g[k];
            }
          }
        }
    });
  });
}

namespace {

Scalar sigmoid_scalar(Scalar v) { return v >= 0 ? 1 / (1 + std::exp(-v)) : std::exp(v) / (1 + std::exp(v)); }

// Per-step activations kept for the backward pass; each matrix is [B, h].
struct LstmTrace {
  std::vector<Matrix> i, f, g, o, c, tanh_c, h;
};

}  // namespace

Tensor lstm(const Tensor& x, const Tensor& w_x, const Tensor& w_h, const Tensor& bias) {
  require_rank(x, 3, "lstm");
  require_rank(w_x, 2, "lstm");
  require_rank(w_h, 2, "lstm");
  const Index batch = x.dim(0), steps = x.dim(1), in = x.dim(2), hid = w_h.dim(0);
  if (w_x.dim(0) != in || w_x.dim(1) != 4 * hid || w_h.dim(1) != 4 * hid || bias.rank() != 1 ||
      bias.dim(0) != 4 * hid) {
    throw ShapeError("lstm: incompatible shapes x " + shape_string(x.shape()) + ", w_x " + shape_string(w_x.shape()) +
                     ", w_h " + shape_string(w_h.shape()) + ", bias " + shape_string(bias.shape()));
  }
  // Input projections for all steps in one product; row b*steps + t.
  Matrix xw = ConstMatrixMap(x.values().data(), batch * steps, in) * w_x.matrix();
  xw.rowwise() += ConstVectorMap(bias.values().data(), 4 * hid).transpose();

  auto trace = std::make_shared<LstmTrace>();
  Matrix h = Matrix::Zero(batch, hid), c = Matrix::Zero(batch, hid), gates(batch, 4 * hid);
  Buffer out(sz(batch * steps * hid));
  for (Index t = 0; t < steps; ++t) {
    gates.noalias() = h * w_h.matrix();
    for (Index b = 0; b < batch; ++b) gates.row(b) += xw.row(b * steps + t);
    Matrix i = gates.leftCols(hid).unaryExpr(&sigmoid_scalar);
    Matrix f = gates.middleCols(hid, hid).unaryExpr(&sigmoid_scalar);
    Matrix g = gates.middleCols(2 * hid, hid).array().tanh().matrix();
    Matrix o = gates.rightCols(hid).unaryExpr(&sigmoid_scalar);
    c = (f.array() * c.array() + i.array() * g.array()).matrix();
    Matrix tc = c.array().tanh().matrix();
    h = (o.array() * tc.array()).matrix();
    for (Index b = 0; b < batch; ++b) {
      std::copy_n(h.row(b).data(), hid, out.begin() + (b * steps + t) * hid);
    }
    trace->i.push_back(std::move(i));
    trace->f.push_back(std::move(f));
    trace->g.push_back(std::move(g));
    trace->o.push_back(std::move(o));
    trace->c.push_back(c);
    trace->tanh_c.push_back(std::move(tc));
    trace->h.push_back(h);
  }

  return Tensor::from_op({batch, steps, hid}, std::move(out), {x, w_x, w_h, bias}, "lstm",
                         [=](Node& self) {
    const LstmTrace& tr = *trace;
    ConstMatrixMap wh(self.parents[2]->data.data(), hid, 4 * hid);
    Matrix d_gates_all(batch * steps, 4 * hid);
    Matrix dh_next = Matrix::Zero(batch, hid), dc_next = Matrix::Zero(batch, hid);
    Matrix d_wh = Matrix::Zero(hid, 4 * hid);
    Matrix dg(batch, 4 * hid);
    for (Index t = steps - 1; t >= 0; --t) {
      const auto ts = sz(t);
      Matrix dh = dh_next;
      for (Index b = 0; b < batch; ++b) {
        dh.row(b) += ConstVectorMap(self.grad.data() + (b * steps + t) * hid, hid).transpose();
      }
      const auto& i = tr.i[ts].array();
      const auto& f = tr.f[ts].array();
      const auto& g = tr.g[ts].array();
      const auto& o = tr.o[ts].array();
      const auto& tc = tr.tanh_c[ts].array();
      Matrix dc = (dh.array() * o * (1 - tc.square()) + dc_next.array()).matrix();
      const Matrix c_prev = t > 0 ? tr.c[ts - 1] : Matrix::Zero(batch, hid);
      dg.leftCols(hid) = (dc.array() * g * i * (1 - i)).matrix();
      dg.middleCols(hid, hid) = (dc.array() * c_prev.array() * f * (1 - f)).matrix();
      dg.middleCols(2 * hid, hid) = (dc.array() * i * (1 - g.square())).matrix();
      dg.rightCols(hid) = (dh.array() * tc * o * (1 - o)).matrix();
      dc_next = (dc.array() * f).matrix();
      dh_next.noalias() = dg * wh.transpose();
      if (t > 0) d_wh.noalias() += tr.h[ts - 1].transpose() * dg;
      for (Index b = 0; b < batch; ++b) d_gates_all.row(b * steps + t) = dg.row(b);
    }
    ConstMatrixMap xv(self.parents[0]->data.data(), batch * steps, in);
    ConstMatrixMap wx(self.parents[1]->data.data(), in, 4 * hid);
    accumulate(self, 0, [&](const auto&, auto& pg) {
      MatrixMap(pg.data(), batch * steps, in).noalias() += d_gates_all * wx.transpose();
    });
    accumulate(self, 1, [&](const auto&, auto& pg) { MatrixMap(pg.data(), in, 4 * hid).noalias() += xv.transpose() * d_gates_all; });
    accumulate(self, 2, [&](const auto&, auto& pg) { MatrixMap(pg.data(), hid, 4 * hid) += d_wh; });
    accumulate(self, 3, [&](const auto&, auto& pg) {
      VectorMap(pg.data(), 4 * hid) += d_gates_all.colwise().sum().transpose();
    });
  });
}

}  // namespace asc
