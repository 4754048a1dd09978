#include "delib/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "delib/kernels.hpp"

namespace delib {

namespace {

using detail::Node;
using BackwardFn = std::function<void(Node&)>;

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
               BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.node());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// Grad buffer of input i, or nullptr when that input takes no gradient.
std::vector<double>* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: dimension mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n);
  kernels::parallel::matmul(a.data(), b.data(), out, m, k, n);
  return make_op({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* ga = input_grad(self, 0)) kernels::parallel::matmul_nt_acc(self.grad, bv, *ga, m, k, n);
    if (auto* gb = input_grad(self, 1)) kernels::parallel::matmul_tn_acc(av, self.grad, *gb, m, k, n);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  const auto in = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return make_op({c, r}, std::move(out), {a}, [r, c](Node& self) {
    auto* g = input_grad(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t in = 0; in < 2; ++in) {
      if (auto* g = input_grad(self, in))
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (auto* g = input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (auto* g = input_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.shape()[0] != x.shape().back()) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  const std::size_t n = bias.shape()[0];
  std::vector<double> out(x.numel());
  const auto xv = x.data(), bv = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + bv[i % n];
  return make_op(x.shape(), std::move(out), {x, bias}, [n](Node& self) {
    if (auto* g = input_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i];
    if (auto* g = input_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i % n] += self.grad[i];
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return make_op(x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto* g = input_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * factor;
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    auto* g = input_grad(self, 0);
    const auto& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xv[i] > 0.0) (*g)[i] += self.grad[i];
  });
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(xv[i]);
  return make_op(x.shape(), std::move(out), {x}, [](Node& self) {
    auto* g = input_grad(self, 0);
    const auto& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] / xv[i];
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<double> out(x.numel());
  if (s.len == 0 || x.numel() == 0) return make_op(x.shape(), std::move(out), {x}, [](Node&) {});
  if (s.inner == 1) {
    kernels::parallel::softmax_rows(x.data(), out, s.outer, s.len);
  } else {
    const auto xv = x.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double mx = xv[base];
        for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, xv[base + j * s.inner]);
        double sum = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          const double e = std::exp(xv[base + j * s.inner] - mx);
          out[base + j * s.inner] = e;
          sum += e;
        }
        for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= sum;
      }
    }
  }
  return make_op(x.shape(), std::move(out), {x}, [s](Node& self) {
    auto* g = input_grad(self, 0);
    const auto& y = self.value;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          dot += self.grad[idx] * y[idx];
        }
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          (*g)[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("log_softmax: rank-0 input");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols == 0 ? 0 : x.numel() / cols;
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = row[j] - lse;
  }
  return make_op(x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    auto* g = input_grad(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t j = 0; j < cols; ++j) gsum += self.grad[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t idx = r * cols + j;
        (*g)[idx] += self.grad[idx] - std::exp(self.value[idx]) * gsum;
      }
    }
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s) +
                       " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.shape()[axis] * os.inner;
    const auto pv = p.data();
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * os.len * os.inner + offset * os.inner);
    offset += p.shape()[axis];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_op(std::move(out_shape), std::move(out), std::move(inputs),
                 [os, offsets](Node& self) {
                   for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                     auto* g = input_grad(self, i);
                     if (!g) continue;
                     const std::size_t chunk = g->size() / std::max<std::size_t>(os.outer, 1);
                     for (std::size_t o = 0; o < os.outer; ++o) {
                       const double* src = self.grad.data() + o * os.len * os.inner + offsets[i] * os.inner;
                       double* dst = g->data() + o * chunk;
                       for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
                     }
                   }
                 });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin > end || end > x.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  std::vector<double> out(s.outer * chunk);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + o * s.len * s.inner + begin * s.inner, chunk, out.data() + o * chunk);
  return make_op(std::move(out_shape), std::move(out), {x}, [s, chunk, begin](Node& self) {
    auto* g = input_grad(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      double* dst = g->data() + o * s.len * s.inner + begin * s.inner;
      const double* src = self.grad.data() + o * chunk;
      for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
    }
  });
}

Tensor embedding_gather(const Tensor& table, std::span<const int> ids) {
  require_rank(table, 2, "embedding_gather");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding_gather: token id " + std::to_string(id) +
                       " out of range for vocabulary of size " + std::to_string(vocab));
    }
  }
  std::vector<double> out(ids.size() * d);
  const auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  std::vector<int> saved(ids.begin(), ids.end());
  return make_op({ids.size(), d}, std::move(out), {table}, [saved = std::move(saved), d](Node& self) {
    auto* g = input_grad(self, 0);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      double* dst = g->data() + static_cast<std::size_t>(saved[i]) * d;
      const double* src = self.grad.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

Tensor reduce_sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_op({1}, {s}, {x}, [](Node& self) {
    auto* g = input_grad(self, 0);
    const double go = self.grad[0];
    for (auto& v : *g) v += go;
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: rank-0 input");
  const std::size_t d = x.shape().back();
  if (d == 0) throw ShapeError("layer_norm: last extent must be >= 1");
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match last extent of " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> xhat(x.numel()), inv_std(rows);
  kernels::parallel::layer_norm_rows(x.data(), xhat, inv_std, rows, d, eps);
  std::vector<double> out(x.numel());
  const auto gv = gain.data(), bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
  return make_op(x.shape(), std::move(out), {x, gain, bias},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Node& self) {
                   const auto& gv = self.inputs[1]->value;
                   if (auto* gg = input_grad(self, 1))
                     for (std::size_t i = 0; i < self.grad.size(); ++i) (*gg)[i % d] += self.grad[i] * xhat[i];
                   if (auto* gb = input_grad(self, 2))
                     for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i % d] += self.grad[i];
                   auto* gx = input_grad(self, 0);
                   if (!gx) return;
                   const double inv_d = 1.0 / static_cast<double>(d);
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* go = self.grad.data() + r * d;
                     const double* xh = xhat.data() + r * d;
                     double sum_g = 0.0, sum_gx = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       const double gh = go[j] * gv[j];
                       sum_g += gh;
                       sum_gx += gh * xh[j];
                     }
                     for (std::size_t j = 0; j < d; ++j) {
                       const double gh = go[j] * gv[j];
                       (*gx)[r * d + j] += inv_std[r] * (gh - inv_d * sum_g - inv_d * xh[j] * sum_gx);
                     }
                   }
                 });
}

Tensor pick(const Tensor& x, std::span<const int> index) {
  require_rank(x, 2, "pick");
  const std::size_t rows = x.shape()[0], cols = x.shape()[1];
  if (index.size() != rows) {
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + shape_str(x.shape()));
  }
  std::vector<double> out(rows, 0.0);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] < 0) continue;
    if (static_cast<std::size_t>(index[r]) >= cols)
      throw IndexError("pick: index " + std::to_string(index[r]) + " out of range");
    out[r] = xv[r * cols + static_cast<std::size_t>(index[r])];
  }
  std::vector<int> saved(index.begin(), index.end());
  return make_op({rows}, std::move(out), {x}, [saved = std::move(saved), cols](Node& self) {
    auto* g = input_grad(self, 0);
    for (std::size_t r = 0; r < saved.size(); ++r)
      if (saved[r] >= 0) (*g)[r * cols + static_cast<std::size_t>(saved[r])] += self.grad[r];
  });
}

}  // namespace delib
