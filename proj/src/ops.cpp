#include "inject/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "inject/errors.hpp"
#include "inject/kernels.hpp"

namespace inject::ops {

namespace {

using detail::Node;

Tensor make_result(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->op = op;
  node->is_leaf = false;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined input");
}

// Accumulates into the gradient of input i when it takes part in the graph.
std::vector<double>* grad_of(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  return &in.grad_buffer();
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " + shape_str(bs) +
                          (transpose_b ? " (b transposed)" : ""));
  };
  if (as.size() < 2 || bs.size() < 2) throw mismatch();
  const std::size_t n = as[as.size() - 2];
  const std::size_t k = as.back();
  const std::size_t bk = transpose_b ? bs.back() : bs[bs.size() - 2];
  const std::size_t m = transpose_b ? bs[bs.size() - 2] : bs.back();
  if (bk != k) throw mismatch();

  const bool shared_b = bs.size() == 2;
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];
  if (!shared_b) {
    if (bs.size() != as.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) throw mismatch();
  }

  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(n);
  out_shape.push_back(m);
  std::vector<double> out(batch * n * m, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();

  if (shared_b) {
    // All batch rows share one right-hand matrix: a single [batch*n, k] product.
    if (transpose_b)
      kernels::gemm_nt(batch * n, m, k, av, bv, out.data());
    else
      kernels::gemm_nn(batch * n, m, k, av, bv, out.data());
  } else {
    for (std::size_t s = 0; s < batch; ++s) {
      if (transpose_b)
        kernels::gemm_nt(n, m, k, av + s * n * k, bv + s * m * k, out.data() + s * n * m);
      else
        kernels::gemm_nn(n, m, k, av + s * n * k, bv + s * k * m, out.data() + s * n * m);
    }
  }

  return make_result("matmul", std::move(out_shape), std::move(out), {a, b},
                     [=](Node& self) {
                       const double* g = self.grad.data();
                       const double* a_val = self.inputs[0]->value.data();
                       const double* b_val = self.inputs[1]->value.data();
                       const std::size_t rows = shared_b ? batch : 1;
                       const std::size_t loops = shared_b ? 1 : batch;
                       const std::size_t nn = n * rows;
                       if (auto* ga = grad_of(self, 0)) {
                         for (std::size_t s = 0; s < loops; ++s) {
                           const double* gs = g + s * nn * m;
                           double* gas = ga->data() + s * nn * k;
                           const double* bsv = b_val + (shared_b ? 0 : s * m * k);
                           if (transpose_b)
                             kernels::gemm_nn(nn, k, m, gs, bsv, gas);
                           else
                             kernels::gemm_nt(nn, k, m, gs, bsv, gas);
                         }
                       }
                       if (auto* gb = grad_of(self, 1)) {
                         for (std::size_t s = 0; s < loops; ++s) {
                           const double* gs = g + s * nn * m;
                           const double* asv = a_val + s * nn * k;
                           double* gbs = gb->data() + (shared_b ? 0 : s * m * k);
                           if (transpose_b)
                             kernels::gemm_tn(m, k, nn, gs, asv, gbs);
                           else
                             kernels::gemm_tn(k, m, nn, asv, gs, gbs);
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(weight, "linear");
  if (weight.rank() != 2) throw DimensionError("linear: weight must be [out, in], got " + shape_str(weight.shape()));
  Tensor y = matmul(x, weight, /*transpose_b=*/true);
  if (bias.defined()) {
    if (bias.rank() != 1 || bias.dim(0) != weight.dim(0))
      throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                           shape_str(weight.shape()));
    y = add(y, bias);
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (!is_suffix(bs, as))
    throw DimensionError("add: cannot broadcast " + shape_str(bs) + " onto " + shape_str(as));
  const std::size_t inner = shape_numel(bs);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % inner];
  return make_result("add", as, std::move(out), {a, b}, [inner](Node& self) {
    const auto& g = self.grad;
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    }
    if (auto* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % inner] += g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  if (a.shape() != b.shape())
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& g = self.grad;
    const auto& a_val = self.inputs[0]->value;
    const auto& b_val = self.inputs[1]->value;
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * b_val[i];
    }
    if (auto* gb = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * a_val[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  require_defined(x, "scale");
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factor;
  return make_result("scale", x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * factor;
  });
}

Tensor tanh(const Tensor& x) {
  require_defined(x, "tanh");
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
  return make_result("tanh", x.shape(), std::move(out), {x}, [](Node& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      (*gx)[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  return make_result("gelu", x.shape(), std::move(out), {x}, [](Node& self) {
    auto* gx = grad_of(self, 0);
    const auto& xin = self.inputs[0]->value;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xin[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      (*gx)[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

namespace {

std::vector<std::uint8_t> expand_mask(const Mask& mask, const Shape& target) {
  if (shape_numel(mask.shape) != mask.keep.size())
    throw DimensionError("mask shape " + shape_str(mask.shape) + " does not match its data");
  if (mask.shape.size() > target.size())
    throw DimensionError("mask " + shape_str(mask.shape) + " has higher rank than " + shape_str(target));
  const std::size_t offset = target.size() - mask.shape.size();
  for (std::size_t i = 0; i < mask.shape.size(); ++i) {
    const auto md = mask.shape[i];
    if (md != 1 && md != target[offset + i])
      throw DimensionError("mask " + shape_str(mask.shape) + " not broadcastable to " + shape_str(target));
  }
  // Strides of the mask viewed in the target's rank (0 on broadcast axes).
  std::vector<std::size_t> strides(target.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = mask.shape.size(); i-- > 0;) {
    if (mask.shape[i] != 1) strides[offset + i] = stride;
    stride *= mask.shape[i];
  }
  const std::size_t total = shape_numel(target);
  std::vector<std::uint8_t> out(total);
  std::vector<std::size_t> idx(target.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < target.size(); ++d) src += idx[d] * strides[d];
    out[flat] = mask.keep[src] ? 1 : 0;
    for (std::size_t d = target.size(); d-- > 0;) {
      if (++idx[d] < target[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x, const Mask* mask) {
  require_defined(x, "softmax_lastdim");
  if (x.rank() == 0) throw DimensionError("softmax_lastdim on a scalar");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = cols ? x.numel() / cols : 0;
  std::vector<std::uint8_t> keep;
  if (mask) keep = expand_mask(*mask, x.shape());
  std::vector<double> out(x.numel());
  kernels::softmax_rows(rows, cols, x.values().data(), mask ? keep.data() : nullptr, out.data());
  return make_result("softmax", x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * cols;
      const double* g = self.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
      double* out_g = gx->data() + r * cols;
      for (std::size_t j = 0; j < cols; ++j) out_g[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const std::size_t cols = x.shape().back();
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols})
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match last dim of " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / cols;
  std::vector<double> out(x.numel());
  std::vector<double> mean(rows), rstd(rows);
  kernels::layer_norm_rows(rows, cols, x.values().data(), gain.values().data(), bias.values().data(), eps,
                           out.data(), mean.data(), rstd.data());
  return make_result(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [rows, cols, mean = std::move(mean), rstd = std::move(rstd)](Node& self) {
        const auto& xin = self.inputs[0]->value;
        const auto& g_val = self.inputs[1]->value;
        auto* gx = grad_of(self, 0);
        auto* gg = grad_of(self, 1);
        auto* gb = grad_of(self, 2);
        std::vector<double> xhat(cols), dxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* xr = xin.data() + r * cols;
          const double* dy = self.grad.data() + r * cols;
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            xhat[j] = (xr[j] - mean[r]) * rstd[r];
            dxhat[j] = dy[j] * g_val[j];
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat[j];
          }
          if (gg) {
            for (std::size_t j = 0; j < cols; ++j) (*gg)[j] += dy[j] * xhat[j];
          }
          if (gb) {
            for (std::size_t j = 0; j < cols; ++j) (*gb)[j] += dy[j];
          }
          if (gx) {
            const double inv_n = 1.0 / static_cast<double>(cols);
            double* out_g = gx->data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j)
              out_g[j] += rstd[r] * (dxhat[j] - inv_n * sum_dxhat - xhat[j] * inv_n * sum_dxhat_xhat);
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_defined(logits, "cross_entropy");
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [batch, classes], got " +
                                               shape_str(logits.shape()));
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(batch));
  for (std::size_t r = 0; r < batch; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes)
      throw IndexError("cross_entropy: label " + std::to_string(labels[r]) + " at row " + std::to_string(r) +
                       " outside [0, " + std::to_string(classes) + ")");
  }
  std::vector<double> probs(batch * classes);
  kernels::softmax_rows(batch, classes, logits.values().data(), nullptr, probs.data());
  const auto lv = logits.values();
  double total = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const double* row = lv.data() + r * classes;
    const double peak = *std::max_element(row, row + classes);
    double s = 0.0;
    for (std::size_t j = 0; j < classes; ++j) s += std::exp(row[j] - peak);
    total += (peak + std::log(s)) - row[labels[r]];
  }
  const double loss = total / static_cast<double>(batch);
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result("cross_entropy", {}, {loss}, {logits},
                     [batch, classes, probs = std::move(probs), label_copy = std::move(label_copy)](Node& self) {
                       auto* gx = grad_of(self, 0);
                       const double g = self.grad[0] / static_cast<double>(batch);
                       for (std::size_t r = 0; r < batch; ++r) {
                         for (std::size_t j = 0; j < classes; ++j) {
                           const double onehot = static_cast<int>(j) == label_copy[r] ? 1.0 : 0.0;
                           (*gx)[r * classes + j] += g * (probs[r * classes + j] - onehot);
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng* rng) {
  require_defined(x, "dropout");
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be below 1");
  if (!rng) throw ContractError("dropout: training mode requires a generator");
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factors(x.numel());
  for (auto& f : factors) f = rng->uniform() < rate ? 0.0 : keep_scale;
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * factors[i];
  return make_result("dropout", x.shape(), std::move(out), {x}, [factors = std::move(factors)](Node& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * factors[i];
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& lead) {
  require_defined(table, "embedding");
  if (table.rank() != 2) throw DimensionError("embedding: table must be [vocab, dim]");
  if (shape_numel(lead) != ids.size())
    throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids for shape " + shape_str(lead));
  const std::size_t vocab = table.dim(0);
  const std::size_t width = table.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                       " outside table of " + std::to_string(vocab) + " rows");
  }
  const auto tv = table.values();
  std::vector<double> out(ids.size() * width);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width, out.begin() + static_cast<std::ptrdiff_t>(i * width));
  Shape out_shape = lead;
  out_shape.push_back(width);
  std::vector<int> id_copy(ids.begin(), ids.end());
  return make_result("embedding", std::move(out_shape), std::move(out), {table},
                     [width, id_copy = std::move(id_copy)](Node& self) {
                       auto* gt = grad_of(self, 0);
                       for (std::size_t i = 0; i < id_copy.size(); ++i) {
                         double* row = gt->data() + static_cast<std::size_t>(id_copy[i]) * width;
                         const double* g = self.grad.data() + i * width;
                         for (std::size_t j = 0; j < width; ++j) row[j] += g[j];
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    auto* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> order) {
  require_defined(x, "permute");
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  if (order.size() != rank) throw DimensionError("permute: order rank mismatch for " + shape_str(in_shape));
  std::vector<bool> seen(rank, false);
  for (auto o : order) {
    if (o >= rank || seen[o]) throw DimensionError("permute: invalid axis order");
    seen[o] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[order[i]];
  const std::size_t total = x.numel();
  // source[flat_out] = flat index into x
  std::vector<std::size_t> source(total);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) src += idx[d] * in_strides[order[d]];
    source[flat] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  const auto xv = x.values();
  std::vector<double> out(total);
  for (std::size_t i = 0; i < total; ++i) out[i] = xv[source[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {x},
                     [source = std::move(source)](Node& self) {
                       auto* gx = grad_of(self, 0);
                       for (std::size_t i = 0; i < source.size(); ++i) (*gx)[source[i]] += self.grad[i];
                     });
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> order) {
  return permute(x, std::span<const std::size_t>(order.begin(), order.size()));
}

Tensor select_position(const Tensor& x, std::size_t position) {
  require_defined(x, "select_position");
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("select_position needs rank >= 2, got " + shape_str(s));
  if (position >= s[1]) throw IndexError("select_position: position " + std::to_string(position) + " outside " + shape_str(s));
  const std::size_t outer = s[0];
  const std::size_t steps = s[1];
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  Shape out_shape{outer};
  out_shape.insert(out_shape.end(), s.begin() + 2, s.end());
  const auto xv = x.values();
  std::vector<double> out(outer * inner);
  for (std::size_t b = 0; b < outer; ++b)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((b * steps + position) * inner), inner,
                out.begin() + static_cast<std::ptrdiff_t>(b * inner));
  return make_result("select_position", std::move(out_shape), std::move(out), {x},
                     [outer, steps, inner, position](Node& self) {
                       auto* gx = grad_of(self, 0);
                       for (std::size_t b = 0; b < outer; ++b)
                         for (std::size_t j = 0; j < inner; ++j)
                           (*gx)[(b * steps + position) * inner + j] += self.grad[b * inner + j];
                     });
}

Tensor mean_of(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("mean_of: no tensors given");
  const Shape& s = parts[0].shape();
  for (const auto& p : parts) {
    if (p.shape() != s) throw DimensionError("mean_of: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s));
  }
  const std::size_t count = parts.size();
  const std::size_t total = shape_numel(s);
  std::vector<double> out(total);
  std::vector<double> column(count);
  for (std::size_t i = 0; i < total; ++i) {
    for (std::size_t k = 0; k < count; ++k) column[k] = parts[k].values()[i];
    std::sort(column.begin(), column.end());
    double acc = 0.0;
    for (double v : column) acc += v;
    out[i] = acc / static_cast<double>(count);
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("mean_of", s, std::move(out), std::move(inputs), [count](Node& self) {
    const double w = 1.0 / static_cast<double>(count);
    for (std::size_t k = 0; k < count; ++k) {
      if (auto* gk = grad_of(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gk)[i] += self.grad[i] * w;
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  return make_result("sum", {}, {acc}, {x}, [](Node& self) {
    auto* gx = grad_of(self, 0);
    for (auto& g : *gx) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace inject::ops
