#include "coad/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "coad/error.hpp"
#include "coad/log.hpp"
#include "coad/tensor/kernels.hpp"

namespace coad::tensor {

namespace {

template <typename T>
void require_rank2(const Variable<T>& v, const char* op) {
  if (v.value().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(v.shape()));
  }
}

template <typename T>
[[noreturn]] void mismatch(const char* op, const Variable<T>& a, const Variable<T>& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& from) {
  T* dst = into.data();
  const T* src = from.data();
  for (std::size_t i = 0; i < into.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Variable<T> matmul(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const auto m = a.value().rows(), k = a.value().cols(), n = b.value().cols();
  if (b.value().rows() != k) mismatch("matmul", a, b);
  Tensor<T> out({m, n});
  kernels::gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n, false);
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.result(std::move(out), rg, [an = a.node(), bn = b.node(), m, k, n](const Node<T>& o) {
    if (an->requires_grad) kernels::gemm_nt(o.grad.data(), bn->value.data(), an->grad.data(), m, n, k, true);
    if (bn->requires_grad) kernels::gemm_tn(an->value.data(), o.grad.data(), bn->grad.data(), k, m, n, true);
  });
}

template <typename T>
Variable<T> matmul_nt(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const auto m = a.value().rows(), k = a.value().cols(), n = b.value().rows();
  if (b.value().cols() != k) mismatch("matmul_nt", a, b);
  Tensor<T> out({m, n});
  kernels::gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n, false);
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.result(std::move(out), rg, [an = a.node(), bn = b.node(), m, k, n](const Node<T>& o) {
    // dA = dC * B, dB = dC^T * A
    if (an->requires_grad) kernels::gemm_nn(o.grad.data(), bn->value.data(), an->grad.data(), m, n, k, true);
    if (bn->requires_grad) kernels::gemm_tn(o.grad.data(), an->value.data(), bn->grad.data(), n, m, k, true);
  });
}

template <typename T>
Variable<T> add(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b) {
  if (a.shape() != b.shape()) mismatch("add", a, b);
  Tensor<T> out = a.value();
  accumulate(out, b.value());
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.result(std::move(out), rg, [an = a.node(), bn = b.node()](const Node<T>& o) {
    if (an->requires_grad) accumulate(an->grad, o.grad);
    if (bn->requires_grad) accumulate(bn->grad, o.grad);
  });
}

template <typename T>
Variable<T> mul(Tape<T>& tape, const Variable<T>& a, const Variable<T>& b) {
  if (a.shape() != b.shape()) mismatch("mul", a, b);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.result(std::move(out), rg, [an = a.node(), bn = b.node()](const Node<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (an->requires_grad) an->grad[i] += o.grad[i] * bn->value[i];
      if (bn->requires_grad) bn->grad[i] += o.grad[i] * an->value[i];
    }
  });
}

template <typename T>
Variable<T> add_bias(Tape<T>& tape, const Variable<T>& x, const Variable<T>& bias) {
  require_rank2(x, "add_bias");
  const auto rows = x.value().rows(), cols = x.value().cols();
  if (bias.value().rank() != 1 || bias.value().size() != cols) mismatch("add_bias", x, bias);
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += bias.value()[c];
  }
  const bool rg = x.requires_grad() || bias.requires_grad();
  return tape.result(std::move(out), rg, [xn = x.node(), bn = bias.node(), rows, cols](const Node<T>& o) {
    if (xn->requires_grad) accumulate(xn->grad, o.grad);
    if (bn->requires_grad) {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = o.grad.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) bn->grad[c] += g[c];
      }
    }
  });
}

template <typename T>
Variable<T> scale(Tape<T>& tape, const Variable<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  return tape.result(std::move(out), x.requires_grad(), [xn = x.node(), factor](const Node<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i] * factor;
  });
}

template <typename T>
Variable<T> masked_softmax(Tape<T>& tape, const Variable<T>& x, std::span<const std::uint8_t> mask) {
  require_rank2(x, "masked_softmax");
  const auto rows = x.value().rows(), cols = x.value().cols();
  if (!mask.empty() && mask.size() != rows * cols) {
    throw ShapeError("masked_softmax: mask has " + std::to_string(mask.size()) + " entries for input " +
                     shape_string(x.shape()));
  }
  Tensor<T> out({rows, cols});
  const auto bad = kernels::masked_softmax(x.value().data(), mask.empty() ? nullptr : mask.data(), out.data(), rows, cols);
  if (bad >= 0) throw ShapeError("masked_softmax: row " + std::to_string(bad) + " is fully masked");
  return tape.result(std::move(out), x.requires_grad(), [xn = x.node(), rows, cols](const Node<T>& o) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = o.value.data() + r * cols;
      const T* dy = o.grad.data() + r * cols;
      T dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[c] * y[c];
      T* dx = xn->grad.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dx[c] += y[c] * (dy[c] - dot);
    }
  });
}

template <typename T>
Variable<T> layer_norm(Tape<T>& tape, const Variable<T>& x, const Variable<T>& gamma, const Variable<T>& beta, T eps) {
  require_rank2(x, "layer_norm");
  const auto rows = x.value().rows(), cols = x.value().cols();
  if (gamma.value().size() != cols) mismatch("layer_norm", x, gamma);
  if (beta.value().size() != cols) mismatch("layer_norm", x, beta);
  auto xhat = std::make_shared<std::vector<T>>(rows * cols);
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  kernels::layer_norm(x.value().data(), xhat->data(), inv_std->data(), rows, cols, eps);
  Tensor<T> out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = (*xhat)[r * cols + c] * gamma.value()[c] + beta.value()[c];
    }
  }
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return tape.result(std::move(out), rg,
                     [xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat, inv_std, rows, cols](const Node<T>& o) {
                       std::vector<T> dxhat(cols);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const T* dy = o.grad.data() + r * cols;
                         const T* xh = xhat->data() + r * cols;
                         if (gn->requires_grad) {
                           for (std::size_t c = 0; c < cols; ++c) gn->grad[c] += dy[c] * xh[c];
                         }
                         if (bn->requires_grad) {
                           for (std::size_t c = 0; c < cols; ++c) bn->grad[c] += dy[c];
                         }
                         if (!xn->requires_grad) continue;
                         T sum_d = 0, sum_dx = 0;
                         for (std::size_t c = 0; c < cols; ++c) {
                           dxhat[c] = dy[c] * gn->value[c];
                           sum_d += dxhat[c];
                           sum_dx += dxhat[c] * xh[c];
                         }
                         const T n = static_cast<T>(cols);
                         const T k = (*inv_std)[r] / n;
                         T* dx = xn->grad.data() + r * cols;
                         for (std::size_t c = 0; c < cols; ++c) dx[c] += k * (n * dxhat[c] - sum_d - xh[c] * sum_dx);
                       }
                     });
}

template <typename T>
Variable<T> embedding(Tape<T>& tape, const Variable<T>& table, std::span<const int> ids) {
  require_rank2(table, "embedding");
  const auto vocab = table.value().rows(), width = table.value().cols();
  Tensor<T> out({ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table " + shape_string(table.shape()));
    }
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * width, width, out.data() + i * width);
  }
  std::vector<int> kept(ids.begin(), ids.end());
  return tape.result(std::move(out), table.requires_grad(), [tn = table.node(), kept, width](const Node<T>& o) {
    for (std::size_t i = 0; i < kept.size(); ++i) {
      T* dst = tn->grad.data() + static_cast<std::size_t>(kept[i]) * width;
      const T* src = o.grad.data() + i * width;
      for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
Variable<T> dropout(Tape<T>& tape, const Variable<T>& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ShapeError("dropout: rate must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.value().size());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? T{0} : keep_scale;
    out[i] *= (*mask)[i];
  }
  return tape.result(std::move(out), x.requires_grad(), [xn = x.node(), mask](const Node<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) xn->grad[i] += o.grad[i] * (*mask)[i];
  });
}

template <typename T>
Variable<T> gelu(Tape<T>& tape, const Variable<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  return tape.result(std::move(out), x.requires_grad(), [xn = x.node()](const Node<T>& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T v = xn->value[i];
      const T t = std::tanh(c * (v + a * v * v * v));
      const T dt = (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      xn->grad[i] += o.grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * dt);
    }
  });
}

template <typename T>
Variable<T> concat_cols(Tape<T>& tape, std::span<const Variable<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const auto rows = parts[0].value().rows();
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.value().rows() != rows) mismatch("concat_cols", parts[0], p);
    total += p.value().cols();
    rg = rg || p.requires_grad();
  }
  Tensor<T> out({rows, total});
  std::vector<std::shared_ptr<Node<T>>> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto w = p.value().cols();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(p.value().data() + r * w, w, out.data() + r * total + offset);
    offset += w;
    nodes.push_back(p.node());
  }
  return tape.result(std::move(out), rg, [nodes, rows, total](const Node<T>& o) {
    std::size_t off = 0;
    for (const auto& n : nodes) {
      const auto w = n->value.cols();
      if (n->requires_grad) {
        for (std::size_t r = 0; r < rows; ++r) {
          const T* src = o.grad.data() + r * total + off;
          T* dst = n->grad.data() + r * w;
          for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
        }
      }
      off += w;
    }
  });
}

template <typename T>
Variable<T> slice_cols(Tape<T>& tape, const Variable<T>& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_cols");
  const auto rows = x.value().rows(), cols = x.value().cols();
  if (begin + count > cols) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(x.shape()));
  }
  Tensor<T> out({rows, count});
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.value().data() + r * cols + begin, count, out.data() + r * count);
  return tape.result(std::move(out), x.requires_grad(), [xn = x.node(), rows, cols, begin, count](const Node<T>& o) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* src = o.grad.data() + r * count;
      T* dst = xn->grad.data() + r * cols + begin;
      for (std::size_t c = 0; c < count; ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
Variable<T> concat_rows(Tape<T>& tape, std::span<const Variable<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto cols = parts[0].value().cols();
  std::size_t total = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.value().cols() != cols) mismatch("concat_rows", parts[0], p);
    total += p.value().rows();
    rg = rg || p.requires_grad();
  }
  Tensor<T> out({total, cols});
  std::vector<std::shared_ptr<Node<T>>> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
    nodes.push_back(p.node());
  }
  return tape.result(std::move(out), rg, [nodes](const Node<T>& o) {
    std::size_t off = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) {
        for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += o.grad[off + i];
      }
      off += n->value.size();
    }
  });
}

template <typename T>
Variable<T> slice_rows(Tape<T>& tape, const Variable<T>& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_rows");
  const auto rows = x.value().rows(), cols = x.value().cols();
  if (begin + count > rows) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + shape_string(x.shape()));
  }
  Tensor<T> out({count, cols});
  std::copy_n(x.value().data() + begin * cols, count * cols, out.data());
  return tape.result(std::move(out), x.requires_grad(), [xn = x.node(), begin, cols](const Node<T>& o) {
    T* dst = xn->grad.data() + begin * cols;
    for (std::size_t i = 0; i < o.grad.size(); ++i) dst[i] += o.grad[i];
  });
}

template <typename T>
Variable<T> sum(Tape<T>& tape, const Variable<T>& x) {
  T total = 0;
  for (T v : x.value().values()) total += v;
  return tape.result(Tensor<T>::scalar(total), x.requires_grad(), [xn = x.node()](const Node<T>& o) {
    for (auto& g : xn->grad.values()) g += o.grad[0];
  });
}

template <typename T>
Variable<T> cross_entropy(Tape<T>& tape, const Variable<T>& logits, std::span<const int> targets, int ignore_id,
                          std::span<const T> weights) {
  require_rank2(logits, "cross_entropy");
  const auto rows = logits.value().rows(), classes = logits.value().cols();
  if (targets.size() != rows || weights.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets and " +
                     std::to_string(weights.size()) + " weights for logits " + shape_string(logits.shape()));
  }
  T weight_sum = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_id) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= classes) {
      throw ShapeError("cross_entropy: target " + std::to_string(targets[r]) + " outside " + std::to_string(classes) +
                       " classes");
    }
    weight_sum += weights[r];
  }
  if (weight_sum <= T{0}) {
    log::debug("cross_entropy: every target ignored; loss defined as 0");
    return tape.result(Tensor<T>::scalar(0), logits.requires_grad(), [](const Node<T>&) {});
  }

  // Cache probabilities of active rows for the backward pass.
  auto probs = std::make_shared<std::vector<T>>(rows * classes, T{0});
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_id) continue;
    const T* z = logits.value().data() + r * classes;
    const T max_z = *std::max_element(z, z + classes);
    T denom = 0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(z[c] - max_z);
    const T log_denom = std::log(denom) + max_z;
    for (std::size_t c = 0; c < classes; ++c) (*probs)[r * classes + c] = std::exp(z[c] - log_denom);
    total += weights[r] * (log_denom - z[targets[r]]);
  }
  std::vector<int> kept_targets(targets.begin(), targets.end());
  std::vector<T> kept_weights(weights.begin(), weights.end());
  return tape.result(
      Tensor<T>::scalar(total / weight_sum), logits.requires_grad(),
      [ln = logits.node(), probs, kept_targets, kept_weights, weight_sum, ignore_id, classes](const Node<T>& o) {
        const T g = o.grad[0] / weight_sum;
        for (std::size_t r = 0; r < kept_targets.size(); ++r) {
          if (kept_targets[r] == ignore_id) continue;
          const T w = g * kept_weights[r];
          T* dz = ln->grad.data() + r * classes;
          const T* p = probs->data() + r * classes;
          for (std::size_t c = 0; c < classes; ++c) dz[c] += w * p[c];
          dz[kept_targets[r]] -= w;
        }
      });
}

#define COAD_INSTANTIATE_OPS(T)                                                                                 \
  template Variable<T> matmul(Tape<T>&, const Variable<T>&, const Variable<T>&);                               \
  template Variable<T> matmul_nt(Tape<T>&, const Variable<T>&, const Variable<T>&);                            \
  template Variable<T> add(Tape<T>&, const Variable<T>&, const Variable<T>&);                                  \
  template Variable<T> mul(Tape<T>&, const Variable<T>&, const Variable<T>&);                                  \
  template Variable<T> add_bias(Tape<T>&, const Variable<T>&, const Variable<T>&);                             \
  template Variable<T> scale(Tape<T>&, const Variable<T>&, T);                                                 \
  template Variable<T> masked_softmax(Tape<T>&, const Variable<T>&, std::span<const std::uint8_t>);           \
  template Variable<T> layer_norm(Tape<T>&, const Variable<T>&, const Variable<T>&, const Variable<T>&, T);   \
  template Variable<T> embedding(Tape<T>&, const Variable<T>&, std::span<const int>);                          \
  template Variable<T> dropout(Tape<T>&, const Variable<T>&, double, Rng&);                                    \
  template Variable<T> gelu(Tape<T>&, const Variable<T>&);                                                     \
  template Variable<T> concat_cols(Tape<T>&, std::span<const Variable<T>>);                                    \
  template Variable<T> slice_cols(Tape<T>&, const Variable<T>&, std::size_t, std::size_t);                     \
  template Variable<T> concat_rows(Tape<T>&, std::span<const Variable<T>>);                                    \
  template Variable<T> slice_rows(Tape<T>&, const Variable<T>&, std::size_t, std::size_t);                     \
  template Variable<T> sum(Tape<T>&, const Variable<T>&);                                                      \
  template Variable<T> cross_entropy(Tape<T>&, const Variable<T>&, std::span<const int>, int, std::span<const T>);

COAD_INSTANTIATE_OPS(float)
COAD_INSTANTIATE_OPS(double)

}  // namespace coad::tensor
