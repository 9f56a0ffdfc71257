// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/numerics/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "loopmoe/numerics/blas.hpp"

namespace loopmoe {

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::string_view to_string(ParamRole role) {
  switch (role) {
    case ParamRole::embedding:
      return "embedding";
    case ParamRole::hidden:
      return "hidden";
    case ParamRole::unembedding:
      return "unembedding";
    case ParamRole::router:
      return "router";
    case ParamRole::expert:
      return "expert";
  }
  return "unknown";
}

namespace {

void require(bool ok, std::string_view op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

// Index of the first element of row r, head h inside a [rows x d] buffer.
inline std::size_t head_offset(std::size_t row, std::size_t d, std::size_t head, std::size_t d_head) {
  return row * d + head * d_head;
}

}  // namespace

template <typename T>
Var Graph<T>::push(std::string_view op, Tensor<T> value, std::vector<std::size_t> parents, BackwardFn fn) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericError(std::string(op) + ": produced non-finite values");
  }
  Node node;
  node.value = std::move(value);
  node.op = op;
  if (grad_enabled_) {
    for (std::size_t p : parents) node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  }
  if (node.requires_grad) {
    node.parents = std::move(parents);
    node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
bool Graph<T>::any_requires_grad(std::initializer_list<Var> vars) const {
  if (!grad_enabled_) return false;
  for (Var v : vars) {
    if (nodes_.at(v.id).requires_grad) return true;
  }
  return false;
}

template <typename T>
Tensor<T>* Graph<T>::grad_of(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape());
  return &n.grad;
}

template <typename T>
Var Graph<T>::input(Tensor<T> value) {
  return push("input", std::move(value), {}, nullptr);
}

template <typename T>
Var Graph<T>::param(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  Var v = push("param", p.value, {}, nullptr);
  Node& n = nodes_[v.id];
  n.requires_grad = grad_enabled_;
  n.param = &p;
  param_nodes_.emplace(&p, v.id);
  return v;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  require(av.rank() == 2 && bv.rank() == 2, "matmul", "operands must be rank 2");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  require(bv.dim(0) == k, "matmul",
          "inner dimensions differ: " + shape_to_string(av.shape()) + " x " + shape_to_string(bv.shape()));
  Tensor<T> out({m, n});
  blas::gemm(false, false, m, n, k, T{1}, av.ptr(), k, bv.ptr(), n, T{0}, out.ptr(), n);
  return push("matmul", std::move(out), {a.id, b.id}, [m, k, n](Graph& g, std::size_t self) {
    const std::size_t ia = g.nodes_[self].parents[0], ib = g.nodes_[self].parents[1];
    const Tensor<T>& dy = g.out_grad(self);
    if (Tensor<T>* da = g.grad_of(ia)) {
      blas::gemm(false, true, m, k, n, T{1}, dy.ptr(), n, g.nodes_[ib].value.ptr(), n, T{1}, da->ptr(), k);
    }
    if (Tensor<T>* db = g.grad_of(ib)) {
      blas::gemm(true, false, k, n, m, T{1}, g.nodes_[ia].value.ptr(), k, dy.ptr(), n, T{1}, db->ptr(), n);
    }
  });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  require(av.shape() == bv.shape(), "add", shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return push("add", std::move(out), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const Tensor<T>& dy = g.out_grad(self);
    for (std::size_t p : g.nodes_[self].parents) {
      if (Tensor<T>* dp = g.grad_of(p)) {
        for (std::size_t i = 0; i < dy.size(); ++i) (*dp)[i] += dy[i];
      }
    }
  });
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  require(av.shape() == bv.shape(), "mul", shape_to_string(av.shape()) + " vs " + shape_to_string(bv.shape()));
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return push("mul", std::move(out), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const std::size_t ia = g.nodes_[self].parents[0], ib = g.nodes_[self].parents[1];
    const Tensor<T>& dy = g.out_grad(self);
    if (Tensor<T>* da = g.grad_of(ia)) {
      const Tensor<T>& bv = g.nodes_[ib].value;
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += dy[i] * bv[i];
    }
    if (Tensor<T>* db = g.grad_of(ib)) {
      const Tensor<T>& av = g.nodes_[ia].value;
      for (std::size_t i = 0; i < dy.size(); ++i) (*db)[i] += dy[i] * av[i];
    }
  });
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  Tensor<T> out = value(a);
  for (T& x : out.data()) x *= factor;
  return push("scale", std::move(out), {a.id}, [factor](Graph& g, std::size_t self) {
    const Tensor<T>& dy = g.out_grad(self);
    if (Tensor<T>* da = g.grad_of(g.nodes_[self].parents[0])) {
      for (std::size_t i = 0; i < dy.size(); ++i) (*da)[i] += factor * dy[i];
    }
  });
}

template <typename T>
Var Graph<T>::silu(Var a) {
  Tensor<T> out = value(a);
  for (T& x : out.data()) x = x * sigmoid(x);
  return push("silu", std::move(out), {a.id}, [](Graph& g, std::size_t self) {
    const std::size_t ia = g.nodes_[self].parents[0];
    const Tensor<T>& dy = g.out_grad(self);
    if (Tensor<T>* da = g.grad_of(ia)) {
      const Tensor<T>& x = g.nodes_[ia].value;
      for (std::size_t i = 0; i < dy.size(); ++i) {
        const T s = sigmoid(x[i]);
        (*da)[i] += dy[i] * s * (T{1} + x[i] * (T{1} - s));
      }
    }
  });
}

template <typename T>
Var Graph<T>::softmax(Var a) {
  const Tensor<T>& x = value(a);
  require(x.size() > 0, "softmax", "empty input");
  Tensor<T> out(x.shape());
  const std::size_t rows = x.rows(), cols = x.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.row(r);
    auto y = out.row(r);
    const T mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(in[c] - mx);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] = static_cast<T>(y[c] / total);
  }
  return push("softmax", std::move(out), {a.id}, [rows, cols](Graph& g, std::size_t self) {
    const Tensor<T>& dy = g.out_grad(self);
    const Tensor<T>& y = g.nodes_[self].value;
    if (Tensor<T>* da = g.grad_of(g.nodes_[self].parents[0])) {
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += dy.at(r, c) * y.at(r, c);
        for (std::size_t c = 0; c < cols; ++c) da->at(r, c) += y.at(r, c) * (dy.at(r, c) - static_cast<T>(dot));
      }
    }
  });
}

template <typename T>
Var Graph<T>::rmsnorm(Var a, T eps) {
  const Tensor<T>& x = value(a);
  require(x.cols() >= 1 && x.size() > 0, "rmsnorm", "empty input");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor<T> out(x.shape());
  std::vector<T> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.row(r);
    double ms = 0.0;
    for (T v : in) ms += static_cast<double>(v) * v;
    ms /= static_cast<double>(cols);
    inv_rms[r] = static_cast<T>(1.0 / std::sqrt(ms + static_cast<double>(eps)));
    auto y = out.row(r);
    for (std::size_t c = 0; c < cols; ++c) y[c] = in[c] * inv_rms[r];
  }
  return push("rmsnorm", std::move(out), {a.id},
              [rows, cols, inv_rms = std::move(inv_rms)](Graph& g, std::size_t self) {
                const std::size_t ia = g.nodes_[self].parents[0];
                const Tensor<T>& dy = g.out_grad(self);
                const Tensor<T>& x = g.nodes_[ia].value;
                if (Tensor<T>* da = g.grad_of(ia)) {
                  for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(dy.at(r, c)) * x.at(r, c);
                    const T ir = inv_rms[r];
                    const T coef = static_cast<T>(dot * ir * ir * ir / static_cast<double>(cols));
                    for (std::size_t c = 0; c < cols; ++c) da->at(r, c) += ir * dy.at(r, c) - coef * x.at(r, c);
                  }
                }
              });
}

template <typename T>
Var Graph<T>::rope(Var xv, std::size_t seq_len, std::size_t n_heads, double theta) {
  const Tensor<T>& x = value(xv);
  require(x.rank() == 2, "rope", "input must be rank 2");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  require(n_heads > 0 && d % n_heads == 0, "rope", "width not divisible by heads");
  const std::size_t d_head = d / n_heads;
  require(d_head % 2 == 0, "rope", "head dimension must be even, got " + std::to_string(d_head));
  require(seq_len > 0 && rows % seq_len == 0, "rope", "rows not a multiple of seq_len");
  const std::size_t half = d_head / 2;
  // Angles in double, then rounded once to T.
  std::vector<T> cos_t(seq_len * half), sin_t(seq_len * half);
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(d_head));
      const double angle = static_cast<double>(pos) * freq;
      cos_t[pos * half + i] = static_cast<T>(std::cos(angle));
      sin_t[pos * half + i] = static_cast<T>(std::sin(angle));
    }
  }
  auto rotate = [=](const Tensor<T>& in, Tensor<T>& out, const std::vector<T>& cs, const std::vector<T>& sn,
                    bool inverse, bool accumulate) {
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t pos = r % seq_len;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t base = head_offset(r, d, h, d_head);
        for (std::size_t i = 0; i < half; ++i) {
          const T c = cs[pos * half + i];
          const T s = inverse ? -sn[pos * half + i] : sn[pos * half + i];
          const T a = in[base + 2 * i], b = in[base + 2 * i + 1];
          const T ra = a * c - b * s, rb = a * s + b * c;
          if (accumulate) {
            out[base + 2 * i] += ra;
            out[base + 2 * i + 1] += rb;
          } else {
            out[base + 2 * i] = ra;
            out[base + 2 * i + 1] = rb;
          }
        }
      }
    }
  };
  Tensor<T> out(x.shape());
  rotate(x, out, cos_t, sin_t, false, false);
  return push("rope", std::move(out), {xv.id},
              [rotate, cos_t = std::move(cos_t), sin_t = std::move(sin_t)](Graph& g, std::size_t self) {
                if (Tensor<T>* dx = g.grad_of(g.nodes_[self].parents[0])) {
                  rotate(g.out_grad(self), *dx, cos_t, sin_t, true, true);
                }
              });
}

template <typename T>
Var Graph<T>::causal_attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t n_heads, T score_scale) {
  const Tensor<T>& qv = value(q);
  const Tensor<T>& kv = value(k);
  const Tensor<T>& vv = value(v);
  require(qv.rank() == 2 && qv.shape() == kv.shape() && qv.shape() == vv.shape(), "causal_attention",
          "q, k, v must share one rank-2 shape");
  const std::size_t rows = qv.dim(0), d = qv.dim(1);
  require(n_heads > 0 && d % n_heads == 0, "causal_attention", "width not divisible by heads");
  require(seq_len > 0 && rows % seq_len == 0, "causal_attention", "rows not a multiple of seq_len");
  const std::size_t d_head = d / n_heads, batch = rows / seq_len, tt = seq_len * seq_len;
  const bool keep = any_requires_grad({q, k, v});
  // Attention probabilities, one [T x T] block per (batch, head).
  std::vector<T> probs(keep ? batch * n_heads * tt : tt);
  Tensor<T> out({rows, d});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      T* p = probs.data() + (keep ? (b * n_heads + h) * tt : 0);
      const std::size_t off = head_offset(b * seq_len, d, h, d_head);
      blas::gemm(false, true, seq_len, seq_len, d_head, score_scale, qv.ptr() + off, d, kv.ptr() + off, d, T{0}, p,
                 seq_len);
      for (std::size_t t = 0; t < seq_len; ++t) {
        T* row = p + t * seq_len;
        const T mx = *std::max_element(row, row + t + 1);
        double total = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
          row[j] = std::exp(row[j] - mx);
          total += row[j];
        }
        for (std::size_t j = 0; j <= t; ++j) row[j] = static_cast<T>(row[j] / total);
        std::fill(row + t + 1, row + seq_len, T{0});
      }
      blas::gemm(false, false, seq_len, d_head, seq_len, T{1}, p, seq_len, vv.ptr() + off, d, T{0}, out.ptr() + off,
                 d);
    }
  }
  if (!keep) probs.clear();
  return push("causal_attention", std::move(out), {q.id, k.id, v.id},
              [=, probs = std::move(probs)](Graph& g, std::size_t self) {
                const auto& parents = g.nodes_[self].parents;
                const Tensor<T>& dout = g.out_grad(self);
                const Tensor<T>& qx = g.nodes_[parents[0]].value;
                const Tensor<T>& kx = g.nodes_[parents[1]].value;
                const Tensor<T>& vx = g.nodes_[parents[2]].value;
                Tensor<T>* dq = g.grad_of(parents[0]);
                Tensor<T>* dk = g.grad_of(parents[1]);
                Tensor<T>* dv = g.grad_of(parents[2]);
                std::vector<T> dp(tt);
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t h = 0; h < n_heads; ++h) {
                    const T* p = probs.data() + (b * n_heads + h) * tt;
                    const std::size_t off = head_offset(b * seq_len, d, h, d_head);
                    if (dv) {
                      blas::gemm(true, false, seq_len, d_head, seq_len, T{1}, p, seq_len, dout.ptr() + off, d, T{1},
                                 dv->ptr() + off, d);
                    }
                    if (!dq && !dk) continue;
                    blas::gemm(false, true, seq_len, seq_len, d_head, T{1}, dout.ptr() + off, d, vx.ptr() + off, d,
                               T{0}, dp.data(), seq_len);
                    for (std::size_t t = 0; t < seq_len; ++t) {
                      T* drow = dp.data() + t * seq_len;
                      const T* prow = p + t * seq_len;
                      double dot = 0.0;
                      for (std::size_t j = 0; j <= t; ++j) dot += static_cast<double>(drow[j]) * prow[j];
                      for (std::size_t j = 0; j <= t; ++j) drow[j] = prow[j] * (drow[j] - static_cast<T>(dot));
                      std::fill(drow + t + 1, drow + seq_len, T{0});
                    }
                    if (dq) {
                      blas::gemm(false, false, seq_len, d_head, seq_len, score_scale, dp.data(), seq_len,
                                 kx.ptr() + off, d, T{1}, dq->ptr() + off, d);
                    }
                    if (dk) {
                      blas::gemm(true, false, seq_len, d_head, seq_len, score_scale, dp.data(), seq_len,
                                 qx.ptr() + off, d, T{1}, dk->ptr() + off, d);
                    }
                  }
                }
              });
}

template <typename T>
Var Graph<T>::gather_rows(Var xv, std::vector<std::size_t> rows) {
  const Tensor<T>& x = value(xv);
  require(x.rank() == 2, "gather_rows", "input must be rank 2");
  const std::size_t cols = x.cols();
  Tensor<T> out({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < x.dim(0), "gather_rows",
            "row " + std::to_string(rows[i]) + " out of range " + std::to_string(x.dim(0)));
    std::copy_n(x.ptr() + rows[i] * cols, cols, out.ptr() + i * cols);
  }
  return push("gather_rows", std::move(out), {xv.id}, [cols, rows = std::move(rows)](Graph& g, std::size_t self) {
    const Tensor<T>& dy = g.out_grad(self);
    if (Tensor<T>* dx = g.grad_of(g.nodes_[self].parents[0])) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        T* dst = dx->ptr() + rows[i] * cols;
        const T* src = dy.ptr() + i * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
      }
    }
  });
}

template <typename T>
Var Graph<T>::gather_elements(Var xv, std::vector<std::pair<std::size_t, std::size_t>> index) {
  const Tensor<T>& x = value(xv);
  Tensor<T> out({index.size(), 1});
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i].first < x.rows() && index[i].second < x.cols(), "gather_elements", "index out of range");
    out[i] = x.at(index[i].first, index[i].second);
  }
  return push("gather_elements", std::move(out), {xv.id}, [index = std::move(index)](Graph& g, std::size_t self) {
    const Tensor<T>& dy = g.out_grad(self);
    if (Tensor<T>* dx = g.grad_of(g.nodes_[self].parents[0])) {
      for (std::size_t i = 0; i < index.size(); ++i) dx->at(index[i].first, index[i].second) += dy[i];
    }
  });
}

template <typename T>
Var Graph<T>::scale_rows(Var xv, Var wv) {
  const Tensor<T>& x = value(xv);
  const Tensor<T>& w = value(wv);
  require(w.size() == x.rows(), "scale_rows", "one weight per row required");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor<T> out = x;
  for (std::size_t r = 0; r < rows; ++r) {
    for (T& e : out.row(r)) e *= w[r];
  }
  return push("scale_rows", std::move(out), {xv.id, wv.id}, [rows, cols](Graph& g, std::size_t self) {
    const std::size_t ix = g.nodes_[self].parents[0], iw = g.nodes_[self].parents[1];
    const Tensor<T>& dy = g.out_grad(self);
    if (Tensor<T>* dx = g.grad_of(ix)) {
      const Tensor<T>& w = g.nodes_[iw].value;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) dx->at(r, c) += w[r] * dy.at(r, c);
      }
    }
    if (Tensor<T>* dw = g.grad_of(iw)) {
      const Tensor<T>& x = g.nodes_[ix].value;
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += static_cast<double>(dy.at(r, c)) * x.at(r, c);
        (*dw)[r] += static_cast<T>(dot);
      }
    }
  });
}

template <typename T>
Var Graph<T>::scatter_add_rows(std::vector<Var> parts, std::vector<std::vector<std::size_t>> rows,
                               std::size_t n_rows) {
  require(parts.size() == rows.size(), "scatter_add_rows", "one row list per part");
  require(!parts.empty(), "scatter_add_rows", "no parts");
  const std::size_t cols = value(parts.front()).cols();
  Tensor<T> out({n_rows, cols});
  std::vector<std::size_t> ids;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor<T>& x = value(parts[p]);
    require(x.rows() == rows[p].size() && (x.size() == 0 || x.cols() == cols), "scatter_add_rows",
            "part shape does not match its row list");
    for (std::size_t i = 0; i < rows[p].size(); ++i) {
      require(rows[p][i] < n_rows, "scatter_add_rows", "row out of range");
      T* dst = out.ptr() + rows[p][i] * cols;
      const T* src = x.ptr() + i * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
    ids.push_back(parts[p].id);
  }
  return push("scatter_add_rows", std::move(out), std::move(ids),
              [cols, rows = std::move(rows)](Graph& g, std::size_t self) {
                const Tensor<T>& dy = g.out_grad(self);
                const auto parents = g.nodes_[self].parents;
                for (std::size_t p = 0; p < parents.size(); ++p) {
                  Tensor<T>* dx = g.grad_of(parents[p]);
                  if (!dx) continue;
                  for (std::size_t i = 0; i < rows[p].size(); ++i) {
                    const T* src = dy.ptr() + rows[p][i] * cols;
                    T* dst = dx->ptr() + i * cols;
                    for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
                  }
                }
              });
}

template <typename T>
Var Graph<T>::topk_softmax(Var logits, std::size_t k, std::vector<std::size_t>& selected) {
  const Tensor<T>& x = value(logits);
  const std::size_t rows = x.rows(), cols = x.cols();
  require(k >= 1 && k <= cols, "topk_softmax", "k must lie in [1, " + std::to_string(cols) + "]");
  selected.assign(rows * k, 0);
  Tensor<T> out({rows, k});
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.row(r);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return in[a] > in[b] || (in[a] == in[b] && a < b); });
    const T mx = in[order[0]];
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      selected[r * k + j] = order[j];
      out.at(r, j) = std::exp(in[order[j]] - mx);
      total += out.at(r, j);
    }
    for (std::size_t j = 0; j < k; ++j) out.at(r, j) = static_cast<T>(out.at(r, j) / total);
  }
  return push("topk_softmax", std::move(out), {logits.id}, [rows, k, sel = selected](Graph& g, std::size_t self) {
    const Tensor<T>& dy = g.out_grad(self);
    const Tensor<T>& y = g.nodes_[self].value;
    if (Tensor<T>* dx = g.grad_of(g.nodes_[self].parents[0])) {
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(dy.at(r, j)) * y.at(r, j);
        for (std::size_t j = 0; j < k; ++j) {
          dx->at(r, sel[r * k + j]) += y.at(r, j) * (dy.at(r, j) - static_cast<T>(dot));
        }
      }
    }
  });
}

template <typename T>
Var Graph<T>::cross_entropy(Var logits, std::span<const std::int32_t> targets) {
  const Tensor<T>& x = value(logits);
  const std::size_t rows = x.rows(), cols = x.cols();
  require(targets.size() == rows, "cross_entropy", "one target per row required");
  require(rows > 0, "cross_entropy", "empty batch");
  Tensor<T> probs({rows, cols});
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary of " +
                              std::to_string(cols));
    }
    auto in = x.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(static_cast<double>(in[c]) - mx);
    const double lse = mx + std::log(total);
    loss += lse - in[static_cast<std::size_t>(targets[r])];
    for (std::size_t c = 0; c < cols; ++c) probs.at(r, c) = static_cast<T>(std::exp(in[c] - lse));
  }
  Tensor<T> out({1}, static_cast<T>(loss / static_cast<double>(rows)));
  std::vector<std::int32_t> tgt(targets.begin(), targets.end());
  return push("cross_entropy", std::move(out), {logits.id},
              [rows, cols, probs = std::move(probs), tgt = std::move(tgt)](Graph& g, std::size_t self) {
                const T scale = g.out_grad(self)[0] / static_cast<T>(rows);
                if (Tensor<T>* dx = g.grad_of(g.nodes_[self].parents[0])) {
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) dx->at(r, c) += scale * probs.at(r, c);
                    dx->at(r, static_cast<std::size_t>(tgt[r])) -= scale;
                  }
                }
              });
}

template <typename T>
Var Graph<T>::load_balance_loss(Var full_probs, std::span<const std::size_t> selected, std::size_t k) {
  const Tensor<T>& p = value(full_probs);
  const std::size_t rows = p.rows(), experts = p.cols();
  require(rows > 0, "load_balance_loss", "empty batch");
  require(k >= 1 && selected.size() == rows * k, "load_balance_loss", "selection table must be rows x k");
  std::vector<double> frac(experts, 0.0);
  for (std::size_t e : selected) {
    require(e < experts, "load_balance_loss", "expert index out of range");
    frac[e] += 1.0;
  }
  for (double& f : frac) f /= static_cast<double>(k * rows);
  double loss = 0.0;
  for (std::size_t i = 0; i < experts; ++i) {
    double mean_p = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean_p += p.at(r, i);
    loss += frac[i] * (mean_p / static_cast<double>(rows));
  }
  loss *= static_cast<double>(experts);
  return push("load_balance_loss", Tensor<T>({1}, static_cast<T>(loss)), {full_probs.id},
              [rows, experts, frac = std::move(frac)](Graph& g, std::size_t self) {
                const double gout = g.out_grad(self)[0];
                if (Tensor<T>* dp = g.grad_of(g.nodes_[self].parents[0])) {
                  for (std::size_t i = 0; i < experts; ++i) {
                    const T coef = static_cast<T>(gout * static_cast<double>(experts) * frac[i] /
                                                  static_cast<double>(rows));
                    for (std::size_t r = 0; r < rows; ++r) dp->at(r, i) += coef;
                  }
                }
              });
}

template <typename T>
Var Graph<T>::z_loss(Var logits) {
  const Tensor<T>& x = value(logits);
  const std::size_t rows = x.rows(), cols = x.cols();
  require(rows > 0 && cols > 0, "z_loss", "empty batch");
  std::vector<double> lse(rows);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = x.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (T v : in) total += std::exp(static_cast<double>(v) - mx);
    lse[r] = mx + std::log(total);
    loss += lse[r] * lse[r];
  }
  return push("z_loss", Tensor<T>({1}, static_cast<T>(loss / static_cast<double>(rows))), {logits.id},
              [rows, cols, lse = std::move(lse)](Graph& g, std::size_t self) {
                const double gout = g.out_grad(self)[0];
                const std::size_t ix = g.nodes_[self].parents[0];
                if (Tensor<T>* dx = g.grad_of(ix)) {
                  const Tensor<T>& x = g.nodes_[ix].value;
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double coef = gout * 2.0 * lse[r] / static_cast<double>(rows);
                    for (std::size_t c = 0; c < cols; ++c) {
                      dx->at(r, c) += static_cast<T>(coef * std::exp(static_cast<double>(x.at(r, c)) - lse[r]));
                    }
                  }
                }
              });
}

template <typename T>
Var Graph<T>::sum(Var a) {
  const Tensor<T>& x = value(a);
  double total = 0.0;
  for (T v : x.data()) total += v;
  return push("sum", Tensor<T>({1}, static_cast<T>(total)), {a.id}, [](Graph& g, std::size_t self) {
    const T gout = g.out_grad(self)[0];
    if (Tensor<T>* dx = g.grad_of(g.nodes_[self].parents[0])) {
      for (T& v : dx->data()) v += gout;
    }
  });
}

template <typename T>
Var Graph<T>::mean(Var a) {
  const std::size_t n = value(a).size();
  require(n > 0, "mean", "empty input");
  return scale(sum(a), T{1} / static_cast<T>(n));
}

template <typename T>
Var Graph<T>::weighted_sum(std::span<const Var> terms, std::span<const T> weights) {
  require(!terms.empty() && terms.size() == weights.size(), "weighted_sum", "one weight per term required");
  const Shape shape = value(terms[0]).shape();
  Tensor<T> out(shape);
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const Tensor<T>& x = value(terms[i]);
    require(x.shape() == shape, "weighted_sum", "terms must share one shape");
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += weights[i] * x[j];
    ids.push_back(terms[i].id);
  }
  std::vector<T> w(weights.begin(), weights.end());
  return push("weighted_sum", std::move(out), std::move(ids), [w = std::move(w)](Graph& g, std::size_t self) {
    const Tensor<T>& dy = g.out_grad(self);
    const auto parents = g.nodes_[self].parents;
    for (std::size_t i = 0; i < parents.size(); ++i) {
      if (Tensor<T>* dx = g.grad_of(parents[i])) {
        for (std::size_t j = 0; j < dy.size(); ++j) (*dx)[j] += w[i] * dy[j];
      }
    }
  });
}

template <typename T>
void Graph<T>::backward(Var root) {
  if (!grad_enabled_) throw std::logic_error("backward: graph was built without gradients");
  Node& r = nodes_.at(root.id);
  if (r.value.size() != 1) throw ShapeError("backward: root must hold a single value");
  if (!r.requires_grad) return;
  grad_of(root.id)->fill(T{1});
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) {
      Tensor<T>& pg = n.param->grad;
      if (pg.shape() != n.grad.shape()) pg = Tensor<T>(n.grad.shape());
      for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace loopmoe
