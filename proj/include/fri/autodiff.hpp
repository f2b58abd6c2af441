#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fri/common.hpp"

// Minimal reverse-mode engine: dense tensors of rank <= 3, exactly the
// primitives the delay encoder and joint objective need. Ops record lineage
// as shared-pointer DAG edges; backward() runs closures in reverse
// topological order. Gradients accumulate until explicitly zeroed.
//
// Determinism contract: every output element is produced by exactly one
// worker using a fixed-order summation, and cross-batch reductions use a
// fixed block count with a sequential final reduce. Results are therefore
// bit-identical for any thread count, not just in single-threaded mode.

namespace fri::ad {

inline std::atomic<int>& thread_setting() {
  static std::atomic<int> threads{1};
  return threads;
}
inline void set_threads(int n) { thread_setting().store(n < 1 ? 1 : n); }
inline int threads() { return thread_setting().load(); }

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<size_t> dims) {
    if (dims.size() > 3) throw ConfigError("Shape: rank must be <= 3");
    rank_ = dims.size();
    size_t i = 0;
    for (size_t d : dims) dims_[i++] = d;
  }

  size_t rank() const { return rank_; }
  size_t operator[](size_t i) const { return dims_[i]; }
  size_t numel() const {
    size_t n = 1;
    for (size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return rank_ == 0 ? 0 : n;
  }
  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    for (size_t i = 0; i < rank_; ++i) {
      if (dims_[i] != o.dims_[i]) return false;
    }
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "[";
    for (size_t i = 0; i < rank_; ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  std::array<size_t, 3> dims_{1, 1, 1};
  size_t rank_ = 0;
};

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), data(s.numel(), 0.0) {}
  Tensor(Shape s, std::vector<double> d) : shape(s), data(std::move(d)) {
    if (data.size() != shape.numel()) {
      throw ConfigError(str_printf("Tensor: %zu values for shape %s", data.size(),
                                   shape.str().c_str()));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  size_t numel() const { return shape.numel(); }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }
};

class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
 public:
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool trainable = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  std::string label;

  void ensure_grad() {
    if (grad.data.empty()) grad = Tensor::zeros(value.shape);
  }
  void zero_grad() {
    if (!grad.data.empty()) std::fill(grad.data.begin(), grad.data.end(), 0.0);
  }
};

inline NodePtr constant(Tensor value, std::string label = "") {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->label = std::move(label);
  return n;
}

inline NodePtr parameter(Tensor value, std::string label) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->trainable = true;
  n->label = std::move(label);
  return n;
}

inline NodePtr make_op(Tensor value, std::vector<NodePtr> parents,
                       std::function<void(Node&)> backward_fn, std::string label) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->label = std::move(label);
  for (const auto& p : n->parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ConfigError(
      str_printf("%s: shape mismatch %s vs %s", op, a.str().c_str(), b.str().c_str()));
}

// Elementwise dispatch; small tensors are not worth a thread spawn.
template <typename Fn>
void for_elems(size_t n, Fn&& fn) {
  if (n < 16384 || threads() == 1) {
    fn(size_t{0}, n);
    return;
  }
  parallel_for(n, threads(), fn);
}

}  // namespace detail

// --------------------------------------------------------------------------
// Elementwise ops. add supports the two bias-broadcast patterns
// ([B,F] + [F] and [B,C,L] + [C]); multiply supports a scalar operand.
// No other broadcasting exists in this engine.
// --------------------------------------------------------------------------

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
  const Shape& sa = a->value.shape;
  const Shape& sb = b->value.shape;
  Tensor out(sa);
  const size_t n = sa.numel();
  if (sa == sb) {
    detail::for_elems(n, [&](size_t i0, size_t i1) {
      for (size_t i = i0; i < i1; ++i) out.data[i] = a->value.data[i] + b->value.data[i];
    });
    return make_op(std::move(out), {a, b},
                   [](Node& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     const size_t m = self.value.numel();
                     if (pa.requires_grad) {
                       pa.ensure_grad();
                       detail::for_elems(m, [&](size_t i0, size_t i1) {
                         for (size_t i = i0; i < i1; ++i) pa.grad.data[i] += self.grad.data[i];
                       });
                     }
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       detail::for_elems(m, [&](size_t i0, size_t i1) {
                         for (size_t i = i0; i < i1; ++i) pb.grad.data[i] += self.grad.data[i];
                       });
                     }
                   },
                   "add");
  }
  // Bias broadcast: trailing-feature bias for rank 2, channel bias for rank 3.
  const bool feature_bias = sa.rank() == 2 && sb.rank() == 1 && sb[0] == sa[1];
  const bool channel_bias = sa.rank() == 3 && sb.rank() == 1 && sb[0] == sa[1];
  if (!feature_bias && !channel_bias) detail::shape_error("add", sa, sb);
  if (feature_bias) {
    const size_t rows = sa[0], cols = sa[1];
    for (size_t r = 0; r < rows; ++r) {
      const double* av = a->value.ptr() + r * cols;
      double* ov = out.ptr() + r * cols;
      for (size_t c = 0; c < cols; ++c) ov[c] = av[c] + b->value.data[c];
    }
  } else {
    const size_t batch = sa[0], ch = sa[1], len = sa[2];
    parallel_for(batch, threads(), [&](size_t b0, size_t b1) {
      for (size_t r = b0; r < b1; ++r) {
        for (size_t c = 0; c < ch; ++c) {
          const double* av = a->value.ptr() + (r * ch + c) * len;
          double* ov = out.ptr() + (r * ch + c) * len;
          const double bias = b->value.data[c];
          for (size_t i = 0; i < len; ++i) ov[i] = av[i] + bias;
        }
      }
    });
  }
  return make_op(std::move(out), {a, b},
                 [feature_bias](Node& self) {
                   auto& pa = *self.parents[0];
                   auto& pb = *self.parents[1];
                   const Shape& s = self.value.shape;
                   if (pa.requires_grad) {
                     pa.ensure_grad();
                     detail::for_elems(self.value.numel(), [&](size_t i0, size_t i1) {
                       for (size_t i = i0; i < i1; ++i) pa.grad.data[i] += self.grad.data[i];
                     });
                   }
                   if (pb.requires_grad) {
                     pb.ensure_grad();
                     if (feature_bias) {
                       const size_t rows = s[0], cols = s[1];
                       for (size_t r = 0; r < rows; ++r) {
                         const double* gv = self.grad.ptr() + r * cols;
                         for (size_t c = 0; c < cols; ++c) pb.grad.data[c] += gv[c];
                       }
                     } else {
                       const size_t batch = s[0], ch = s[1], len = s[2];
                       parallel_for(ch, threads(), [&](size_t c0, size_t c1) {
                         for (size_t c = c0; c < c1; ++c) {
                           double acc = 0.0;
                           for (size_t r = 0; r < batch; ++r) {
                             const double* gv = self.grad.ptr() + (r * ch + c) * len;
                             for (size_t i = 0; i < len; ++i) acc += gv[i];
                           }
                           pb.grad.data[c] += acc;
                         }
                       });
                     }
                   }
                 },
                 "add_bias");
}

inline NodePtr subtract(const NodePtr& a, const NodePtr& b) {
  if (a->value.shape != b->value.shape) {
    detail::shape_error("subtract", a->value.shape, b->value.shape);
  }
  Tensor out(a->value.shape);
  const size_t n = out.numel();
  detail::for_elems(n, [&](size_t i0, size_t i1) {
    for (size_t i = i0; i < i1; ++i) out.data[i] = a->value.data[i] - b->value.data[i];
  });
  return make_op(std::move(out), {a, b},
                 [](Node& self) {
                   auto& pa = *self.parents[0];
                   auto& pb = *self.parents[1];
                   const size_t m = self.value.numel();
                   if (pa.requires_grad) {
                     pa.ensure_grad();
                     detail::for_elems(m, [&](size_t i0, size_t i1) {
                       for (size_t i = i0; i < i1; ++i) pa.grad.data[i] += self.grad.data[i];
                     });
                   }
                   if (pb.requires_grad) {
                     pb.ensure_grad();
                     detail::for_elems(m, [&](size_t i0, size_t i1) {
                       for (size_t i = i0; i < i1; ++i) pb.grad.data[i] -= self.grad.data[i];
                     });
                   }
                 },
                 "subtract");
}

inline NodePtr multiply(const NodePtr& a, const NodePtr& b) {
  const Shape& sa = a->value.shape;
  const Shape& sb = b->value.shape;
  if (sa == sb) {
    Tensor out(sa);
    const size_t n = out.numel();
    detail::for_elems(n, [&](size_t i0, size_t i1) {
      for (size_t i = i0; i < i1; ++i) out.data[i] = a->value.data[i] * b->value.data[i];
    });
    return make_op(std::move(out), {a, b},
                   [](Node& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     const size_t m = self.value.numel();
                     if (pa.requires_grad) {
                       pa.ensure_grad();
                       detail::for_elems(m, [&](size_t i0, size_t i1) {
                         for (size_t i = i0; i < i1; ++i) {
                           pa.grad.data[i] += self.grad.data[i] * pb.value.data[i];
                         }
                       });
                     }
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       detail::for_elems(m, [&](size_t i0, size_t i1) {
                         for (size_t i = i0; i < i1; ++i) {
                           pb.grad.data[i] += self.grad.data[i] * pa.value.data[i];
                         }
                       });
                     }
                   },
                   "multiply");
  }
  // Scalar times tensor (either order).
  const bool a_scalar = sa.numel() == 1;
  const bool b_scalar = sb.numel() == 1;
  if (!a_scalar && !b_scalar) detail::shape_error("multiply", sa, sb);
  const NodePtr& s = a_scalar ? a : b;
  const NodePtr& t = a_scalar ? b : a;
  Tensor out(t->value.shape);
  const double sv = s->value.data[0];
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data[i] = sv * t->value.data[i];
  return make_op(std::move(out), {s, t},
                 [](Node& self) {
                   auto& ps = *self.parents[0];
                   auto& pt = *self.parents[1];
                   const size_t m = self.value.numel();
                   if (ps.requires_grad) {
                     ps.ensure_grad();
                     double acc = 0.0;
                     for (size_t i = 0; i < m; ++i) acc += self.grad.data[i] * pt.value.data[i];
                     ps.grad.data[0] += acc;
                   }
                   if (pt.requires_grad) {
                     pt.ensure_grad();
                     const double svb = ps.value.data[0];
                     for (size_t i = 0; i < m; ++i) pt.grad.data[i] += self.grad.data[i] * svb;
                   }
                 },
                 "multiply_scalar");
}

// --------------------------------------------------------------------------
// matmul: [M,K] x [K,N] -> [M,N], or the batched matvec [B,M,K] x [K] -> [B,M].
// --------------------------------------------------------------------------

namespace detail {

inline constexpr size_t kReduceBlocks = 16;

// C[M,N] += A[M,K] * B[K,N], rows of C partitioned across workers.
inline void mm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n,
                  int nthreads) {
  parallel_for(m, nthreads, [&](size_t r0, size_t r1) {
    for (size_t r = r0; r < r1; ++r) {
      const double* arow = a + r * k;
      double* crow = c + r * n;
      for (size_t kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = b + kk * n;
        for (size_t cc = 0; cc < n; ++cc) crow[cc] += av * brow[cc];
      }
    }
  });
}

// C[M,K] += G[M,N] * B[K,N]^T (rows of C partitioned across workers).
inline void mm_nt(const double* g, const double* b, double* c, size_t m, size_t k, size_t n,
                  int nthreads) {
  parallel_for(m, nthreads, [&](size_t r0, size_t r1) {
    for (size_t r = r0; r < r1; ++r) {
      const double* grow = g + r * n;
      double* crow = c + r * k;
      for (size_t kk = 0; kk < k; ++kk) {
        const double* brow = b + kk * n;
        double acc = 0.0;
        for (size_t cc = 0; cc < n; ++cc) acc += grow[cc] * brow[cc];
        crow[kk] += acc;
      }
    }
  });
}

// C[K,N] += A[M,K]^T * G[M,N]. Row blocks of A/G are walked sequentially so
// the accumulation order per output element is fixed; K is partitioned
// across workers inside each block.
inline void mm_tn(const double* a, const double* g, double* c, size_t m, size_t k, size_t n,
                  int nthreads) {
  const size_t block = 256;
  for (size_t mb = 0; mb < m; mb += block) {
    const size_t mend = std::min(m, mb + block);
    parallel_for(k, nthreads, [&](size_t k0, size_t k1) {
      for (size_t r = mb; r < mend; ++r) {
        const double* arow = a + r * k;
        const double* grow = g + r * n;
        for (size_t kk = k0; kk < k1; ++kk) {
          const double av = arow[kk];
          double* crow = c + kk * n;
          for (size_t cc = 0; cc < n; ++cc) crow[cc] += av * grow[cc];
        }
      }
    });
  }
}

}  // namespace detail

inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
  const Shape& sa = a->value.shape;
  const Shape& sb = b->value.shape;
  if (sa.rank() == 2 && sb.rank() == 2) {
    if (sa[1] != sb[0]) detail::shape_error("matmul", sa, sb);
    const size_t m = sa[0], k = sa[1], n = sb[1];
    Tensor out({m, n});
    detail::mm_nn(a->value.ptr(), b->value.ptr(), out.ptr(), m, k, n, threads());
    return make_op(std::move(out), {a, b},
                   [m, k, n](Node& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     if (pa.requires_grad) {
                       pa.ensure_grad();
                       detail::mm_nt(self.grad.ptr(), pb.value.ptr(), pa.grad.ptr(), m, k, n,
                                     threads());
                     }
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       detail::mm_tn(pa.value.ptr(), self.grad.ptr(), pb.grad.ptr(), m, k, n,
                                     threads());
                     }
                   },
                   "matmul");
  }
  if (sa.rank() == 3 && sb.rank() == 1) {
    if (sa[2] != sb[0]) detail::shape_error("matmul", sa, sb);
    const size_t batch = sa[0], m = sa[1], k = sa[2];
    Tensor out({batch, m});
    parallel_for(batch, threads(), [&](size_t b0, size_t b1) {
      for (size_t r = b0; r < b1; ++r) {
        const double* abase = a->value.ptr() + r * m * k;
        double* obase = out.ptr() + r * m;
        for (size_t i = 0; i < m; ++i) {
          const double* arow = abase + i * k;
          double acc = 0.0;
          for (size_t kk = 0; kk < k; ++kk) acc += arow[kk] * b->value.data[kk];
          obase[i] = acc;
        }
      }
    });
    return make_op(std::move(out), {a, b},
                   [batch, m, k](Node& self) {
                     auto& pa = *self.parents[0];
                     auto& pb = *self.parents[1];
                     if (pa.requires_grad) {
                       pa.ensure_grad();
                       parallel_for(batch, threads(), [&](size_t b0, size_t b1) {
                         for (size_t r = b0; r < b1; ++r) {
                           const double* gbase = self.grad.ptr() + r * m;
                           double* dbase = pa.grad.ptr() + r * m * k;
                           for (size_t i = 0; i < m; ++i) {
                             const double gv = gbase[i];
                             double* drow = dbase + i * k;
                             for (size_t kk = 0; kk < k; ++kk) {
                               drow[kk] += gv * pb.value.data[kk];
                             }
                           }
                         }
                       });
                     }
                     if (pb.requires_grad) {
                       pb.ensure_grad();
                       // Fixed block partials, reduced sequentially.
                       const size_t nblk = std::min(detail::kReduceBlocks, batch);
                       const size_t per = (batch + nblk - 1) / nblk;
                       std::vector<std::vector<double>> partial(
                           nblk, std::vector<double>(k, 0.0));
                       parallel_for(nblk, threads(), [&](size_t q0, size_t q1) {
                         for (size_t q = q0; q < q1; ++q) {
                           const size_t rb = q * per, re = std::min(batch, rb + per);
                           auto& part = partial[q];
                           for (size_t r = rb; r < re; ++r) {
                             const double* abase = pa.value.ptr() + r * m * k;
                             const double* gbase = self.grad.ptr() + r * m;
                             for (size_t i = 0; i < m; ++i) {
                               const double gv = gbase[i];
                               const double* arow = abase + i * k;
                               for (size_t kk = 0; kk < k; ++kk) part[kk] += gv * arow[kk];
                             }
                           }
                         }
                       });
                       for (size_t q = 0; q < nblk; ++q) {
                         for (size_t kk = 0; kk < k; ++kk) pb.grad.data[kk] += partial[q][kk];
                       }
                     }
                   },
                   "matmul_batched_vec");
  }
  detail::shape_error("matmul", sa, sb);
}

// --------------------------------------------------------------------------
// conv1d: cross-correlation, stride 1, zero padding preserving length.
// x: [B, C, L], w: [Cout, C, K] (odd K), y: [B, Cout, L].
// --------------------------------------------------------------------------

namespace detail {

// Copies the rows of one example into zero-padded buffers (pad on each side)
// so tap loops run branch-free over the full output length.
inline void fill_padded(const double* rows, size_t channels, size_t len, size_t pad,
                        std::vector<double>& buf) {
  const size_t stride = len + 2 * pad;
  buf.assign(channels * stride, 0.0);
  for (size_t c = 0; c < channels; ++c) {
    std::copy(rows + c * len, rows + (c + 1) * len, buf.data() + c * stride + pad);
  }
}

inline void conv_rows_acc(const double* xpad, const double* wrow, size_t ksz, size_t len,
                          double* yrow) {
  if (ksz == 3) {
    const double w0 = wrow[0], w1 = wrow[1], w2 = wrow[2];
    for (size_t i = 0; i < len; ++i) {
      yrow[i] += w0 * xpad[i] + w1 * xpad[i + 1] + w2 * xpad[i + 2];
    }
    return;
  }
  for (size_t k = 0; k < ksz; ++k) {
    const double wv = wrow[k];
    const double* xs = xpad + k;
    for (size_t i = 0; i < len; ++i) yrow[i] += wv * xs[i];
  }
}

}  // namespace detail

inline NodePtr conv1d(const NodePtr& x, const NodePtr& w) {
  const Shape& sx = x->value.shape;
  const Shape& sw = w->value.shape;
  if (sx.rank() != 3 || sw.rank() != 3 || sx[1] != sw[1]) {
    detail::shape_error("conv1d", sx, sw);
  }
  const size_t batch = sx[0], cin = sx[1], len = sx[2];
  const size_t cout = sw[0], ksz = sw[2];
  if (ksz % 2 == 0) throw ConfigError("conv1d: kernel size must be odd");
  const size_t pad = (ksz - 1) / 2;
  const size_t pstride = len + 2 * pad;
  Tensor out({batch, cout, len});
  parallel_for(batch, threads(), [&](size_t b0, size_t b1) {
    std::vector<double> xpad;
    for (size_t b = b0; b < b1; ++b) {
      detail::fill_padded(x->value.ptr() + b * cin * len, cin, len, pad, xpad);
      double* yb = out.ptr() + b * cout * len;
      for (size_t o = 0; o < cout; ++o) {
        double* yrow = yb + o * len;
        for (size_t c = 0; c < cin; ++c) {
          detail::conv_rows_acc(xpad.data() + c * pstride, w->value.ptr() + (o * cin + c) * ksz,
                                ksz, len, yrow);
        }
      }
    }
  });
  return make_op(
      std::move(out), {x, w},
      [batch, cin, len, cout, ksz, pad, pstride](Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        if (px.requires_grad) {
          px.ensure_grad();
          // dx[j] += w[k] * g[j + pad - k]; with g padded the index becomes
          // gpad[j + 2 pad - k], in range for every j and k.
          parallel_for(batch, threads(), [&](size_t b0, size_t b1) {
            std::vector<double> gpad;
            std::vector<double> wflip(ksz);
            for (size_t b = b0; b < b1; ++b) {
              detail::fill_padded(self.grad.ptr() + b * cout * len, cout, len, pad, gpad);
              double* dxb = px.grad.ptr() + b * cin * len;
              for (size_t c = 0; c < cin; ++c) {
                double* dxrow = dxb + c * len;
                for (size_t o = 0; o < cout; ++o) {
                  const double* wrow = pw.value.ptr() + (o * cin + c) * ksz;
                  for (size_t k = 0; k < ksz; ++k) wflip[k] = wrow[ksz - 1 - k];
                  detail::conv_rows_acc(gpad.data() + o * pstride, wflip.data(), ksz, len,
                                        dxrow);
                }
              }
            }
          });
        }
        if (pw.requires_grad) {
          pw.ensure_grad();
          const size_t wsize = cout * cin * ksz;
          const size_t nblk = std::min(detail::kReduceBlocks, batch);
          const size_t per = (batch + nblk - 1) / nblk;
          std::vector<std::vector<double>> partial(nblk, std::vector<double>(wsize, 0.0));
          parallel_for(nblk, threads(), [&](size_t q0, size_t q1) {
            std::vector<double> xpad;
            for (size_t q = q0; q < q1; ++q) {
              const size_t rb = q * per, re = std::min(batch, rb + per);
              auto& part = partial[q];
              for (size_t b = rb; b < re; ++b) {
                detail::fill_padded(px.value.ptr() + b * cin * len, cin, len, pad, xpad);
                const double* gb = self.grad.ptr() + b * cout * len;
                for (size_t o = 0; o < cout; ++o) {
                  const double* grow = gb + o * len;
                  for (size_t c = 0; c < cin; ++c) {
                    const double* xp = xpad.data() + c * pstride;
                    double* prow = part.data() + (o * cin + c) * ksz;
                    if (ksz == 3) {
                      double a0 = 0.0, a1 = 0.0, a2 = 0.0;
                      for (size_t i = 0; i < len; ++i) {
                        a0 += xp[i] * grow[i];
                        a1 += xp[i + 1] * grow[i];
                        a2 += xp[i + 2] * grow[i];
                      }
                      prow[0] += a0;
                      prow[1] += a1;
                      prow[2] += a2;
                    } else {
                      for (size_t k = 0; k < ksz; ++k) {
                        double acc = 0.0;
                        const double* xs = xp + k;
                        for (size_t i = 0; i < len; ++i) acc += xs[i] * grow[i];
                        prow[k] += acc;
                      }
                    }
                  }
                }
              }
            }
          });
          for (size_t q = 0; q < nblk; ++q) {
            for (size_t i = 0; i < wsize; ++i) pw.grad.data[i] += partial[q][i];
          }
        }
      },
      "conv1d");
}

// --------------------------------------------------------------------------
// GELU (exact erf form), reshape, reduce_sum, abs.
// --------------------------------------------------------------------------

inline NodePtr gelu(const NodePtr& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  Tensor out(x->value.shape);
  const size_t n = out.numel();
  parallel_for(n, threads(), [&](size_t i0, size_t i1) {
    for (size_t i = i0; i < i1; ++i) {
      const double v = x->value.data[i];
      out.data[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
  });
  return make_op(std::move(out), {x},
                 [](Node& self) {
                   auto& px = *self.parents[0];
                   if (!px.requires_grad) return;
                   px.ensure_grad();
                   const size_t m = self.value.numel();
                   parallel_for(m, threads(), [&](size_t i0, size_t i1) {
                     for (size_t i = i0; i < i1; ++i) {
                       const double v = px.value.data[i];
                       const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                       const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                       px.grad.data[i] += self.grad.data[i] * (cdf + v * pdf);
                     }
                   });
                 },
                 "gelu");
}

inline NodePtr reshape(const NodePtr& x, Shape target) {
  if (target.numel() != x->value.numel()) {
    detail::shape_error("reshape", x->value.shape, target);
  }
  Tensor out(target, x->value.data);
  return make_op(std::move(out), {x},
                 [](Node& self) {
                   auto& px = *self.parents[0];
                   if (!px.requires_grad) return;
                   px.ensure_grad();
                   detail::for_elems(self.value.numel(), [&](size_t i0, size_t i1) {
                     for (size_t i = i0; i < i1; ++i) px.grad.data[i] += self.grad.data[i];
                   });
                 },
                 "reshape");
}

// Flatten [B, C, L] -> [B, C*L]; rank-2 passes through unchanged.
inline NodePtr flatten(const NodePtr& x) {
  const Shape& s = x->value.shape;
  if (s.rank() == 2) return reshape(x, {s[0], s[1]});
  if (s.rank() == 3) return reshape(x, {s[0], s[1] * s[2]});
  throw ConfigError(str_printf("flatten: unsupported shape %s", s.str().c_str()));
}

inline NodePtr reduce_sum(const NodePtr& x) {
  double acc = 0.0;
  for (double v : x->value.data) acc += v;
  return make_op(Tensor::scalar(acc), {x},
                 [](Node& self) {
                   auto& px = *self.parents[0];
                   if (!px.requires_grad) return;
                   px.ensure_grad();
                   const double g = self.grad.data[0];
                   const size_t m = px.value.numel();
                   for (size_t i = 0; i < m; ++i) px.grad.data[i] += g;
                 },
                 "reduce_sum");
}

// |x| with subgradient sign(x), sign(0) = 0.
inline NodePtr abs(const NodePtr& x) {
  Tensor out(x->value.shape);
  const size_t n = out.numel();
  for (size_t i = 0; i < n; ++i) out.data[i] = std::fabs(x->value.data[i]);
  return make_op(std::move(out), {x},
                 [](Node& self) {
                   auto& px = *self.parents[0];
                   if (!px.requires_grad) return;
                   px.ensure_grad();
                   const size_t m = self.value.numel();
                   for (size_t i = 0; i < m; ++i) {
                     const double v = px.value.data[i];
                     const double s = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                     px.grad.data[i] += self.grad.data[i] * s;
                   }
                 },
                 "abs");
}

// --------------------------------------------------------------------------
// Reverse pass.
// --------------------------------------------------------------------------

inline void backward(const NodePtr& root) {
  if (root->value.numel() != 1) {
    throw ConfigError(str_printf("backward: root must be scalar, got shape %s",
                                 root->value.shape.str().c_str()));
  }
  if (!root->requires_grad) return;

  // Iterative DFS topological order over the requires_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* parent = node->parents[idx++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->ensure_grad();
  root->grad.data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

inline void zero_grads(std::span<const NodePtr> params) {
  for (const auto& p : params) p->zero_grad();
}

// --------------------------------------------------------------------------
// AdamW (decoupled weight decay) and the cosine learning-rate schedule.
// --------------------------------------------------------------------------

class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // One optimizer step may update several groups at different rates; the
  // bias-correction step count advances once per begin_step().
  void begin_step() { ++step_count_; }
  int64_t step_count() const { return step_count_; }

  void update(std::span<const NodePtr> params, double lr, double weight_decay) {
    if (step_count_ == 0) {
      throw ConfigError("AdamW: call begin_step() before update()");
    }
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));
    for (const auto& p : params) {
      p->ensure_grad();
      auto& st = state_[p.get()];
      if (st.m.data.empty()) {
        st.m = Tensor::zeros(p->value.shape);
        st.v = Tensor::zeros(p->value.shape);
      }
      const size_t n = p->value.numel();
      for (size_t i = 0; i < n; ++i) {
        const double g = p->grad.data[i];
        if (!std::isfinite(g)) {
          throw NumericError(
              str_printf("AdamW: non-finite gradient in '%s'", p->label.c_str()));
        }
        st.m.data[i] = beta1 * st.m.data[i] + (1.0 - beta1) * g;
        st.v.data[i] = beta2 * st.v.data[i] + (1.0 - beta2) * g * g;
        const double mhat = st.m.data[i] / bc1;
        const double vhat = st.v.data[i] / bc2;
        p->value.data[i] -=
            lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p->value.data[i]);
      }
    }
  }

 private:
  struct State {
    Tensor m, v;
  };
  std::unordered_map<Node*, State> state_;
  int64_t step_count_ = 0;
};

inline double cosine_lr(int64_t step, int64_t total_steps, double lr_max, double lr_min) {
  if (step < 0 || step > total_steps || total_steps <= 0) {
    throw ConfigError(str_printf("cosine_lr: step %lld outside [0, %lld]",
                                 static_cast<long long>(step),
                                 static_cast<long long>(total_steps)));
  }
  const double phase =
      3.14159265358979323846 * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

// --------------------------------------------------------------------------
// Flat binary checkpoint container: "FRIC", version, tensor count, then
// per tensor (name length, name, rank, dims, float64 payload), all
// little-endian.
// --------------------------------------------------------------------------

namespace detail {

inline void write_u64(std::ostream& os, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

inline uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError(str_printf("save_checkpoint: cannot open '%s'", path.c_str()));
  os.write("FRIC", 4);
  detail::write_u64(os, 1);  // version
  detail::write_u64(os, tensors.size());
  for (const auto& [name, tensor] : tensors) {
    detail::write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u64(os, tensor->shape.rank());
    for (size_t i = 0; i < tensor->shape.rank(); ++i) {
      detail::write_u64(os, tensor->shape[i]);
    }
    static_assert(sizeof(double) == 8);
    for (double v : tensor->data) {
      uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::write_u64(os, bits);
    }
  }
  if (!os) throw ConfigError(str_printf("save_checkpoint: write failed for '%s'", path.c_str()));
}

inline std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError(str_printf("load_checkpoint: cannot open '%s'", path.c_str()));
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FRIC", 4) != 0) {
    throw ConfigError(str_printf("load_checkpoint: '%s' is not a checkpoint", path.c_str()));
  }
  const uint64_t version = detail::read_u64(is);
  if (version != 1) {
    throw ConfigError(str_printf("load_checkpoint: unsupported version %llu",
                                 static_cast<unsigned long long>(version)));
  }
  const uint64_t count = detail::read_u64(is);
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (uint64_t t = 0; t < count; ++t) {
    const uint64_t name_len = detail::read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const uint64_t rank = detail::read_u64(is);
    if (rank > 3) throw ConfigError("load_checkpoint: rank > 3");
    std::initializer_list<size_t> empty{};
    (void)empty;
    std::array<size_t, 3> dims{1, 1, 1};
    for (uint64_t i = 0; i < rank; ++i) dims[i] = detail::read_u64(is);
    Shape shape;
    if (rank == 1) shape = Shape{dims[0]};
    else if (rank == 2) shape = Shape{dims[0], dims[1]};
    else if (rank == 3) shape = Shape{dims[0], dims[1], dims[2]};
    else throw ConfigError("load_checkpoint: rank 0 tensor");
    Tensor tensor(shape);
    for (auto& v : tensor.data) {
      const uint64_t bits = detail::read_u64(is);
      std::memcpy(&v, &bits, 8);
    }
    if (!is) throw ConfigError(str_printf("load_checkpoint: truncated file '%s'", path.c_str()));
    out.emplace_back(std::move(name), std::move(tensor));
  }
  return out;
}

}  // namespace fri::ad
