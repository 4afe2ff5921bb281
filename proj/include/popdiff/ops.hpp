#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "popdiff/error.hpp"
#include "popdiff/ndarray.hpp"
#include "popdiff/tape.hpp"

/// Differentiable primitives. Each forward result is checked for NaN/Inf and
/// registers its adjoint on the tape of its first operand.
namespace popdiff::ops {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
MatMap<T> as_mat(NdArray<T>& a, std::size_t rows, std::size_t cols,
                 std::size_t offset = 0) {
  return MatMap<T>(a.data().data() + offset, static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstMatMap<T> as_mat(const NdArray<T>& a, std::size_t rows, std::size_t cols,
                      std::size_t offset = 0) {
  return ConstMatMap<T>(a.data().data() + offset,
                        static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

template <typename T>
void check_finite(const NdArray<T>& a, const char* op) {
  if (!a.all_finite()) {
    throw NumericError(std::string("non-finite result in ") + op);
  }
}

template <typename T>
void same_tape(Var<T> a, Var<T> b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw Error(std::string(op) + ": operands live on different tapes");
  }
}

inline std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

/// outer * n * inner decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

/// Maps each element of `out` to the element of `small` it reads under
/// broadcasting. `small` has the same rank; each extent is either equal or 1.
/// When `small` only lacks leading extents the map is a plain tiling.
class Broadcast {
 public:
  Broadcast(const Shape& out, const Shape& small) {
    if (out.size() != small.size()) {
      throw ShapeError("broadcast: rank mismatch " + shape_str(out) + " vs " +
                       shape_str(small));
    }
    const std::size_t rank = out.size();
    std::vector<std::size_t> stride(rank, 0);
    std::size_t s = 1;
    for (std::size_t i = rank; i-- > 0;) {
      if (small[i] != out[i] && small[i] != 1) {
        throw ShapeError("broadcast: " + shape_str(small) + " not broadcastable to " +
                         shape_str(out));
      }
      stride[i] = small[i] == 1 ? 0 : s;
      s *= small[i];
    }
    size_ = shape_size(out);
    period_ = s;
    std::size_t lead = 0;
    while (lead < rank && small[lead] == 1) ++lead;
    tiled_ = std::equal(small.begin() + lead, small.end(), out.begin() + lead);
    if (tiled_) return;

    map_.resize(size_);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t flat = 0;
    for (std::size_t k = 0; k < size_; ++k) {
      map_[k] = flat;
      for (std::size_t d = rank; d-- > 0;) {
        ++idx[d];
        flat += stride[d];
        if (idx[d] < out[d]) break;
        flat -= stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }

  /// Calls f(out_index, small_index) for every output element.
  template <typename F>
  void each(F&& f) const {
    if (tiled_) {
      if (period_ == 0) return;
      for (std::size_t base = 0; base < size_; base += period_) {
        for (std::size_t j = 0; j < period_; ++j) f(base + j, j);
      }
    } else {
      for (std::size_t i = 0; i < size_; ++i) f(i, map_[i]);
    }
  }

 private:
  std::size_t size_ = 0;
  std::size_t period_ = 1;
  bool tiled_ = false;
  std::vector<std::size_t> map_;
};

}  // namespace detail

/// Elementwise a + b; b may broadcast along unit extents.
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "add");
  Tape<T>& tape = *a.tape;
  const NdArray<T>& av = a.value();
  const NdArray<T>& bv = b.value();
  NdArray<T> out = av;
  if (av.shape() == bv.shape()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    detail::check_finite(out, "add");
    return tape.record(std::move(out), {a.id, b.id},
                       [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
                         const auto& g = t.grad(self);
                         for (std::size_t p : {a, b}) {
                           if (!t.requires_grad(p)) continue;
                           auto& gp = t.grad(p);
                           for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
                         }
                       });
  }
  detail::Broadcast bc(av.shape(), bv.shape());
  bc.each([&](std::size_t i, std::size_t j) { out[i] += bv[j]; });
  detail::check_finite(out, "add");
  return tape.record(
      std::move(out), {a.id, b.id},
      [a = a.id, b = b.id, bc = std::move(bc)](Tape<T>& t, std::size_t self) {
        const auto& g = std::as_const(t.grad(self));
        if (t.requires_grad(a)) {
          auto& ga = t.grad(a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b)) {
          auto& gb = t.grad(b);
          bc.each([&](std::size_t i, std::size_t j) { gb[j] += g[i]; });
        }
      });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "sub");
  const NdArray<T>& bv = b.value();
  if (a.shape() != bv.shape()) {
    throw ShapeError("sub: " + shape_str(a.shape()) + " vs " + shape_str(bv.shape()));
  }
  NdArray<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  detail::check_finite(out, "sub");
  return a.tape->record(std::move(out), {a.id, b.id},
                        [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          if (t.requires_grad(a)) {
                            auto& ga = t.grad(a);
                            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                          }
                          if (t.requires_grad(b)) {
                            auto& gb = t.grad(b);
                            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                          }
                        });
}

/// Elementwise a * b; b may broadcast along unit extents.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "mul");
  const NdArray<T>& av = a.value();
  const NdArray<T>& bv = b.value();
  detail::Broadcast bc(av.shape(), bv.shape());
  NdArray<T> out(av.shape());
  bc.each([&](std::size_t i, std::size_t j) { out[i] = av[i] * bv[j]; });
  detail::check_finite(out, "mul");
  return a.tape->record(
      std::move(out), {a.id, b.id},
      [a = a.id, b = b.id, bc = std::move(bc)](Tape<T>& t, std::size_t self) {
        const auto& g = std::as_const(t.grad(self));
        const auto& av = t.value(a);
        const auto& bv = t.value(b);
        if (t.requires_grad(a)) {
          auto& ga = t.grad(a);
          bc.each([&](std::size_t i, std::size_t j) { ga[i] += g[i] * bv[j]; });
        }
        if (t.requires_grad(b)) {
          auto& gb = t.grad(b);
          bc.each([&](std::size_t i, std::size_t j) { gb[j] += g[i] * av[i]; });
        }
      });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  NdArray<T> out = a.value();
  for (auto& v : out.data()) v *= c;
  detail::check_finite(out, "scale");
  return a.tape->record(std::move(out), {a.id},
                        [a = a.id, c](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          auto& ga = t.grad(a);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
                        });
}

/// Matrix product over the last two axes.
///  - b of rank 2: a is [..., M, K], result [..., M, N].
///  - a and b of equal rank >= 3 with equal leading extents: batched product.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::same_tape(a, b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + shape_str(as) +
                     " and " + shape_str(bs));
  }
  const std::size_t K = as.back();
  const std::size_t M = as[as.size() - 2];
  const std::size_t N = bs.back();
  if (bs[bs.size() - 2] != K) {
    throw ShapeError("matmul: inner extents differ " + shape_str(as) + " x " +
                     shape_str(bs));
  }
  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(N);

  if (bs.size() == 2) {
    const std::size_t rows = shape_size(as) / K;
    NdArray<T> out(out_shape);
    detail::as_mat(out, rows, N).noalias() =
        detail::as_mat(a.value(), rows, K) * detail::as_mat(b.value(), K, N);
    detail::check_finite(out, "matmul");
    return a.tape->record(
        std::move(out), {a.id, b.id},
        [a = a.id, b = b.id, rows, K, N](Tape<T>& t, std::size_t self) {
          const auto g = detail::as_mat(std::as_const(t.grad(self)), rows, N);
          if (t.requires_grad(a)) {
            detail::as_mat(t.grad(a), rows, K).noalias() +=
                g * detail::as_mat(t.value(b), K, N).transpose();
          }
          if (t.requires_grad(b)) {
            detail::as_mat(t.grad(b), K, N).noalias() +=
                detail::as_mat(t.value(a), rows, K).transpose() * g;
          }
        });
  }

  if (as.size() != bs.size() ||
      !std::equal(as.begin(), as.end() - 2, bs.begin())) {
    throw ShapeError("matmul: batch extents differ " + shape_str(as) + " x " +
                     shape_str(bs));
  }
  const std::size_t batch = shape_size(as) / (M * K);
  NdArray<T> out(out_shape);
  for (std::size_t i = 0; i < batch; ++i) {
    detail::as_mat(out, M, N, i * M * N).noalias() =
        detail::as_mat(a.value(), M, K, i * M * K) *
        detail::as_mat(b.value(), K, N, i * K * N);
  }
  detail::check_finite(out, "matmul");
  return a.tape->record(
      std::move(out), {a.id, b.id},
      [a = a.id, b = b.id, batch, M, K, N](Tape<T>& t, std::size_t self) {
        const auto& g = std::as_const(t.grad(self));
        const bool ga = t.requires_grad(a);
        const bool gb = t.requires_grad(b);
        for (std::size_t i = 0; i < batch; ++i) {
          const auto gi = detail::as_mat(g, M, N, i * M * N);
          if (ga) {
            detail::as_mat(t.grad(a), M, K, i * M * K).noalias() +=
                gi * detail::as_mat(t.value(b), K, N, i * K * N).transpose();
          }
          if (gb) {
            detail::as_mat(t.grad(b), K, N, i * K * N).noalias() +=
                detail::as_mat(t.value(a), M, K, i * M * K).transpose() * gi;
          }
        }
      });
}

/// Axis permutation: result axis i is input axis perm[i].
template <typename T>
Var<T> transpose(Var<T> a, const std::vector<std::size_t>& perm) {
  const Shape& s = a.shape();
  const std::size_t rank = s.size();
  if (perm.size() != rank) throw ShapeError("transpose: permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (perm[i] >= rank || seen[perm[i]]) {
      throw ShapeError("transpose: invalid permutation");
    }
    seen[perm[i]] = true;
    out_shape[i] = s[perm[i]];
  }
  std::vector<std::size_t> in_stride(rank);
  std::size_t st = 1;
  for (std::size_t i = rank; i-- > 0;) {
    in_stride[i] = st;
    st *= s[i];
  }
  // Copy in runs: when the last axis stays last, each destination row of
  // length `run` is contiguous in the source too.
  const std::size_t run = (rank > 0 && perm[rank - 1] == rank - 1) ? s[rank - 1] : 1;
  const std::size_t n = shape_size(s);
  const std::size_t blocks = run == 0 ? 0 : n / run;
  const std::size_t outer_rank = run == 1 ? rank : rank - 1;
  // source offset of every destination run
  std::vector<std::size_t> src(blocks);
  std::vector<std::size_t> idx(outer_rank, 0);
  std::size_t flat = 0;
  for (std::size_t k = 0; k < blocks; ++k) {
    src[k] = flat;
    for (std::size_t d = outer_rank; d-- > 0;) {
      ++idx[d];
      flat += in_stride[perm[d]];
      if (idx[d] < out_shape[d]) break;
      flat -= in_stride[perm[d]] * idx[d];
      idx[d] = 0;
    }
  }
  NdArray<T> out(out_shape);
  const auto& av = a.value();
  for (std::size_t k = 0; k < blocks; ++k) {
    std::copy_n(av.data().begin() + src[k], run, out.data().begin() + k * run);
  }
  return a.tape->record(std::move(out), {a.id},
                        [a = a.id, src = std::move(src), run](Tape<T>& t, std::size_t self) {
                          const auto& g = std::as_const(t.grad(self));
                          auto& ga = t.grad(a);
                          for (std::size_t k = 0; k < src.size(); ++k) {
                            for (std::size_t j = 0; j < run; ++j) ga[src[k] + j] += g[k * run + j];
                          }
                        });
}

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  NdArray<T> out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a.id},
                        [a = a.id](Tape<T>& t, std::size_t self) {
                          const auto& g = t.grad(self);
                          auto& ga = t.grad(a);
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        });
}

enum class Padding { kSame, kValid };

/// 1D cross-correlation over the position axis of a channels-last input.
/// x: [B, L, Cin], w: [Kw, Cin, Cout] -> [B, Lout, Cout], stride 1.
/// Same padding adds (Kw-1)/2 zeros on the left and the rest on the right.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w, Padding padding = Padding::kSame) {
  detail::same_tape(x, w, "conv1d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 3 || ws[1] != xs[2]) {
    throw ShapeError("conv1d: expected x [B,L,Cin] and w [Kw,Cin,Cout], got " +
                     shape_str(xs) + " and " + shape_str(ws));
  }
  const std::size_t B = xs[0], L = xs[1], Cin = xs[2];
  const std::size_t Kw = ws[0], Cout = ws[2];
  if (Kw == 0) throw ShapeError("conv1d: empty kernel");
  std::size_t pad_left = 0, Lout = 0;
  if (padding == Padding::kSame) {
    pad_left = (Kw - 1) / 2;
    Lout = L;
  } else {
    if (Kw > L) throw ShapeError("conv1d: kernel longer than input");
    Lout = L - Kw + 1;
  }
  // For tap k, output position l reads input position l + k - pad_left.
  struct Span {
    std::size_t k, out_lo, in_lo, len;
  };
  std::vector<Span> taps;
  for (std::size_t k = 0; k < Kw; ++k) {
    const long shift = static_cast<long>(k) - static_cast<long>(pad_left);
    const long lo = std::max<long>(0, -shift);
    const long hi = std::min<long>(static_cast<long>(Lout), static_cast<long>(L) - shift);
    if (hi > lo) {
      taps.push_back({k, static_cast<std::size_t>(lo),
                      static_cast<std::size_t>(lo + shift),
                      static_cast<std::size_t>(hi - lo)});
    }
  }
  NdArray<T> out({B, Lout, Cout});
  const auto& xv = x.value();
  const auto& wv = w.value();
  for (const auto& tap : taps) {
    const auto wk = detail::as_mat(wv, Cin, Cout, tap.k * Cin * Cout);
    if (tap.len == L && tap.len == Lout) {
      // tap covers every position: one product over all B * L rows
      detail::as_mat(out, B * L, Cout).noalias() += detail::as_mat(xv, B * L, Cin) * wk;
      continue;
    }
    for (std::size_t b = 0; b < B; ++b) {
      detail::as_mat(out, tap.len, Cout, (b * Lout + tap.out_lo) * Cout).noalias() +=
          detail::as_mat(xv, tap.len, Cin, (b * L + tap.in_lo) * Cin) * wk;
    }
  }
  detail::check_finite(out, "conv1d");
  return x.tape->record(
      std::move(out), {x.id, w.id},
      [x = x.id, w = w.id, taps = std::move(taps), B, L, Lout, Cin, Cout](
          Tape<T>& t, std::size_t self) {
        const auto& g = std::as_const(t.grad(self));
        const bool gx = t.requires_grad(x);
        const bool gw = t.requires_grad(w);
        for (const auto& tap : taps) {
          const std::size_t woff = tap.k * Cin * Cout;
          if (tap.len == L && tap.len == Lout) {
            const auto gall = detail::as_mat(g, B * L, Cout);
            if (gx) {
              detail::as_mat(t.grad(x), B * L, Cin).noalias() +=
                  gall * detail::as_mat(t.value(w), Cin, Cout, woff).transpose();
            }
            if (gw) {
              detail::as_mat(t.grad(w), Cin, Cout, woff).noalias() +=
                  detail::as_mat(t.value(x), B * L, Cin).transpose() * gall;
            }
            continue;
          }
          for (std::size_t b = 0; b < B; ++b) {
            const auto gb = detail::as_mat(g, tap.len, Cout, (b * Lout + tap.out_lo) * Cout);
            const std::size_t xoff = (b * L + tap.in_lo) * Cin;
            if (gx) {
              detail::as_mat(t.grad(x), tap.len, Cin, xoff).noalias() +=
                  gb * detail::as_mat(t.value(w), Cin, Cout, woff).transpose();
            }
            if (gw) {
              detail::as_mat(t.grad(w), Cin, Cout, woff).noalias() +=
                  detail::as_mat(t.value(x), tap.len, Cin, xoff).transpose() * gb;
            }
          }
        }
      });
}

template <typename T>
Var<T> softmax(Var<T> a, int axis = -1) {
  const auto split = detail::split_at(a.shape(), detail::normalize_axis(axis, a.shape().size()));
  const auto& av = a.value();
  NdArray<T> out(av.shape());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t in = 0; in < split.inner; ++in) {
      const std::size_t base = o * split.n * split.inner + in;
      T mx = av[base];
      for (std::size_t j = 1; j < split.n; ++j) mx = std::max(mx, av[base + j * split.inner]);
      T sum = 0;
      for (std::size_t j = 0; j < split.n; ++j) {
        const std::size_t i = base + j * split.inner;
        out[i] = std::exp(av[i] - mx);
        sum += out[i];
      }
      for (std::size_t j = 0; j < split.n; ++j) out[base + j * split.inner] /= sum;
    }
  }
  detail::check_finite(out, "softmax");
  const auto a_id = a.id;
  return a.tape->record(std::move(out), {a_id}, [a_id, split](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& ga = t.grad(a_id);
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t in = 0; in < split.inner; ++in) {
        const std::size_t base = o * split.n * split.inner + in;
        T dot = 0;
        for (std::size_t j = 0; j < split.n; ++j) {
          const std::size_t i = base + j * split.inner;
          dot += g[i] * y[i];
        }
        for (std::size_t j = 0; j < split.n; ++j) {
          const std::size_t i = base + j * split.inner;
          ga[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes to zero mean and unit variance along `axis` (no affine part).
template <typename T>
Var<T> layer_norm(Var<T> a, int axis = -1, double eps = kLayerNormEps) {
  const auto split = detail::split_at(a.shape(), detail::normalize_axis(axis, a.shape().size()));
  const auto& av = a.value();
  NdArray<T> out(av.shape());
  std::vector<T> inv_std(split.outer * split.inner);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t in = 0; in < split.inner; ++in) {
      const std::size_t base = o * split.n * split.inner + in;
      T mean = 0;
      for (std::size_t j = 0; j < split.n; ++j) mean += av[base + j * split.inner];
      mean /= static_cast<T>(split.n);
      T var = 0;
      for (std::size_t j = 0; j < split.n; ++j) {
        const T d = av[base + j * split.inner] - mean;
        var += d * d;
      }
      var /= static_cast<T>(split.n);
      const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
      inv_std[o * split.inner + in] = is;
      for (std::size_t j = 0; j < split.n; ++j) {
        const std::size_t i = base + j * split.inner;
        out[i] = (av[i] - mean) * is;
      }
    }
  }
  detail::check_finite(out, "layer_norm");
  const auto a_id = a.id;
  return a.tape->record(
      std::move(out), {a_id},
      [a_id, split, inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& y = t.value(self);
        auto& ga = t.grad(a_id);
        const T n = static_cast<T>(split.n);
        for (std::size_t o = 0; o < split.outer; ++o) {
          for (std::size_t in = 0; in < split.inner; ++in) {
            const std::size_t base = o * split.n * split.inner + in;
            T mg = 0, mgy = 0;
            for (std::size_t j = 0; j < split.n; ++j) {
              const std::size_t i = base + j * split.inner;
              mg += g[i];
              mgy += g[i] * y[i];
            }
            mg /= n;
            mgy /= n;
            const T is = inv_std[o * split.inner + in];
            for (std::size_t j = 0; j < split.n; ++j) {
              const std::size_t i = base + j * split.inner;
              ga[i] += is * (g[i] - mg - y[i] * mgy);
            }
          }
        }
      });
}

template <typename T>
Var<T> relu(Var<T> a) {
  NdArray<T> out = a.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape<T>& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(a);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T(0)) ga[i] += g[i];
    }
  });
}

/// Exact (erf-based) GELU.
template <typename T>
Var<T> gelu(Var<T> a) {
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  NdArray<T> out = a.value();
  for (auto& v : out.data()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  detail::check_finite(out, "gelu");
  return a.tape->record(std::move(out), {a.id}, [a = a.id, inv_sqrt2](Tape<T>& t, std::size_t self) {
    const T inv_sqrt_2pi = static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    const auto& g = t.grad(self);
    const auto& x = t.value(a);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T cdf = T(0.5) * (T(1) + std::erf(x[i] * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x[i] * x[i]);
      ga[i] += g[i] * (cdf + x[i] * pdf);
    }
  });
}

/// Mean of all elements, as a rank-0 array.
template <typename T>
Var<T> reduce_mean(Var<T> a) {
  const auto& av = a.value();
  T sum = 0;
  for (T v : av.data()) sum += v;
  const T inv_n = T(1) / static_cast<T>(av.size());
  NdArray<T> out = NdArray<T>::scalar(sum * inv_n);
  detail::check_finite(out, "reduce_mean");
  return a.tape->record(std::move(out), {a.id}, [a = a.id, inv_n](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0] * inv_n;
    auto& ga = t.grad(a);
    for (auto& v : ga.data()) v += g;
  });
}

/// reduce_mean((a - b)^2)
template <typename T>
Var<T> mean_squared_error(Var<T> a, Var<T> b) {
  auto d = sub(a, b);
  return reduce_mean(mul(d, d));
}

}  // namespace popdiff::ops
