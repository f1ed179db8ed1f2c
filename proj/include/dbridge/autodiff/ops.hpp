#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dbridge/autodiff/tape.hpp"

namespace dbridge::ad {

namespace impl {

inline void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw UsageError("operands live on different tapes");
}

// Elementwise binary op; either side may be a rank-0 scalar, otherwise shapes must agree.
template <class F, class DA, class DB>
Var binary(const char* name, Var a, Var b, F f, DA da, DB db) {
  require_same_tape(a, b);
  Tape& t = *a.tape();
  const Array& x = a.value();
  const Array& y = b.value();
  const bool xs = x.is_scalar() && !y.is_scalar();
  const bool ys = y.is_scalar() && !x.is_scalar();
  if (!xs && !ys && !x.same_shape(y))
    throw ConfigError(std::string(name) + ": shape mismatch " + shape_string(x.shape()) + " vs " +
                      shape_string(y.shape()));
  Array out(xs ? y.shape() : x.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[xs ? 0 : i], y[ys ? 0 : i]);
  const std::uint32_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, std::uint32_t self) {
    const Array& g = tp.grad(self);
    const Array& xv = tp.value(ia);
    const Array& yv = tp.value(ib);
    const Array& ov = tp.value(self);
    if (Array* ga = tp.accum(ia))
      for (std::size_t i = 0; i < n; ++i)
        (*ga)[xs ? 0 : i] += g[i] * da(xv[xs ? 0 : i], yv[ys ? 0 : i], ov[i]);
    if (Array* gb = tp.accum(ib))
      for (std::size_t i = 0; i < n; ++i)
        (*gb)[ys ? 0 : i] += g[i] * db(xv[xs ? 0 : i], yv[ys ? 0 : i], ov[i]);
  });
}

// Elementwise unary op; df receives (input, output).
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  Tape& t = *a.tape();
  const Array& x = a.value();
  Array out(x.shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i]);
  const std::uint32_t ia = a.id();
  return t.record(std::move(out), {a}, [=](Tape& tp, std::uint32_t self) {
    const Array& g = tp.grad(self);
    const Array& xv = tp.value(ia);
    const Array& ov = tp.value(self);
    if (Array* ga = tp.accum(ia))
      for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * df(xv[i], ov[i]);
  });
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace impl

inline Var add(Var a, Var b) {
  return impl::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return impl::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return impl::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Var div(Var a, Var b) {
  return impl::binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

// Elementwise maximum; ties send the gradient to the first operand.
inline Var maximum(Var a, Var b) {
  return impl::binary(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

inline Var scale(Var a, double c) {
  return impl::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var shift(Var a, double c) {
  return impl::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var exp(Var a) {
  return impl::unary(a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

inline Var log(Var a) {
  for (double v : a.value().values())
    if (v < 0) throw DomainError("log of negative input " + std::to_string(v));
  return impl::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var sqrt(Var a) {
  for (double v : a.value().values())
    if (v < 0) throw DomainError("sqrt of negative input " + std::to_string(v));
  return impl::unary(a, [](double x) { return std::sqrt(x); }, [](double, double o) { return 0.5 / o; });
}

inline Var tanh(Var a) {
  return impl::unary(a, [](double x) { return std::tanh(x); }, [](double, double o) { return 1.0 - o * o; });
}

inline Var square(Var a) {
  return impl::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sigmoid(Var a) {
  return impl::unary(a, impl::sigmoid_value, [](double, double o) { return o * (1.0 - o); });
}

inline Var softplus(Var a) {
  return impl::unary(a, impl::softplus_value, [](double x, double) { return impl::sigmoid_value(x); });
}

// x * sigmoid(x)
inline Var silu(Var a) {
  return impl::unary(
      a, [](double x) { return x * impl::sigmoid_value(x); },
      [](double x, double) {
        const double s = impl::sigmoid_value(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

// Gradient 1 strictly inside (lo, hi), 0 elsewhere including the boundary.
inline Var clip(Var a, double lo, double hi) {
  return impl::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

inline Var sum(Var a) {
  Tape& t = *a.tape();
  const Array& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v;
  const std::uint32_t ia = a.id();
  return t.record(Array::scalar(s), {a}, [ia](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0];
    if (Array* ga = tp.accum(ia))
      for (auto& v : ga->values()) v += g;
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  Tape& t = *a.tape();
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::uint32_t ia = a.id();
  return t.record(Array::scalar(s / n), {a}, [ia, n](Tape& tp, std::uint32_t self) {
    const double g = tp.grad(self)[0] / n;
    if (Array* ga = tp.accum(ia))
      for (auto& v : ga->values()) v += g;
  });
}

// (B x K) -> (B): sum over each row.
inline Var row_sum(Var a) {
  Tape& t = *a.tape();
  const Array& x = a.value();
  if (x.rank() != 2) throw ConfigError("row_sum needs a matrix, got " + shape_string(x.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  Array out(Shape{r});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x(i, j);
    out[i] = s;
  }
  const std::uint32_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, r, c](Tape& tp, std::uint32_t self) {
    const Array& g = tp.grad(self);
    if (Array* ga = tp.accum(ia))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*ga)(i, j) += g[i];
  });
}

namespace impl {

// Row-vector op: a is (B x K) or (K), r is (K); applies op to each row of a.
template <class F, class DA, class DR>
Var row_op(const char* name, Var a, Var r, F f, DA da, DR dr) {
  require_same_tape(a, r);
  Tape& t = *a.tape();
  const Array& x = a.value();
  const Array& v = r.value();
  if (v.rank() != 1 || x.rank() == 0 || x.cols() != v.size())
    throw ConfigError(std::string(name) + ": cannot apply row " + shape_string(v.shape()) + " to " +
                      shape_string(x.shape()));
  const std::size_t rows = x.rows(), c = x.cols();
  Array out(x.shape());
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = f(x[i * c + j], v[j]);
  const std::uint32_t ia = a.id(), ir = r.id();
  return t.record(std::move(out), {a, r}, [=](Tape& tp, std::uint32_t self) {
    const Array& g = tp.grad(self);
    const Array& xv = tp.value(ia);
    const Array& vv = tp.value(ir);
    if (Array* ga = tp.accum(ia))
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += g[i * c + j] * da(xv[i * c + j], vv[j]);
    if (Array* gr = tp.accum(ir))
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gr)[j] += g[i * c + j] * dr(xv[i * c + j], vv[j]);
  });
}

}  // namespace impl

// Adds the vector r to every row of a (explicit, not implicit broadcasting).
inline Var add_row(Var a, Var r) {
  return impl::row_op(
      "add_row", a, r, [](double x, double v) { return x + v; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

// Multiplies every row of a elementwise by the vector r.
inline Var mul_row(Var a, Var r) {
  return impl::row_op(
      "mul_row", a, r, [](double x, double v) { return x * v; }, [](double, double v) { return v; },
      [](double x, double) { return x; });
}

// Matrix product; a vector on the left acts as a row, on the right as a column.
inline Var matmul(Var a, Var b) {
  impl::require_same_tape(a, b);
  Tape& t = *a.tape();
  const Array& x = a.value();
  const Array& w = b.value();
  if (x.rank() == 0 || w.rank() == 0) throw ConfigError("matmul needs rank >= 1 operands");
  const std::size_t m = x.rank() == 2 ? x.shape()[0] : 1;
  const std::size_t k = x.rank() == 2 ? x.shape()[1] : x.size();
  const std::size_t kb = w.rank() == 2 ? w.shape()[0] : w.size();
  const std::size_t n = w.rank() == 2 ? w.shape()[1] : 1;
  if (k != kb)
    throw ConfigError("matmul: inner dimensions differ " + shape_string(x.shape()) + " @ " + shape_string(w.shape()));
  Shape os;
  if (x.rank() == 2) os.push_back(m);
  if (w.rank() == 2) os.push_back(n);
  Array out(os);
  double* o = out.data();
  const double* xd = x.data();
  const double* wd = w.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = o + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = xd[i * k + p];
      const double* wrow = wd + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * wrow[j];
    }
  }
  const std::uint32_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, std::uint32_t self) {
    const double* g = tp.grad(self).data();
    const double* xv = tp.value(ia).data();
    const double* wv = tp.value(ib).data();
    if (Array* ga = tp.accum(ia)) {
      std::vector<double> wt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) wt[j * k + p] = wv[p * n + j];
      double* gd = ga->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double s = g[i * n + j];
          const double* wtrow = wt.data() + j * k;
          double* grow = gd + i * k;
          for (std::size_t p = 0; p < k; ++p) grow[p] += s * wtrow[p];
        }
    }
    if (Array* gb = tp.accum(ib)) {
      double* gd = gb->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double s = xv[i * k + p];
          const double* grow = g + i * n;
          double* brow = gd + p * n;
          for (std::size_t j = 0; j < n; ++j) brow[j] += s * grow[j];
        }
    }
  });
}

// Concatenates along an axis: rank 1 along 0; rank 2 along rows (0) or columns (1).
inline Var concat(const std::vector<Var>& parts, std::size_t axis = 0) {
  if (parts.empty()) throw ConfigError("concat of nothing");
  Tape& t = *parts[0].tape();
  const std::size_t rank = parts[0].value().rank();
  if (rank == 0 || axis >= rank) throw ConfigError("concat: bad axis for rank " + std::to_string(rank));
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    impl::require_same_tape(parts[0], p);
    const Array& v = p.value();
    if (v.rank() != rank) throw ConfigError("concat: rank mismatch");
    if (rank == 2 && v.shape()[1 - axis] != parts[0].value().shape()[1 - axis])
      throw ConfigError("concat: shape mismatch " + shape_string(v.shape()));
    widths.push_back(v.shape()[axis]);
    total += v.shape()[axis];
  }
  Shape os = parts[0].value().shape();
  os[axis] = total;
  Array out(os);
  const std::size_t rows = (rank == 2 && axis == 1) ? os[0] : 1;
  const std::size_t inner = (rank == 2 && axis == 0) ? os[1] : 1;
  // Row-major: axis-0 concat is contiguous blocks; axis-1 concat interleaves per row.
  std::size_t off = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const Array& v = parts[q].value();
    if (rank == 2 && axis == 1) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < widths[q]; ++j) out(i, off + j) = v(i, j);
    } else {
      std::copy(v.values().begin(), v.values().end(), out.values().begin() + off * inner);
    }
    off += widths[q];
  }
  std::vector<std::uint32_t> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return t.record(std::move(out), parts, [=](Tape& tp, std::uint32_t self) {
    const Array& g = tp.grad(self);
    std::size_t o = 0;
    for (std::size_t q = 0; q < ids.size(); ++q) {
      if (Array* gq = tp.accum(ids[q])) {
        if (rank == 2 && axis == 1) {
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < widths[q]; ++j) (*gq)(i, j) += g(i, o + j);
        } else {
          for (std::size_t e = 0; e < gq->size(); ++e) (*gq)[e] += g[o * inner + e];
        }
      }
      o += widths[q];
    }
  });
}

// Elements [begin, end) of a vector, or rows [begin, end) of a matrix.
inline Var slice(Var a, std::size_t begin, std::size_t end) {
  Tape& t = *a.tape();
  const Array& x = a.value();
  if (x.rank() == 0) throw ConfigError("slice of a scalar");
  const std::size_t extent = x.shape()[0];
  if (begin > end || end > extent)
    throw ConfigError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                      shape_string(x.shape()));
  const std::size_t inner = x.rank() == 2 ? x.shape()[1] : 1;
  Shape os = x.shape();
  os[0] = end - begin;
  Array out(os, std::vector<double>(x.values().begin() + begin * inner, x.values().begin() + end * inner));
  const std::uint32_t ia = a.id();
  return t.record(std::move(out), {a}, [=](Tape& tp, std::uint32_t self) {
    const Array& g = tp.grad(self);
    if (Array* ga = tp.accum(ia))
      for (std::size_t e = 0; e < g.size(); ++e) (*ga)[begin * inner + e] += g[e];
  });
}

}  // namespace dbridge::ad
