#include "deep_eprop/linalg.hpp"

#include <cmath>
#include <utility>

namespace deep_eprop {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (data.size() != rows * cols) {
    throw ShapeError("Matrix: " + std::to_string(data.size()) + " values for shape " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

bool Matrix::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

Matrix Tensor3::flattened() const {
  Matrix m(d0, d1 * d2);
  m.data = data;
  return m;
}

Tensor3 Tensor3::from_flat(const Matrix& m, std::size_t d1, std::size_t d2) {
  if (m.cols != d1 * d2) {
    throw ShapeError("Tensor3::from_flat: matrix " + shape_str(m) + " does not factor as d1=" +
                     std::to_string(d1) + " x d2=" + std::to_string(d2));
  }
  Tensor3 t(m.rows, d1, d2);
  t.data = m.data;
  return t;
}

ActivationKind activation_from_string(const std::string& name) {
  if (name == "tanh") return ActivationKind::Tanh;
  if (name == "relu") return ActivationKind::Relu;
  if (name == "linear") return ActivationKind::Linear;
  if (name == "sigmoid") return ActivationKind::Sigmoid;
  throw SpecError("unknown activation '" + name + "' (expected tanh|relu|linear|sigmoid)");
}

std::string to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::Relu: return "relu";
    case ActivationKind::Linear: return "linear";
    case ActivationKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

ActivationValue activation_eval(ActivationKind kind, const Vec& preact) {
  ActivationValue out;
  out.value.resize(preact.size());
  out.deriv.resize(preact.size());
  for (std::size_t i = 0; i < preact.size(); ++i) {
    const double a = preact[i];
    switch (kind) {
      case ActivationKind::Tanh: {
        const double v = std::tanh(a);
        out.value[i] = v;
        out.deriv[i] = 1.0 - v * v;
        break;
      }
      case ActivationKind::Relu:
        out.value[i] = a > 0.0 ? a : 0.0;
        out.deriv[i] = a > 0.0 ? 1.0 : 0.0;
        break;
      case ActivationKind::Linear:
        out.value[i] = a;
        out.deriv[i] = 1.0;
        break;
      case ActivationKind::Sigmoid: {
        const double v = 1.0 / (1.0 + std::exp(-a));
        out.value[i] = v;
        out.deriv[i] = v * (1.0 - v);
        break;
      }
    }
  }
  return out;
}

Matrix contract(const Matrix& a, const Matrix& b, OpCounter* counter) {
  if (a.cols != b.rows) {
    throw ShapeError("contract: inner dimensions differ, left is " + shape_str(a) +
                     ", right is " + shape_str(b));
  }
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    double* orow = &out.data[i * out.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) {
        continue;  // value skip; flop accounting below stays shape-exact
      }
      const double* brow = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  if (counter) counter->add_flops(2ll * a.rows * a.cols * b.cols);
  return out;
}

void axpy(Matrix& y, double alpha, const Matrix& x, OpCounter* counter) {
  if (!y.same_shape(x)) {
    throw ShapeError("axpy: y is " + shape_str(y) + ", x is " + shape_str(x));
  }
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += alpha * x.data[i];
  if (counter) counter->add_flops(2ll * static_cast<std::int64_t>(y.data.size()));
}

void add_in_place(Matrix& a, const Matrix& b, OpCounter* counter) {
  if (!a.same_shape(b)) {
    throw ShapeError("add: left is " + shape_str(a) + ", right is " + shape_str(b));
  }
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  if (counter) counter->add_flops(static_cast<std::int64_t>(a.data.size()));
}

void axpy(Vec& y, double alpha, const Vec& x, OpCounter* counter) {
  if (y.size() != x.size()) {
    throw ShapeError("axpy: lengths differ, " + std::to_string(y.size()) + " vs " +
                     std::to_string(x.size()));
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
  if (counter) counter->add_flops(2ll * static_cast<std::int64_t>(y.size()));
}

void add_in_place(Vec& a, const Vec& b, OpCounter* counter) {
  if (a.size() != b.size()) {
    throw ShapeError("add: lengths differ, " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  if (counter) counter->add_flops(static_cast<std::int64_t>(a.size()));
}

Vec matvec(const Matrix& m, const Vec& v, OpCounter* counter) {
  if (m.cols != v.size()) {
    throw ShapeError("matvec: matrix is " + shape_str(m) + ", vector has " +
                     std::to_string(v.size()) + " entries");
  }
  Vec out(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    const double* row = &m.data[i * m.cols];
    for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * v[j];
    out[i] = s;
  }
  if (counter) counter->add_flops(2ll * m.rows * m.cols);
  return out;
}

Vec matvec_transposed(const Matrix& m, const Vec& v, OpCounter* counter) {
  if (m.rows != v.size()) {
    throw ShapeError("matvec_transposed: matrix is " + shape_str(m) + ", vector has " +
                     std::to_string(v.size()) + " entries");
  }
  Vec out(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    const double vi = v[i];
    const double* row = &m.data[i * m.cols];
    for (std::size_t j = 0; j < m.cols; ++j) out[j] += vi * row[j];
  }
  if (counter) counter->add_flops(2ll * m.rows * m.cols);
  return out;
}

Vec vecmat(const Vec& v, const Matrix& m, OpCounter* counter) {
  return matvec_transposed(m, v, counter);
}

Vec hadamard(const Vec& a, const Vec& b, OpCounter* counter) {
  if (a.size() != b.size()) {
    throw ShapeError("hadamard: lengths differ, " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  if (counter) counter->add_flops(static_cast<std::int64_t>(a.size()));
  return out;
}

void add_outer(Matrix& g, const Vec& u, const Vec& v, OpCounter* counter) {
  if (g.rows != u.size() || g.cols != v.size()) {
    throw ShapeError("add_outer: target is " + shape_str(g) + ", outer product is " +
                     std::to_string(u.size()) + "x" + std::to_string(v.size()));
  }
  for (std::size_t i = 0; i < u.size(); ++i) {
    double* row = &g.data[i * g.cols];
    const double ui = u[i];
    for (std::size_t j = 0; j < v.size(); ++j) row[j] += ui * v[j];
  }
  if (counter) counter->add_flops(2ll * u.size() * v.size());
}

Matrix row_scale(const Vec& d, const Matrix& w, OpCounter* counter) {
  if (d.size() != w.rows) {
    throw ShapeError("row_scale: diagonal has " + std::to_string(d.size()) +
                     " entries, matrix is " + shape_str(w));
  }
  Matrix out(w.rows, w.cols);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const double di = d[i];
    for (std::size_t j = 0; j < w.cols; ++j) out(i, j) = di * w(i, j);
  }
  if (counter) counter->add_flops(static_cast<std::int64_t>(w.data.size()));
  return out;
}

double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: vectors have " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " entries");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm_sq(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data) s += v * v;
  return s;
}

}  // namespace deep_eprop
