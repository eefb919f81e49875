#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "deep_eprop/errors.hpp"

namespace deep_eprop {

using Vec = std::vector<double>;

/// Work and storage counters for one run context. Engines thread a counter
/// through every kernel call; pass nullptr to skip counting. A counter must
/// not be shared between concurrently executing runs.
struct OpCounter {
  std::int64_t flops = 0;
  std::int64_t peak_trace_values = 0;        // high-water mark of live trace storage
  std::int64_t stored_activation_values = 0; // activations retained for later reuse

  void add_flops(std::int64_t n) { flops += n; }
  void note_trace_storage(std::int64_t live_values) {
    if (live_values > peak_trace_values) peak_trace_values = live_values;
  }
  void add_activation_storage(std::int64_t n) { stored_activation_values += n; }
  void reset() { *this = OpCounter{}; }
};

/// Dense row-major float64 matrix. The only 2-D container in the project;
/// weight matrices, Jacobians and sensitivity traces all use it.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, rows*cols entries

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const;

  static Matrix identity(std::size_t n);
};

std::string shape_str(const Matrix& m);

/// Rank-3 tensor of float64 values. Used to hold full state-by-parameter
/// sensitivities before flattening; the engines always work on the flattened
/// (d0 x d1*d2) matrix view so a single contraction kernel serves everything.
struct Tensor3 {
  std::size_t d0 = 0, d1 = 0, d2 = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t a, std::size_t b, std::size_t c) : d0(a), d1(b), d2(c), data(a * b * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * d1 + j) * d2 + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * d1 + j) * d2 + k];
  }

  Matrix flattened() const;                                    // d0 x (d1*d2)
  static Tensor3 from_flat(const Matrix& m, std::size_t d1, std::size_t d2);
};

enum class ActivationKind { Tanh, Relu, Linear, Sigmoid };

ActivationKind activation_from_string(const std::string& name);
std::string to_string(ActivationKind k);

struct ActivationValue {
  Vec value;
  Vec deriv;
};

/// Evaluates f and f' elementwise. Total on finite input; the relu
/// derivative at exactly 0 is 0.
ActivationValue activation_eval(ActivationKind kind, const Vec& preact);

// ---- kernels ---------------------------------------------------------------
// Every kernel below reports its exact flop count to the counter when given.

/// Dense product a(AxB) * b(BxP). 2*A*B*P flops.
Matrix contract(const Matrix& a, const Matrix& b, OpCounter* counter = nullptr);

/// y += alpha * x, elementwise. 2*size flops.
void axpy(Matrix& y, double alpha, const Matrix& x, OpCounter* counter = nullptr);
void axpy(Vec& y, double alpha, const Vec& x, OpCounter* counter = nullptr);

/// a += b, elementwise. size flops.
void add_in_place(Matrix& a, const Matrix& b, OpCounter* counter = nullptr);
void add_in_place(Vec& a, const Vec& b, OpCounter* counter = nullptr);

/// m * v. 2*rows*cols flops.
Vec matvec(const Matrix& m, const Vec& v, OpCounter* counter = nullptr);

/// m^T * v. 2*rows*cols flops.
Vec matvec_transposed(const Matrix& m, const Vec& v, OpCounter* counter = nullptr);

/// v^T * m as a plain vector of length cols. 2*rows*cols flops.
Vec vecmat(const Vec& v, const Matrix& m, OpCounter* counter = nullptr);

/// Elementwise a*b. n flops.
Vec hadamard(const Vec& a, const Vec& b, OpCounter* counter = nullptr);

/// g += u * v^T. 2*|u|*|v| flops.
void add_outer(Matrix& g, const Vec& u, const Vec& v, OpCounter* counter = nullptr);

/// Rows of w scaled by d: out(i,j) = d[i]*w(i,j). size flops.
Matrix row_scale(const Vec& d, const Matrix& w, OpCounter* counter = nullptr);

double dot(const Vec& a, const Vec& b);
double l2_norm_sq(const Matrix& m);

}  // namespace deep_eprop
