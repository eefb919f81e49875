#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "deep_eprop/linalg.hpp"

using namespace deep_eprop;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.data) v = u(rng);
  return m;
}

Vec random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// reference product, no shortcuts
Matrix slow_product(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("matrix construction and identity") {
  Matrix m(2, 3);
  CHECK(m.rows == 2);
  CHECK(m.cols == 3);
  CHECK(m.size() == 6);
  for (double v : m.data) CHECK(v == 0.0);

  const Matrix eye = Matrix::identity(3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(eye(i, j) == (i == j ? 1.0 : 0.0));
  }

  m(1, 2) = 5.0;
  CHECK(m.data[1 * 3 + 2] == 5.0);  // row-major placement

  CHECK(m.all_finite());
  m(0, 0) = std::nan("");
  CHECK(!m.all_finite());
}

TEST_CASE("tensor3 flattens rows-first") {
  Tensor3 t(2, 3, 2);
  double v = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 2; ++k) t(i, j, k) = v++;
    }
  }
  const Matrix flat = t.flattened();
  CHECK(flat.rows == 2);
  CHECK(flat.cols == 6);
  CHECK(flat(0, 0) == 0.0);
  CHECK(flat(0, 5) == 5.0);
  CHECK(flat(1, 2 * 2 + 1) == 11.0);  // (1, j=2, k=1)

  const Tensor3 back = Tensor3::from_flat(flat, 3, 2);
  CHECK(back.data == t.data);
}

TEST_CASE("contract matches the triple loop") {
  const Matrix a = random_matrix(4, 5, 11);
  const Matrix b = random_matrix(5, 3, 22);
  const Matrix got = contract(a, b);
  const Matrix want = slow_product(a, b);
  REQUIRE(got.same_shape(want));
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-14));
  }
}

TEST_CASE("contract rejects inner mismatch") {
  const Matrix a = random_matrix(4, 5, 1);
  const Matrix b = random_matrix(4, 3, 2);
  CHECK_THROWS_AS(contract(a, b), ShapeError);
}

TEST_CASE("contract flop count is shape-exact even with zero entries") {
  Matrix a(3, 4);  // all zeros: the kernel may skip work but not the count
  const Matrix b = random_matrix(4, 7, 3);
  OpCounter counter;
  const Matrix out = contract(a, b, &counter);
  CHECK(counter.flops == 2 * 3 * 4 * 7);
  for (double v : out.data) CHECK(v == 0.0);

  counter.reset();
  a = random_matrix(3, 4, 4);
  contract(a, b, &counter);
  CHECK(counter.flops == 2 * 3 * 4 * 7);
}

TEST_CASE("matvec family agrees with explicit sums") {
  const Matrix m = random_matrix(3, 4, 5);
  const Vec v4 = random_vec(4, 6);
  const Vec v3 = random_vec(3, 7);

  const Vec mv = matvec(m, v4);
  for (std::size_t i = 0; i < 3; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < 4; ++j) acc += m(i, j) * v4[j];
    CHECK(mv[i] == doctest::Approx(acc).epsilon(1e-14));
  }

  const Vec mtv = matvec_transposed(m, v3);
  const Vec vm = vecmat(v3, m);
  for (std::size_t j = 0; j < 4; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 3; ++i) acc += m(i, j) * v3[i];
    CHECK(mtv[j] == doctest::Approx(acc).epsilon(1e-14));
    CHECK(vm[j] == mtv[j]);
  }

  CHECK_THROWS_AS(matvec(m, v3), ShapeError);
  CHECK_THROWS_AS(matvec_transposed(m, v4), ShapeError);

  OpCounter counter;
  matvec(m, v4, &counter);
  CHECK(counter.flops == 2 * 3 * 4);
}

TEST_CASE("axpy and add_in_place") {
  Matrix y = random_matrix(2, 3, 8);
  const Matrix y0 = y;
  const Matrix x = random_matrix(2, 3, 9);
  OpCounter counter;
  axpy(y, 0.5, x, &counter);
  CHECK(counter.flops == 2 * 6);
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(y.data[i] == doctest::Approx(y0.data[i] + 0.5 * x.data[i]));
  }

  Vec a = random_vec(4, 10);
  const Vec a0 = a;
  const Vec b = random_vec(4, 11);
  add_in_place(a, b);
  for (std::size_t i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(a0[i] + b[i]));

  Vec short_vec(3, 0.0);
  CHECK_THROWS_AS(add_in_place(a, short_vec), ShapeError);
  Matrix wrong(3, 2);
  CHECK_THROWS_AS(axpy(y, 1.0, wrong), ShapeError);
}

TEST_CASE("hadamard, outer product and row scaling") {
  const Vec a = random_vec(5, 12);
  const Vec b = random_vec(5, 13);
  const Vec h = hadamard(a, b);
  for (std::size_t i = 0; i < 5; ++i) CHECK(h[i] == a[i] * b[i]);

  Matrix g(3, 4);
  const Vec u = random_vec(3, 14);
  const Vec v = random_vec(4, 15);
  OpCounter counter;
  add_outer(g, u, v, &counter);
  CHECK(counter.flops == 2 * 3 * 4);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(g(i, j) == doctest::Approx(u[i] * v[j]));
  }
  add_outer(g, u, v);  // accumulates rather than overwrites
  CHECK(g(1, 1) == doctest::Approx(2.0 * u[1] * v[1]));

  const Matrix w = random_matrix(3, 4, 16);
  const Matrix scaled = row_scale(u, w);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(scaled(i, j) == u[i] * w(i, j));
  }
  CHECK_THROWS_AS(row_scale(v, w), ShapeError);
}

TEST_CASE("dot and squared norm") {
  const Vec a = random_vec(6, 17);
  const Vec b = random_vec(6, 18);
  double want = 0.0;
  for (std::size_t i = 0; i < 6; ++i) want += a[i] * b[i];
  CHECK(dot(a, b) == doctest::Approx(want).epsilon(1e-14));

  const Matrix m = random_matrix(2, 3, 19);
  double nsq = 0.0;
  for (double v : m.data) nsq += v * v;
  CHECK(l2_norm_sq(m) == doctest::Approx(nsq).epsilon(1e-14));
}

TEST_CASE("activation values and derivatives") {
  const Vec pre = {-2.0, -0.5, 0.0, 0.5, 2.0};

  const ActivationValue t = activation_eval(ActivationKind::Tanh, pre);
  for (std::size_t i = 0; i < pre.size(); ++i) {
    CHECK(t.value[i] == doctest::Approx(std::tanh(pre[i])));
    CHECK(t.deriv[i] == doctest::Approx(1.0 - std::tanh(pre[i]) * std::tanh(pre[i])));
  }

  const ActivationValue s = activation_eval(ActivationKind::Sigmoid, pre);
  for (std::size_t i = 0; i < pre.size(); ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-pre[i]));
    CHECK(s.value[i] == doctest::Approx(sig));
    CHECK(s.deriv[i] == doctest::Approx(sig * (1.0 - sig)));
  }

  const ActivationValue r = activation_eval(ActivationKind::Relu, pre);
  CHECK(r.value == Vec{0.0, 0.0, 0.0, 0.5, 2.0});
  CHECK(r.deriv == Vec{0.0, 0.0, 0.0, 1.0, 1.0});  // derivative at 0 is 0

  const ActivationValue l = activation_eval(ActivationKind::Linear, pre);
  CHECK(l.value == pre);
  CHECK(l.deriv == Vec(pre.size(), 1.0));
}

TEST_CASE("tanh derivative agrees with central differences") {
  const Vec pre = {-1.3, 0.2, 0.9};
  const double eps = 1e-6;
  const ActivationValue mid = activation_eval(ActivationKind::Tanh, pre);
  for (std::size_t i = 0; i < pre.size(); ++i) {
    Vec up = pre, down = pre;
    up[i] += eps;
    down[i] -= eps;
    const double numeric = (activation_eval(ActivationKind::Tanh, up).value[i] -
                            activation_eval(ActivationKind::Tanh, down).value[i]) /
                           (2.0 * eps);
    CHECK(mid.deriv[i] == doctest::Approx(numeric).epsilon(1e-8));
  }
}

TEST_CASE("activation name round trip") {
  for (const char* name : {"tanh", "relu", "linear", "sigmoid"}) {
    CHECK(to_string(activation_from_string(name)) == name);
  }
  CHECK_THROWS_AS(activation_from_string("softplus"), SpecError);
}

TEST_CASE("op counter semantics") {
  OpCounter c;
  c.add_flops(5);
  c.add_flops(7);
  CHECK(c.flops == 12);

  c.note_trace_storage(100);
  c.note_trace_storage(40);  // below the high-water mark, ignored
  CHECK(c.peak_trace_values == 100);
  c.note_trace_storage(130);
  CHECK(c.peak_trace_values == 130);

  c.add_activation_storage(10);
  c.add_activation_storage(10);
  CHECK(c.stored_activation_values == 20);

  c.reset();
  CHECK(c.flops == 0);
  CHECK(c.peak_trace_values == 0);
  CHECK(c.stored_activation_values == 0);
}
