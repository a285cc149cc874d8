#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "metaci/matrix.hpp"
#include "metaci/rng.hpp"
#include "metaci/stats.hpp"

using namespace metaci;

TEST_CASE("matrix multiply matches a naive ijk oracle") {
  RngStream rng(5, 1);
  Matrix a(5, 4), b(4, 3);
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();

  const Matrix c = a.multiply(b);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 4; ++k) acc += a(i, k) * b(k, j);
      REQUIRE(c(i, j) == Catch::Approx(acc).epsilon(1e-12));
    }
  }
}

TEST_CASE("matrix multiply shape errors and small identities") {
  const Matrix a = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  const Matrix eye = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  const Matrix p = a.multiply(eye);
  REQUIRE(p.data() == a.data());
  REQUIRE_THROWS_AS(a.multiply(Matrix(3, 2)), std::invalid_argument);
}

TEST_CASE("matrix in-place ops and col sums") {
  Matrix m = Matrix::from_rows({{1.0, -2.0}, {3.0, 0.5}});
  Matrix n = Matrix::from_rows({{2.0, 2.0}, {-1.0, 4.0}});
  m.axpy_in_place(0.5, n);
  REQUIRE(m(0, 0) == 2.0);
  REQUIRE(m(0, 1) == -1.0);
  REQUIRE(m(1, 0) == 2.5);
  REQUIRE(m(1, 1) == 2.5);

  m.hadamard_in_place(n);
  REQUIRE(m(1, 1) == 10.0);

  const auto s = Matrix::from_rows({{1.0, 2.0}, {10.0, 20.0}}).col_sums();
  REQUIRE(s == std::vector<double>{11.0, 22.0});

  const Matrix t = Matrix::from_rows({{1.0, 2.0, 3.0}}).transposed();
  REQUIRE(t.rows() == 3);
  REQUIRE(t(2, 0) == 3.0);
}

TEST_CASE("matrix rejects non-finite results") {
  Matrix big(1, 1, 1e308);
  REQUIRE_THROWS_AS(big.scale_in_place(10.0), std::runtime_error);
  REQUIRE_THROWS_AS(Matrix(1, 1, {std::nan("")}), std::runtime_error);
  REQUIRE_THROWS_AS(Matrix(2, 2).at(2, 0), std::out_of_range);
  REQUIRE_THROWS_AS(Matrix(2, 2, std::vector<double>(3, 0.0)), std::invalid_argument);
}

// Golden values computed by an independent implementation of the documented
// counter scheme (SplitMix64 finalizer over key + n * 0x9E3779B97F4A7C15).
TEST_CASE("rng produces pinned cross-platform sequences") {
  RngStream r(42, 7);
  REQUIRE(r.next_u64() == 9406584096157140310ull);
  REQUIRE(r.next_u64() == 1307783221863516532ull);
  REQUIRE(r.next_u64() == 15269001994473339261ull);
  REQUIRE(r.next_u64() == 10464143158932660805ull);

  REQUIRE(RngStream(42, 8).next_u64() == 4385099140393482381ull);
  REQUIRE(RngStream(43, 7).next_u64() == 9260386695162443010ull);

  RngStream u(42, 7);
  REQUIRE(u.uniform01() == 0.5099319456360583);
  REQUIRE(u.uniform01() == 0.07089507051422583);

  RngStream c = RngStream(42, 7).child(3);
  REQUIRE(c.stream_id() == 10753165928301472203ull);
  REQUIRE(c.next_u64() == 11848785160999951471ull);
}

TEST_CASE("rng normal consumes exactly two uniforms") {
  RngStream a(42, 7);
  const double z0 = a.normal();
  REQUIRE(z0 == Catch::Approx(1.077784347477486).margin(1e-14));
  // the third raw draw must follow immediately
  REQUIRE(a.next_u64() == 15269001994473339261ull);
  const double z1 = a.normal();  // draws 3 and 4
  RngStream b(42, 7);
  b.next_u64();
  b.next_u64();
  b.next_u64();
  (void)z1;
  REQUIRE(b.counter() == 3);
}

TEST_CASE("rng streams are reproducible and distinct") {
  RngStream a(9, 2), b(9, 2), c(9, 3);
  for (int i = 0; i < 16; ++i) {
    REQUIRE(a.next_u64() == b.next_u64());
  }
  bool any_diff = false;
  RngStream a2(9, 2);
  for (int i = 0; i < 16; ++i) any_diff |= (a2.next_u64() != c.next_u64());
  REQUIRE(any_diff);

  // child derivation ignores the parent counter
  RngStream p1(5, 5), p2(5, 5);
  p2.next_u64();
  REQUIRE(p1.child(4).stream_id() == p2.child(4).stream_id());
  REQUIRE(p1.child(0).stream_id() != p1.child(1).stream_id());
}

TEST_CASE("rng uniform_below is in range and roughly uniform") {
  RngStream r(1, 1);
  REQUIRE(r.uniform_below(1) == 0);
  REQUIRE_THROWS_AS(r.uniform_below(0), std::invalid_argument);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 10000; ++i) ++counts[static_cast<std::size_t>(r.uniform_below(5))];
  for (int c : counts) {
    REQUIRE(c > 1700);
    REQUIRE(c < 2300);
  }
}

TEST_CASE("rng bernoulli respects the edge probabilities") {
  RngStream r(2, 2);
  for (int i = 0; i < 200; ++i) REQUIRE_FALSE(r.bernoulli(0.0));
  for (int i = 0; i < 200; ++i) REQUIRE(r.bernoulli(1.0));
}

TEST_CASE("rng shuffle permutes deterministically") {
  std::vector<int> v(10);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  RngStream(3, 3).shuffle(v);
  RngStream(3, 3).shuffle(w);
  REQUIRE(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expect(10);
  std::iota(expect.begin(), expect.end(), 0);
  REQUIRE(sorted == expect);

  std::vector<int> u(10);
  std::iota(u.begin(), u.end(), 0);
  RngStream(4, 3).shuffle(u);
  REQUIRE(u != v);
}

TEST_CASE("normal sampler has sane first and second moments") {
  RngStream r(17, 0);
  auto xs = sample_standard_normal(r, 50000);
  REQUIRE(std::abs(mean(xs)) < 0.02);
  REQUIRE(population_variance(xs) == Catch::Approx(1.0).margin(0.03));
  REQUIRE_THROWS_AS(sample_standard_normal(r, 0), std::invalid_argument);
}

TEST_CASE("stats basics") {
  REQUIRE(mean({1.0, 2.0, 6.0}) == 3.0);
  REQUIRE(population_variance({1.0, 1.0, 1.0}) == 0.0);
  REQUIRE(population_variance({0.0, 2.0}) == 1.0);
  REQUIRE_THROWS_AS(mean({}), std::invalid_argument);
}

TEST_CASE("empirical quantile uses the lower nearest-rank rule") {
  std::vector<double> v{10, 1, 9, 2, 8, 3, 7, 4, 6, 5};  // 1..10
  REQUIRE(empirical_quantile(v, 0.0) == 1.0);
  REQUIRE(empirical_quantile(v, 1.0) == 10.0);
  REQUIRE(empirical_quantile(v, 0.5) == 5.0);   // floor(0.5 * 9) = 4 -> value 5
  REQUIRE(empirical_quantile(v, 0.25) == 3.0);  // floor(2.25) = 2 -> value 3
  REQUIRE_THROWS_AS(empirical_quantile(v, 1.5), std::invalid_argument);
  REQUIRE_THROWS_AS(empirical_quantile({}, 0.5), std::invalid_argument);
}

TEST_CASE("finite difference gradient matches a quadratic") {
  auto f = [](const std::vector<double>& p) {
    return p[0] * p[0] + 3.0 * p[1] - 0.5 * p[0] * p[1];
  };
  const auto g = finite_diff_gradient(f, {2.0, -1.0}, 1e-5);
  REQUIRE(g[0] == Catch::Approx(2.0 * 2.0 - 0.5 * -1.0).margin(1e-6));
  REQUIRE(g[1] == Catch::Approx(3.0 - 0.5 * 2.0).margin(1e-6));
  REQUIRE_THROWS_AS(finite_diff_gradient(f, {1.0, 1.0}, 0.0), std::invalid_argument);
}
