#include <doctest.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "bnkit/tensor.hpp"

using namespace bnkit;

TEST_CASE("equal seeds give identical streams, different seeds diverge") {
  RngStream a = make_rng(7);
  RngStream b = make_rng(7);
  bool all_equal = true;
  for (int i = 0; i < 100; ++i) {
    if (a.next_u64() != b.next_u64()) all_equal = false;
  }
  CHECK(all_equal);

  RngStream c = make_rng(7);
  RngStream d = make_rng(8);
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    if (c.next_u64() != d.next_u64()) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("seed zero is a valid stream") {
  RngStream rng = make_rng(0);
  bool nonzero = false;
  for (int i = 0; i < 10; ++i) {
    if (rng.next_u64() != 0) nonzero = true;
  }
  CHECK(nonzero);
}

TEST_CASE("randn converges to the requested moments") {
  RngStream rng = make_rng(42);
  const Tensor t = randn({1000000}, 0.0, 1.0, rng);
  double mean = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) mean += t[i];
  mean /= static_cast<double>(t.size());
  double var = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) var += (t[i] - mean) * (t[i] - mean);
  var /= static_cast<double>(t.size());
  CHECK(std::fabs(mean) < 0.005);
  CHECK(std::fabs(std::sqrt(var) - 1.0) < 0.005);
}

TEST_CASE("randn degenerate and error cases") {
  RngStream rng = make_rng(1);
  const Tensor t = randn({100}, 3.5, 0.0, rng);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 3.5);

  const Tensor empty = randn({0}, 0.0, 1.0, rng);
  CHECK(empty.size() == 0);

  CHECK_THROWS_AS(randn({4}, 0.0, -1.0, rng), std::invalid_argument);
}

TEST_CASE("randn with a fixed seed is bit-identical across invocations") {
  RngStream a = make_rng(123);
  RngStream b = make_rng(123);
  const Tensor ta = randn({4096}, 0.0, 1.0, a);
  const Tensor tb = randn({4096}, 0.0, 1.0, b);
  CHECK(std::memcmp(ta.data(), tb.data(), ta.size() * sizeof(double)) == 0);
}

TEST_CASE("reduce_stats hand cases") {
  const Tensor x = Tensor::from({3}, {1, 2, 3});
  const Moments m = reduce_stats(x, {0});
  CHECK(m.mean.size() == 1);
  CHECK(m.mean[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(m.variance[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  const Tensor c = Tensor::from({3}, {5, 5, 5});
  const Moments mc = reduce_stats(c, {0});
  CHECK(mc.mean[0] == 5.0);
  CHECK(mc.variance[0] == 0.0);
}

TEST_CASE("reduce_stats over batch+spatial axes matches a flat recompute") {
  RngStream rng = make_rng(5);
  const Tensor x = randn({2, 3, 4, 4}, 1.0, 2.0, rng);
  const Moments m = reduce_stats(x, {0, 2, 3});
  REQUIRE(m.mean.shape() == std::vector<std::size_t>{3});

  for (std::size_t c = 0; c < 3; ++c) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t h = 0; h < 4; ++h) {
        for (std::size_t w = 0; w < 4; ++w) {
          sum += x.at(n, c, h, w);
          ++count;
        }
      }
    }
    const double mu = sum / static_cast<double>(count);
    double var = 0.0;
    for (std::size_t n = 0; n < 2; ++n) {
      for (std::size_t h = 0; h < 4; ++h) {
        for (std::size_t w = 0; w < 4; ++w) {
          var += (x.at(n, c, h, w) - mu) * (x.at(n, c, h, w) - mu);
        }
      }
    }
    var /= static_cast<double>(count);
    CHECK(m.mean[c] == doctest::Approx(mu).epsilon(1e-12));
    CHECK(m.variance[c] == doctest::Approx(var).epsilon(1e-12));
  }
}

TEST_CASE("reduce_stats properties over random tensors") {
  RngStream rng = make_rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 1 + rng.next_below(6);
    const std::size_t c = 1 + rng.next_below(5);
    Tensor x = randn({n, c}, -1.0, 3.0, rng);
    Moments m = reduce_stats(x, {0});
    for (std::size_t j = 0; j < c; ++j) {
      CHECK(m.variance[j] >= 0.0);
    }
    // Mean after mean subtraction is 0 within 1e-12.
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) x.at(i, j) -= m.mean[j];
    }
    const Moments centered = reduce_stats(x, {0});
    for (std::size_t j = 0; j < c; ++j) {
      CHECK(std::fabs(centered.mean[j]) < 1e-12);
    }
  }
}

TEST_CASE("reduce_stats rejects an empty reduction") {
  const Tensor x(std::vector<std::size_t>{0, 3});
  CHECK_THROWS_AS(reduce_stats(x, {0}), std::invalid_argument);
  const Tensor y = Tensor::from({2}, {1, 2});
  CHECK_THROWS_AS(reduce_stats(y, {1}), std::invalid_argument);
  CHECK_THROWS_AS(reduce_stats(y, {0, 0}), std::invalid_argument);
}

TEST_CASE("matmul hand cases and shape errors") {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor ia = matmul(eye, a);
  for (std::size_t i = 0; i < 4; ++i) CHECK(ia[i] == a[i]);

  const Tensor ones = Tensor::from({2, 1}, {1, 1});
  const Tensor prod = matmul(a, ones);
  CHECK(prod.at(0, 0) == doctest::Approx(3.0));
  CHECK(prod.at(1, 0) == doctest::Approx(7.0));

  const Tensor bad = Tensor::from({4, 2}, {1, 1, 1, 1, 1, 1, 1, 1});
  const Tensor a23 = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(matmul(a23, bad), std::invalid_argument);
}

TEST_CASE("tensor construction and finiteness checks") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), std::invalid_argument);
  Tensor t = Tensor::from({2}, {1.0, 2.0});
  CHECK(t.all_finite());
  t[1] = std::nan("");
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.check_finite("t"), std::runtime_error);
}
