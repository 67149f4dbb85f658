#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <type_traits>
#include <vector>

#include "bnkit/kernels.hpp"

namespace bnkit {

namespace detail {

// std::vector storage that default-initializes on resize, so buffers that
// are fully overwritten skip the zero-fill pass.
template <typename T, typename A = std::allocator<T>>
class default_init_allocator : public A {
  using traits = std::allocator_traits<A>;

 public:
  template <typename U>
  struct rebind {
    using other =
        default_init_allocator<U,
                               typename traits::template rebind_alloc<U>>;
  };
  using A::A;

  template <typename U>
  void construct(U* ptr) noexcept(
      std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(ptr)) U;
  }
  template <typename U, typename... Args>
  void construct(U* ptr, Args&&... args) {
    traits::construct(static_cast<A&>(*this), ptr,
                      std::forward<Args>(args)...);
  }
};

using buffer = std::vector<double, default_init_allocator<double>>;

}  // namespace detail

// Dense row-major array of 64-bit floats. All training math runs in double
// precision; gradient checks at 1e-5 relative need it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, double fill);
  static Tensor from(std::vector<std::size_t> shape,
                     std::vector<double> values);
  // Skips the zero fill; every element must be written before it is read.
  static Tensor uninitialized(std::vector<std::size_t> shape);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void fill(double v);

  bool all_finite() const;
  // Throws std::runtime_error naming `what` if any entry is NaN/Inf.
  void check_finite(const std::string& what) const;

 private:
  std::vector<std::size_t> shape_;
  detail::buffer data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_str(const std::vector<std::size_t>& shape);

// Deterministic seeded stream: SplitMix64 for the integer sequence (a single
// 64-bit state word, bit-exact across platforms), Gaussians via the
// Marsaglia polar variant of Box-Muller with the spare value cached in the
// stream. Draw consumption depends only on the call sequence, never on
// distribution parameters. Single-owner: never share one stream across
// threads.
class RngStream {
 public:
  static constexpr const char* kAlgorithm = "splitmix64+marsaglia-polar";

  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double next_uniform();
  // Standard normal draw.
  double next_normal();
  // Unbiased uniform integer in [0, bound); bound >= 1.
  std::uint64_t next_below(std::uint64_t bound);

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

RngStream make_rng(std::uint64_t seed);

// I.i.d. Gaussian tensor. Draws are consumed for every element even when
// stddev is zero. Negative stddev is an error.
Tensor randn(const std::vector<std::size_t>& shape, double mean, double stddev,
             RngStream& rng);

struct Moments {
  Tensor mean;
  Tensor variance;  // biased: divisor = number of reduced elements
};

// Mean and biased variance over `axes`; output keeps the remaining axes in
// order. The reduced extent must be >= 1.
Moments reduce_stats(const Tensor& x, const std::vector<std::size_t>& axes);

// 2-D matrix product in double precision.
Tensor matmul(const Tensor& a, const Tensor& b,
              kernels::Exec exec = kernels::default_exec());

}  // namespace bnkit
