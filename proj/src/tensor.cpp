#include "bnkit/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bnkit {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t p = 1;
  for (std::size_t e : shape) p *= e;
  return p;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor Tensor::from(std::vector<std::size_t> shape,
                    std::vector<double> values) {
  if (shape_product(shape) != values.size()) {
    throw std::invalid_argument("Tensor::from: " + shape_str(shape) +
                                " does not hold " +
                                std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_.assign(values.begin(), values.end());
  return t;
}

Tensor Tensor::uninitialized(std::vector<std::size_t> shape) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_.resize(shape_product(t.shape_));
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::invalid_argument("Tensor::extent: axis out of range");
  }
  return shape_[axis];
}

double& Tensor::at(std::size_t i, std::size_t j) {
  return data_[i * shape_[1] + j];
}
double Tensor::at(std::size_t i, std::size_t j) const {
  return data_[i * shape_[1] + j];
}
double& Tensor::at(std::size_t n, std::size_t c, std::size_t h,
                   std::size_t w) {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}
double Tensor::at(std::size_t n, std::size_t c, std::size_t h,
                  std::size_t w) const {
  return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void Tensor::check_finite(const std::string& what) const {
  if (!all_finite()) {
    throw std::runtime_error(what + ": non-finite value");
  }
}

std::uint64_t RngStream::next_u64() {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double RngStream::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * next_uniform() - 1.0;
    v = 2.0 * next_uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double scale = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * scale;
  has_spare_ = true;
  return u * scale;
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
  if (bound == 0) {
    throw std::invalid_argument("RngStream::next_below: bound must be >= 1");
  }
  // Rejection sampling over the largest multiple of bound.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

RngStream make_rng(std::uint64_t seed) { return RngStream(seed); }

Tensor randn(const std::vector<std::size_t>& shape, double mean, double stddev,
             RngStream& rng) {
  if (!(stddev >= 0.0)) {
    throw std::invalid_argument("randn: stddev must be >= 0");
  }
  Tensor t = Tensor::uninitialized(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = mean + stddev * rng.next_normal();
  }
  return t;
}

Moments reduce_stats(const Tensor& x, const std::vector<std::size_t>& axes) {
  const std::size_t rank = x.rank();
  std::vector<bool> reduced(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank) {
      throw std::invalid_argument("reduce_stats: axis out of range");
    }
    if (reduced[a]) {
      throw std::invalid_argument("reduce_stats: duplicate axis");
    }
    reduced[a] = true;
  }
  std::size_t m = 1;
  std::vector<std::size_t> out_shape;
  for (std::size_t a = 0; a < rank; ++a) {
    if (reduced[a]) {
      m *= x.extent(a);
    } else {
      out_shape.push_back(x.extent(a));
    }
  }
  if (m == 0) {
    throw std::invalid_argument("reduce_stats: reduced extent is zero");
  }

  // Strides in the output index space for each non-reduced axis.
  std::vector<std::size_t> out_stride(rank, 0);
  std::size_t acc = 1;
  for (std::size_t a = rank; a-- > 0;) {
    if (!reduced[a]) {
      out_stride[a] = acc;
      acc *= x.extent(a);
    }
  }

  Tensor mean(out_shape);
  Tensor var(out_shape);
  const std::size_t total = x.size();
  std::vector<std::size_t> idx(rank, 0);

  auto out_index = [&](const std::vector<std::size_t>& ix) {
    std::size_t o = 0;
    for (std::size_t a = 0; a < rank; ++a) o += out_stride[a] * ix[a];
    return o;
  };
  auto advance = [&](std::vector<std::size_t>& ix) {
    for (std::size_t a = rank; a-- > 0;) {
      if (++ix[a] < x.extent(a)) return;
      ix[a] = 0;
    }
  };

  for (std::size_t flat = 0; flat < total; ++flat) {
    mean[out_index(idx)] += x[flat];
    advance(idx);
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] *= inv_m;

  idx.assign(rank, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    const std::size_t o = out_index(idx);
    const double d = x[flat] - mean[o];
    var[o] += d * d;
    advance(idx);
  }
  for (std::size_t i = 0; i < var.size(); ++i) var[i] *= inv_m;

  return Moments{std::move(mean), std::move(var)};
}

Tensor matmul(const Tensor& a, const Tensor& b, kernels::Exec exec) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul: both operands must be 2-D");
  }
  if (a.extent(1) != b.extent(0)) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor c = Tensor::uninitialized({a.extent(0), b.extent(1)});
  kernels::matmul_nn(a.data(), b.data(), c.data(), a.extent(0), a.extent(1),
                     b.extent(1), /*accumulate=*/false, exec);
  return c;
}

}  // namespace bnkit
