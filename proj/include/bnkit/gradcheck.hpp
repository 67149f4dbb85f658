#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "bnkit/batchnorm.hpp"
#include "bnkit/tensor.hpp"

// Finite-difference oracles. Every check evaluates the loss through forward
// passes only, so it stays independent of the backward implementations it
// verifies.

namespace bnkit::gradcheck {

inline constexpr double kFdStep = 1e-6;

// |a-b| / max(|a|, |b|, 1): relative with a unit floor so exact zeros
// compare sanely.
double rel_err(double a, double b);

// Central difference d/dx[i] of loss(x).
double central_difference(const std::function<double(const Tensor&)>& loss,
                          const Tensor& x, std::size_t i,
                          double step = kFdStep);

struct CheckStats {
  std::size_t cases = 0;
  std::size_t checks = 0;
  std::size_t failures = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;  // reduction-equivalence checks only
  double seconds = 0.0;

  bool ok() const { return failures == 0; }
  void absorb(const CheckStats& other);
};

// bn_backward (dx, dgamma, dbeta) vs central differences on random batches
// (m <= 16, C <= 8), loss L = sum(R * Y).
CheckStats check_bn_standard(std::size_t cases, std::uint64_t seed,
                             double tolerance = 1e-5);

// |bn_backward - bn_backward_reference| on the same random cases.
CheckStats check_bn_reduction_equivalence(std::size_t cases,
                                          std::uint64_t seed,
                                          double tolerance = 1e-10);

// Variant affine backward (all participating parameters + dx) vs central
// differences; variants have no closed form in the derivation, so finite
// differences are the only oracle.
CheckStats check_bn_variant(bn::Variant variant, std::size_t cases,
                            std::uint64_t seed, double tolerance = 1e-5);

// linear / conv2d / relu / gap backward vs central differences.
CheckStats check_layers(std::uint64_t seed, double tolerance = 1e-5);

// Every parameter and the input of a small conv-BN-relu-GAP-linear network
// against central differences of a softmax cross-entropy loss.
CheckStats check_end_to_end(std::uint64_t seed, double tolerance = 1e-4);

}  // namespace bnkit::gradcheck
