#pragma once

#include <string>
#include <utility>

#include "bnkit/kernels.hpp"
#include "bnkit/tensor.hpp"

namespace bnkit::bn {

// Affine tail selection. Standard is Y = gamma * x_hat + beta. A1/A2 move
// the scale outside the shift. The Rbn/Iebn family multiplies in a
// per-instance sigmoid scale S = sigmoid(w_v * gap(F) + w_b), where F is the
// normalized batch for Rbn and the raw input for Iebn; the Minus versions
// drop the instance statistics, S = sigmoid(w_b).
enum class Variant {
  kStandard,
  kA1,
  kA2,
  kRbn,
  kIebn,
  kRbnMinus,
  kIebnMinus,
};

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);
bool variant_uses_scale_s(Variant v);
bool variant_uses_wv(Variant v);
bool variant_uses_raw_input(Variant v);

struct BatchNormState {
  std::size_t channels = 0;
  Tensor gamma;         // [C]
  Tensor beta;          // [C]
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C] biased, same estimator as batch variance
  double eps = 1e-5;
  double momentum = 0.1;  // running <- (1-momentum)*running + momentum*batch
  Variant variant = Variant::kStandard;
  Tensor gamma0;  // [C], A2 only
  Tensor w_v;     // [C], Rbn/Iebn
  Tensor w_b;     // [C], Rbn/Iebn family
  bool beta_frozen = false;
  bool stats_initialized = false;
};

BatchNormState make_batchnorm(std::size_t channels, double gamma_init,
                              Variant variant = Variant::kStandard,
                              double eps = 1e-5, double momentum = 0.1);

// Input-normalization layer: prepended to the network instead of dataset
// preprocessing. gamma starts at sigma_act * gamma_init to stand in for the
// missing activation ahead of it; beta is frozen at zero.
BatchNormState make_input_norm_bn(std::size_t channels, double gamma_init,
                                  double sigma_act);

struct BNCache {
  Tensor x_hat;       // normalized batch, input shape
  Tensor batch_mean;  // [C]
  Tensor batch_var;   // [C] biased
  Tensor raw_input_gap;  // [N,C], Iebn only
  Tensor scale_s;        // [N,C], Rbn/Iebn family
  std::size_t batch = 0;
  std::size_t spatial = 1;
};

struct BNResult {
  Tensor y;
  BNCache cache;
};

// Training forward: batch statistics, running-stat update, variant affine.
// Input is (N,C) or (N,C,H,W) with at least 2 elements per channel.
BNResult bn_forward_train(const Tensor& x, BatchNormState& state,
                          kernels::Exec exec = kernels::default_exec());

// Eval forward: running statistics, no state mutation.
Tensor bn_forward_eval(const Tensor& x, const BatchNormState& state,
                       kernels::Exec exec = kernels::default_exec());

struct BNGrads {
  Tensor dx;
  Tensor dgamma;  // [C]
  Tensor dbeta;   // [C]
  Tensor dgamma0;  // [C] when the variant has gamma0
  Tensor dwv;      // [C] when the variant has w_v
  Tensor dwb;      // [C] when the variant has w_b
};

// Standard-variant backward in the reduced gradient-factor form:
//   dx_i = gamma/sqrt(var+eps) * (dy_i - mean(dy) - x_hat_i * mean(dy*x_hat))
// per channel, plus dgamma = sum(dy * x_hat) and dbeta = sum(dy).
BNGrads bn_backward(const BNCache& cache, const BatchNormState& state,
                    const Tensor& dy,
                    kernels::Exec exec = kernels::default_exec());

// Term-by-term composite chain-rule path (through dL/dx_hat, dL/dvar,
// dL/dmean), no algebraic simplification. Testing oracle for bn_backward.
Tensor bn_backward_reference(const BNCache& cache, const BatchNormState& state,
                             const Tensor& dy);

// Backward for every affine variant; reduces to bn_backward for kStandard.
BNGrads bn_backward_variant(const BNCache& cache, const BatchNormState& state,
                            const Tensor& dy,
                            kernels::Exec exec = kernels::default_exec());

// Applies the variant affine tail to a normalized batch. raw_input is
// needed by Iebn only. Returns Y and the per-instance scale S ([N,C], empty
// for variants without one).
std::pair<Tensor, Tensor> affine_apply_variant(
    const Tensor& x_hat, const Tensor* raw_input, const BatchNormState& state,
    kernels::Exec exec = kernels::default_exec());

// gamma / sqrt(var + eps) per channel; the multiplier on BN's input
// gradient. Diagnostic for the initialization-invariance tests.
Tensor gradient_factor(const BatchNormState& state, const Tensor& batch_var);

// Empirical standard deviation of relu applied to n unit-Gaussian samples.
// Converges to sqrt(1/2 - 1/(2*pi)) ~= 0.5838; n >= 1e5 keeps sampling noise
// inside +-0.01.
double rectified_gaussian_std(std::size_t n_samples, RngStream& rng);

// Std of a rectified unit Gaussian, rounded as commonly quoted. Used to
// scale the input-normalization BN of relu networks.
inline constexpr double kReluActStd = 0.58;

}  // namespace bnkit::bn
