#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "bnkit/batchnorm.hpp"
#include "bnkit/kernels.hpp"
#include "bnkit/tensor.hpp"

namespace bnkit::nn {

enum class Mode { kTrain, kEval };

enum class ParamRole { kWeight, kBnGamma, kBnBeta, kBias, kBnAux };

struct ParamRef {
  std::string name;
  ParamRole role = ParamRole::kWeight;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
  bool frozen = false;
};

// N(0, (gain/sqrt(fan_in))^2) init; fan_in is in-features for 2-D (out,in)
// weights and in*kh*kw for 4-D (out,in,kh,kw) kernels.
Tensor kaiming_fanin_init(const std::vector<std::size_t>& shape, double gain,
                          RngStream& rng);
// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)), same fan rule.
Tensor uniform_fanin_init(const std::vector<std::size_t>& shape,
                          RngStream& rng);

struct LinearCache {
  Tensor x;
};
struct LinearGrads {
  Tensor dx, dw, db;
};
// y = x * w^T + b with x (N,in), w (out,in), b (out).
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      LinearCache* cache = nullptr,
                      kernels::Exec exec = kernels::default_exec());
LinearGrads linear_backward(const LinearCache& cache, const Tensor& w,
                            const Tensor& dy,
                            kernels::Exec exec = kernels::default_exec());

struct Conv2dCache {
  Tensor cols;  // (N, k_dim, patches)
  kernels::Conv2dGeom geom;
};
struct Conv2dGrads {
  Tensor dx, dw, db;
};
// Cross-correlation with x (N,C,H,W), w (OC,C,KH,KW), b (OC).
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      std::size_t stride, std::size_t padding,
                      Conv2dCache* cache = nullptr,
                      kernels::Exec exec = kernels::default_exec());
Conv2dGrads conv2d_backward(const Conv2dCache& cache, const Tensor& w,
                            const Tensor& dy,
                            kernels::Exec exec = kernels::default_exec());

struct ReluCache {
  Tensor x;
};
// y = max(0, x); the subgradient at exactly 0 is 0.
Tensor relu_forward(const Tensor& x, ReluCache* cache = nullptr,
                    kernels::Exec exec = kernels::default_exec());
Tensor relu_backward(const ReluCache& cache, const Tensor& dy,
                     kernels::Exec exec = kernels::default_exec());

struct GapCache {
  std::vector<std::size_t> in_shape;
};
// Global average pooling (N,C,H,W) -> (N,C); backward spreads dy/(H*W).
Tensor gap_forward(const Tensor& x, GapCache* cache = nullptr,
                   kernels::Exec exec = kernels::default_exec());
Tensor gap_backward(const GapCache& cache, const Tensor& dy,
                    kernels::Exec exec = kernels::default_exec());

enum class LayerKind { kConv2d, kLinear, kBatchNorm, kRelu, kGap, kFlatten };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in_ch = 0, out_ch = 0, kernel = 0, stride = 1, padding = 0;
  std::size_t in_features = 0, out_features = 0;
  std::size_t channels = 0;

  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch,
                          std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0);
  static LayerSpec linear(std::size_t in_features, std::size_t out_features);
  static LayerSpec batchnorm(std::size_t channels);
  static LayerSpec relu();
  static LayerSpec gap();
  static LayerSpec flatten();
};

// Threads output shapes through the sequence starting from the per-example
// input shape ({C,H,W} or {F}); throws on any break in the chain.
std::vector<std::vector<std::size_t>> validate_chain(
    const std::vector<LayerSpec>& specs,
    const std::vector<std::size_t>& input_shape);

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual const char* kind_name() const = 0;
  virtual void collect_params(const std::string& prefix,
                              std::vector<ParamRef>& out);
  // Persistent tensors (parameters + running stats) in a fixed order.
  virtual void collect_state(std::vector<Tensor*>& out);
  virtual void append_flags(std::vector<double>& out) const;
  virtual void read_flags(const double*& cursor);
};

class Network {
 public:
  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Tensor forward(const Tensor& x, Mode mode);
  // Propagates dlogits back through every layer, filling parameter
  // gradients; returns the gradient at the network input.
  Tensor backward(const Tensor& dlogits);
  void zero_grads();

  std::vector<ParamRef> params();
  std::size_t num_layers() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const std::vector<std::size_t>& input_shape() const { return input_shape_; }

  // In-memory snapshot of all persistent state (used for best-epoch
  // selection). load_state restores into the existing tensors in place.
  std::vector<double> state_vector() const;
  void load_state_vector(const std::vector<double>& state);

  // Versioned checkpoint: JSON layer descriptions followed by raw
  // little-endian doubles. Round-trips bit-exactly.
  void save(std::ostream& os) const;
  static Network load(std::istream& is);

  friend Network build_network(const std::vector<LayerSpec>& specs,
                               const std::vector<std::size_t>& input_shape,
                               double gamma_init, bool input_norm_bn,
                               bn::Variant variant, RngStream& rng);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::size_t> input_shape_;
};

// Materializes a validated spec chain. Conv weights are Kaiming fan-in with
// relu gain sqrt(2), linear weights uniform fan-in, all biases zero, every
// interior BN gets gamma = gamma_init and beta = 0. With input_norm_bn a
// frozen-beta BN with gamma = 0.58 * gamma_init is prepended in place of
// dataset preprocessing.
Network build_network(const std::vector<LayerSpec>& specs,
                      const std::vector<std::size_t>& input_shape,
                      double gamma_init, bool input_norm_bn,
                      bn::Variant variant, RngStream& rng);

// Reference desk-scale architecture: three conv-BN-relu blocks (widths
// 32/64/128, stride 2 on the last two), GAP, and a linear classifier.
std::vector<LayerSpec> tiny_bn_net(std::size_t in_channels,
                                   std::size_t num_classes);

}  // namespace bnkit::nn
