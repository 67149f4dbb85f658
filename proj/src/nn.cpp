#include "bnkit/nn.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace bnkit::nn {

namespace {

using nlohmann::json;

std::size_t fan_in_of(const std::vector<std::size_t>& shape,
                      const char* who) {
  if (shape.size() == 2) return shape[1];
  if (shape.size() == 4) return shape[1] * shape[2] * shape[3];
  throw std::invalid_argument(std::string(who) +
                              ": weight shape must be 2-D or 4-D, got " +
                              shape_str(shape));
}

}  // namespace

Tensor kaiming_fanin_init(const std::vector<std::size_t>& shape, double gain,
                          RngStream& rng) {
  if (!(gain > 0.0)) {
    throw std::invalid_argument("kaiming_fanin_init: gain must be > 0");
  }
  const std::size_t fan_in = fan_in_of(shape, "kaiming_fanin_init");
  const double sigma = gain / std::sqrt(static_cast<double>(fan_in));
  return randn(shape, 0.0, sigma, rng);
}

Tensor uniform_fanin_init(const std::vector<std::size_t>& shape,
                          RngStream& rng) {
  const std::size_t fan_in = fan_in_of(shape, "uniform_fanin_init");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = (2.0 * rng.next_uniform() - 1.0) * bound;
  }
  return t;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      LinearCache* cache, kernels::Exec exec) {
  if (x.rank() != 2 || w.rank() != 2) {
    throw std::invalid_argument("linear_forward: x and w must be 2-D");
  }
  const std::size_t n = x.extent(0), in = x.extent(1), out = w.extent(0);
  if (w.extent(1) != in || b.size() != out) {
    throw std::invalid_argument("linear_forward: shape mismatch, x " +
                                shape_str(x.shape()) + " w " +
                                shape_str(w.shape()));
  }
  Tensor wt = Tensor::uninitialized({in, out});
  kernels::transpose(w.data(), wt.data(), out, in, exec);
  Tensor y = Tensor::uninitialized({n, out});
  kernels::matmul_nn(x.data(), wt.data(), y.data(), n, in, out, false, exec);
  kernels::parallel_for(n, exec, [&](std::size_t i) {
    for (std::size_t o = 0; o < out; ++o) y.at(i, o) += b[o];
  });
  if (cache) cache->x = x;
  return y;
}

LinearGrads linear_backward(const LinearCache& cache, const Tensor& w,
                            const Tensor& dy, kernels::Exec exec) {
  const std::size_t n = cache.x.extent(0), in = cache.x.extent(1);
  const std::size_t out = w.extent(0);
  if (dy.rank() != 2 || dy.extent(0) != n || dy.extent(1) != out) {
    throw std::invalid_argument("linear_backward: dy shape mismatch");
  }
  LinearGrads g;
  g.dx = Tensor::uninitialized({n, in});
  kernels::matmul_nn(dy.data(), w.data(), g.dx.data(), n, out, in, false,
                     exec);
  Tensor dyt = Tensor::uninitialized({out, n});
  kernels::transpose(dy.data(), dyt.data(), n, out, exec);
  g.dw = Tensor::uninitialized({out, in});
  kernels::matmul_nn(dyt.data(), cache.x.data(), g.dw.data(), out, n, in,
                     false, exec);
  g.db = Tensor::uninitialized({out});
  kernels::parallel_for(out, exec, [&](std::size_t o) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += dy.at(i, o);
    g.db[o] = s;
  });
  return g;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      std::size_t stride, std::size_t padding,
                      Conv2dCache* cache, kernels::Exec exec) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw std::invalid_argument("conv2d_forward: x and w must be 4-D");
  }
  if (w.extent(2) != w.extent(3)) {
    throw std::invalid_argument("conv2d_forward: only square kernels");
  }
  kernels::Conv2dGeom g;
  g.batch = x.extent(0);
  g.in_ch = x.extent(1);
  g.in_h = x.extent(2);
  g.in_w = x.extent(3);
  g.out_ch = w.extent(0);
  g.kernel = w.extent(2);
  g.stride = stride;
  g.padding = padding;
  if (w.extent(1) != g.in_ch || b.size() != g.out_ch || !g.valid()) {
    throw std::invalid_argument("conv2d_forward: incompatible geometry, x " +
                                shape_str(x.shape()) + " w " +
                                shape_str(w.shape()));
  }
  const std::size_t kd = g.k_dim(), p = g.patches();
  Tensor cols = Tensor::uninitialized({g.batch, kd, p});
  kernels::im2col(x.data(), cols.data(), g, exec);

  Tensor y = Tensor::uninitialized({g.batch, g.out_ch, g.out_h(), g.out_w()});
  kernels::parallel_for(g.batch, exec, [&](std::size_t img) {
    double* yi = y.data() + img * g.out_ch * p;
    kernels::matmul_nn(w.data(), cols.data() + img * kd * p, yi, g.out_ch, kd,
                       p, false, kernels::Exec::kSerial);
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      const double bo = b[o];
      for (std::size_t q = 0; q < p; ++q) yi[o * p + q] += bo;
    }
  });
  if (cache) {
    cache->cols = std::move(cols);
    cache->geom = g;
  }
  return y;
}

Conv2dGrads conv2d_backward(const Conv2dCache& cache, const Tensor& w,
                            const Tensor& dy, kernels::Exec exec) {
  const kernels::Conv2dGeom& g = cache.geom;
  const std::size_t kd = g.k_dim(), p = g.patches();
  if (dy.rank() != 4 || dy.extent(0) != g.batch ||
      dy.extent(1) != g.out_ch || dy.extent(2) != g.out_h() ||
      dy.extent(3) != g.out_w()) {
    throw std::invalid_argument("conv2d_backward: dy shape mismatch");
  }

  Conv2dGrads grads;
  grads.db = Tensor::uninitialized({g.out_ch});
  kernels::parallel_for(g.out_ch, exec, [&](std::size_t o) {
    double s = 0.0;
    for (std::size_t img = 0; img < g.batch; ++img) {
      const double* row = dy.data() + (img * g.out_ch + o) * p;
      for (std::size_t q = 0; q < p; ++q) s += row[q];
    }
    grads.db[o] = s;
  });

  // dW is accumulated transposed, dW^T += cols_n * dy_n^T per image, so
  // only the small dy blocks need transposing. The image loop stays serial
  // (the matmul partitions output rows), fixing the summation order under
  // any thread count.
  Tensor dyt = Tensor::uninitialized({g.batch, p, g.out_ch});
  kernels::parallel_for(g.batch, exec, [&](std::size_t img) {
    kernels::transpose(dy.data() + img * g.out_ch * p,
                       dyt.data() + img * p * g.out_ch, g.out_ch, p,
                       kernels::Exec::kSerial);
  });
  Tensor dwt({kd, g.out_ch});
  for (std::size_t img = 0; img < g.batch; ++img) {
    kernels::matmul_nn(cache.cols.data() + img * kd * p,
                       dyt.data() + img * p * g.out_ch, dwt.data(), kd, p,
                       g.out_ch, /*accumulate=*/true, exec);
  }
  grads.dw = Tensor::uninitialized(w.shape());
  kernels::transpose(dwt.data(), grads.dw.data(), kd, g.out_ch, exec);

  Tensor wt = Tensor::uninitialized({kd, g.out_ch});
  kernels::transpose(w.data(), wt.data(), g.out_ch, kd, exec);
  Tensor dcols = Tensor::uninitialized({g.batch, kd, p});
  kernels::parallel_for(g.batch, exec, [&](std::size_t img) {
    kernels::matmul_nn(wt.data(), dy.data() + img * g.out_ch * p,
                       dcols.data() + img * kd * p, kd, g.out_ch, p, false,
                       kernels::Exec::kSerial);
  });
  grads.dx = Tensor({g.batch, g.in_ch, g.in_h, g.in_w});
  kernels::col2im(dcols.data(), grads.dx.data(), g, exec);
  return grads;
}

Tensor relu_forward(const Tensor& x, ReluCache* cache, kernels::Exec exec) {
  Tensor y = Tensor::uninitialized(x.shape());
  const std::size_t outer = x.rank() ? x.extent(0) : 0;
  const std::size_t inner = outer ? x.size() / outer : 0;
  kernels::parallel_for(outer, exec, [&](std::size_t i) {
    for (std::size_t j = i * inner; j < (i + 1) * inner; ++j) {
      y[j] = x[j] > 0.0 ? x[j] : 0.0;
    }
  });
  if (cache) cache->x = x;
  return y;
}

Tensor relu_backward(const ReluCache& cache, const Tensor& dy,
                     kernels::Exec exec) {
  if (!dy.same_shape(cache.x)) {
    throw std::invalid_argument("relu_backward: dy shape mismatch");
  }
  Tensor dx = Tensor::uninitialized(dy.shape());
  const std::size_t outer = dy.rank() ? dy.extent(0) : 0;
  const std::size_t inner = outer ? dy.size() / outer : 0;
  kernels::parallel_for(outer, exec, [&](std::size_t i) {
    for (std::size_t j = i * inner; j < (i + 1) * inner; ++j) {
      dx[j] = cache.x[j] > 0.0 ? dy[j] : 0.0;
    }
  });
  return dx;
}

Tensor gap_forward(const Tensor& x, GapCache* cache, kernels::Exec exec) {
  if (x.rank() != 4) {
    throw std::invalid_argument("gap_forward: input must be 4-D");
  }
  const std::size_t n = x.extent(0), c = x.extent(1);
  const std::size_t hw = x.extent(2) * x.extent(3);
  Tensor y = Tensor::uninitialized({n, c});
  const double inv = 1.0 / static_cast<double>(hw);
  kernels::parallel_for(n, exec, [&](std::size_t i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* row = x.data() + (i * c + ch) * hw;
      double s = 0.0;
      for (std::size_t q = 0; q < hw; ++q) s += row[q];
      y.at(i, ch) = s * inv;
    }
  });
  if (cache) cache->in_shape = x.shape();
  return y;
}

Tensor gap_backward(const GapCache& cache, const Tensor& dy,
                    kernels::Exec exec) {
  const auto& s = cache.in_shape;
  if (dy.rank() != 2 || dy.extent(0) != s[0] || dy.extent(1) != s[1]) {
    throw std::invalid_argument("gap_backward: dy shape mismatch");
  }
  const std::size_t hw = s[2] * s[3];
  const double inv = 1.0 / static_cast<double>(hw);
  Tensor dx = Tensor::uninitialized(s);
  kernels::parallel_for(s[0], exec, [&](std::size_t i) {
    for (std::size_t ch = 0; ch < s[1]; ++ch) {
      const double v = dy.at(i, ch) * inv;
      double* row = dx.data() + (i * s[1] + ch) * hw;
      for (std::size_t q = 0; q < hw; ++q) row[q] = v;
    }
  });
  return dx;
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch,
                            std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
  LayerSpec s;
  s.kind = LayerKind::kConv2d;
  s.in_ch = in_ch;
  s.out_ch = out_ch;
  s.kernel = kernel;
  s.stride = stride;
  s.padding = padding;
  return s;
}
LayerSpec LayerSpec::linear(std::size_t in_features,
                            std::size_t out_features) {
  LayerSpec s;
  s.kind = LayerKind::kLinear;
  s.in_features = in_features;
  s.out_features = out_features;
  return s;
}
LayerSpec LayerSpec::batchnorm(std::size_t channels) {
  LayerSpec s;
  s.kind = LayerKind::kBatchNorm;
  s.channels = channels;
  return s;
}
LayerSpec LayerSpec::relu() {
  LayerSpec s;
  s.kind = LayerKind::kRelu;
  return s;
}
LayerSpec LayerSpec::gap() {
  LayerSpec s;
  s.kind = LayerKind::kGap;
  return s;
}
LayerSpec LayerSpec::flatten() {
  LayerSpec s;
  s.kind = LayerKind::kFlatten;
  return s;
}

std::vector<std::vector<std::size_t>> validate_chain(
    const std::vector<LayerSpec>& specs,
    const std::vector<std::size_t>& input_shape) {
  if (input_shape.size() != 1 && input_shape.size() != 3) {
    throw std::invalid_argument(
        "validate_chain: per-example input shape must be {F} or {C,H,W}");
  }
  std::vector<std::vector<std::size_t>> shapes;
  std::vector<std::size_t> cur = input_shape;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    const std::string where = "layer " + std::to_string(i);
    switch (s.kind) {
      case LayerKind::kConv2d: {
        if (cur.size() != 3 || cur[0] != s.in_ch) {
          throw std::invalid_argument(where + ": conv2d expects " +
                                      std::to_string(s.in_ch) +
                                      " channels, input is " +
                                      shape_str(cur));
        }
        kernels::Conv2dGeom g;
        g.in_ch = s.in_ch;
        g.in_h = cur[1];
        g.in_w = cur[2];
        g.out_ch = s.out_ch;
        g.kernel = s.kernel;
        g.stride = s.stride;
        g.padding = s.padding;
        if (!g.valid()) {
          throw std::invalid_argument(where + ": conv2d geometry invalid");
        }
        cur = {s.out_ch, g.out_h(), g.out_w()};
        break;
      }
      case LayerKind::kLinear:
        if (cur.size() != 1 || cur[0] != s.in_features) {
          throw std::invalid_argument(where + ": linear expects " +
                                      std::to_string(s.in_features) +
                                      " features, input is " +
                                      shape_str(cur));
        }
        cur = {s.out_features};
        break;
      case LayerKind::kBatchNorm:
        if (cur[0] != s.channels) {
          throw std::invalid_argument(where + ": batchnorm expects " +
                                      std::to_string(s.channels) +
                                      " channels, input is " +
                                      shape_str(cur));
        }
        break;
      case LayerKind::kRelu:
        break;
      case LayerKind::kGap:
        if (cur.size() != 3) {
          throw std::invalid_argument(where + ": gap expects (C,H,W) input");
        }
        cur = {cur[0]};
        break;
      case LayerKind::kFlatten:
        if (cur.size() != 3) {
          throw std::invalid_argument(where +
                                      ": flatten expects (C,H,W) input");
        }
        cur = {cur[0] * cur[1] * cur[2]};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

void Layer::collect_params(const std::string&, std::vector<ParamRef>&) {}
void Layer::collect_state(std::vector<Tensor*>&) {}
void Layer::append_flags(std::vector<double>&) const {}
void Layer::read_flags(const double*&) {}

namespace {

class ConvLayer : public Layer {
 public:
  ConvLayer(const LayerSpec& s) : spec_(s) {
    w_ = Tensor({s.out_ch, s.in_ch, s.kernel, s.kernel});
    b_ = Tensor({s.out_ch});
    dw_ = Tensor(w_.shape());
    db_ = Tensor(b_.shape());
  }
  void init(RngStream& rng) {
    w_ = kaiming_fanin_init(w_.shape(), std::sqrt(2.0), rng);
  }
  Tensor forward(const Tensor& x, Mode mode) override {
    return conv2d_forward(x, w_, b_, spec_.stride, spec_.padding,
                          mode == Mode::kTrain ? &cache_ : nullptr);
  }
  Tensor backward(const Tensor& dy) override {
    Conv2dGrads g = conv2d_backward(cache_, w_, dy);
    dw_ = std::move(g.dw);
    db_ = std::move(g.db);
    return std::move(g.dx);
  }
  const char* kind_name() const override { return "conv2d"; }
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override {
    out.push_back({prefix + ".weight", ParamRole::kWeight, &w_, &dw_, false});
    out.push_back({prefix + ".bias", ParamRole::kBias, &b_, &db_, false});
  }
  void collect_state(std::vector<Tensor*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  const LayerSpec& spec() const { return spec_; }

 private:
  LayerSpec spec_;
  Tensor w_, b_, dw_, db_;
  Conv2dCache cache_;
};

class LinearLayer : public Layer {
 public:
  LinearLayer(const LayerSpec& s) : spec_(s) {
    w_ = Tensor({s.out_features, s.in_features});
    b_ = Tensor({s.out_features});
    dw_ = Tensor(w_.shape());
    db_ = Tensor(b_.shape());
  }
  void init(RngStream& rng) { w_ = uniform_fanin_init(w_.shape(), rng); }
  Tensor forward(const Tensor& x, Mode mode) override {
    return linear_forward(x, w_, b_, mode == Mode::kTrain ? &cache_ : nullptr);
  }
  Tensor backward(const Tensor& dy) override {
    LinearGrads g = linear_backward(cache_, w_, dy);
    dw_ = std::move(g.dw);
    db_ = std::move(g.db);
    return std::move(g.dx);
  }
  const char* kind_name() const override { return "linear"; }
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override {
    out.push_back({prefix + ".weight", ParamRole::kWeight, &w_, &dw_, false});
    out.push_back({prefix + ".bias", ParamRole::kBias, &b_, &db_, false});
  }
  void collect_state(std::vector<Tensor*>& out) override {
    out.push_back(&w_);
    out.push_back(&b_);
  }
  const LayerSpec& spec() const { return spec_; }

 private:
  LayerSpec spec_;
  Tensor w_, b_, dw_, db_;
  LinearCache cache_;
};

class BatchNormLayer : public Layer {
 public:
  explicit BatchNormLayer(bn::BatchNormState state)
      : state_(std::move(state)) {
    dgamma_ = Tensor({state_.channels});
    dbeta_ = Tensor({state_.channels});
    if (state_.variant == bn::Variant::kA2)
      dgamma0_ = Tensor({state_.channels});
    if (bn::variant_uses_wv(state_.variant))
      dwv_ = Tensor({state_.channels});
    if (bn::variant_uses_scale_s(state_.variant))
      dwb_ = Tensor({state_.channels});
  }
  Tensor forward(const Tensor& x, Mode mode) override {
    if (mode == Mode::kTrain) {
      bn::BNResult r = bn::bn_forward_train(x, state_);
      cache_ = std::move(r.cache);
      return std::move(r.y);
    }
    return bn::bn_forward_eval(x, state_);
  }
  Tensor backward(const Tensor& dy) override {
    bn::BNGrads g = bn::bn_backward_variant(cache_, state_, dy);
    dgamma_ = std::move(g.dgamma);
    dbeta_ = std::move(g.dbeta);
    if (!g.dgamma0.empty()) dgamma0_ = std::move(g.dgamma0);
    if (!g.dwv.empty()) dwv_ = std::move(g.dwv);
    if (!g.dwb.empty()) dwb_ = std::move(g.dwb);
    return std::move(g.dx);
  }
  const char* kind_name() const override { return "batchnorm"; }
  void collect_params(const std::string& prefix,
                      std::vector<ParamRef>& out) override {
    out.push_back(
        {prefix + ".gamma", ParamRole::kBnGamma, &state_.gamma, &dgamma_,
         false});
    out.push_back({prefix + ".beta", ParamRole::kBnBeta, &state_.beta,
                   &dbeta_, state_.beta_frozen});
    if (state_.variant == bn::Variant::kA2) {
      out.push_back({prefix + ".gamma0", ParamRole::kBnAux, &state_.gamma0,
                     &dgamma0_, false});
    }
    if (bn::variant_uses_wv(state_.variant)) {
      out.push_back(
          {prefix + ".w_v", ParamRole::kBnAux, &state_.w_v, &dwv_, false});
    }
    if (bn::variant_uses_scale_s(state_.variant)) {
      out.push_back(
          {prefix + ".w_b", ParamRole::kBnAux, &state_.w_b, &dwb_, false});
    }
  }
  void collect_state(std::vector<Tensor*>& out) override {
    out.push_back(&state_.gamma);
    out.push_back(&state_.beta);
    out.push_back(&state_.running_mean);
    out.push_back(&state_.running_var);
    if (state_.variant == bn::Variant::kA2) out.push_back(&state_.gamma0);
    if (bn::variant_uses_wv(state_.variant)) out.push_back(&state_.w_v);
    if (bn::variant_uses_scale_s(state_.variant)) out.push_back(&state_.w_b);
  }
  void append_flags(std::vector<double>& out) const override {
    out.push_back(state_.stats_initialized ? 1.0 : 0.0);
  }
  void read_flags(const double*& cursor) override {
    state_.stats_initialized = (*cursor++ != 0.0);
  }
  bn::BatchNormState& state() { return state_; }
  const bn::BatchNormState& state() const { return state_; }

 private:
  bn::BatchNormState state_;
  bn::BNCache cache_;
  Tensor dgamma_, dbeta_, dgamma0_, dwv_, dwb_;
};

class ReluLayer : public Layer {
 public:
  // Caches a byte mask instead of copying the input tensor.
  Tensor forward(const Tensor& x, Mode mode) override {
    Tensor y = Tensor::uninitialized(x.shape());
    const std::size_t outer = x.rank() ? x.extent(0) : 0;
    const std::size_t inner = outer ? x.size() / outer : 0;
    const kernels::Exec exec = kernels::default_exec();
    if (mode == Mode::kTrain) {
      mask_.resize(x.size());
      kernels::parallel_for(outer, exec, [&](std::size_t i) {
        for (std::size_t j = i * inner; j < (i + 1) * inner; ++j) {
          const bool pos = x[j] > 0.0;
          mask_[j] = pos;
          y[j] = pos ? x[j] : 0.0;
        }
      });
    } else {
      kernels::parallel_for(outer, exec, [&](std::size_t i) {
        for (std::size_t j = i * inner; j < (i + 1) * inner; ++j) {
          y[j] = x[j] > 0.0 ? x[j] : 0.0;
        }
      });
    }
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    if (dy.size() != mask_.size()) {
      throw std::invalid_argument("relu backward: dy shape mismatch");
    }
    Tensor dx = Tensor::uninitialized(dy.shape());
    const std::size_t outer = dy.rank() ? dy.extent(0) : 0;
    const std::size_t inner = outer ? dy.size() / outer : 0;
    kernels::parallel_for(outer, kernels::default_exec(), [&](std::size_t i) {
      for (std::size_t j = i * inner; j < (i + 1) * inner; ++j) {
        dx[j] = mask_[j] ? dy[j] : 0.0;
      }
    });
    return dx;
  }
  const char* kind_name() const override { return "relu"; }

 private:
  std::vector<unsigned char> mask_;
};

class GapLayer : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override {
    return gap_forward(x, mode == Mode::kTrain ? &cache_ : &eval_cache_);
  }
  Tensor backward(const Tensor& dy) override {
    return gap_backward(cache_, dy);
  }
  const char* kind_name() const override { return "gap"; }

 private:
  GapCache cache_, eval_cache_;
};

class FlattenLayer : public Layer {
 public:
  Tensor forward(const Tensor& x, Mode mode) override {
    if (x.rank() != 4) {
      throw std::invalid_argument("flatten: input must be 4-D");
    }
    if (mode == Mode::kTrain) in_shape_ = x.shape();
    Tensor y({x.extent(0), x.extent(1) * x.extent(2) * x.extent(3)});
    std::memcpy(y.data(), x.data(), x.size() * sizeof(double));
    return y;
  }
  Tensor backward(const Tensor& dy) override {
    Tensor dx(in_shape_);
    if (dx.size() != dy.size()) {
      throw std::invalid_argument("flatten backward: size mismatch");
    }
    std::memcpy(dx.data(), dy.data(), dy.size() * sizeof(double));
    return dx;
  }
  const char* kind_name() const override { return "flatten"; }

 private:
  std::vector<std::size_t> in_shape_;
};

json layer_to_json(Layer& layer) {
  json j;
  j["kind"] = layer.kind_name();
  if (auto* c = dynamic_cast<ConvLayer*>(&layer)) {
    j["in_ch"] = c->spec().in_ch;
    j["out_ch"] = c->spec().out_ch;
    j["kernel"] = c->spec().kernel;
    j["stride"] = c->spec().stride;
    j["padding"] = c->spec().padding;
  } else if (auto* l = dynamic_cast<LinearLayer*>(&layer)) {
    j["in_features"] = l->spec().in_features;
    j["out_features"] = l->spec().out_features;
  } else if (auto* b = dynamic_cast<BatchNormLayer*>(&layer)) {
    const bn::BatchNormState& s = b->state();
    j["channels"] = s.channels;
    j["variant"] = bn::variant_name(s.variant);
    j["beta_frozen"] = s.beta_frozen;
    j["eps"] = s.eps;
    j["momentum"] = s.momentum;
  }
  return j;
}

std::unique_ptr<Layer> layer_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "conv2d") {
    return std::make_unique<ConvLayer>(LayerSpec::conv2d(
        j.at("in_ch"), j.at("out_ch"), j.at("kernel"), j.at("stride"),
        j.at("padding")));
  }
  if (kind == "linear") {
    return std::make_unique<LinearLayer>(
        LayerSpec::linear(j.at("in_features"), j.at("out_features")));
  }
  if (kind == "batchnorm") {
    bn::BatchNormState s = bn::make_batchnorm(
        j.at("channels").get<std::size_t>(), 1.0,
        bn::variant_from_name(j.at("variant").get<std::string>()),
        j.at("eps").get<double>(), j.at("momentum").get<double>());
    s.beta_frozen = j.at("beta_frozen").get<bool>();
    return std::make_unique<BatchNormLayer>(std::move(s));
  }
  if (kind == "relu") return std::make_unique<ReluLayer>();
  if (kind == "gap") return std::make_unique<GapLayer>();
  if (kind == "flatten") return std::make_unique<FlattenLayer>();
  throw std::runtime_error("checkpoint: unknown layer kind '" + kind + "'");
}

constexpr char kCheckpointMagic[8] = {'B', 'N', 'K', 'C', 'K', 'P', 'T', '1'};

}  // namespace

Tensor Network::forward(const Tensor& x, Mode mode) {
  Tensor cur = x;
  for (auto& layer : layers_) {
    cur = layer->forward(cur, mode);
  }
  return cur;
}

Tensor Network::backward(const Tensor& dlogits) {
  Tensor cur = dlogits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    cur = layers_[i]->backward(cur);
  }
  return cur;
}

void Network::zero_grads() {
  for (ParamRef& p : params()) {
    p.grad->fill(0.0);
  }
}

std::vector<ParamRef> Network::params() {
  std::vector<ParamRef> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect_params("layers." + std::to_string(i), out);
  }
  return out;
}

std::vector<double> Network::state_vector() const {
  std::vector<double> out;
  for (const auto& layer : layers_) {
    std::vector<Tensor*> tensors;
    layer->collect_state(tensors);
    for (Tensor* t : tensors) {
      out.insert(out.end(), t->data(), t->data() + t->size());
    }
    layer->append_flags(out);
  }
  return out;
}

void Network::load_state_vector(const std::vector<double>& state) {
  const double* cursor = state.data();
  const double* end = cursor + state.size();
  for (auto& layer : layers_) {
    std::vector<Tensor*> tensors;
    layer->collect_state(tensors);
    for (Tensor* t : tensors) {
      if (cursor + t->size() > end) {
        throw std::runtime_error("load_state_vector: state too short");
      }
      std::memcpy(t->data(), cursor, t->size() * sizeof(double));
      cursor += t->size();
    }
    layer->read_flags(cursor);
  }
  if (cursor != end) {
    throw std::runtime_error("load_state_vector: state size mismatch");
  }
}

void Network::save(std::ostream& os) const {
  json header;
  header["format_version"] = 1;
  header["input_shape"] = input_shape_;
  header["layers"] = json::array();
  for (const auto& layer : layers_) {
    header["layers"].push_back(layer_to_json(*layer));
  }
  const std::string htext = header.dump();
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t hlen = htext.size();
  os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  const std::vector<double> state = state_vector();
  const std::uint64_t count = state.size();
  os.write(reinterpret_cast<const char*>(&count), sizeof(count));
  os.write(reinterpret_cast<const char*>(state.data()),
           static_cast<std::streamsize>(state.size() * sizeof(double)));
  if (!os) throw std::runtime_error("checkpoint save failed");
}

Network Network::load(std::istream& is) {
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  std::uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  is.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  const json header = json::parse(htext);
  if (header.at("format_version").get<int>() != 1) {
    throw std::runtime_error("checkpoint: unsupported format version");
  }
  Network net;
  net.input_shape_ =
      header.at("input_shape").get<std::vector<std::size_t>>();
  for (const json& lj : header.at("layers")) {
    net.layers_.push_back(layer_from_json(lj));
  }
  std::uint64_t count = 0;
  is.read(reinterpret_cast<char*>(&count), sizeof(count));
  std::vector<double> state(count);
  is.read(reinterpret_cast<char*>(state.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw std::runtime_error("checkpoint: truncated state");
  net.load_state_vector(state);
  return net;
}

Network build_network(const std::vector<LayerSpec>& specs,
                      const std::vector<std::size_t>& input_shape,
                      double gamma_init, bool input_norm_bn,
                      bn::Variant variant, RngStream& rng) {
  if (!(gamma_init > 0.0 && gamma_init <= 1.0)) {
    throw std::invalid_argument("build_network: gamma_init must be in (0,1]");
  }
  validate_chain(specs, input_shape);

  Network net;
  net.input_shape_ = input_shape;
  if (input_norm_bn) {
    net.layers_.push_back(std::make_unique<BatchNormLayer>(
        bn::make_input_norm_bn(input_shape[0], gamma_init, bn::kReluActStd)));
  }
  for (const LayerSpec& s : specs) {
    switch (s.kind) {
      case LayerKind::kConv2d: {
        auto layer = std::make_unique<ConvLayer>(s);
        layer->init(rng);
        net.layers_.push_back(std::move(layer));
        break;
      }
      case LayerKind::kLinear: {
        auto layer = std::make_unique<LinearLayer>(s);
        layer->init(rng);
        net.layers_.push_back(std::move(layer));
        break;
      }
      case LayerKind::kBatchNorm:
        net.layers_.push_back(std::make_unique<BatchNormLayer>(
            bn::make_batchnorm(s.channels, gamma_init, variant)));
        break;
      case LayerKind::kRelu:
        net.layers_.push_back(std::make_unique<ReluLayer>());
        break;
      case LayerKind::kGap:
        net.layers_.push_back(std::make_unique<GapLayer>());
        break;
      case LayerKind::kFlatten:
        net.layers_.push_back(std::make_unique<FlattenLayer>());
        break;
    }
  }
  return net;
}

std::vector<LayerSpec> tiny_bn_net(std::size_t in_channels,
                                   std::size_t num_classes) {
  return {
      LayerSpec::conv2d(in_channels, 32, 3, 1, 1),
      LayerSpec::batchnorm(32),
      LayerSpec::relu(),
      LayerSpec::conv2d(32, 64, 3, 2, 1),
      LayerSpec::batchnorm(64),
      LayerSpec::relu(),
      LayerSpec::conv2d(64, 128, 3, 2, 1),
      LayerSpec::batchnorm(128),
      LayerSpec::relu(),
      LayerSpec::gap(),
      LayerSpec::linear(128, num_classes),
  };
}

}  // namespace bnkit::nn
