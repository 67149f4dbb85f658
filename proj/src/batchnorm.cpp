#include "bnkit/batchnorm.hpp"

#include <cmath>
#include <stdexcept>

namespace bnkit::bn {

namespace {

struct View {
  std::size_t batch;
  std::size_t spatial;
};

View check_input(const Tensor& x, std::size_t channels, const char* who) {
  if (x.rank() == 2) {
    if (x.extent(1) != channels) {
      throw std::invalid_argument(std::string(who) + ": expected " +
                                  std::to_string(channels) + " channels, got " +
                                  shape_str(x.shape()));
    }
    return {x.extent(0), 1};
  }
  if (x.rank() == 4) {
    if (x.extent(1) != channels) {
      throw std::invalid_argument(std::string(who) + ": expected " +
                                  std::to_string(channels) + " channels, got " +
                                  shape_str(x.shape()));
    }
    return {x.extent(0), x.extent(2) * x.extent(3)};
  }
  throw std::invalid_argument(std::string(who) +
                              ": input must be (N,C) or (N,C,H,W), got " +
                              shape_str(x.shape()));
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Per-instance per-channel spatial mean, (N,C).
Tensor gap_per_instance(const Tensor& x, std::size_t channels, const View& v,
                        kernels::Exec exec) {
  Tensor g = Tensor::uninitialized({v.batch, channels});
  const double inv = 1.0 / static_cast<double>(v.spatial);
  kernels::parallel_for(v.batch, exec, [&](std::size_t n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* row = x.data() + (n * channels + c) * v.spatial;
      double s = 0.0;
      for (std::size_t p = 0; p < v.spatial; ++p) s += row[p];
      g.at(n, c) = s * inv;
    }
  });
  return g;
}

// dx_i = (dxhat_i - mean(dxhat) - x_hat_i * mean(dxhat * x_hat)) / sqrt(var+eps)
// per channel; the Jacobian action of the normalization head.
Tensor normalize_backward(const BNCache& cache, double eps,
                          const Tensor& dxhat, kernels::Exec exec) {
  const std::size_t channels = cache.batch_mean.size();
  const std::size_t ns = cache.batch * cache.spatial;
  const double inv_m = 1.0 / static_cast<double>(ns);
  Tensor dx = Tensor::uninitialized(dxhat.shape());
  kernels::parallel_for(channels, exec, [&](std::size_t c) {
    const double r = 1.0 / std::sqrt(cache.batch_var[c] + eps);
    double sum = 0.0, sum_x = 0.0;
    for (std::size_t n = 0; n < cache.batch; ++n) {
      const std::size_t base = (n * channels + c) * cache.spatial;
      for (std::size_t p = 0; p < cache.spatial; ++p) {
        sum += dxhat[base + p];
        sum_x += dxhat[base + p] * cache.x_hat[base + p];
      }
    }
    const double mean_d = sum * inv_m;
    const double mean_dx = sum_x * inv_m;
    for (std::size_t n = 0; n < cache.batch; ++n) {
      const std::size_t base = (n * channels + c) * cache.spatial;
      for (std::size_t p = 0; p < cache.spatial; ++p) {
        dx[base + p] =
            r * (dxhat[base + p] - mean_d - cache.x_hat[base + p] * mean_dx);
      }
    }
  });
  return dx;
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kStandard: return "standard";
    case Variant::kA1: return "a1";
    case Variant::kA2: return "a2";
    case Variant::kRbn: return "rbn";
    case Variant::kIebn: return "iebn";
    case Variant::kRbnMinus: return "rbn-";
    case Variant::kIebnMinus: return "iebn-";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  if (name == "standard") return Variant::kStandard;
  if (name == "a1") return Variant::kA1;
  if (name == "a2") return Variant::kA2;
  if (name == "rbn") return Variant::kRbn;
  if (name == "iebn") return Variant::kIebn;
  if (name == "rbn-") return Variant::kRbnMinus;
  if (name == "iebn-") return Variant::kIebnMinus;
  throw std::invalid_argument("unknown BN variant: " + name);
}

bool variant_uses_scale_s(Variant v) {
  return v == Variant::kRbn || v == Variant::kIebn ||
         v == Variant::kRbnMinus || v == Variant::kIebnMinus;
}
bool variant_uses_wv(Variant v) {
  return v == Variant::kRbn || v == Variant::kIebn;
}
bool variant_uses_raw_input(Variant v) {
  return v == Variant::kIebn;
}

BatchNormState make_batchnorm(std::size_t channels, double gamma_init,
                              Variant variant, double eps, double momentum) {
  if (channels == 0) {
    throw std::invalid_argument("make_batchnorm: channels must be >= 1");
  }
  if (!(eps > 0.0)) {
    throw std::invalid_argument("make_batchnorm: eps must be > 0");
  }
  if (!(momentum > 0.0 && momentum <= 1.0)) {
    throw std::invalid_argument("make_batchnorm: momentum must be in (0,1]");
  }
  BatchNormState s;
  s.channels = channels;
  s.gamma = Tensor({channels}, gamma_init);
  s.beta = Tensor({channels}, 0.0);
  s.running_mean = Tensor({channels}, 0.0);
  s.running_var = Tensor({channels}, 1.0);
  s.eps = eps;
  s.momentum = momentum;
  s.variant = variant;
  if (variant == Variant::kA2) {
    s.gamma0 = Tensor({channels}, 1.0);
  }
  if (variant_uses_wv(variant)) {
    s.w_v = Tensor({channels}, 0.0);
  }
  if (variant_uses_scale_s(variant)) {
    const double wb0 =
        (variant == Variant::kRbn || variant == Variant::kRbnMinus) ? 1.0
                                                                    : -1.0;
    s.w_b = Tensor({channels}, wb0);
  }
  return s;
}

BatchNormState make_input_norm_bn(std::size_t channels, double gamma_init,
                                  double sigma_act) {
  if (!(gamma_init > 0.0 && gamma_init <= 1.0)) {
    throw std::invalid_argument(
        "make_input_norm_bn: gamma_init must be in (0,1]");
  }
  if (!(sigma_act > 0.0)) {
    throw std::invalid_argument("make_input_norm_bn: sigma_act must be > 0");
  }
  BatchNormState s = make_batchnorm(channels, sigma_act * gamma_init);
  s.beta_frozen = true;
  return s;
}

std::pair<Tensor, Tensor> affine_apply_variant(const Tensor& x_hat,
                                               const Tensor* raw_input,
                                               const BatchNormState& state,
                                               kernels::Exec exec) {
  const View v = check_input(x_hat, state.channels, "affine_apply_variant");
  const std::size_t channels = state.channels;
  Tensor y = Tensor::uninitialized(x_hat.shape());
  Tensor scale_s;

  switch (state.variant) {
    case Variant::kStandard:
    case Variant::kA1:
    case Variant::kA2: {
      kernels::parallel_for(v.batch, exec, [&](std::size_t n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t base = (n * channels + c) * v.spatial;
          const double g = state.gamma[c];
          const double b = state.beta[c];
          if (state.variant == Variant::kStandard) {
            for (std::size_t p = 0; p < v.spatial; ++p)
              y[base + p] = g * x_hat[base + p] + b;
          } else if (state.variant == Variant::kA1) {
            for (std::size_t p = 0; p < v.spatial; ++p)
              y[base + p] = g * (x_hat[base + p] + b);
          } else {
            const double g0 = state.gamma0[c];
            for (std::size_t p = 0; p < v.spatial; ++p)
              y[base + p] = g * (g0 * x_hat[base + p] + b);
          }
        }
      });
      break;
    }
    case Variant::kRbn:
    case Variant::kIebn: {
      if (state.variant == Variant::kIebn && raw_input == nullptr) {
        throw std::invalid_argument(
            "affine_apply_variant: iebn needs the raw input batch");
      }
      const Tensor g = (state.variant == Variant::kRbn)
                           ? gap_per_instance(x_hat, channels, v, exec)
                           : gap_per_instance(*raw_input, channels, v, exec);
      scale_s = Tensor::uninitialized({v.batch, channels});
      kernels::parallel_for(v.batch, exec, [&](std::size_t n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const double s =
              sigmoid(state.w_v[c] * g.at(n, c) + state.w_b[c]);
          scale_s.at(n, c) = s;
          const std::size_t base = (n * channels + c) * v.spatial;
          const double gs = state.gamma[c] * s;
          const double b = state.beta[c];
          for (std::size_t p = 0; p < v.spatial; ++p)
            y[base + p] = gs * x_hat[base + p] + b;
        }
      });
      break;
    }
    case Variant::kRbnMinus:
    case Variant::kIebnMinus: {
      scale_s = Tensor::uninitialized({v.batch, channels});
      kernels::parallel_for(v.batch, exec, [&](std::size_t n) {
        for (std::size_t c = 0; c < channels; ++c) {
          const double s = sigmoid(state.w_b[c]);
          scale_s.at(n, c) = s;
          const std::size_t base = (n * channels + c) * v.spatial;
          const double gs = state.gamma[c] * s;
          const double b = state.beta[c];
          for (std::size_t p = 0; p < v.spatial; ++p)
            y[base + p] = gs * x_hat[base + p] + b;
        }
      });
      break;
    }
  }
  return {std::move(y), std::move(scale_s)};
}

BNResult bn_forward_train(const Tensor& x, BatchNormState& state,
                          kernels::Exec exec) {
  const View v = check_input(x, state.channels, "bn_forward_train");
  if (v.batch * v.spatial < 2) {
    throw std::invalid_argument(
        "bn_forward_train: need >= 2 elements per channel for batch variance");
  }
  const std::size_t channels = state.channels;

  BNCache cache;
  cache.batch = v.batch;
  cache.spatial = v.spatial;
  cache.batch_mean = Tensor::uninitialized({channels});
  cache.batch_var = Tensor::uninitialized({channels});
  kernels::channel_stats(x.data(), v.batch, channels, v.spatial,
                         cache.batch_mean.data(), cache.batch_var.data(),
                         exec);

  Tensor x_hat = Tensor::uninitialized(x.shape());
  Tensor y, scale_s;
  if (!variant_uses_scale_s(state.variant)) {
    // Normalization and the affine tail in one pass.
    y = Tensor::uninitialized(x.shape());
    kernels::parallel_for(v.batch, exec, [&](std::size_t n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double mu = cache.batch_mean[c];
        const double r = 1.0 / std::sqrt(cache.batch_var[c] + state.eps);
        const double g = state.gamma[c];
        const double b = state.beta[c];
        const double g0 =
            state.variant == Variant::kA2 ? state.gamma0[c] : 1.0;
        const std::size_t base = (n * channels + c) * v.spatial;
        switch (state.variant) {
          case Variant::kStandard:
            for (std::size_t p = 0; p < v.spatial; ++p) {
              const double xh = (x[base + p] - mu) * r;
              x_hat[base + p] = xh;
              y[base + p] = g * xh + b;
            }
            break;
          case Variant::kA1:
            for (std::size_t p = 0; p < v.spatial; ++p) {
              const double xh = (x[base + p] - mu) * r;
              x_hat[base + p] = xh;
              y[base + p] = g * (xh + b);
            }
            break;
          default:  // kA2
            for (std::size_t p = 0; p < v.spatial; ++p) {
              const double xh = (x[base + p] - mu) * r;
              x_hat[base + p] = xh;
              y[base + p] = g * (g0 * xh + b);
            }
            break;
        }
      }
    });
  } else {
    kernels::parallel_for(v.batch, exec, [&](std::size_t n) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double mu = cache.batch_mean[c];
        const double r = 1.0 / std::sqrt(cache.batch_var[c] + state.eps);
        const std::size_t base = (n * channels + c) * v.spatial;
        for (std::size_t p = 0; p < v.spatial; ++p)
          x_hat[base + p] = (x[base + p] - mu) * r;
      }
    });
    auto applied = affine_apply_variant(
        x_hat, variant_uses_raw_input(state.variant) ? &x : nullptr, state,
        exec);
    y = std::move(applied.first);
    scale_s = std::move(applied.second);
  }

  for (std::size_t c = 0; c < channels; ++c) {
    state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] +
                            state.momentum * cache.batch_mean[c];
    state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                           state.momentum * cache.batch_var[c];
  }
  state.stats_initialized = true;

  cache.x_hat = std::move(x_hat);
  cache.scale_s = std::move(scale_s);
  if (variant_uses_raw_input(state.variant)) {
    cache.raw_input_gap = gap_per_instance(x, channels, v, exec);
  }
  return BNResult{std::move(y), std::move(cache)};
}

Tensor bn_forward_eval(const Tensor& x, const BatchNormState& state,
                       kernels::Exec exec) {
  const View v = check_input(x, state.channels, "bn_forward_eval");
  if (!state.stats_initialized) {
    throw std::runtime_error(
        "bn_forward_eval: running statistics not initialized");
  }
  const std::size_t channels = state.channels;
  Tensor x_hat = Tensor::uninitialized(x.shape());
  kernels::parallel_for(v.batch, exec, [&](std::size_t n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double mu = state.running_mean[c];
      const double r = 1.0 / std::sqrt(state.running_var[c] + state.eps);
      const std::size_t base = (n * channels + c) * v.spatial;
      for (std::size_t p = 0; p < v.spatial; ++p)
        x_hat[base + p] = (x[base + p] - mu) * r;
    }
  });
  auto [y, scale_s] = affine_apply_variant(
      x_hat, variant_uses_raw_input(state.variant) ? &x : nullptr, state,
      exec);
  (void)scale_s;
  return std::move(y);
}

BNGrads bn_backward(const BNCache& cache, const BatchNormState& state,
                    const Tensor& dy, kernels::Exec exec) {
  if (state.variant != Variant::kStandard) {
    throw std::invalid_argument(
        "bn_backward: reduced form covers the standard variant only; use "
        "bn_backward_variant");
  }
  if (!dy.same_shape(cache.x_hat)) {
    throw std::invalid_argument("bn_backward: dy shape " +
                                shape_str(dy.shape()) + " != cache shape " +
                                shape_str(cache.x_hat.shape()));
  }
  const std::size_t channels = state.channels;
  const std::size_t ns = cache.batch * cache.spatial;
  const double inv_m = 1.0 / static_cast<double>(ns);

  BNGrads out;
  out.dx = Tensor::uninitialized(dy.shape());
  out.dgamma = Tensor::uninitialized({channels});
  out.dbeta = Tensor::uninitialized({channels});
  kernels::parallel_for(channels, exec, [&](std::size_t c) {
    const double factor =
        state.gamma[c] / std::sqrt(cache.batch_var[c] + state.eps);
    double sum_dy = 0.0, sum_dyx = 0.0;
    for (std::size_t n = 0; n < cache.batch; ++n) {
      const std::size_t base = (n * channels + c) * cache.spatial;
      for (std::size_t p = 0; p < cache.spatial; ++p) {
        sum_dy += dy[base + p];
        sum_dyx += dy[base + p] * cache.x_hat[base + p];
      }
    }
    out.dgamma[c] = sum_dyx;
    out.dbeta[c] = sum_dy;
    const double mean_dy = sum_dy * inv_m;
    const double mean_dyx = sum_dyx * inv_m;
    for (std::size_t n = 0; n < cache.batch; ++n) {
      const std::size_t base = (n * channels + c) * cache.spatial;
      for (std::size_t p = 0; p < cache.spatial; ++p) {
        out.dx[base + p] =
            factor * (dy[base + p] - mean_dy -
                      cache.x_hat[base + p] * mean_dyx);
      }
    }
  });
  return out;
}

Tensor bn_backward_reference(const BNCache& cache,
                             const BatchNormState& state, const Tensor& dy) {
  if (state.variant != Variant::kStandard) {
    throw std::invalid_argument(
        "bn_backward_reference: standard variant only");
  }
  if (!dy.same_shape(cache.x_hat)) {
    throw std::invalid_argument("bn_backward_reference: dy shape mismatch");
  }
  const std::size_t channels = state.channels;
  const std::size_t ns = cache.batch * cache.spatial;
  const double m = static_cast<double>(ns);
  Tensor dx(dy.shape());

  for (std::size_t c = 0; c < channels; ++c) {
    const double var_eps = cache.batch_var[c] + state.eps;
    const double r = 1.0 / std::sqrt(var_eps);
    const double sd = std::sqrt(var_eps);
    const double gamma = state.gamma[c];

    // dL/dvar = sum_i dL/dx_hat_i * (x_i - mu) * (-1/2) (var+eps)^(-3/2)
    double dvar = 0.0;
    // The centered-sum term in dL/dmu is kept even though it sums to zero.
    double sum_xm = 0.0;
    double sum_dxhat = 0.0;
    for (std::size_t n = 0; n < cache.batch; ++n) {
      const std::size_t base = (n * channels + c) * cache.spatial;
      for (std::size_t p = 0; p < cache.spatial; ++p) {
        const double dxhat = dy[base + p] * gamma;
        const double xm = cache.x_hat[base + p] * sd;
        dvar += dxhat * xm * (-0.5) * std::pow(var_eps, -1.5);
        sum_xm += xm;
        sum_dxhat += dxhat;
      }
    }
    // dL/dmu = sum_i dL/dx_hat_i * (-1/sqrt(var+eps))
    //          + dL/dvar * (-2/m) * sum_i (x_i - mu)
    const double dmu = sum_dxhat * (-r) + dvar * (-2.0 / m) * sum_xm;

    for (std::size_t n = 0; n < cache.batch; ++n) {
      const std::size_t base = (n * channels + c) * cache.spatial;
      for (std::size_t p = 0; p < cache.spatial; ++p) {
        const double dxhat = dy[base + p] * gamma;
        const double xm = cache.x_hat[base + p] * sd;
        dx[base + p] =
            dxhat * r + dvar * (2.0 / m) * xm + dmu * (1.0 / m);
      }
    }
  }
  return dx;
}

BNGrads bn_backward_variant(const BNCache& cache, const BatchNormState& state,
                            const Tensor& dy, kernels::Exec exec) {
  if (state.variant == Variant::kStandard) {
    return bn_backward(cache, state, dy, exec);
  }
  if (!dy.same_shape(cache.x_hat)) {
    throw std::invalid_argument("bn_backward_variant: dy shape mismatch");
  }
  const std::size_t channels = state.channels;
  const std::size_t nb = cache.batch;
  const std::size_t sp = cache.spatial;
  const double inv_sp = 1.0 / static_cast<double>(sp);

  BNGrads out;
  out.dgamma = Tensor({channels});
  out.dbeta = Tensor({channels});
  if (state.variant == Variant::kA2) out.dgamma0 = Tensor({channels});
  if (variant_uses_wv(state.variant)) out.dwv = Tensor({channels});
  if (variant_uses_scale_s(state.variant)) out.dwb = Tensor({channels});

  Tensor dxhat = Tensor::uninitialized(dy.shape());
  Tensor draw;  // extra raw-input path (iebn)
  if (state.variant == Variant::kIebn) {
    draw = Tensor::uninitialized(dy.shape());
  }

  Tensor gap;  // G for the sigmoid argument (rbn/iebn)
  if (state.variant == Variant::kRbn) {
    gap = gap_per_instance(cache.x_hat, channels, View{nb, sp}, exec);
  } else if (state.variant == Variant::kIebn) {
    gap = cache.raw_input_gap;
  }

  kernels::parallel_for(channels, exec, [&](std::size_t c) {
    const double gamma = state.gamma[c];
    const double beta = state.beta[c];
    switch (state.variant) {
      case Variant::kA1: {
        double sum_dy = 0.0, sum_dg = 0.0;
        for (std::size_t n = 0; n < nb; ++n) {
          const std::size_t base = (n * channels + c) * sp;
          for (std::size_t p = 0; p < sp; ++p) {
            sum_dy += dy[base + p];
            sum_dg += dy[base + p] * (cache.x_hat[base + p] + beta);
            dxhat[base + p] = gamma * dy[base + p];
          }
        }
        out.dgamma[c] = sum_dg;
        out.dbeta[c] = gamma * sum_dy;
        break;
      }
      case Variant::kA2: {
        const double g0 = state.gamma0[c];
        double sum_dy = 0.0, sum_dg = 0.0, sum_dyx = 0.0;
        for (std::size_t n = 0; n < nb; ++n) {
          const std::size_t base = (n * channels + c) * sp;
          for (std::size_t p = 0; p < sp; ++p) {
            sum_dy += dy[base + p];
            sum_dyx += dy[base + p] * cache.x_hat[base + p];
            sum_dg += dy[base + p] * (g0 * cache.x_hat[base + p] + beta);
            dxhat[base + p] = gamma * g0 * dy[base + p];
          }
        }
        out.dgamma[c] = sum_dg;
        out.dgamma0[c] = gamma * sum_dyx;
        out.dbeta[c] = gamma * sum_dy;
        break;
      }
      case Variant::kRbn:
      case Variant::kIebn: {
        double sum_dy = 0.0, sum_dg = 0.0, dwv = 0.0, dwb = 0.0;
        for (std::size_t n = 0; n < nb; ++n) {
          const std::size_t base = (n * channels + c) * sp;
          const double s = cache.scale_s.at(n, c);
          double ds = 0.0;
          for (std::size_t p = 0; p < sp; ++p) {
            sum_dy += dy[base + p];
            sum_dg += dy[base + p] * s * cache.x_hat[base + p];
            ds += dy[base + p] * cache.x_hat[base + p];
            dxhat[base + p] = gamma * s * dy[base + p];
          }
          ds *= gamma;
          const double dpre = ds * s * (1.0 - s);
          dwv += dpre * gap.at(n, c);
          dwb += dpre;
          const double dgap = dpre * state.w_v[c] * inv_sp;
          if (state.variant == Variant::kRbn) {
            for (std::size_t p = 0; p < sp; ++p) dxhat[base + p] += dgap;
          } else {
            for (std::size_t p = 0; p < sp; ++p) draw[base + p] = dgap;
          }
        }
        out.dgamma[c] = sum_dg;
        out.dbeta[c] = sum_dy;
        out.dwv[c] = dwv;
        out.dwb[c] = dwb;
        break;
      }
      case Variant::kRbnMinus:
      case Variant::kIebnMinus: {
        double sum_dy = 0.0, sum_dg = 0.0, dwb = 0.0;
        for (std::size_t n = 0; n < nb; ++n) {
          const std::size_t base = (n * channels + c) * sp;
          const double s = cache.scale_s.at(n, c);
          double ds = 0.0;
          for (std::size_t p = 0; p < sp; ++p) {
            sum_dy += dy[base + p];
            sum_dg += dy[base + p] * s * cache.x_hat[base + p];
            ds += dy[base + p] * cache.x_hat[base + p];
            dxhat[base + p] = gamma * s * dy[base + p];
          }
          ds *= gamma;
          dwb += ds * s * (1.0 - s);
        }
        out.dgamma[c] = sum_dg;
        out.dbeta[c] = sum_dy;
        out.dwb[c] = dwb;
        break;
      }
      case Variant::kStandard:
        break;  // handled above
    }
  });

  out.dx = normalize_backward(cache, state.eps, dxhat, exec);
  if (state.variant == Variant::kIebn) {
    for (std::size_t i = 0; i < out.dx.size(); ++i) out.dx[i] += draw[i];
  }
  return out;
}

Tensor gradient_factor(const BatchNormState& state, const Tensor& batch_var) {
  if (batch_var.size() != state.channels) {
    throw std::invalid_argument("gradient_factor: batch_var size mismatch");
  }
  Tensor f({state.channels});
  for (std::size_t c = 0; c < state.channels; ++c) {
    f[c] = state.gamma[c] / std::sqrt(batch_var[c] + state.eps);
  }
  return f;
}

double rectified_gaussian_std(std::size_t n_samples, RngStream& rng) {
  if (n_samples < 2) {
    throw std::invalid_argument("rectified_gaussian_std: need >= 2 samples");
  }
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double y = std::max(0.0, rng.next_normal());
    sum += y;
    sumsq += y * y;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  return std::sqrt(sumsq / n - mean * mean);
}

}  // namespace bnkit::bn
