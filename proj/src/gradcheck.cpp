#include "bnkit/gradcheck.hpp"

#include <chrono>
#include <cmath>

#include "bnkit/harness.hpp"
#include "bnkit/nn.hpp"

namespace bnkit::gradcheck {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double uniform_in(RngStream& rng, double lo, double hi) {
  return lo + (hi - lo) * rng.next_uniform();
}

struct BnCase {
  Tensor x;
  bn::BatchNormState state;
  Tensor r;  // upstream gradient, also defines the probe loss sum(r * y)
};

BnCase random_bn_case(RngStream& rng, bn::Variant variant, bool allow_4d) {
  const std::size_t m = 2 + rng.next_below(15);   // batch in [2,16]
  const std::size_t c = 1 + rng.next_below(8);    // channels in [1,8]
  const bool spatial = allow_4d && rng.next_uniform() < 0.5;

  BnCase bc;
  bc.state = bn::make_batchnorm(c, 1.0, variant);
  for (std::size_t i = 0; i < c; ++i) {
    bc.state.gamma[i] = uniform_in(rng, 0.1, 1.2);
    bc.state.beta[i] = uniform_in(rng, -0.5, 0.5);
    if (variant == bn::Variant::kA2) {
      bc.state.gamma0[i] = uniform_in(rng, 0.5, 1.5);
    }
    if (bn::variant_uses_wv(variant)) {
      bc.state.w_v[i] = uniform_in(rng, -0.5, 0.5);
    }
    if (bn::variant_uses_scale_s(variant)) {
      bc.state.w_b[i] = uniform_in(rng, -1.2, 1.2);
    }
  }
  const std::vector<std::size_t> shape =
      spatial ? std::vector<std::size_t>{m, c, 2, 2}
              : std::vector<std::size_t>{m, c};
  bc.x = randn(shape, 0.0, 1.5, rng);
  bc.r = randn(shape, 0.0, 1.0, rng);
  return bc;
}

// sum(r * y) through a fresh training forward; copies the state so running
// statistics never leak between evaluations.
double bn_probe_loss(const Tensor& x, const bn::BatchNormState& state,
                     const Tensor& r) {
  bn::BatchNormState local = state;
  const bn::BNResult res = bn::bn_forward_train(x, local);
  double s = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * res.y[i];
  return s;
}

void compare_value(double analytic, double numeric, double tolerance,
                   CheckStats& stats) {
  ++stats.checks;
  const double e = rel_err(analytic, numeric);
  stats.max_rel_err = std::max(stats.max_rel_err, e);
  if (!(e < tolerance)) ++stats.failures;
}

void fd_against_tensor(const std::function<double(const Tensor&)>& loss,
                       const Tensor& x, const Tensor& analytic,
                       double tolerance, CheckStats& stats) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    compare_value(analytic[i], central_difference(loss, x, i), tolerance,
                  stats);
  }
}

}  // namespace

double rel_err(double a, double b) {
  const double scale = std::max({std::fabs(a), std::fabs(b), 1.0});
  return std::fabs(a - b) / scale;
}

double central_difference(const std::function<double(const Tensor&)>& loss,
                          const Tensor& x, std::size_t i, double step) {
  Tensor xp = x;
  xp[i] += step;
  const double up = loss(xp);
  xp[i] = x[i] - step;
  const double down = loss(xp);
  return (up - down) / (2.0 * step);
}

void CheckStats::absorb(const CheckStats& other) {
  cases += other.cases;
  checks += other.checks;
  failures += other.failures;
  max_rel_err = std::max(max_rel_err, other.max_rel_err);
  max_abs_err = std::max(max_abs_err, other.max_abs_err);
  seconds += other.seconds;
}

CheckStats check_bn_standard(std::size_t cases, std::uint64_t seed,
                             double tolerance) {
  const auto t0 = Clock::now();
  RngStream rng = make_rng(seed);
  CheckStats stats;
  for (std::size_t k = 0; k < cases; ++k) {
    BnCase bc = random_bn_case(rng, bn::Variant::kStandard, true);
    ++stats.cases;

    bn::BatchNormState fwd_state = bc.state;
    const bn::BNResult res = bn::bn_forward_train(bc.x, fwd_state);
    const bn::BNGrads grads = bn::bn_backward(res.cache, bc.state, bc.r);

    fd_against_tensor(
        [&](const Tensor& xp) { return bn_probe_loss(xp, bc.state, bc.r); },
        bc.x, grads.dx, tolerance, stats);
    fd_against_tensor(
        [&](const Tensor& gp) {
          bn::BatchNormState s = bc.state;
          s.gamma = gp;
          return bn_probe_loss(bc.x, s, bc.r);
        },
        bc.state.gamma, grads.dgamma, tolerance, stats);
    fd_against_tensor(
        [&](const Tensor& bp) {
          bn::BatchNormState s = bc.state;
          s.beta = bp;
          return bn_probe_loss(bc.x, s, bc.r);
        },
        bc.state.beta, grads.dbeta, tolerance, stats);
  }
  stats.seconds = seconds_since(t0);
  return stats;
}

CheckStats check_bn_reduction_equivalence(std::size_t cases,
                                          std::uint64_t seed,
                                          double tolerance) {
  const auto t0 = Clock::now();
  RngStream rng = make_rng(seed);
  CheckStats stats;
  for (std::size_t k = 0; k < cases; ++k) {
    BnCase bc = random_bn_case(rng, bn::Variant::kStandard, true);
    ++stats.cases;
    bn::BatchNormState fwd_state = bc.state;
    const bn::BNResult res = bn::bn_forward_train(bc.x, fwd_state);
    const bn::BNGrads reduced = bn::bn_backward(res.cache, bc.state, bc.r);
    const Tensor composite =
        bn::bn_backward_reference(res.cache, bc.state, bc.r);
    for (std::size_t i = 0; i < composite.size(); ++i) {
      ++stats.checks;
      const double d = std::fabs(reduced.dx[i] - composite[i]);
      stats.max_abs_err = std::max(stats.max_abs_err, d);
      if (!(d < tolerance)) ++stats.failures;
    }
  }
  stats.seconds = seconds_since(t0);
  return stats;
}

CheckStats check_bn_variant(bn::Variant variant, std::size_t cases,
                            std::uint64_t seed, double tolerance) {
  const auto t0 = Clock::now();
  RngStream rng = make_rng(seed);
  CheckStats stats;
  for (std::size_t k = 0; k < cases; ++k) {
    BnCase bc = random_bn_case(rng, variant, true);
    ++stats.cases;
    bn::BatchNormState fwd_state = bc.state;
    const bn::BNResult res = bn::bn_forward_train(bc.x, fwd_state);
    const bn::BNGrads grads =
        bn::bn_backward_variant(res.cache, bc.state, bc.r);

    fd_against_tensor(
        [&](const Tensor& xp) { return bn_probe_loss(xp, bc.state, bc.r); },
        bc.x, grads.dx, tolerance, stats);
    fd_against_tensor(
        [&](const Tensor& gp) {
          bn::BatchNormState s = bc.state;
          s.gamma = gp;
          return bn_probe_loss(bc.x, s, bc.r);
        },
        bc.state.gamma, grads.dgamma, tolerance, stats);
    fd_against_tensor(
        [&](const Tensor& bp) {
          bn::BatchNormState s = bc.state;
          s.beta = bp;
          return bn_probe_loss(bc.x, s, bc.r);
        },
        bc.state.beta, grads.dbeta, tolerance, stats);
    if (variant == bn::Variant::kA2) {
      fd_against_tensor(
          [&](const Tensor& gp) {
            bn::BatchNormState s = bc.state;
            s.gamma0 = gp;
            return bn_probe_loss(bc.x, s, bc.r);
          },
          bc.state.gamma0, grads.dgamma0, tolerance, stats);
    }
    if (bn::variant_uses_wv(variant)) {
      fd_against_tensor(
          [&](const Tensor& wp) {
            bn::BatchNormState s = bc.state;
            s.w_v = wp;
            return bn_probe_loss(bc.x, s, bc.r);
          },
          bc.state.w_v, grads.dwv, tolerance, stats);
    }
    if (bn::variant_uses_scale_s(variant)) {
      fd_against_tensor(
          [&](const Tensor& wp) {
            bn::BatchNormState s = bc.state;
            s.w_b = wp;
            return bn_probe_loss(bc.x, s, bc.r);
          },
          bc.state.w_b, grads.dwb, tolerance, stats);
    }
  }
  stats.seconds = seconds_since(t0);
  return stats;
}

CheckStats check_layers(std::uint64_t seed, double tolerance) {
  const auto t0 = Clock::now();
  RngStream rng = make_rng(seed);
  CheckStats stats;

  {  // linear
    ++stats.cases;
    const Tensor x = randn({4, 5}, 0.0, 1.0, rng);
    const Tensor w = randn({3, 5}, 0.0, 0.5, rng);
    const Tensor b = randn({3}, 0.0, 0.5, rng);
    const Tensor r = randn({4, 3}, 0.0, 1.0, rng);
    auto loss = [&](const Tensor& xp, const Tensor& wp, const Tensor& bp) {
      const Tensor y = nn::linear_forward(xp, wp, bp);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
      return s;
    };
    nn::LinearCache cache;
    nn::linear_forward(x, w, b, &cache);
    const nn::LinearGrads g = nn::linear_backward(cache, w, r);
    const double tol = tolerance / 10.0;  // exact op, tighter bound holds
    fd_against_tensor([&](const Tensor& t) { return loss(t, w, b); }, x,
                      g.dx, tol, stats);
    fd_against_tensor([&](const Tensor& t) { return loss(x, t, b); }, w,
                      g.dw, tol, stats);
    fd_against_tensor([&](const Tensor& t) { return loss(x, w, t); }, b,
                      g.db, tol, stats);
  }

  {  // conv2d
    ++stats.cases;
    const Tensor x = randn({2, 3, 5, 5}, 0.0, 1.0, rng);
    const Tensor w = randn({4, 3, 3, 3}, 0.0, 0.3, rng);
    const Tensor b = randn({4}, 0.0, 0.3, rng);
    const std::size_t stride = 2, padding = 1;
    nn::Conv2dCache cache;
    const Tensor y0 = nn::conv2d_forward(x, w, b, stride, padding, &cache);
    const Tensor r = randn(y0.shape(), 0.0, 1.0, rng);
    auto loss = [&](const Tensor& xp, const Tensor& wp, const Tensor& bp) {
      const Tensor y = nn::conv2d_forward(xp, wp, bp, stride, padding);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
      return s;
    };
    const nn::Conv2dGrads g = nn::conv2d_backward(cache, w, r);
    fd_against_tensor([&](const Tensor& t) { return loss(t, w, b); }, x,
                      g.dx, tolerance, stats);
    fd_against_tensor([&](const Tensor& t) { return loss(x, t, b); }, w,
                      g.dw, tolerance, stats);
    fd_against_tensor([&](const Tensor& t) { return loss(x, w, t); }, b,
                      g.db, tolerance, stats);
  }

  {  // relu, away from the kink
    ++stats.cases;
    Tensor x = randn({40}, 0.0, 1.0, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::fabs(x[i]) < 1e-3) x[i] = 0.1;
    }
    const Tensor r = randn({40}, 0.0, 1.0, rng);
    nn::ReluCache cache;
    nn::relu_forward(x, &cache);
    const Tensor dx = nn::relu_backward(cache, r);
    auto loss = [&](const Tensor& xp) {
      const Tensor y = nn::relu_forward(xp);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
      return s;
    };
    fd_against_tensor(loss, x, dx, 1e-8, stats);
  }

  {  // gap
    ++stats.cases;
    const Tensor x = randn({2, 3, 2, 2}, 0.0, 1.0, rng);
    const Tensor r = randn({2, 3}, 0.0, 1.0, rng);
    nn::GapCache cache;
    nn::gap_forward(x, &cache);
    const Tensor dx = nn::gap_backward(cache, r);
    auto loss = [&](const Tensor& xp) {
      const Tensor y = nn::gap_forward(xp);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
      return s;
    };
    fd_against_tensor(loss, x, dx, tolerance, stats);
  }

  stats.seconds = seconds_since(t0);
  return stats;
}

CheckStats check_end_to_end(std::uint64_t seed, double tolerance) {
  const auto t0 = Clock::now();
  RngStream rng = make_rng(seed);
  CheckStats stats;
  ++stats.cases;

  const std::vector<nn::LayerSpec> specs{
      nn::LayerSpec::conv2d(3, 4, 3, 1, 1), nn::LayerSpec::batchnorm(4),
      nn::LayerSpec::relu(),                nn::LayerSpec::gap(),
      nn::LayerSpec::linear(4, 3),
  };
  nn::Network net = nn::build_network(specs, {3, 4, 4}, 0.5,
                                      /*input_norm_bn=*/true,
                                      bn::Variant::kStandard, rng);
  const Tensor x = randn({5, 3, 4, 4}, 0.0, 1.0, rng);
  const std::vector<int> labels{0, 2, 1, 0, 2};

  auto loss_now = [&](const Tensor& input) {
    const Tensor logits = net.forward(input, nn::Mode::kTrain);
    return harness::softmax_cross_entropy(logits, labels).first;
  };

  const Tensor logits = net.forward(x, nn::Mode::kTrain);
  auto [loss0, dlogits] = harness::softmax_cross_entropy(logits, labels);
  (void)loss0;
  const Tensor dx = net.backward(dlogits);

  fd_against_tensor(loss_now, x, dx, tolerance, stats);

  for (nn::ParamRef p : net.params()) {
    Tensor& value = *p.value;
    const Tensor& grad = *p.grad;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double keep = value[i];
      value[i] = keep + kFdStep;
      const double up = loss_now(x);
      value[i] = keep - kFdStep;
      const double down = loss_now(x);
      value[i] = keep;
      compare_value(grad[i], (up - down) / (2.0 * kFdStep), tolerance, stats);
    }
  }

  stats.seconds = seconds_since(t0);
  return stats;
}

}  // namespace bnkit::gradcheck
