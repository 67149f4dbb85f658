#include <doctest.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "bnkit/batchnorm.hpp"
#include "bnkit/gradcheck.hpp"
#include "bnkit/nn.hpp"
#include "bnkit/tensor.hpp"

using namespace bnkit;
using bn::Variant;

namespace {

// One channel, batch of 3: the (3,1) view of a per-channel example.
Tensor column(std::initializer_list<double> values) {
  std::vector<double> v(values);
  const std::size_t n = v.size();
  return Tensor::from({n, 1}, std::move(v));
}

}  // namespace

TEST_CASE("training forward normalizes with batch statistics") {
  bn::BatchNormState s = bn::make_batchnorm(1, 1.0);
  s.eps = 0.0;  // hand-evaluated examples use an exact variance
  const bn::BNResult r = bn::bn_forward_train(column({1, 2, 3}), s);
  CHECK(r.y[0] == doctest::Approx(-1.224745).epsilon(1e-6));
  CHECK(r.y[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
  CHECK(r.y[2] == doctest::Approx(1.224745).epsilon(1e-6));
  CHECK(r.cache.batch_mean[0] == doctest::Approx(2.0));
  CHECK(r.cache.batch_var[0] == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("zero-variance input normalizes to zero and keeps the shift") {
  bn::BatchNormState s = bn::make_batchnorm(1, 1.0);
  s.beta.fill(0.3);
  const bn::BNResult r = bn::bn_forward_train(column({5, 5, 5}), s);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.cache.x_hat[i] == 0.0);
    CHECK(r.y[i] == doctest::Approx(0.3).epsilon(1e-15));
  }
}

TEST_CASE("affine tail applies gamma and beta") {
  bn::BatchNormState s = bn::make_batchnorm(1, 0.1);
  s.eps = 0.0;
  s.beta.fill(0.5);
  const bn::BNResult r = bn::bn_forward_train(column({1, 2, 3}), s);
  CHECK(r.y[0] == doctest::Approx(0.377525).epsilon(1e-6));
  CHECK(r.y[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.y[2] == doctest::Approx(0.622475).epsilon(1e-6));
}

TEST_CASE("training forward needs at least two elements per channel") {
  bn::BatchNormState s = bn::make_batchnorm(2, 1.0);
  CHECK_THROWS_AS(bn::bn_forward_train(Tensor({1, 2}), s),
                  std::invalid_argument);
}

TEST_CASE("running statistics update with the configured momentum") {
  bn::BatchNormState s = bn::make_batchnorm(1, 1.0);
  const bn::BNResult r = bn::bn_forward_train(column({1, 2, 3}), s);
  (void)r;
  CHECK(s.stats_initialized);
  // running <- 0.9 * initial + 0.1 * batch
  CHECK(s.running_mean[0] == doctest::Approx(0.1 * 2.0).epsilon(1e-15));
  CHECK(s.running_var[0] ==
        doctest::Approx(0.9 * 1.0 + 0.1 * (2.0 / 3.0)).epsilon(1e-15));
}

TEST_CASE("eval forward with identity statistics is the identity") {
  bn::BatchNormState s = bn::make_batchnorm(2, 1.0);
  s.eps = 0.0;
  s.stats_initialized = true;  // explicitly set running stats
  RngStream rng = make_rng(3);
  const Tensor x = randn({5, 2}, 0.0, 1.0, rng);
  const Tensor y = bn::bn_forward_eval(x, s);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(std::fabs(y[i] - x[i]) < 1e-12);
  }
}

TEST_CASE("eval forward uses running statistics") {
  bn::BatchNormState s = bn::make_batchnorm(1, 1.0);
  s.eps = 0.0;
  s.running_mean[0] = 2.0;
  s.running_var[0] = 4.0;
  s.stats_initialized = true;
  const Tensor y = bn::bn_forward_eval(Tensor::from({1, 1}, {4.0}), s);
  CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("eval forward is pure") {
  bn::BatchNormState s = bn::make_batchnorm(3, 0.5);
  RngStream rng = make_rng(4);
  bn::bn_forward_train(randn({8, 3}, 1.0, 2.0, rng), s);
  const bn::BatchNormState before = s;
  const Tensor x = randn({6, 3}, 0.0, 1.0, rng);
  const Tensor y1 = bn::bn_forward_eval(x, s);
  const Tensor y2 = bn::bn_forward_eval(x, s);
  CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(s.running_mean.data(), before.running_mean.data(),
                    3 * sizeof(double)) == 0);
  CHECK(std::memcmp(s.running_var.data(), before.running_var.data(),
                    3 * sizeof(double)) == 0);
}

TEST_CASE("eval forward without populated statistics is an error") {
  bn::BatchNormState s = bn::make_batchnorm(1, 1.0);
  CHECK_THROWS_AS(bn::bn_forward_eval(Tensor({2, 1}), s), std::runtime_error);
}

TEST_CASE("backward: zero upstream gradient gives zero everywhere") {
  bn::BatchNormState s = bn::make_batchnorm(1, 1.0);
  const bn::BNResult r = bn::bn_forward_train(column({1, 2, 3}), s);
  const Tensor dy({3, 1});
  const bn::BNGrads g = bn::bn_backward(r.cache, s, dy);
  for (std::size_t i = 0; i < 3; ++i) CHECK(g.dx[i] == 0.0);
  CHECK(g.dgamma[0] == 0.0);
  CHECK(g.dbeta[0] == 0.0);
  const Tensor ref = bn::bn_backward_reference(r.cache, s, dy);
  for (std::size_t i = 0; i < 3; ++i) CHECK(ref[i] == 0.0);
}

TEST_CASE("backward: constant upstream gradient annihilates through dx") {
  bn::BatchNormState s = bn::make_batchnorm(1, 1.0);
  const bn::BNResult r = bn::bn_forward_train(column({1, 2, 3}), s);
  const Tensor dy = column({1, 1, 1});
  const bn::BNGrads g = bn::bn_backward(r.cache, s, dy);
  CHECK(g.dbeta[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(std::fabs(g.dgamma[0]) < 1e-12);  // sum of x_hat is 0
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::fabs(g.dx[i]) < 1e-12);
}

TEST_CASE("backward rejects shape mismatches and non-standard variants") {
  bn::BatchNormState s = bn::make_batchnorm(1, 1.0);
  const bn::BNResult r = bn::bn_forward_train(column({1, 2, 3}), s);
  CHECK_THROWS_AS(bn::bn_backward(r.cache, s, Tensor({4, 1})),
                  std::invalid_argument);
  bn::BatchNormState a1 = bn::make_batchnorm(1, 1.0, Variant::kA1);
  CHECK_THROWS_AS(bn::bn_backward(r.cache, a1, Tensor({3, 1})),
                  std::invalid_argument);
}

TEST_CASE("backward gradients match central finite differences") {
  const gradcheck::CheckStats st = gradcheck::check_bn_standard(40, 777);
  CHECK(st.failures == 0);
  CHECK(st.max_rel_err < 1e-5);
}

TEST_CASE("reduced backward equals the composite chain-rule path") {
  const gradcheck::CheckStats st =
      gradcheck::check_bn_reduction_equivalence(100, 778);
  CHECK(st.failures == 0);
  CHECK(st.max_abs_err < 1e-10);
}

TEST_CASE("per-channel dx sums to zero for the standard variant") {
  RngStream rng = make_rng(779);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t m = 2 + rng.next_below(12);
    const std::size_t c = 1 + rng.next_below(6);
    bn::BatchNormState s = bn::make_batchnorm(c, 0.1 + rng.next_uniform());
    const Tensor x = randn({m, c}, 0.0, 2.0, rng);
    const Tensor dy = randn({m, c}, 0.0, 1.0, rng);
    bn::BatchNormState fs = s;
    const bn::BNResult r = bn::bn_forward_train(x, fs);
    const bn::BNGrads g = bn::bn_backward(r.cache, s, dy);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (std::size_t i = 0; i < m; ++i) sum += g.dx.at(i, ch);
      CHECK(std::fabs(sum) < 1e-9);
    }
  }
}

TEST_CASE("normalized batch has zero mean and unit biased variance") {
  RngStream rng = make_rng(780);
  bn::BatchNormState s = bn::make_batchnorm(3, 1.0);
  // The 1e-6 variance tolerance needs batch_var >> eps: the deviation is
  // eps/(var+eps), so var ~ 1e3 against the default eps = 1e-5.
  const Tensor x = randn({16, 3, 4, 4}, 5.0, 32.0, rng);
  bn::BNResult r = bn::bn_forward_train(x, s);
  const Moments m = reduce_stats(r.cache.x_hat, {0, 2, 3});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::fabs(m.mean[c]) < 1e-9);
    CHECK(std::fabs(m.variance[c] - 1.0) < 1e-6);
  }
}

TEST_CASE("standard affine with identity parameters returns x_hat") {
  RngStream rng = make_rng(781);
  bn::BatchNormState s = bn::make_batchnorm(2, 1.0);
  const Tensor x_hat = randn({4, 2}, 0.0, 1.0, rng);
  const auto [y, scale] = bn::affine_apply_variant(x_hat, nullptr, s);
  CHECK(scale.empty());
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == x_hat[i]);
}

TEST_CASE("a1 collapses to the standard form when beta is zero") {
  RngStream rng = make_rng(782);
  const Tensor x_hat = randn({5, 3}, 0.0, 1.0, rng);
  bn::BatchNormState std_state = bn::make_batchnorm(3, 0.37);
  bn::BatchNormState a1_state = bn::make_batchnorm(3, 0.37, Variant::kA1);
  const auto [y_std, s1] = bn::affine_apply_variant(x_hat, nullptr, std_state);
  const auto [y_a1, s2] = bn::affine_apply_variant(x_hat, nullptr, a1_state);
  for (std::size_t i = 0; i < y_std.size(); ++i) CHECK(y_std[i] == y_a1[i]);
}

TEST_CASE("sigmoid scale at initialization reproduces the known constants") {
  RngStream rng = make_rng(783);
  const Tensor x_hat = randn({6, 2}, 0.0, 1.0, rng);

  bn::BatchNormState rbn = bn::make_batchnorm(2, 1.0, Variant::kRbnMinus);
  auto [y_r, s_r] = bn::affine_apply_variant(x_hat, nullptr, rbn);
  bn::BatchNormState iebn = bn::make_batchnorm(2, 1.0, Variant::kIebnMinus);
  auto [y_i, s_i] = bn::affine_apply_variant(x_hat, nullptr, iebn);
  for (std::size_t i = 0; i < s_r.size(); ++i) {
    CHECK(s_r[i] == doctest::Approx(0.7310585786).epsilon(1e-9));
    CHECK(std::fabs(s_r[i] - 0.731) < 5e-4);
    CHECK(s_i[i] == doctest::Approx(0.2689414214).epsilon(1e-9));
    CHECK(std::fabs(s_i[i] - 0.269) < 5e-4);
  }

  // The full variants start with w_v = 0, so the initial scale matches.
  bn::BatchNormState rbn_full = bn::make_batchnorm(2, 1.0, Variant::kRbn);
  auto [y_rf, s_rf] = bn::affine_apply_variant(x_hat, nullptr, rbn_full);
  for (std::size_t i = 0; i < s_rf.size(); ++i) {
    CHECK(s_rf[i] == doctest::Approx(0.7310585786).epsilon(1e-9));
  }
}

TEST_CASE("minus variants equal the standard form scaled by sigmoid(w_b)") {
  RngStream rng = make_rng(784);
  const Tensor x_hat = randn({7, 3}, 0.0, 1.0, rng);
  bn::BatchNormState s = bn::make_batchnorm(3, 0.8, Variant::kRbnMinus);
  s.beta.fill(0.2);
  const auto [y, scale] = bn::affine_apply_variant(x_hat, nullptr, s);
  const double sig = 1.0 / (1.0 + std::exp(-1.0));
  for (std::size_t i = 0; i < y.size(); ++i) {
    CHECK(std::fabs(y[i] - (0.8 * sig * x_hat[i] + 0.2)) < 1e-12);
  }
}

TEST_CASE("iebn requires the raw input batch") {
  bn::BatchNormState s = bn::make_batchnorm(2, 1.0, Variant::kIebn);
  CHECK_THROWS_AS(bn::affine_apply_variant(Tensor({3, 2}), nullptr, s),
                  std::invalid_argument);
}

TEST_CASE("variant backward passes match finite differences") {
  for (Variant v : {Variant::kA1, Variant::kA2, Variant::kRbn, Variant::kIebn,
                    Variant::kRbnMinus, Variant::kIebnMinus}) {
    const gradcheck::CheckStats st = gradcheck::check_bn_variant(v, 8, 790);
    INFO("variant ", bn::variant_name(v));
    CHECK(st.failures == 0);
    CHECK(st.max_rel_err < 1e-5);
  }
}

TEST_CASE("input-normalization BN construction") {
  const bn::BatchNormState s = bn::make_input_norm_bn(3, 1.0, 0.58);
  CHECK(s.beta_frozen);
  CHECK(s.variant == Variant::kStandard);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(s.gamma[c] == doctest::Approx(0.58).epsilon(1e-15));
    CHECK(s.beta[c] == 0.0);
  }
  const bn::BatchNormState small = bn::make_input_norm_bn(4, 0.1, 0.58);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(small.gamma[c] == doctest::Approx(0.058).epsilon(1e-15));
  }
  CHECK_THROWS_AS(bn::make_input_norm_bn(3, 0.0, 0.58), std::invalid_argument);
  CHECK_THROWS_AS(bn::make_input_norm_bn(3, 1.5, 0.58), std::invalid_argument);
}

TEST_CASE("rectified unit Gaussian standard deviation") {
  RngStream rng = make_rng(785);
  const double s = bn::rectified_gaussian_std(1000000, rng);
  CHECK(s >= 0.578);
  CHECK(s <= 0.590);
  const double analytic = std::sqrt(0.5 - 1.0 / (2.0 * 3.14159265358979));
  CHECK(std::fabs(s - analytic) < 0.005);

  RngStream r1 = make_rng(1), r2 = make_rng(999);
  const double a = bn::rectified_gaussian_std(100000, r1);
  const double b = bn::rectified_gaussian_std(100000, r2);
  CHECK(std::fabs(a - b) < 0.01);
}

TEST_CASE("gradient factor is gamma over the root of var plus eps") {
  bn::BatchNormState s = bn::make_batchnorm(3, 1.0);
  s.eps = 0.0;
  s.gamma[0] = 1.0;
  s.gamma[1] = 0.1;
  s.gamma[2] = 0.5;
  const Tensor var = Tensor::from({3}, {1.0, 0.01, 4.0});
  const Tensor f = bn::gradient_factor(s, var);
  CHECK(f[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(f[1] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(f[2] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("gradient factor at init is invariant to the global gamma") {
  // BN(gamma=g) -> relu -> linear(Kaiming fan-in, width 256) -> BN chain on
  // unit-Gaussian input: the second BN's gradient factor must agree within
  // +-5% across g, because the incoming variance carries gamma_prev^2.
  const std::size_t width = 256, in_ch = 64, batch = 2048;
  RngStream wrng = make_rng(100);
  const Tensor w =
      nn::kaiming_fanin_init({width, in_ch}, std::sqrt(2.0), wrng);
  const Tensor b({width});
  RngStream xrng = make_rng(200);
  const Tensor x = randn({batch, in_ch}, 0.0, 1.0, xrng);

  std::vector<Tensor> factors;
  for (double g : {0.05, 0.1, 0.5, 1.0}) {
    bn::BatchNormState bn1 = bn::make_batchnorm(in_ch, g);
    const bn::BNResult r1 = bn::bn_forward_train(x, bn1);
    const Tensor z = nn::relu_forward(r1.y);
    const Tensor a = nn::linear_forward(z, w, b);
    bn::BatchNormState bn2 = bn::make_batchnorm(width, g);
    const bn::BNResult r2 = bn::bn_forward_train(a, bn2);
    factors.push_back(bn::gradient_factor(bn2, r2.cache.batch_var));
  }
  const Tensor& ref = factors.back();  // g = 1.0
  for (const Tensor& f : factors) {
    for (std::size_t c = 0; c < width; ++c) {
      CHECK(std::fabs(f[c] / ref[c] - 1.0) < 0.05);
    }
  }
}
