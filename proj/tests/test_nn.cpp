#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "bnkit/gradcheck.hpp"
#include "bnkit/harness.hpp"
#include "bnkit/nn.hpp"
#include "bnkit/tensor.hpp"

using namespace bnkit;
using nn::LayerKind;
using nn::LayerSpec;

TEST_CASE("kaiming fan-in init hits the target sigma") {
  RngStream rng = make_rng(21);
  const Tensor w = nn::kaiming_fanin_init({50, 100}, std::sqrt(2.0), rng);
  const double target = std::sqrt(2.0) / std::sqrt(100.0);
  CHECK(target == doctest::Approx(0.141421).epsilon(1e-6));
  double mean = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) mean += w[i];
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) var += (w[i] - mean) * (w[i] - mean);
  var /= static_cast<double>(w.size());
  CHECK(std::fabs(std::sqrt(var) - target) < 0.01);

  // conv fan-in is in*kh*kw
  const Tensor cw = nn::kaiming_fanin_init({64, 3, 3, 3}, std::sqrt(2.0), rng);
  (void)cw;
  CHECK(std::sqrt(2.0) / std::sqrt(27.0) == doctest::Approx(0.272166).epsilon(1e-6));

  CHECK_THROWS_AS(nn::kaiming_fanin_init({4, 4}, 0.0, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(nn::kaiming_fanin_init({4, 4, 4}, 1.0, rng),
                  std::invalid_argument);
}

TEST_CASE("uniform fan-in init stays inside its bounds") {
  RngStream rng = make_rng(22);
  const Tensor w = nn::uniform_fanin_init({30, 64}, rng);
  const double bound = 1.0 / 8.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(w[i] >= -bound);
    CHECK(w[i] < bound);
  }
}

TEST_CASE("linear forward hand cases") {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor zero_b({2});
  const Tensor x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor y = nn::linear_forward(x, eye, zero_b);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);

  const Tensor w = Tensor::from({1, 2}, {1, 1});
  const Tensor b = Tensor::from({1}, {0.5});
  const Tensor y2 = nn::linear_forward(Tensor::from({1, 2}, {1, 2}), w, b);
  CHECK(y2[0] == doctest::Approx(3.5).epsilon(1e-15));

  CHECK_THROWS_AS(
      nn::linear_forward(Tensor({2, 3}), Tensor({4, 2}), Tensor({4})),
      std::invalid_argument);
}

TEST_CASE("conv2d forward hand cases") {
  {  // 1x1 identity kernel
    RngStream rng = make_rng(23);
    const Tensor x = randn({2, 1, 3, 3}, 0.0, 1.0, rng);
    const Tensor w = Tensor::from({1, 1, 1, 1}, {1.0});
    const Tensor b({1});
    const Tensor y = nn::conv2d_forward(x, w, b, 1, 0);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
  }
  {  // all-ones 2x2 kernel over all-ones 3x3 image
    const Tensor x({1, 1, 3, 3}, 1.0);
    const Tensor w({1, 1, 2, 2}, 1.0);
    const Tensor b({1});
    const Tensor y = nn::conv2d_forward(x, w, b, 1, 0);
    REQUIRE(y.shape() == std::vector<std::size_t>{1, 1, 2, 2});
    for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == 4.0);
  }
  CHECK_THROWS_AS(nn::conv2d_forward(Tensor({1, 2, 3, 3}), Tensor({1, 3, 2, 2}),
                                     Tensor({1}), 1, 0),
                  std::invalid_argument);
}

TEST_CASE("relu forward/backward hand cases") {
  const Tensor x = Tensor::from({3}, {-1, 0, 2});
  nn::ReluCache cache;
  const Tensor y = nn::relu_forward(x, &cache);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);
  const Tensor dx = nn::relu_backward(cache, Tensor::from({3}, {1, 1, 1}));
  CHECK(dx[0] == 0.0);
  CHECK(dx[1] == 0.0);  // subgradient at exactly 0 is 0
  CHECK(dx[2] == 1.0);
}

TEST_CASE("gap forward/backward hand cases") {
  const Tensor threes({2, 3, 2, 2}, 3.0);
  const Tensor y = nn::gap_forward(threes);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 3.0);

  const Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  nn::GapCache cache;
  const Tensor m = nn::gap_forward(x, &cache);
  CHECK(m[0] == doctest::Approx(2.5).epsilon(1e-15));
  const Tensor dx = nn::gap_backward(cache, Tensor::from({1, 1}, {1.0}));
  for (std::size_t i = 0; i < 4; ++i) CHECK(dx[i] == 0.25);
}

TEST_CASE("layer backward passes match finite differences") {
  const gradcheck::CheckStats st = gradcheck::check_layers(24);
  CHECK(st.failures == 0);
}

TEST_CASE("chain validation accepts well-formed specs and rejects breaks") {
  const std::vector<LayerSpec> good{
      LayerSpec::conv2d(3, 8, 3, 1, 1), LayerSpec::batchnorm(8),
      LayerSpec::relu(),                LayerSpec::gap(),
      LayerSpec::linear(8, 5),
  };
  const auto shapes = nn::validate_chain(good, {3, 8, 8});
  CHECK(shapes.back() == std::vector<std::size_t>{5});

  SUBCASE("wrong conv channels") {
    auto bad = good;
    bad[0].in_ch = 4;
    CHECK_THROWS_AS(nn::validate_chain(bad, {3, 8, 8}),
                    std::invalid_argument);
  }
  SUBCASE("wrong bn width") {
    auto bad = good;
    bad[1].channels = 9;
    CHECK_THROWS_AS(nn::validate_chain(bad, {3, 8, 8}),
                    std::invalid_argument);
  }
  SUBCASE("linear on spatial input") {
    CHECK_THROWS_AS(
        nn::validate_chain({LayerSpec::linear(10, 2)}, {3, 8, 8}),
        std::invalid_argument);
  }
  SUBCASE("gap on flat input") {
    CHECK_THROWS_AS(nn::validate_chain({LayerSpec::gap()}, {16}),
                    std::invalid_argument);
  }
  SUBCASE("kernel larger than padded input") {
    CHECK_THROWS_AS(
        nn::validate_chain({LayerSpec::conv2d(3, 4, 9, 1, 0)}, {3, 8, 8}),
        std::invalid_argument);
  }
}

TEST_CASE("random well-chained specs validate; random corruption fails") {
  RngStream rng = make_rng(25);
  for (int rep = 0; rep < 40; ++rep) {
    std::vector<LayerSpec> specs;
    std::vector<std::size_t> cur{1 + rng.next_below(4), 8, 8};
    const std::vector<std::size_t> input = cur;
    const std::size_t blocks = 1 + rng.next_below(3);
    for (std::size_t i = 0; i < blocks; ++i) {
      const std::size_t out = 1 + rng.next_below(6);
      specs.push_back(LayerSpec::conv2d(cur[0], out, 3, 1, 1));
      cur[0] = out;
      if (rng.next_uniform() < 0.7) specs.push_back(LayerSpec::batchnorm(out));
      if (rng.next_uniform() < 0.7) specs.push_back(LayerSpec::relu());
    }
    if (rng.next_uniform() < 0.5) {
      specs.push_back(LayerSpec::gap());
      specs.push_back(LayerSpec::linear(cur[0], 3));
    } else {
      specs.push_back(LayerSpec::flatten());
      specs.push_back(LayerSpec::linear(cur[0] * 64, 3));
    }
    CHECK_NOTHROW(nn::validate_chain(specs, input));

    // Corrupt one dimensioned layer.
    auto bad = specs;
    for (std::size_t i = 0; i < bad.size(); ++i) {
      if (bad[i].kind == LayerKind::kConv2d) {
        bad[i].in_ch += 1;
        break;
      }
      if (bad[i].kind == LayerKind::kBatchNorm) {
        bad[i].channels += 1;
        break;
      }
    }
    CHECK_THROWS_AS(nn::validate_chain(bad, input), std::invalid_argument);
  }
}

TEST_CASE("build_network applies the initialization contract") {
  RngStream rng = make_rng(26);
  nn::Network net =
      nn::build_network(nn::tiny_bn_net(3, 10), {3, 8, 8}, 0.1,
                        /*input_norm_bn=*/true, bn::Variant::kStandard, rng);
  bool saw_input_bn = false;
  std::size_t interior_bns = 0;
  for (nn::ParamRef p : net.params()) {
    if (p.role == nn::ParamRole::kBnGamma) {
      if (p.name == "layers.0.gamma") {
        saw_input_bn = true;
        for (std::size_t i = 0; i < p.value->size(); ++i) {
          CHECK((*p.value)[i] == doctest::Approx(0.58 * 0.1).epsilon(1e-15));
        }
      } else {
        ++interior_bns;
        for (std::size_t i = 0; i < p.value->size(); ++i) {
          CHECK((*p.value)[i] == 0.1);
        }
      }
    }
    if (p.role == nn::ParamRole::kBias || p.role == nn::ParamRole::kBnBeta) {
      for (std::size_t i = 0; i < p.value->size(); ++i) {
        CHECK((*p.value)[i] == 0.0);
      }
    }
  }
  CHECK(saw_input_bn);
  CHECK(interior_bns == 3);

  CHECK_THROWS_AS(
      nn::build_network(nn::tiny_bn_net(3, 10), {3, 8, 8}, 0.0, true,
                        bn::Variant::kStandard, rng),
      std::invalid_argument);
}

TEST_CASE("same seed builds bit-identical networks") {
  RngStream a = make_rng(27), b = make_rng(27);
  nn::Network na = nn::build_network(nn::tiny_bn_net(3, 10), {3, 8, 8}, 0.5,
                                     true, bn::Variant::kStandard, a);
  nn::Network nb = nn::build_network(nn::tiny_bn_net(3, 10), {3, 8, 8}, 0.5,
                                     true, bn::Variant::kStandard, b);
  const auto sa = na.state_vector();
  const auto sb = nb.state_vector();
  REQUIRE(sa.size() == sb.size());
  CHECK(std::memcmp(sa.data(), sb.data(), sa.size() * sizeof(double)) == 0);
}

TEST_CASE("zero-weight classifier yields the uniform cross-entropy") {
  RngStream rng = make_rng(28);
  nn::Network net =
      nn::build_network({LayerSpec::linear(8, 4)}, {8}, 1.0, false,
                        bn::Variant::kStandard, rng);
  for (nn::ParamRef p : net.params()) p.value->fill(0.0);
  const Tensor x = randn({6, 8}, 0.0, 1.0, rng);
  const Tensor logits = net.forward(x, nn::Mode::kTrain);
  const auto [loss, grad] =
      harness::softmax_cross_entropy(logits, {0, 1, 2, 3, 0, 1});
  (void)grad;
  CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("end-to-end gradients match finite differences") {
  const gradcheck::CheckStats st = gradcheck::check_end_to_end(29);
  CHECK(st.failures == 0);
  CHECK(st.max_rel_err < 1e-4);
}

TEST_CASE("train-mode forward twice: same outputs, running stats advance") {
  RngStream rng = make_rng(30);
  const Tensor x = randn({6, 3}, 1.0, 2.0, rng);

  RngStream r1 = make_rng(31);
  nn::Network once = nn::build_network({LayerSpec::batchnorm(3)}, {3}, 1.0,
                                       false, bn::Variant::kStandard, r1);
  RngStream r2 = make_rng(31);
  nn::Network twice = nn::build_network({LayerSpec::batchnorm(3)}, {3}, 1.0,
                                        false, bn::Variant::kStandard, r2);
  const Tensor y1 = once.forward(x, nn::Mode::kTrain);
  const Tensor y2a = twice.forward(x, nn::Mode::kTrain);
  const Tensor y2b = twice.forward(x, nn::Mode::kTrain);
  CHECK(std::memcmp(y2a.data(), y2b.data(), y2a.size() * sizeof(double)) == 0);
  // One more training pass moved the running statistics further.
  const auto s1 = once.state_vector();
  const auto s2 = twice.state_vector();
  CHECK(std::memcmp(s1.data(), s2.data(), s1.size() * sizeof(double)) != 0);
}

TEST_CASE("eval mode before any training step reports unpopulated stats") {
  RngStream rng = make_rng(32);
  nn::Network net = nn::build_network({LayerSpec::batchnorm(3)}, {3}, 1.0,
                                      false, bn::Variant::kStandard, rng);
  CHECK_THROWS_AS(net.forward(Tensor({4, 3}), nn::Mode::kEval),
                  std::runtime_error);
}

TEST_CASE("variance entering the BN after the input-norm BN follows "
          "sigma_act^2 * gamma^2 * omega") {
  const std::size_t in_ch = 64, width = 256, batch = 2048;
  for (double gamma : {1.0, 0.1}) {
    RngStream wrng = make_rng(33);
    const Tensor w =
        nn::kaiming_fanin_init({width, in_ch}, std::sqrt(2.0), wrng);
    const Tensor b({width});
    RngStream xrng = make_rng(34);
    const Tensor x = randn({batch, in_ch}, 0.0, 1.0, xrng);

    bn::BatchNormState input_bn = bn::make_input_norm_bn(in_ch, gamma, 0.58);
    const bn::BNResult r = bn::bn_forward_train(x, input_bn);
    const Tensor a = nn::linear_forward(r.y, w, b);
    const Moments m = reduce_stats(a, {0});

    double ratio_sum = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      double omega = 0.0;
      for (std::size_t k = 0; k < in_ch; ++k) omega += w.at(c, k) * w.at(c, k);
      const double predicted = 0.58 * 0.58 * gamma * gamma * omega;
      ratio_sum += m.variance[c] / predicted;
    }
    const double mean_ratio = ratio_sum / static_cast<double>(width);
    CHECK(mean_ratio > 0.9);
    CHECK(mean_ratio < 1.1);
  }
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  RngStream rng = make_rng(35);
  const std::vector<LayerSpec> specs{
      LayerSpec::conv2d(3, 4, 3, 1, 1), LayerSpec::batchnorm(4),
      LayerSpec::relu(),                LayerSpec::gap(),
      LayerSpec::linear(4, 3),
  };
  nn::Network net = nn::build_network(specs, {3, 4, 4}, 0.25, true,
                                      bn::Variant::kStandard, rng);
  // Push some training state into the running statistics.
  const Tensor x = randn({5, 3, 4, 4}, 0.0, 1.0, rng);
  net.forward(x, nn::Mode::kTrain);

  std::stringstream buf;
  net.save(buf);
  nn::Network loaded = nn::Network::load(buf);

  const auto s1 = net.state_vector();
  const auto s2 = loaded.state_vector();
  REQUIRE(s1.size() == s2.size());
  CHECK(std::memcmp(s1.data(), s2.data(), s1.size() * sizeof(double)) == 0);

  const Tensor y1 = net.forward(x, nn::Mode::kEval);
  const Tensor y2 = loaded.forward(x, nn::Mode::kEval);
  CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(double)) == 0);

  std::stringstream buf2;
  loaded.save(buf2);
  CHECK(buf.str() == buf2.str());
}
