#include <algorithm>
#include <cmath>
#include <random>

#include "cetal/enhancement.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cetal;
using cetal::testing::gradcheck;
using cetal::testing::randn;

namespace {

void zero_bottleneck(Tensor& w1, Tensor& b1, Tensor& w2, Tensor& b2) {
  std::fill(w1.data().begin(), w1.data().end(), 0.0);
  std::fill(b1.data().begin(), b1.data().end(), 0.0);
  std::fill(w2.data().begin(), w2.data().end(), 0.0);
  std::fill(b2.data().begin(), b2.data().end(), 0.0);
}

void identity_conv(Tensor& w, Tensor& b) {
  std::size_t c = w.dim(0);
  std::fill(w.data().begin(), w.data().end(), 0.0);
  for (std::size_t i = 0; i < c; ++i) w.data()[i * c + i] = 1.0;
  std::fill(b.data().begin(), b.data().end(), 0.0);
}

}  // namespace

TEST_CASE("ace zero-weight stub scales input by 0.5") {
  std::mt19937 rng(1);
  AceModule ace({.channels = 4, .reduction = 2}, rng);
  zero_bottleneck(ace.w1, ace.b1, ace.w2, ace.b2);
  identity_conv(ace.wf, ace.bf);
  Tensor x = randn({2, 4, 6}, rng, 1.0, false);
  Tensor y = ace.forward(x);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(0.5 * x.data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("ace channel weights stay strictly inside (0,1)") {
  std::mt19937 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    AceModule ace({.channels = 6, .reduction = 3}, rng);
    Tensor x = randn({1, 6, 5}, rng, 3.0, false);
    Tensor wc = ace.channel_weights(x);
    for (double v : wc.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("ace channel weights are invariant to time permutation") {
  std::mt19937 rng(3);
  AceModule ace({.channels = 3, .reduction = 2}, rng);
  Tensor x = randn({1, 3, 8}, rng, 1.0, false);
  std::vector<double> perm = x.data();
  std::vector<std::size_t> order(8);
  for (std::size_t i = 0; i < 8; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t t = 0; t < 8; ++t) perm[c * 8 + t] = x.data()[c * 8 + order[t]];
  }
  Tensor xp({1, 3, 8}, perm);
  Tensor a = ace.channel_weights(x);
  Tensor b = ace.channel_weights(xp);
  // the pool reduces in sorted order, so this holds bitwise
  CHECK(a.data() == b.data());
}

TEST_CASE("mce zero bottleneck gives 0.5x and preserves length") {
  std::mt19937 rng(4);
  for (std::size_t t : {4u, 7u, 16u, 33u}) {
    MceConfig cfg{.channels = 2, .reduction = 2};  // k=3, s=2 defaults
    CHECK(cfg.kernel == 3);
    CHECK(cfg.stride == 2);
    MceModule mce(cfg, rng);
    Tensor x = randn({1, 2, t}, rng, 1.0, false);
    Tensor y = mce.forward(x);
    REQUIRE(y.shape() == x.shape());

    zero_bottleneck(mce.w1, mce.b1, mce.w2, mce.b2);
    Tensor c = Tensor::full({1, 2, t}, 1.7);
    Tensor yc = mce.forward(c);
    for (double v : yc.data()) CHECK(v == doctest::Approx(0.5 * 1.7).epsilon(1e-14));
  }
}

TEST_CASE("mce output is not invariant to time permutation") {
  std::mt19937 rng(5);
  MceModule mce({.channels = 2, .reduction = 1}, rng);
  std::vector<double> vals(2 * 12);
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = double(i) * 0.37 - 3.0;
  Tensor x({1, 2, 12}, vals);
  std::vector<double> rev = vals;
  for (std::size_t c = 0; c < 2; ++c) {
    std::reverse(rev.begin() + c * 12, rev.begin() + (c + 1) * 12);
  }
  Tensor xr({1, 2, 12}, rev);
  Tensor a = mce.forward(x);
  Tensor b = mce.forward(xr);
  double diff = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t t = 0; t < 12; ++t) {
      // compare against the reversed output to isolate gating differences
      diff = std::max(diff, std::fabs(a.data()[c * 12 + t] - b.data()[c * 12 + (11 - t)]));
    }
  }
  CHECK(diff > 1e-6);
}

TEST_CASE("se zero weights gives 0.5x and weights in (0,1)") {
  std::mt19937 rng(6);
  SeModule se(4, 2, rng);
  Tensor x = randn({1, 4, 5}, rng, 1.0, false);
  Tensor wc = se.channel_weights(x);
  for (double v : wc.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  zero_bottleneck(se.w1, se.b1, se.w2, se.b2);
  Tensor y = se.forward(x);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(0.5 * x.data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("ace with large beta approximates se") {
  // swish(x, beta) -> relu(x) as beta grows; with shared weights and an
  // identity trailing conv the two modules should nearly coincide.
  std::mt19937 rng(7);
  SeModule se(2, 2, rng);
  AceModule ace({.channels = 2, .reduction = 2, .beta = {false, 50.0}}, rng);
  ace.w1 = se.w1;
  ace.b1 = se.b1;
  ace.w2 = se.w2;
  ace.b2 = se.b2;
  identity_conv(ace.wf, ace.bf);
  double worst = 0.0;
  for (double v = -3.0; v <= 3.0; v += 0.5) {
    Tensor x = Tensor::full({1, 2, 4}, v);
    Tensor a = ace.forward(x);
    Tensor s = se.forward(x);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      worst = std::max(worst, std::fabs(a.data()[i] - s.data()[i]));
    }
  }
  CHECK(worst < 0.05);
}

TEST_CASE("parameter counts") {
  CHECK(se_param_count(64, 16) == 580);  // 64*4+4 + 4*64+64
  for (std::size_t c : {3u, 8u, 17u}) {
    CHECK(se_param_count(c, c) == 3 * c + 1);  // bottleneck width 1
  }
  CHECK(bottleneck_width(1, 16) == 1);

  std::mt19937 rng(8);
  AceConfig acfg{.channels = 12, .reduction = 4, .beta = {true, 1.0}};
  AceModule ace(acfg, rng);
  CHECK(ace.num_parameters() == ace_param_count(acfg));
  MceConfig mcfg{.channels = 12, .reduction = 4};
  MceModule mce(mcfg, rng);
  CHECK(mce.num_parameters() == mce_param_count(mcfg));
  SeModule se(12, 4, rng);
  CHECK(se.num_parameters() == se_param_count(12, 4));
}

TEST_CASE("output shape equals input shape across random sizes") {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t b = 1 + rng() % 3, c = 1 + rng() % 6, t = 3 + rng() % 20;
    AceModule ace({.channels = c, .reduction = 2}, rng);
    Tensor x = randn({b, c, t}, rng, 1.0, false);
    CHECK(ace.forward(x).shape() == x.shape());
    MceModule mce({.channels = c, .reduction = 2}, rng);
    CHECK(mce.forward(x).shape() == x.shape());
    SeModule se(c, 2, rng);
    CHECK(se.forward(x).shape() == x.shape());
  }
}

TEST_CASE("channel weights respond to the input") {
  std::mt19937 rng(10);
  AceModule ace({.channels = 3, .reduction = 2}, rng);
  Tensor x = randn({1, 3, 6}, rng);
  Tensor wc = ace.channel_weights(x);
  backward(sum(wc));
  double norm = 0.0;
  for (double g : x.grad()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("full-module gradient checks") {
  std::mt19937 rng(11);

  SUBCASE("ace") {
    AceConfig cfg{.channels = 2, .reduction = 2, .beta = {true, 1.0}};
    AceModule m(cfg, rng);
    auto g = [&m](const std::vector<Tensor>& v) {
      Tensor y = m.forward(v[0]);
      return sum(mul(y, y));
    };
    std::vector<Tensor> leaves = {randn({1, 2, 5}, rng)};
    for (auto& p : m.parameters()) leaves.push_back(p);
    CHECK(gradcheck(g, leaves) < 1e-4);
  }
  SUBCASE("mce") {
    MceModule m({.channels = 2, .reduction = 2}, rng);
    auto g = [&m](const std::vector<Tensor>& v) {
      Tensor y = m.forward(v[0]);
      return sum(mul(y, y));
    };
    std::vector<Tensor> leaves = {randn({1, 2, 8}, rng)};
    for (auto& p : m.parameters()) leaves.push_back(p);
    CHECK(gradcheck(g, leaves) < 1e-4);
  }
  SUBCASE("se") {
    SeModule m(3, 2, rng);
    auto g = [&m](const std::vector<Tensor>& v) {
      Tensor y = m.forward(v[0]);
      return sum(mul(y, y));
    };
    std::vector<Tensor> leaves = {randn({1, 3, 5}, rng)};
    for (auto& p : m.parameters()) leaves.push_back(p);
    CHECK(gradcheck(g, leaves) < 1e-4);
  }
}
