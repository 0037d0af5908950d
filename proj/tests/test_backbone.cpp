#include <algorithm>
#include <random>

#include "cetal/backbone.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cetal;
using cetal::testing::gradcheck;
using cetal::testing::randn;

namespace {

ModelConfig toy_config(Variant v, std::size_t blocks = 2, std::size_t d = 4) {
  ModelConfig cfg;
  cfg.input_channels = 3;
  cfg.embed_dim = d;
  cfg.num_blocks = blocks;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.variant = v;
  cfg.reduction = 2;
  cfg.num_classes = 2;
  return cfg;
}

void zero_residual_branches(TransformerBlock& b) {
  std::fill(b.attn.wo.data().begin(), b.attn.wo.data().end(), 0.0);
  std::fill(b.attn.bo.data().begin(), b.attn.bo.data().end(), 0.0);
  std::fill(b.mlp_w2.data().begin(), b.mlp_w2.data().end(), 0.0);
  std::fill(b.mlp_b2.data().begin(), b.mlp_b2.data().end(), 0.0);
}

}  // namespace

TEST_CASE("projection length preservation and zero stub") {
  std::mt19937 rng(1);
  for (std::size_t t : {1u, 5u, 224u}) {
    Backbone bb(toy_config(Variant::baseline), rng);
    Tensor x = randn({1, 3, t}, rng, 1.0, false);
    Tensor y = bb.project(x);
    CHECK(y.shape() == Shape{1, 4, t});
  }

  Backbone bb(toy_config(Variant::baseline), rng);
  auto ps = bb.parameters();
  // zero only the projection parameters
  for (auto& p : ps) {
    if (p.name().rfind("proj", 0) == 0) {
      std::fill(p.data().begin(), p.data().end(), 0.0);
    }
  }
  Tensor x = randn({2, 3, 6}, rng, 1.0, false);
  Tensor y = bb.project(x);
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("projection gradient check") {
  std::mt19937 rng(2);
  Backbone bb(toy_config(Variant::afswish), rng);
  auto f = [&bb](const std::vector<Tensor>& v) {
    Tensor y = bb.project(v[0]);
    return sum(mul(y, y));
  };
  CHECK(gradcheck(f, {randn({1, 3, 4}, rng, 0.5)}) < 1e-4);
}

TEST_CASE("transformer block geometry") {
  std::mt19937 rng(3);
  TransformerBlock b2(4, 2.0, 2, rng, "b");
  Tensor x = randn({1, 4, 7}, rng, 1.0, false);
  CHECK(b2.forward(x, 2, {}).dim(2) == 4);  // ceil(7/2)

  TransformerBlock b1(4, 2.0, 1, rng, "b");
  zero_residual_branches(b1);
  Tensor y = b1.forward(x, 2, {});
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("pyramid level lengths follow the stride schedule") {
  std::mt19937 rng(4);
  ModelConfig cfg = toy_config(Variant::baseline, 7);
  Backbone bb(cfg, rng);
  Tensor x = randn({1, 3, 224}, rng, 1.0, false);
  PyramidFeatures pyr = bb.forward_pyramid(x);
  std::vector<std::size_t> want = {224, 112, 56, 28, 14, 7, 4};
  REQUIRE(pyr.levels.size() == 7);
  for (std::size_t l = 0; l < 7; ++l) {
    CHECK(pyr.levels[l].dim(2) == want[l]);
  }
  CHECK(pyr.level_strides == std::vector<std::size_t>{1, 2, 4, 8, 16, 32, 64});

  // exact ceil-division invariant on random lengths
  for (int trial = 0; trial < 5; ++trial) {
    std::size_t t = 16 + rng() % 64;
    PyramidFeatures p2 = bb.forward_pyramid(randn({1, 3, t}, rng, 1.0, false));
    std::size_t prev = t;
    for (std::size_t l = 0; l < 7; ++l) {
      std::size_t expect = l == 0 ? prev : (prev + 1) / 2;
      CHECK(p2.levels[l].dim(2) == expect);
      prev = expect;
    }
  }
}

TEST_CASE("baseline with identity blocks reproduces the projection at level 0") {
  std::mt19937 rng(5);
  ModelConfig cfg = toy_config(Variant::baseline, 2);
  cfg.block_strides = {1, 2};
  Backbone bb(cfg, rng);
  for (auto& b : bb.blocks()) zero_residual_branches(b);
  Tensor x = randn({1, 3, 8}, rng, 1.0, false);
  Tensor proj = bb.project(x);
  PyramidFeatures pyr = bb.forward_pyramid(x);
  for (std::size_t i = 0; i < proj.numel(); ++i) {
    CHECK(pyr.levels[0].data()[i] == doctest::Approx(proj.data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("enhancement module placement counts") {
  std::mt19937 rng(6);
  CHECK(Backbone(toy_config(Variant::baseline, 7), rng).num_enhancers() == 0);
  CHECK(Backbone(toy_config(Variant::afswish, 7), rng).num_enhancers() == 0);
  CHECK(Backbone(toy_config(Variant::afse, 7), rng).num_enhancers() == 7);
  CHECK(Backbone(toy_config(Variant::afsesswish, 7), rng).num_enhancers() == 7);
  CHECK(Backbone(toy_config(Variant::ce_interleaved, 7), rng).num_enhancers() == 7);
  CHECK(Backbone(toy_config(Variant::ce_bridged, 7), rng).num_enhancers() == 4);
  CHECK(Backbone(toy_config(Variant::ce_bridged, 4), rng).num_enhancers() == 2);
}

TEST_CASE("closed-form parameter count matches instantiated models") {
  std::mt19937 rng(7);
  for (Variant v : {Variant::baseline, Variant::afse, Variant::ce_interleaved,
                    Variant::ce_bridged}) {
    ModelConfig cfg = toy_config(v, 3, 8);
    Backbone bb(cfg, rng);
    CHECK(bb.num_parameters() == backbone_param_count(cfg));
  }
}

TEST_CASE("ce_interleaved parameter overhead stays under 10 percent") {
  ModelConfig base = toy_config(Variant::baseline, 7, 512);
  base.reduction = 16;
  base.num_heads = 4;
  base.mlp_ratio = 4.0;
  ModelConfig ce = base;
  ce.variant = Variant::ce_interleaved;
  double overhead = double(backbone_param_count(ce)) /
                        double(backbone_param_count(base)) -
                    1.0;
  CHECK(overhead < 0.10);
  CHECK(overhead > 0.0);
}

TEST_CASE("ce_interleaved zero-stub equals hand-composed 0.5 scaling") {
  std::mt19937 rng(8);
  ModelConfig cfg = toy_config(Variant::ce_interleaved, 2, 4);
  cfg.input_channels = 4;
  cfg.block_strides = {1, 2};
  Backbone bb(cfg, rng);
  for (auto& e : bb.enhancers()) {
    AceModule* ace = e.ace();
    REQUIRE(ace != nullptr);
    std::fill(ace->w1.data().begin(), ace->w1.data().end(), 0.0);
    std::fill(ace->b1.data().begin(), ace->b1.data().end(), 0.0);
    std::fill(ace->w2.data().begin(), ace->w2.data().end(), 0.0);
    std::fill(ace->b2.data().begin(), ace->b2.data().end(), 0.0);
    std::fill(ace->wf.data().begin(), ace->wf.data().end(), 0.0);
    for (std::size_t i = 0; i < 4; ++i) ace->wf.data()[i * 4 + i] = 1.0;
    std::fill(ace->bf.data().begin(), ace->bf.data().end(), 0.0);
  }
  Tensor x = randn({1, 4, 16}, rng, 1.0, false);
  PyramidFeatures pyr = bb.forward_pyramid(x);

  // hand-composed reference: each level is 0.5 * block(previous level)
  Tensor h = bb.project(x);
  for (std::size_t l = 0; l < 2; ++l) {
    h = scale(bb.blocks()[l].forward(h, cfg.num_heads, {}), 0.5);
    REQUIRE(pyr.levels[l].shape() == h.shape());
    for (std::size_t i = 0; i < h.numel(); ++i) {
      CHECK(pyr.levels[l].data()[i] == h.data()[i]);  // exact
    }
  }
}

TEST_CASE("end-to-end pyramid gradient check on a 2-block toy config") {
  std::mt19937 rng(9);
  ModelConfig cfg = toy_config(Variant::ce_interleaved, 2, 4);
  Backbone bb(cfg, rng);
  auto f = [&bb](const std::vector<Tensor>& v) {
    PyramidFeatures pyr = bb.forward_pyramid(v[0]);
    Tensor acc = sum(mul(pyr.levels[0], pyr.levels[0]));
    for (std::size_t l = 1; l < pyr.levels.size(); ++l) {
      acc = add(acc, sum(mul(pyr.levels[l], pyr.levels[l])));
    }
    return acc;
  };
  std::vector<Tensor> leaves = {randn({1, 3, 6}, rng, 0.5)};
  CHECK(gradcheck(f, leaves) < 1e-4);
}

TEST_CASE("parameter gradients flow through the whole pyramid") {
  std::mt19937 rng(10);
  ModelConfig cfg = toy_config(Variant::ce_bridged, 3, 4);
  Backbone bb(cfg, rng);
  auto f = [&bb](const std::vector<Tensor>& v) {
    PyramidFeatures pyr = bb.forward_pyramid(v[0]);
    Tensor acc = sum(mul(pyr.levels[0], pyr.levels[0]));
    for (std::size_t l = 1; l < pyr.levels.size(); ++l) {
      acc = add(acc, sum(mul(pyr.levels[l], pyr.levels[l])));
    }
    return acc;
  };
  std::vector<Tensor> leaves = {randn({1, 3, 9}, rng, 0.5)};
  for (auto& p : bb.parameters()) leaves.push_back(p);
  CHECK(gradcheck(f, leaves) < 1e-4);
}

TEST_CASE("deterministic construction and forward for a fixed seed") {
  auto run = [] {
    std::mt19937 rng(77);
    Backbone bb(toy_config(Variant::ce_interleaved, 3, 8), rng);
    std::mt19937 xr(5);
    Tensor x = randn({1, 3, 12}, xr, 1.0, false);
    PyramidFeatures pyr = bb.forward_pyramid(x);
    std::vector<double> flat;
    for (auto& l : pyr.levels) {
      flat.insert(flat.end(), l.data().begin(), l.data().end());
    }
    return flat;
  };
  CHECK(run() == run());  // bitwise
}

TEST_CASE("unknown variant is rejected") {
  CHECK_THROWS_AS(parse_variant("resnet"), ConfigError);
  CHECK(parse_variant("ce") == Variant::ce_interleaved);
}
