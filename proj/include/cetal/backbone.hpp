#pragma once

// Feature-pyramid transformer encoder with configurable channel-wise
// enhancement placement. Seven blocks by default; the first keeps the
// input resolution, the rest halve it, producing one pyramid level per
// block.

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cetal/enhancement.hpp"
#include "cetal/tensor.hpp"

namespace cetal {

enum class Variant {
  baseline,
  afse,
  afswish,
  afsesswish,
  ce_interleaved,
  ce_bridged,
};

enum class EnhanceKind { ace, mce };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

struct ModelConfig {
  std::size_t input_channels = 0;
  std::size_t embed_dim = 64;
  std::size_t num_blocks = 7;
  std::vector<int> block_strides;  // defaults to [1,2,2,...]
  std::size_t num_heads = 4;
  double mlp_ratio = 4.0;
  Variant variant = Variant::baseline;
  EnhanceKind enhance_kind = EnhanceKind::ace;
  std::size_t reduction = 16;
  BetaMode ace_beta;      // swish beta inside ACE
  int mce_kernel = 3;
  int mce_stride = 2;
  std::size_t num_classes = 0;
  std::optional<int> local_window;  // global attention when unset
  // per-level [lo, hi) bands on the max regression distance, in input
  // timesteps; defaults follow the pyramid stride doubling
  std::vector<std::pair<double, double>> regression_ranges;

  // Fills defaulted fields and validates; throws ConfigError.
  void finalize();
};

struct PyramidFeatures {
  std::vector<Tensor> levels;               // [B,D,T_l]
  std::vector<std::size_t> level_strides;   // cumulative downsampling
};

struct TransformerBlock {
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  AttentionParams attn;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor down_w, down_b;  // depthwise kernel-3 stride-2, present iff stride==2
  int stride = 1;

  TransformerBlock(std::size_t d, double mlp_ratio, int stride,
                   std::mt19937& rng, const std::string& prefix);
  Tensor forward(const Tensor& x, std::size_t num_heads,
                 std::optional<int> local_window) const;
  void collect_parameters(std::vector<Tensor>& out) const;
};

class EnhanceUnit {
 public:
  explicit EnhanceUnit(AceModule m) : impl_(std::move(m)) {}
  explicit EnhanceUnit(MceModule m) : impl_(std::move(m)) {}
  explicit EnhanceUnit(SeModule m) : impl_(std::move(m)) {}

  Tensor forward(const Tensor& x) const;
  void collect_parameters(std::vector<Tensor>& out) const;

  AceModule* ace() { return std::get_if<AceModule>(&impl_); }
  MceModule* mce() { return std::get_if<MceModule>(&impl_); }
  SeModule* se() { return std::get_if<SeModule>(&impl_); }

 private:
  std::variant<AceModule, MceModule, SeModule> impl_;
};

class Backbone {
 public:
  Backbone(ModelConfig cfg, std::mt19937& rng);

  // x: [B, input_channels, T]
  Tensor project(const Tensor& x) const;
  PyramidFeatures forward_pyramid(const Tensor& x) const;

  std::vector<Tensor> parameters() const;
  std::size_t num_parameters() const;

  const ModelConfig& config() const { return cfg_; }
  std::vector<TransformerBlock>& blocks() { return blocks_; }
  std::vector<EnhanceUnit>& enhancers() { return enhancers_; }
  std::size_t num_enhancers() const { return enhancers_.size(); }

 private:
  Tensor project_activation(const Tensor& x) const;

  ModelConfig cfg_;
  Tensor proj1_w, proj1_b, proj2_w, proj2_b;
  Tensor swish_beta_;  // fixed SiLU beta for the swish-projection variants
  std::vector<TransformerBlock> blocks_;
  std::vector<EnhanceUnit> enhancers_;
};

// Closed-form trainable-scalar count of a Backbone built from cfg; must
// agree with Backbone::num_parameters (checked in tests). Cheap at any size.
std::size_t backbone_param_count(const ModelConfig& cfg);

}  // namespace cetal
