#include "cetal/backbone.hpp"

#include <cmath>

#include "cetal/init.hpp"

namespace cetal {

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "afse") return Variant::afse;
  if (name == "afswish") return Variant::afswish;
  if (name == "afsesswish") return Variant::afsesswish;
  if (name == "ce_interleaved" || name == "ce") return Variant::ce_interleaved;
  if (name == "ce_bridged") return Variant::ce_bridged;
  throw ConfigError("unknown variant '" + name + "'");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::afse: return "afse";
    case Variant::afswish: return "afswish";
    case Variant::afsesswish: return "afsesswish";
    case Variant::ce_interleaved: return "ce_interleaved";
    case Variant::ce_bridged: return "ce_bridged";
  }
  return "?";
}

void ModelConfig::finalize() {
  if (input_channels < 1) throw ConfigError("model: input_channels must be >= 1");
  if (embed_dim < 1) throw ConfigError("model: embed_dim must be >= 1");
  if (num_blocks < 1) throw ConfigError("model: num_blocks must be >= 1");
  if (num_heads < 1 || embed_dim % num_heads != 0) {
    throw ConfigError("model: embed_dim " + std::to_string(embed_dim) +
                      " must be divisible by num_heads " + std::to_string(num_heads));
  }
  if (block_strides.empty()) {
    block_strides.assign(num_blocks, 2);
    block_strides[0] = 1;
  }
  if (block_strides.size() != num_blocks) {
    throw ConfigError("model: block_strides length " +
                      std::to_string(block_strides.size()) + " != num_blocks " +
                      std::to_string(num_blocks));
  }
  for (int s : block_strides) {
    if (s != 1 && s != 2) throw ConfigError("model: block strides must be 1 or 2");
  }
  if (regression_ranges.empty()) {
    double lo = 0.0;
    double hi = 4.0;
    for (std::size_t l = 0; l < num_blocks; ++l) {
      bool last = l + 1 == num_blocks;
      regression_ranges.emplace_back(lo, last ? 1e9 : hi);
      lo = hi;
      hi *= 2.0;
    }
  }
  if (regression_ranges.size() != num_blocks) {
    throw ConfigError("model: regression_ranges must have one band per block");
  }
}

// ---- transformer block -------------------------------------------------------

TransformerBlock::TransformerBlock(std::size_t d, double mlp_ratio, int stride_,
                                   std::mt19937& rng, const std::string& p)
    : stride(stride_) {
  double ds = 1.0 / std::sqrt(double(d));
  ln1_g = full_param({d}, 1.0, p + ".ln1.g");
  ln1_b = zeros_param({d}, p + ".ln1.b");
  ln2_g = full_param({d}, 1.0, p + ".ln2.g");
  ln2_b = zeros_param({d}, p + ".ln2.b");
  attn.wq = randn_param({d, d, 1}, rng, ds, p + ".attn.wq");
  attn.wk = randn_param({d, d, 1}, rng, ds, p + ".attn.wk");
  attn.wv = randn_param({d, d, 1}, rng, ds, p + ".attn.wv");
  attn.wo = randn_param({d, d, 1}, rng, ds, p + ".attn.wo");
  attn.bq = zeros_param({d}, p + ".attn.bq");
  attn.bk = zeros_param({d}, p + ".attn.bk");
  attn.bv = zeros_param({d}, p + ".attn.bv");
  attn.bo = zeros_param({d}, p + ".attn.bo");
  std::size_t hidden = std::size_t(std::llround(mlp_ratio * double(d)));
  if (hidden < 1) hidden = 1;
  mlp_w1 = randn_param({hidden, d, 1}, rng, ds, p + ".mlp.w1");
  mlp_b1 = zeros_param({hidden}, p + ".mlp.b1");
  mlp_w2 = randn_param({d, hidden, 1}, rng, 1.0 / std::sqrt(double(hidden)),
                       p + ".mlp.w2");
  mlp_b2 = zeros_param({d}, p + ".mlp.b2");
  if (stride == 2) {
    // center-tap near identity so early training preserves the signal
    std::normal_distribution<double> noise(0.0, 0.02);
    std::vector<double> w(d * 3);
    for (std::size_t c = 0; c < d; ++c) {
      w[c * 3 + 0] = noise(rng);
      w[c * 3 + 1] = 1.0 + noise(rng);
      w[c * 3 + 2] = noise(rng);
    }
    down_w = Tensor({d, 3}, std::move(w), true);
    down_w.set_name(p + ".down.w");
    down_b = zeros_param({d}, p + ".down.b");
  }
}

Tensor TransformerBlock::forward(const Tensor& x, std::size_t num_heads,
                                 std::optional<int> local_window) const {
  Tensor h = add(x, multi_head_self_attention(layer_norm_channels(x, ln1_g, ln1_b),
                                              attn, int(num_heads), local_window));
  Tensor m = conv1d(relu(conv1d(layer_norm_channels(h, ln2_g, ln2_b), mlp_w1,
                                mlp_b1, 1, 0)),
                    mlp_w2, mlp_b2, 1, 0);
  h = add(h, m);
  if (stride == 2) {
    h = depthwise_conv1d(h, down_w, down_b, 2, 1);  // T' = ceil(T/2)
  }
  return h;
}

void TransformerBlock::collect_parameters(std::vector<Tensor>& out) const {
  for (const Tensor& t : {ln1_g, ln1_b, ln2_g, ln2_b, attn.wq, attn.wk, attn.wv,
                          attn.wo, attn.bq, attn.bk, attn.bv, attn.bo, mlp_w1,
                          mlp_b1, mlp_w2, mlp_b2}) {
    out.push_back(t);
  }
  if (stride == 2) {
    out.push_back(down_w);
    out.push_back(down_b);
  }
}

// ---- enhance unit ------------------------------------------------------------

Tensor EnhanceUnit::forward(const Tensor& x) const {
  return std::visit([&](const auto& m) { return m.forward(x); }, impl_);
}

void EnhanceUnit::collect_parameters(std::vector<Tensor>& out) const {
  std::visit(
      [&](const auto& m) {
        for (auto& p : m.parameters()) out.push_back(p);
      },
      impl_);
}

// ---- backbone ------------------------------------------------------------------

namespace {

bool uses_swish_projection(Variant v) {
  return v == Variant::afswish || v == Variant::afsesswish;
}

bool uses_se(Variant v) {
  return v == Variant::afse || v == Variant::afsesswish;
}

bool uses_ce(Variant v) {
  return v == Variant::ce_interleaved || v == Variant::ce_bridged;
}

// maxpool geometry mapping length `len` to exactly `target` (parameter-free
// alignment for bridge connections)
std::pair<int, int> align_pool_geometry(std::size_t len, std::size_t target) {
  int s = int(len / target);
  if (s < 1) s = 1;
  int k = int(len) - s * (int(target) - 1);
  return {k, s};
}

}  // namespace

Backbone::Backbone(ModelConfig cfg, std::mt19937& rng) : cfg_(std::move(cfg)) {
  cfg_.finalize();
  const std::size_t d = cfg_.embed_dim;
  proj1_w = randn_param({d, cfg_.input_channels, 3}, rng,
                        1.0 / std::sqrt(3.0 * double(cfg_.input_channels)),
                        "proj1.w");
  proj1_b = zeros_param({d}, "proj1.b");
  proj2_w = randn_param({d, d, 3}, rng, 1.0 / std::sqrt(3.0 * double(d)), "proj2.w");
  proj2_b = zeros_param({d}, "proj2.b");
  swish_beta_ = Tensor::scalar(1.0);

  for (std::size_t l = 0; l < cfg_.num_blocks; ++l) {
    blocks_.emplace_back(d, cfg_.mlp_ratio, cfg_.block_strides[l], rng,
                         "block" + std::to_string(l));
  }

  auto make_unit = [&](std::size_t l) {
    std::string prefix = "enh" + std::to_string(l);
    if (uses_se(cfg_.variant)) {
      return EnhanceUnit(SeModule(d, cfg_.reduction, rng, prefix));
    }
    if (cfg_.enhance_kind == EnhanceKind::mce) {
      return EnhanceUnit(MceModule(
          {.channels = d, .reduction = cfg_.reduction, .kernel = cfg_.mce_kernel,
           .stride = cfg_.mce_stride},
          rng, prefix));
    }
    return EnhanceUnit(AceModule(
        {.channels = d, .reduction = cfg_.reduction, .beta = cfg_.ace_beta}, rng,
        prefix));
  };

  if (uses_se(cfg_.variant) || cfg_.variant == Variant::ce_interleaved) {
    for (std::size_t l = 0; l < cfg_.num_blocks; ++l) enhancers_.push_back(make_unit(l));
  } else if (cfg_.variant == Variant::ce_bridged) {
    for (std::size_t l = 0; l < cfg_.num_blocks; l += 2) enhancers_.push_back(make_unit(l));
  }
}

Tensor Backbone::project_activation(const Tensor& x) const {
  return uses_swish_projection(cfg_.variant) ? swish(x, swish_beta_) : relu(x);
}

Tensor Backbone::project(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(1) != cfg_.input_channels) {
    throw ShapeError("project: expected [B," + std::to_string(cfg_.input_channels) +
                     ",T], got " + shape_str(x.shape()));
  }
  Tensor h = project_activation(conv1d(x, proj1_w, proj1_b, 1, 1));
  return conv1d(h, proj2_w, proj2_b, 1, 1);
}

PyramidFeatures Backbone::forward_pyramid(const Tensor& x) const {
  PyramidFeatures pyr;
  Tensor h = project(x);
  std::size_t cum_stride = 1;
  // bridged variant: pending[l] is added to the input of block l
  std::vector<Tensor> pending(cfg_.num_blocks + 2);

  for (std::size_t l = 0; l < cfg_.num_blocks; ++l) {
    if (pending[l].defined()) h = add(h, pending[l]);
    h = blocks_[l].forward(h, cfg_.num_heads, cfg_.local_window);
    cum_stride *= std::size_t(cfg_.block_strides[l]);

    if (uses_se(cfg_.variant) || cfg_.variant == Variant::ce_interleaved) {
      h = enhancers_[l].forward(h);
    } else if (cfg_.variant == Variant::ce_bridged && l % 2 == 0) {
      const EnhanceUnit& unit = enhancers_[l / 2];
      Tensor m = unit.forward(h);
      if (l + 2 < cfg_.num_blocks) {
        // input of block l+2 has the length of block l+1's output
        std::size_t target = h.dim(2);
        if (cfg_.block_strides[l + 1] == 2) target = (target + 1) / 2;
        auto [k, s] = align_pool_geometry(m.dim(2), target);
        pending[l + 2] = max_pool1d(m, k, s);
      } else {
        h = add(h, m);  // no receiver: enhance the final level in place
      }
    }

    pyr.levels.push_back(h);
    pyr.level_strides.push_back(cum_stride);
  }
  return pyr;
}

std::vector<Tensor> Backbone::parameters() const {
  std::vector<Tensor> out = {proj1_w, proj1_b, proj2_w, proj2_b};
  for (const auto& b : blocks_) b.collect_parameters(out);
  for (const auto& e : enhancers_) e.collect_parameters(out);
  return out;
}

std::size_t Backbone::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::size_t backbone_param_count(const ModelConfig& cfg_in) {
  ModelConfig cfg = cfg_in;
  cfg.finalize();
  const std::size_t d = cfg.embed_dim;
  std::size_t n = d * cfg.input_channels * 3 + d + d * d * 3 + d;  // projections
  std::size_t hidden = std::size_t(std::llround(cfg.mlp_ratio * double(d)));
  if (hidden < 1) hidden = 1;
  for (std::size_t l = 0; l < cfg.num_blocks; ++l) {
    n += 4 * d;                      // two layer norms
    n += 4 * (d * d + d);            // attention projections
    n += hidden * d + hidden + d * hidden + d;  // mlp
    if (cfg.block_strides[l] == 2) n += d * 3 + d;
  }
  std::size_t units = 0;
  if (cfg.variant == Variant::afse || cfg.variant == Variant::afsesswish ||
      cfg.variant == Variant::ce_interleaved) {
    units = cfg.num_blocks;
  } else if (cfg.variant == Variant::ce_bridged) {
    units = (cfg.num_blocks + 1) / 2;
  }
  std::size_t per_unit = 0;
  if (cfg.variant == Variant::afse || cfg.variant == Variant::afsesswish) {
    per_unit = se_param_count(d, cfg.reduction);
  } else if (uses_ce(cfg.variant)) {
    per_unit = cfg.enhance_kind == EnhanceKind::mce
                   ? mce_param_count({.channels = d, .reduction = cfg.reduction})
                   : ace_param_count({.channels = d,
                                      .reduction = cfg.reduction,
                                      .beta = cfg.ace_beta});
  }
  return n + units * per_unit;
}

}  // namespace cetal
