#pragma once

// Channel-wise enhancement blocks.
//
// ACE: channel weights from adaptive average pooling through a
//      swish-activated bottleneck, sigmoid-gated, then a trailing 1x1 conv.
// MCE: local max pooling instead of average pooling; the per-window channel
//      weights are linearly interpolated back to the input length, no
//      trailing conv.
// SE:  the classic squeeze-and-excitation unit (ReLU bottleneck, no
//      trailing conv), used by the AFSE/AFSESwish ablations.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "cetal/tensor.hpp"

namespace cetal {

struct BetaMode {
  bool learnable = false;
  double init = 1.0;
};

struct AceConfig {
  std::size_t channels = 0;
  std::size_t reduction = 16;
  BetaMode beta;
};

struct MceConfig {
  std::size_t channels = 0;
  std::size_t reduction = 16;
  int kernel = 3;
  int stride = 2;
};

// ceil(C/r), clamped to at least 1
std::size_t bottleneck_width(std::size_t channels, std::size_t reduction);

class AceModule {
 public:
  AceModule(const AceConfig& cfg, std::mt19937& rng,
            const std::string& name_prefix = "ace");

  // W_C = sigmoid(conv2(swish(conv1(avgPool(x))))), shape [B,C,1]
  Tensor channel_weights(const Tensor& x) const;
  Tensor forward(const Tensor& x) const;

  std::vector<Tensor> parameters() const;
  std::size_t num_parameters() const;
  const AceConfig& config() const { return cfg_; }

  Tensor w1, b1;  // C -> Cb, 1x1
  Tensor w2, b2;  // Cb -> C, 1x1
  Tensor beta;    // swish beta (learnable when configured)
  Tensor wf, bf;  // trailing 1x1 conv, C -> C, near-identity init

 private:
  AceConfig cfg_;
};

class MceModule {
 public:
  MceModule(const MceConfig& cfg, std::mt19937& rng,
            const std::string& name_prefix = "mce");

  Tensor forward(const Tensor& x) const;

  std::vector<Tensor> parameters() const;
  std::size_t num_parameters() const;
  const MceConfig& config() const { return cfg_; }

  Tensor w1, b1, w2, b2, beta;

 private:
  MceConfig cfg_;
};

class SeModule {
 public:
  SeModule(std::size_t channels, std::size_t reduction, std::mt19937& rng,
           const std::string& name_prefix = "se");

  Tensor channel_weights(const Tensor& x) const;
  Tensor forward(const Tensor& x) const;

  std::vector<Tensor> parameters() const;
  std::size_t num_parameters() const;

  Tensor w1, b1, w2, b2;

 private:
  std::size_t channels_;
};

// Closed-form trainable-scalar counts (must agree with the modules).
std::size_t se_param_count(std::size_t channels, std::size_t reduction);
std::size_t ace_param_count(const AceConfig& cfg);
std::size_t mce_param_count(const MceConfig& cfg);

}  // namespace cetal
