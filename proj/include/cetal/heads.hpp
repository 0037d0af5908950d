#pragma once

// Dual-head decoder (classification + boundary regression) shared across
// pyramid levels, dense-output decoding into scored segments, and NMS.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "cetal/backbone.hpp"
#include "cetal/tensor.hpp"

namespace cetal {

struct Segment {
  double start = 0.0;  // seconds
  double end = 0.0;    // seconds, > start
  int label = 0;
  double score = 1.0;  // (0,1]; 1 for ground truth
};

struct DenseOutputs {
  std::vector<Tensor> class_logits;  // per level [B,C,T_l]
  std::vector<Tensor> offsets;       // per level [B,2,T_l], non-negative
};

class DecoderHeads {
 public:
  DecoderHeads(std::size_t embed_dim, std::size_t num_classes, std::mt19937& rng);

  DenseOutputs forward(const PyramidFeatures& pyr) const;

  std::vector<Tensor> parameters() const;
  std::size_t num_parameters() const;

  Tensor cls_w1, cls_b1, cls_w2, cls_b2, cls_out_w, cls_out_b;
  Tensor reg_w1, reg_b1, reg_w2, reg_b2, reg_out_w, reg_out_b;

 private:
  std::size_t num_classes_;
};

std::size_t heads_param_count(std::size_t embed_dim, std::size_t num_classes);

struct DecodeConfig {
  double score_threshold = 0.001;
  std::size_t pre_nms_topk = 2000;
};

// Converts dense per-timestep outputs (single sequence, batch size 1) into
// scored segments in seconds. Offsets are in level-timestep units; centers
// sit at t * cumulative_stride input samples.
std::vector<Segment> dense_to_segments(const DenseOutputs& d,
                                       const std::vector<std::size_t>& level_strides,
                                       double sampling_rate_hz,
                                       const DecodeConfig& cfg = {});

enum class NmsMethod { hard, soft };

struct NmsConfig {
  double tiou_threshold = 0.5;
  NmsMethod method = NmsMethod::soft;
  double soft_sigma = 0.5;
  double soft_min_score = 0.001;
};

double segment_tiou(const Segment& a, const Segment& b);

// Class-wise suppression; output sorted by score descending.
std::vector<Segment> nms(std::vector<Segment> segments, const NmsConfig& cfg);

}  // namespace cetal
