#include "cetal/heads.hpp"

#include <algorithm>
#include <cmath>

#include "cetal/init.hpp"

namespace cetal {

namespace {

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

DecoderHeads::DecoderHeads(std::size_t d, std::size_t num_classes,
                           std::mt19937& rng)
    : num_classes_(num_classes) {
  if (num_classes < 1) throw ConfigError("heads: num_classes must be >= 1");
  double ds = 1.0 / std::sqrt(3.0 * double(d));
  cls_w1 = randn_param({d, d, 3}, rng, ds, "cls.w1");
  cls_b1 = zeros_param({d}, "cls.b1");
  cls_w2 = randn_param({d, d, 3}, rng, ds, "cls.w2");
  cls_b2 = zeros_param({d}, "cls.b2");
  cls_out_w = randn_param({num_classes, d, 1}, rng, 1.0 / std::sqrt(double(d)),
                          "cls.out.w");
  // bias prior pushing initial probabilities toward background
  cls_out_b = full_param({num_classes}, -2.0, "cls.out.b");
  reg_w1 = randn_param({d, d, 3}, rng, ds, "reg.w1");
  reg_b1 = zeros_param({d}, "reg.b1");
  reg_w2 = randn_param({d, d, 3}, rng, ds, "reg.w2");
  reg_b2 = zeros_param({d}, "reg.b2");
  reg_out_w = randn_param({2, d, 1}, rng, 1.0 / std::sqrt(double(d)), "reg.out.w");
  reg_out_b = zeros_param({2}, "reg.out.b");
}

DenseOutputs DecoderHeads::forward(const PyramidFeatures& pyr) const {
  DenseOutputs out;
  for (const Tensor& level : pyr.levels) {
    Tensor c = relu(conv1d(level, cls_w1, cls_b1, 1, 1));
    c = relu(conv1d(c, cls_w2, cls_b2, 1, 1));
    out.class_logits.push_back(conv1d(c, cls_out_w, cls_out_b, 1, 0));

    Tensor r = relu(conv1d(level, reg_w1, reg_b1, 1, 1));
    r = relu(conv1d(r, reg_w2, reg_b2, 1, 1));
    // softplus keeps the onset/offset distances strictly positive
    out.offsets.push_back(softplus(conv1d(r, reg_out_w, reg_out_b, 1, 0)));
  }
  return out;
}

std::vector<Tensor> DecoderHeads::parameters() const {
  return {cls_w1, cls_b1, cls_w2,    cls_b2,    cls_out_w, cls_out_b,
          reg_w1, reg_b1, reg_w2,    reg_b2,    reg_out_w, reg_out_b};
}

std::size_t DecoderHeads::num_parameters() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::size_t heads_param_count(std::size_t d, std::size_t num_classes) {
  std::size_t tower = 2 * (d * d * 3 + d);
  return tower + num_classes * d + num_classes  // classification
         + tower + 2 * d + 2;                   // regression
}

std::vector<Segment> dense_to_segments(const DenseOutputs& d,
                                       const std::vector<std::size_t>& level_strides,
                                       double sampling_rate_hz,
                                       const DecodeConfig& cfg) {
  if (sampling_rate_hz <= 0) throw ConfigError("decode: sampling rate must be > 0");
  std::vector<Segment> out;
  for (std::size_t l = 0; l < d.class_logits.size(); ++l) {
    const Tensor& logits = d.class_logits[l];
    const Tensor& offs = d.offsets[l];
    const std::size_t C = logits.dim(1), T = logits.dim(2);
    const double stride = double(level_strides[l]);
    for (std::size_t t = 0; t < T; ++t) {
      double center = double(t) * stride;  // input samples
      double left = offs.data()[0 * T + t] * stride;
      double right = offs.data()[1 * T + t] * stride;
      for (std::size_t c = 0; c < C; ++c) {
        double p = sigmoid_scalar(logits.data()[c * T + t]);
        if (p <= cfg.score_threshold) continue;
        Segment s;
        s.start = (center - left) / sampling_rate_hz;
        s.end = (center + right) / sampling_rate_hz;
        s.label = int(c);
        s.score = p;
        if (s.end > s.start) out.push_back(s);
      }
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Segment& a, const Segment& b) { return a.score > b.score; });
  if (out.size() > cfg.pre_nms_topk) out.resize(cfg.pre_nms_topk);
  return out;
}

double segment_tiou(const Segment& a, const Segment& b) {
  double inter = std::min(a.end, b.end) - std::max(a.start, b.start);
  if (inter <= 0) return 0.0;
  double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  return inter / uni;
}

std::vector<Segment> nms(std::vector<Segment> segments, const NmsConfig& cfg) {
  if (cfg.tiou_threshold < 0 || cfg.tiou_threshold > 1) {
    throw ConfigError("nms: threshold must lie in [0,1]");
  }
  std::stable_sort(segments.begin(), segments.end(),
                   [](const Segment& a, const Segment& b) { return a.score > b.score; });
  std::vector<Segment> kept;
  if (cfg.method == NmsMethod::hard) {
    std::vector<bool> dead(segments.size(), false);
    for (std::size_t i = 0; i < segments.size(); ++i) {
      if (dead[i]) continue;
      kept.push_back(segments[i]);
      for (std::size_t j = i + 1; j < segments.size(); ++j) {
        if (dead[j] || segments[j].label != segments[i].label) continue;
        if (segment_tiou(segments[i], segments[j]) > cfg.tiou_threshold) dead[j] = true;
      }
    }
  } else {
    // gaussian score decay, then threshold
    std::vector<Segment> pool = std::move(segments);
    while (!pool.empty()) {
      auto best = std::max_element(
          pool.begin(), pool.end(),
          [](const Segment& a, const Segment& b) { return a.score < b.score; });
      Segment top = *best;
      pool.erase(best);
      kept.push_back(top);
      for (auto& s : pool) {
        if (s.label != top.label) continue;
        double ov = segment_tiou(top, s);
        if (ov > 0) s.score *= std::exp(-(ov * ov) / cfg.soft_sigma);
      }
      pool.erase(std::remove_if(pool.begin(), pool.end(),
                                [&](const Segment& s) {
                                  return s.score < cfg.soft_min_score;
                                }),
                 pool.end());
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const Segment& a, const Segment& b) { return a.score > b.score; });
  }
  return kept;
}

}  // namespace cetal
