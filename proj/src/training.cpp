#include "cetal/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cetal/errors.hpp"
#include "json.hpp"

using nlohmann::json;

namespace cetal {

void TrainConfig::validate() const {
  if (lr <= 0) throw ConfigError("train: lr must be > 0");
  if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (warmup_epochs >= epochs) {
    throw ConfigError("train: warmup_epochs must be < epochs");
  }
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (clip_grad_norm && *clip_grad_norm <= 0) {
    throw ConfigError("train: clip_grad_norm must be > 0");
  }
  if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
}

// ---- model ---------------------------------------------------------------------

Model::Model(const ModelConfig& cfg, std::mt19937& rng)
    : backbone(cfg, rng),
      heads(backbone.config().embed_dim, backbone.config().num_classes, rng) {
  if (backbone.config().num_classes < 1) {
    throw ConfigError("model: num_classes must be >= 1");
  }
}

DenseOutputs Model::forward(const Tensor& x) const {
  return heads.forward(backbone.forward_pyramid(x));
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out = backbone.parameters();
  for (const auto& p : heads.parameters()) out.push_back(p);
  return out;
}

std::size_t Model::num_parameters() const {
  return backbone.num_parameters() + heads.num_parameters();
}

std::size_t model_param_count(const ModelConfig& cfg) {
  ModelConfig c = cfg;
  c.finalize();
  return backbone_param_count(c) + heads_param_count(c.embed_dim, c.num_classes);
}

Tensor sequence_tensor(const AnnotatedSequence& seq) {
  return Tensor({1, seq.channels, seq.length}, seq.features);
}

std::vector<Segment> predict(const Model& model, const AnnotatedSequence& seq,
                             const DecodeConfig& dec, const NmsConfig& nms_cfg) {
  DenseOutputs d = model.forward(sequence_tensor(seq));
  LevelGeometry geo = level_geometry(model.config(), seq.length);
  return nms(dense_to_segments(d, geo.strides, seq.rate_hz, dec), nms_cfg);
}

// ---- target assignment ------------------------------------------------------------

LevelGeometry level_geometry(const ModelConfig& cfg, std::size_t input_len) {
  ModelConfig c = cfg;
  c.finalize();
  LevelGeometry geo;
  std::size_t len = input_len;
  std::size_t stride = 1;
  for (std::size_t l = 0; l < c.num_blocks; ++l) {
    if (c.block_strides[l] == 2) {
      len = (len + 1) / 2;
      stride *= 2;
    }
    geo.lengths.push_back(len);
    geo.strides.push_back(stride);
    geo.ranges.push_back(c.regression_ranges[l]);
  }
  return geo;
}

DenseTargets assign_targets(const std::vector<Segment>& gt, double rate_hz,
                            std::size_t num_classes, const LevelGeometry& geo) {
  if (rate_hz <= 0) throw ConfigError("assign: sampling rate must be > 0");
  DenseTargets out;
  for (std::size_t l = 0; l < geo.lengths.size(); ++l) {
    const std::size_t T = geo.lengths[l];
    const double stride = double(geo.strides[l]);
    const auto [lo, hi] = geo.ranges[l];
    std::vector<double> cls(num_classes * T, 0.0);
    std::vector<double> offs(2 * T, 1.0);
    std::vector<double> pos(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const double center = double(t) * stride;
      int best = -1;
      double best_dur = std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < gt.size(); ++g) {
        double s0 = gt[g].start * rate_hz, s1 = gt[g].end * rate_hz;
        if (center < s0 || center > s1) continue;
        double mo = std::max(center - s0, s1 - center);
        if (mo < lo || mo >= hi) continue;
        double dur = s1 - s0;
        if (dur < best_dur ||
            (dur == best_dur && best >= 0 && gt[g].start < gt[std::size_t(best)].start)) {
          best = int(g);
          best_dur = dur;
        }
      }
      if (best < 0) continue;
      const Segment& g = gt[std::size_t(best)];
      double s0 = g.start * rate_hz, s1 = g.end * rate_hz;
      cls[std::size_t(g.label) * T + t] = 1.0;
      offs[t] = (center - s0) / stride;
      offs[T + t] = (s1 - center) / stride;
      pos[t] = 1.0;
      ++out.num_positive;
    }
    out.cls.push_back(std::move(cls));
    out.offsets.push_back(std::move(offs));
    out.positive.push_back(std::move(pos));
  }
  return out;
}

// ---- loss -----------------------------------------------------------------------

namespace {

Tensor ipow(const Tensor& x, int n) {
  Tensor out = x;
  for (int i = 1; i < n; ++i) out = mul(out, x);
  return out;
}

}  // namespace

Tensor detection_loss(const DenseOutputs& d, const DenseTargets& t,
                      const LossConfig& cfg) {
  if (d.class_logits.size() != t.cls.size()) {
    throw ShapeError("loss: level count mismatch");
  }
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t l = 0; l < d.class_logits.size(); ++l) {
    const Tensor& z = d.class_logits[l];
    const std::size_t C = z.dim(1), T = z.dim(2);
    if (t.cls[l].size() != C * T) throw ShapeError("loss: class target shape mismatch");
    Tensor tgt({1, C, T}, t.cls[l]);
    std::vector<double> inv(t.cls[l].size());
    for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - t.cls[l][i];
    Tensor tgt_inv({1, C, T}, inv);

    Tensor zn = neg(z);
    Tensor fl_pos = mul(tgt, mul(ipow(sigmoid(zn), cfg.focal_gamma), softplus(zn)));
    Tensor fl_neg = mul(tgt_inv, mul(ipow(sigmoid(z), cfg.focal_gamma), softplus(z)));
    Tensor focal = add(scale(sum(fl_pos), cfg.focal_alpha),
                       scale(sum(fl_neg), 1.0 - cfg.focal_alpha));
    total = add(total, focal);

    // 1-D IoU of [c-l, c+r] intervals reduces to offset-space min/max sums
    const Tensor& p = d.offsets[l];
    Tensor po({1, 2, T}, t.offsets[l]);
    Tensor ones({1, 2, 1}, {1.0, 1.0});
    Tensor inter = conv1d(emin(p, po), ones, std::nullopt, 1, 0);
    Tensor uni = conv1d(emax(p, po), ones, std::nullopt, 1, 0);
    Tensor one_minus_iou = add_scalar(neg(ediv(inter, uni)), 1.0);
    Tensor mask({1, 1, T}, t.positive[l]);
    total = add(total, scale(sum(mul(one_minus_iou, mask)), cfg.lambda_reg));
  }
  double npos = double(std::max<std::size_t>(t.num_positive, 1));
  return scale(total, 1.0 / npos);
}

// ---- optimizer ---------------------------------------------------------------------

void adamw_step(const std::vector<Tensor>& params, AdamWState& st, double lr_t,
                double wd) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), {});
    st.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.m[i].assign(params[i].numel(), 0.0);
      st.v[i].assign(params[i].numel(), 0.0);
    }
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(b1, double(st.t));
  const double bc2 = 1.0 - std::pow(b2, double(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& data = params[i].node()->data;
    const auto& grad = params[i].node()->grad;
    const bool has_grad = grad.size() == data.size();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = has_grad ? grad[k] : 0.0;
      data[k] -= lr_t * wd * data[k];  // decoupled decay
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      data[k] -= lr_t * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps);
    }
  }
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch >= cfg.epochs) throw ConfigError("lr_schedule: epoch out of range");
  if (epoch < cfg.warmup_epochs) {
    return cfg.lr * double(epoch + 1) / double(cfg.warmup_epochs);
  }
  double progress = double(epoch - cfg.warmup_epochs) /
                    double(cfg.epochs - cfg.warmup_epochs);
  return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// ---- checkpointing ---------------------------------------------------------------

namespace {

constexpr char kCkptMagic[9] = "CETAL001";

void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[i]) << (8 * i);
  return v;
}

void write_f32(std::ostream& os, const std::vector<double>& v) {
  std::vector<float> f(v.begin(), v.end());
  os.write(reinterpret_cast<const char*>(f.data()),
           std::streamsize(f.size() * sizeof(float)));
}

void read_f32(std::istream& is, std::vector<double>& v, std::size_t n) {
  std::vector<float> f(n);
  is.read(reinterpret_cast<char*>(f.data()), std::streamsize(n * sizeof(float)));
  v.assign(f.begin(), f.end());
}

}  // namespace

std::string config_fingerprint(const ModelConfig& cfg) {
  ModelConfig c = cfg;
  c.finalize();
  std::ostringstream os;
  os << c.input_channels << "|" << c.embed_dim << "|" << c.num_blocks << "|";
  for (int s : c.block_strides) os << s;
  os << "|" << c.num_heads << "|" << c.mlp_ratio << "|" << variant_name(c.variant)
     << "|" << (c.enhance_kind == EnhanceKind::ace ? "ace" : "mce") << "|"
     << c.reduction << "|" << c.mce_kernel << "," << c.mce_stride << "|"
     << c.num_classes << "|" << (c.local_window ? *c.local_window : -1) << "|";
  for (const auto& [lo, hi] : c.regression_ranges) os << lo << ":" << hi << ";";
  const std::string s = os.str();
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream hex;
  hex << std::hex << h;
  return hex.str();
}

void save_checkpoint(const std::string& path, const Model& model,
                     const AdamWState& st, std::size_t epoch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint '" + path + "'");
  const auto params = model.parameters();
  json header;
  header["fingerprint"] = config_fingerprint(model.config());
  header["epoch"] = epoch;
  header["adam_t"] = st.t;
  header["params"] = json::array();
  for (const auto& p : params) {
    header["params"].push_back({{"name", p.name()}, {"len", p.numel()}});
  }
  const bool moments = st.m.size() == params.size();
  header["moments"] = moments;
  os.write(kCkptMagic, 8);
  std::string hs = header.dump();
  write_u64_le(os, hs.size());
  os.write(hs.data(), std::streamsize(hs.size()));
  for (const auto& p : params) write_f32(os, p.data());
  if (moments) {
    for (const auto& m : st.m) write_f32(os, m);
    for (const auto& v : st.v) write_f32(os, v);
  }
  if (!os) throw DataError("short write on checkpoint '" + path + "'");
}

std::size_t load_checkpoint(const std::string& path, Model& model, AdamWState& st) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("missing checkpoint '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCkptMagic, 8) != 0) {
    throw DataError("bad magic in checkpoint '" + path + "'");
  }
  std::uint64_t hlen = read_u64_le(is);
  std::string hs(hlen, '\0');
  is.read(hs.data(), std::streamsize(hlen));
  json header;
  try {
    header = json::parse(hs);
  } catch (const json::exception& e) {
    throw DataError("bad checkpoint header in '" + path + "': " + e.what());
  }
  if (header.at("fingerprint").get<std::string>() !=
      config_fingerprint(model.config())) {
    throw ConfigError("checkpoint '" + path + "' was trained with a different config");
  }
  auto params = model.parameters();
  const auto& jp = header.at("params");
  if (jp.size() != params.size()) {
    throw DataError("checkpoint '" + path + "': parameter count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (jp[i].at("len").get<std::size_t>() != params[i].numel()) {
      throw DataError("checkpoint '" + path + "': length mismatch for " +
                      jp[i].at("name").get<std::string>());
    }
  }
  for (auto& p : params) read_f32(is, p.data(), p.numel());
  st = AdamWState{};
  if (header.value("moments", false)) {
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      read_f32(is, st.m[i], params[i].numel());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      read_f32(is, st.v[i], params[i].numel());
    }
    st.t = header.value("adam_t", std::size_t(0));
  }
  if (!is) throw DataError("truncated checkpoint '" + path + "'");
  return header.value("epoch", std::size_t(0));
}

// ---- training loop --------------------------------------------------------------

namespace {

double dataset_avg_map(const Model& model, const Dataset& ds,
                       const std::vector<double>& thresholds) {
  std::vector<std::vector<Segment>> preds, gts;
  for (const auto& seq : ds.sequences) {
    preds.push_back(predict(model, seq));
    gts.push_back(seq.segments);
  }
  return evaluate(preds, gts, ds.num_classes, thresholds).avg_map;
}

double global_grad_norm(const std::vector<Tensor>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    const auto& g = p.node()->grad;
    if (g.size() != p.numel()) continue;
    for (double x : g) sq += x * x;
  }
  return std::sqrt(sq);
}

}  // namespace

TrainResult train(Model& model, const Dataset& train_ds, const Dataset* val_ds,
                  const TrainConfig& cfg, const std::vector<double>& thresholds,
                  const std::string& checkpoint_path, std::ostream* log_stream,
                  AdamWState* state, std::size_t start_epoch) {
  cfg.validate();
  if (train_ds.sequences.empty()) throw DataError("train: empty dataset");

  auto params = model.parameters();
  AdamWState local_state;
  AdamWState& st = state ? *state : local_state;
  const Dataset& eval_ds = val_ds ? *val_ds : train_ds;

  // targets are a pure function of the annotations; compute once
  std::vector<DenseTargets> targets;
  for (const auto& seq : train_ds.sequences) {
    targets.push_back(assign_targets(seq.segments, seq.rate_hz,
                                     train_ds.num_classes,
                                     level_geometry(model.config(), seq.length)));
  }

  std::mt19937 shuffle_rng{std::mt19937::result_type(cfg.seed)};
  std::vector<std::size_t> order(train_ds.sequences.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult res;
  std::vector<std::vector<double>> best_params;
  AdamWState best_state;
  double best_map = -1.0;
  std::size_t best_epoch = 0;

  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr_t = lr_schedule(epoch, cfg);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), b + cfg.batch_size);
      Tensor batch_loss;
      for (std::size_t i = b; i < hi; ++i) {
        const auto& seq = train_ds.sequences[order[i]];
        Tensor li = detection_loss(model.forward(sequence_tensor(seq)),
                                   targets[order[i]]);
        batch_loss = batch_loss.defined() ? add(batch_loss, li) : li;
      }
      batch_loss = scale(batch_loss, 1.0 / double(hi - b));
      if (!std::isfinite(batch_loss.item())) {
        for (const auto& p : params) check_finite(p, p.name());
        check_finite(batch_loss, "loss");
      }
      epoch_sum += batch_loss.item() * double(hi - b);
      for (const auto& p : params) p.node()->zero_grad();
      backward(batch_loss);
      if (cfg.clip_grad_norm) {
        double n = global_grad_norm(params);
        if (n > *cfg.clip_grad_norm) {
          double f = *cfg.clip_grad_norm / n;
          for (const auto& p : params) {
            for (double& g : p.node()->grad) g *= f;
          }
        }
      }
      adamw_step(params, st, lr_t, cfg.weight_decay);
    }
    const double epoch_loss = epoch_sum / double(order.size());
    res.epoch_loss.push_back(epoch_loss);

    const bool eval_now =
        (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
    double val_map = -1.0;
    if (eval_now) {
      val_map = dataset_avg_map(model, eval_ds, thresholds);
      if (val_map > best_map) {
        best_map = val_map;
        best_epoch = epoch;
        best_params.clear();
        for (const auto& p : params) best_params.push_back(p.data());
        best_state = st;
      }
    }
    if (log_stream) {
      json line = {{"epoch", epoch}, {"lr", lr_t}, {"loss", epoch_loss}};
      if (eval_now) line["val_avg_map"] = val_map;
      (*log_stream) << line.dump() << "\n";
    }
  }

  if (!best_params.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].data() = best_params[i];
    st = best_state;
  }
  res.best_avg_map = std::max(best_map, 0.0);
  res.best_epoch = best_epoch;
  res.final_epoch = cfg.epochs;
  if (!checkpoint_path.empty()) {
    save_checkpoint(checkpoint_path, model, st, cfg.epochs);
  }
  return res;
}

}  // namespace cetal
