#include "cetal/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "cetal/errors.hpp"
#include "json.hpp"

using nlohmann::json;

namespace cetal {

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& known,
                    const std::string& scope) {
  std::string bad;
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) bad += (bad.empty() ? "" : ", ") + scope + "." + key;
  }
  if (!bad.empty()) throw ConfigError("config: unknown keys: " + bad);
}

template <typename T>
void take(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for key '" + std::string(key) + "'");
  }
}

void parse_model(const json& j, ModelConfig& m) {
  reject_unknown(j, {"input_channels", "embed_dim", "num_blocks", "block_strides",
                     "num_heads", "mlp_ratio", "variant", "enhance", "reduction",
                     "ace_beta_learnable", "ace_beta_init", "mce_kernel",
                     "mce_stride", "num_classes", "local_window",
                     "regression_ranges"},
                 "model");
  take(j, "input_channels", m.input_channels);
  take(j, "embed_dim", m.embed_dim);
  take(j, "num_blocks", m.num_blocks);
  take(j, "block_strides", m.block_strides);
  take(j, "num_heads", m.num_heads);
  take(j, "mlp_ratio", m.mlp_ratio);
  if (j.contains("variant")) m.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("enhance")) {
    std::string e = j.at("enhance").get<std::string>();
    if (e == "ace") {
      m.enhance_kind = EnhanceKind::ace;
    } else if (e == "mce") {
      m.enhance_kind = EnhanceKind::mce;
    } else {
      throw ConfigError("config: enhance must be 'ace' or 'mce', got '" + e + "'");
    }
  }
  take(j, "reduction", m.reduction);
  take(j, "ace_beta_learnable", m.ace_beta.learnable);
  take(j, "ace_beta_init", m.ace_beta.init);
  take(j, "mce_kernel", m.mce_kernel);
  take(j, "mce_stride", m.mce_stride);
  take(j, "num_classes", m.num_classes);
  if (j.contains("local_window")) m.local_window = j.at("local_window").get<int>();
  if (j.contains("regression_ranges")) {
    m.regression_ranges.clear();
    for (const auto& band : j.at("regression_ranges")) {
      if (!band.is_array() || band.size() != 2) {
        throw ConfigError("config: regression_ranges entries must be [lo, hi]");
      }
      m.regression_ranges.emplace_back(band[0].get<double>(), band[1].get<double>());
    }
  }
}

void parse_train(const json& j, TrainConfig& t) {
  reject_unknown(j, {"lr", "weight_decay", "epochs", "warmup_epochs", "batch_size",
                     "seed", "clip_grad_norm", "eval_every"},
                 "training");
  take(j, "lr", t.lr);
  take(j, "weight_decay", t.weight_decay);
  take(j, "epochs", t.epochs);
  take(j, "warmup_epochs", t.warmup_epochs);
  take(j, "batch_size", t.batch_size);
  take(j, "seed", t.seed);
  if (j.contains("clip_grad_norm")) t.clip_grad_norm = j.at("clip_grad_norm").get<double>();
  take(j, "eval_every", t.eval_every);
}

void parse_eval(const json& j, RunConfig& rc) {
  reject_unknown(j, {"thresholds", "score_threshold", "pre_nms_topk", "nms_tiou",
                     "nms_method", "soft_sigma", "soft_min_score"},
                 "eval");
  take(j, "thresholds", rc.thresholds);
  take(j, "score_threshold", rc.decode.score_threshold);
  take(j, "pre_nms_topk", rc.decode.pre_nms_topk);
  take(j, "nms_tiou", rc.nms.tiou_threshold);
  if (j.contains("nms_method")) {
    std::string m = j.at("nms_method").get<std::string>();
    if (m == "hard") {
      rc.nms.method = NmsMethod::hard;
    } else if (m == "soft") {
      rc.nms.method = NmsMethod::soft;
    } else {
      throw ConfigError("config: nms_method must be 'hard' or 'soft', got '" + m + "'");
    }
  }
  take(j, "soft_sigma", rc.nms.soft_sigma);
  take(j, "soft_min_score", rc.nms.soft_min_score);
}

}  // namespace

void RunConfig::validate() const {
  ModelConfig m = model;
  m.finalize();
  train.validate();
  if (thresholds.empty()) throw ConfigError("config: eval.thresholds must be non-empty");
  for (double t : thresholds) {
    if (t < 0 || t > 1) throw ConfigError("config: tIoU thresholds must lie in [0,1]");
  }
}

std::string RunConfig::to_json() const {
  json j;
  j["model"] = {{"input_channels", model.input_channels},
                {"embed_dim", model.embed_dim},
                {"num_blocks", model.num_blocks},
                {"num_heads", model.num_heads},
                {"mlp_ratio", model.mlp_ratio},
                {"variant", variant_name(model.variant)},
                {"enhance", model.enhance_kind == EnhanceKind::ace ? "ace" : "mce"},
                {"reduction", model.reduction},
                {"num_classes", model.num_classes}};
  j["training"] = {{"lr", train.lr},
                   {"weight_decay", train.weight_decay},
                   {"epochs", train.epochs},
                   {"warmup_epochs", train.warmup_epochs},
                   {"batch_size", train.batch_size},
                   {"seed", train.seed},
                   {"eval_every", train.eval_every}};
  j["data"] = {{"manifest", train_manifest}, {"val_manifest", val_manifest}};
  j["eval"] = {{"thresholds", thresholds}};
  j["output"] = {{"dir", output_dir}, {"checkpoint", checkpoint}};
  return j.dump();
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: root must be a JSON object");
  reject_unknown(j, {"model", "training", "data", "eval", "output"}, "<root>");

  RunConfig rc;
  if (j.contains("model")) parse_model(j.at("model"), rc.model);
  if (j.contains("training")) parse_train(j.at("training"), rc.train);
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, {"manifest", "val_manifest"}, "data");
    take(d, "manifest", rc.train_manifest);
    take(d, "val_manifest", rc.val_manifest);
  }
  if (j.contains("eval")) parse_eval(j.at("eval"), rc);
  if (j.contains("output")) {
    const json& o = j.at("output");
    reject_unknown(o, {"dir", "checkpoint"}, "output");
    take(o, "dir", rc.output_dir);
    take(o, "checkpoint", rc.checkpoint);
  }
  rc.validate();
  return rc;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot read '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': invalid JSON: " + e.what());
  }
  for (const std::string& ov : overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("config: override must be dotted.key=value, got '" + ov + "'");
    }
    std::string keypath = ov.substr(0, eq), value = ov.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // bare strings are allowed unquoted
    }
    json* cur = &j;
    std::stringstream ss(keypath);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("config: empty override key");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur = &(*cur)[parts[i]];
    (*cur)[parts.back()] = parsed;
  }
  return parse_run_config(j.dump());
}

}  // namespace cetal
