#pragma once

// One declarative JSON file drives every run: model, training, data paths,
// and evaluation settings. Command-line overrides use dotted keys
// ("training.lr=1e-3"). Unknown keys are rejected.

#include <string>
#include <vector>

#include "cetal/heads.hpp"
#include "cetal/training.hpp"

namespace cetal {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_manifest;
  std::string val_manifest;          // empty: validate on the training split
  std::string output_dir = ".";
  std::string checkpoint;            // resolved against output_dir when relative
  std::vector<double> thresholds = default_tiou_thresholds();
  DecodeConfig decode;
  NmsConfig nms;

  void validate() const;             // throws ConfigError
  std::string to_json() const;       // canonical dump, used in metric-log headers
};

// Parses a config JSON document; throws ConfigError listing unknown or
// ill-typed keys.
RunConfig parse_run_config(const std::string& json_text);

// Reads the file, then applies "dotted.key=value" overrides (values parsed as
// JSON, falling back to strings) before validation.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

}  // namespace cetal
