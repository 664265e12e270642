#pragma once

#include <cstdint>
#include <string>

#include "flowvip/config.hpp"

namespace flowvip {

/// Everything a command needs: model settings plus paths, seed and schedule.
struct RunConfig {
  ModelConfig model;

  std::string data_dir = "data";
  std::string checkpoint = "checkpoint.fvip";
  std::string log = "train_log.txt";
  std::string report = "report.txt";
  std::string out_dir = "out";
  uint64_t seed = 0;
  int64_t iterations = 2000;
  int64_t checkpoint_every = 500;
  int64_t log_every = 1;

  int scenes = 32;
  int eval_scenes = 8;
  int scene_frames = 12;
  int sprites = 2;
  int max_velocity = 4;
  bool fractional_velocity = false;
  double occlusion_threshold = 1.0;

  /// Preset defaults, then keys from `text`; unknown keys throw ConfigError.
  static RunConfig from_text(const std::string& text, const std::string& preset = "");
  static RunConfig from_file(const std::string& path, const std::string& preset = "");

  void set(const std::string& key, const std::string& value);
  std::string to_text() const;
};

}  // namespace flowvip
