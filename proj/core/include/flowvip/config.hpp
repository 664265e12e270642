#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "flowvip/focal.hpp"

namespace flowvip {

/// Architecture, objective and schedule settings shared by training and inference.
struct ModelConfig {
  std::string preset = "desk";

  int channels = 16;    // C
  int token_dim = 32;   // C_e
  int blocks = 2;
  int heads = 2;
  int kernel = 3;       // K
  int groups = 2;       // G
  int local_frames = 3;     // T_l
  int nonlocal_frames = 2;  // T_nl
  focal::WindowShape window{0, 3, 3};
  focal::SplitGeometry split{7, 3, 3};
  int f3n_channels = 4;
  int flow_levels = 3;
  int flow_hidden = 32;
  int disc_channels = 8;

  double w_rec = 1;
  double w_adv = 1e-2;
  double w_flow = 1;
  double lr = 5e-4;
  double beta1 = 0;
  double beta2 = 0.99;
  int batch = 3;         // clips per iteration
  bool augment = true;   // flips and time reversal of training clips
  int64_t lr_drop_iteration = 0;  // 0 = never; otherwise lr *= 0.1 from this iteration on

  int frame_height = 64;
  int frame_width = 64;
  int sliding_window = 3;
  int sampling_rate = 4;

  bool disable_propagation = false;
  bool disable_dcn = false;
  bool disable_flow_loss = false;
  bool freeze_flow = false;
  focal::AttentionMode attention = focal::AttentionMode::focal;

  static ModelConfig desk();
  static ModelConfig paper();
  static ModelConfig from_preset(const std::string& name);

  /// Sets one key from its text form; returns false for unknown keys and
  /// throws ConfigError for malformed values.
  bool set(const std::string& key, const std::string& value);
  /// key=value lines in a fixed order, accepted back by set().
  std::string to_text() const;
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// Parses "key=value" lines ('#' comments and blank lines ignored).
std::map<std::string, std::string> parse_key_values(const std::string& text);

bool parse_bool(const std::string& key, const std::string& value);
int64_t parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);

}  // namespace flowvip
