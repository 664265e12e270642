#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowvip/flowcomp.hpp"
#include "flowvip/model.hpp"

namespace flowvip::data {

struct SceneSpec {
  uint64_t seed = 0;
  int frames = 12;
  int height = 64;
  int width = 64;
  int sprites = 2;
  int max_velocity = 4;  // pixels per frame at full resolution, per axis
  bool fractional = false;
};

struct Scene {
  Tensor video;                          // [T, H, W, 3] in [0, 1]
  flowcomp::BidirectionalFlows flows;    // at H/4 x W/4
  flowcomp::BidirectionalFlows flows_full;
  Tensor boundary;  // [T, H, W, 1], 1 within two pixels of a sprite edge in frame t or t+1
};

/// Panning smooth background plus moving textured sprites. Deterministic in the spec.
Scene render_scene(const SceneSpec& spec);

enum class MaskMode { stationary, object };

struct MaskSpec {
  MaskMode mode = MaskMode::stationary;
  uint64_t seed = 0;
};

/// [T, H, W, 1] binary masks covering between 5% and 60% of every frame.
Tensor make_masks(const MaskSpec& spec, int frames, int height, int width);

/// Mixes a base seed and an index into an independent stream seed.
uint64_t derive_seed(uint64_t base, uint64_t index);

struct SceneData {
  std::string name;
  SceneSpec spec;
  Scene scene;
  Tensor stationary_masks;
  Tensor object_masks;
  bool held_out = false;
};

struct DatasetSpec {
  uint64_t seed = 0;
  int train_scenes = 32;
  int eval_scenes = 8;
  SceneSpec scene;  // seed ignored; derived per scene
};

std::vector<SceneData> generate_dataset(const DatasetSpec& spec);

/// Writes frames (PPM), masks (PGM), flows (record file) and manifest.txt.
void write_dataset(const std::string& dir, const std::vector<SceneData>& scenes);
std::vector<SceneData> read_dataset(const std::string& dir);

void write_ppm(const std::string& path, const Tensor& frame);  // [H, W, 3]
Tensor read_ppm(const std::string& path);
void write_pgm(const std::string& path, const Tensor& mask);   // [H, W, 1], {0, 1} -> {0, 255}
Tensor read_pgm(const std::string& path);

/// A random training clip: T_l consecutive local frames plus T_nl distinct
/// non-local frames from outside the window; masks from either regime.
model::Batch sample_clip(const SceneData& scene, int local_frames, int nonlocal_frames, std::mt19937_64& rng);

/// Random horizontal flip, vertical flip and reversal of the local window,
/// each with probability 1/2; ground-truth flows are transformed to match.
model::Batch augment_clip(const model::Batch& batch, std::mt19937_64& rng);

}  // namespace flowvip::data
