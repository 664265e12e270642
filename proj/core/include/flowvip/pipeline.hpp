#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "flowvip/data.hpp"
#include "flowvip/metrics.hpp"
#include "flowvip/model.hpp"

namespace flowvip::pipeline {

struct TrainOptions {
  int64_t iterations = 0;
  uint64_t seed = 0;  // clip sampling stream
  std::string checkpoint;        // empty = never write
  std::string config_echo;
  int64_t checkpoint_every = 0;  // 0 = only at the end
  std::function<void(const model::StepRecord&)> on_step;
};

/// "iteration L_rec L_adv L_flow L_D L_total" with fixed formatting.
std::string log_header();
std::string log_row(const model::StepRecord& r);

std::vector<const data::SceneData*> split(const std::vector<data::SceneData>& scenes, bool held_out);

/// Runs train_step until trainer.iteration() reaches opts.iterations. The
/// clip stream is derived from (seed, iteration), so resumed runs continue
/// with the same clips.
void train(model::Trainer& trainer, const std::vector<const data::SceneData*>& scenes, const TrainOptions& opts);

/// Fits only the flow network on clean frame pairs (mask channel zero).
void pretrain_flow(model::Generator& g, const std::vector<const data::SceneData*>& scenes, int64_t iterations,
                   double lr, uint64_t seed);

/// Sliding-window inference plus metrics on each scene under its stationary masks.
metrics::EvalReport evaluate(const model::Generator& g, const std::vector<const data::SceneData*>& scenes,
                             double occlusion_threshold = 1.0);

/// Masked region filled with zeros, no model.
metrics::EvalReport copy_input_baseline(const std::vector<const data::SceneData*>& scenes,
                                        double occlusion_threshold = 1.0);

/// Mean endpoint error of the generator's flow network on the corrupted
/// (stationary-mask) scenes against ground truth.
double flow_epe(const model::Generator& g, const std::vector<const data::SceneData*>& scenes);

}  // namespace flowvip::pipeline
