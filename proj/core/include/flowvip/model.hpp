#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "flowvip/config.hpp"
#include "flowvip/flowcomp.hpp"
#include "flowvip/focal.hpp"
#include "flowvip/nn.hpp"
#include "flowvip/optim.hpp"
#include "flowvip/propagation.hpp"

namespace flowvip::model {

/// Trainable groups, in the order reported by Generator::groups().
inline constexpr const char* kGroups[] = {"encoder", "flowcomp", "propagation", "fusion", "blocks", "decoder"};

class Encoder {
 public:
  Encoder() = default;
  Encoder(int in_channels, int channels, std::mt19937_64& rng);
  /// [T, H, W, in] -> [T, H/4, W/4, C].
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, nn::ParameterList& out) const;

  nn::Conv2d conv1, conv2, conv3;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(int channels, std::mt19937_64& rng);
  /// [T, h, w, C] -> [T, 4h, 4w, 3] in (0, 1).
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, nn::ParameterList& out) const;

  nn::Conv2d conv1, conv2, conv3;
};

struct GeneratorOutput {
  Tensor frames;                    // [T, H, W, 3]
  flowcomp::BidirectionalFlows flows;  // between the local frames
};

class Generator {
 public:
  Generator() = default;
  Generator(const ModelConfig& cfg, std::mt19937_64& rng);

  /// frames/masks: [T, H, W, 3] / [T, H, W, 1]; the first `local_frames` are
  /// the local window, the rest non-local references.
  GeneratorOutput forward(const Tensor& frames, const Tensor& masks, int64_t local_frames) const;

  /// Masked frames plus mask channel, the encoder and flow-net input.
  static Tensor corrupted_input(const Tensor& frames, const Tensor& masks);

  nn::ParameterList parameters() const;
  /// Parameters whose name starts with "<group>.".
  nn::ParameterList group(const std::string& name) const;

  ModelConfig config;
  Encoder encoder;
  flowcomp::FlowPyramidNet flownet;
  propagation::PropagationCell backward_cell, forward_cell;
  propagation::Fusion fusion;
  focal::SoftSplit split;
  std::vector<focal::FocalBlock> blocks;
  focal::SoftComposite composite;
  Decoder decoder;
};

/// Spatio-temporal patch discriminator: five stride-(1,2,2) 3D convolutions.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(int base_channels, std::mt19937_64& rng);

  /// clip [T, H, W, 3] -> score map [T, H/32, W/32, 1].
  Tensor operator()(const Tensor& clip) const;
  nn::ParameterList parameters() const;

  std::vector<nn::Conv3d> convs;
};

struct LossWeights {
  Scalar rec = 1;
  Scalar adv = Scalar(1e-2);
  Scalar flow = 1;
};

struct LossTerms {
  Tensor total, rec, adv, flow;
};

/// L_rec = mean|out - target|, L_adv = -mean(d_fake), flow loss as in flowcomp;
/// total = weighted sum. d_fake may be undefined (L_adv = 0), likewise gt flows
/// with zero predicted pairs.
LossTerms generator_losses(const Tensor& output, const Tensor& target, const flowcomp::BidirectionalFlows& pred,
                           const flowcomp::BidirectionalFlows& gt, const Tensor& d_fake, const LossWeights& w);

/// mean(relu(1 - d_real)) + mean(relu(1 + d_fake)).
Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake);

/// One training clip; frames are the clean targets, masks mark the corruption.
struct Batch {
  Tensor frames;  // [T, H, W, 3]
  Tensor masks;   // [T, H, W, 1]
  flowcomp::BidirectionalFlows gt_flows;  // between the local frames, at H/4 x W/4
  int64_t local_frames = 0;
};

struct StepRecord {
  int64_t iteration = 0;
  Scalar total = 0, rec = 0, adv = 0, flow = 0, disc = 0;
};

class Trainer {
 public:
  Trainer(const ModelConfig& cfg, uint64_t seed);

  /// One discriminator update on (target, detached output), then one
  /// generator update on the weighted total. Throws NumericError on a
  /// non-finite loss before any parameter is touched by that update.
  StepRecord train_step(const Batch& batch);
  /// As above with gradients averaged over several clips.
  StepRecord train_step(const std::vector<Batch>& batches);

  /// Writes generator, discriminator and optimizer state plus the config echo.
  void save(const std::string& path, const std::string& config_echo) const;
  /// Restores a checkpoint written by save() with the same architecture.
  void load(const std::string& path);

  int64_t iteration() const { return iteration_; }
  LossWeights weights() const;

  Generator generator;
  Discriminator discriminator;

 private:
  ModelConfig cfg_;
  std::unique_ptr<Adam> g_opt_, d_opt_;
  int64_t iteration_ = 0;
};

/// Loads only generator weights from a trainer checkpoint.
void load_generator(Generator& g, const std::string& path);

/// Frames outside [begin, end) at multiples of `rate`, in ascending order.
std::vector<int64_t> nonlocal_candidates(int64_t frames, int64_t begin, int64_t end, int64_t rate);
/// Up to `count` candidates, nearest to the window first (ties: lower index),
/// returned in ascending order.
std::vector<int64_t> select_nonlocal(const std::vector<int64_t>& candidates, int64_t begin, int64_t end,
                                     int64_t count);

/// output * mask + input * (1 - mask).
Tensor composite_output(const Tensor& output, const Tensor& input, const Tensor& masks);

/// Whole-video inference with windows of cfg.sliding_window local frames.
Tensor sliding_window_inference(const Tensor& video, const Tensor& masks, const Generator& g);

}  // namespace flowvip::model
