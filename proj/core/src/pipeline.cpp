#include "flowvip/pipeline.hpp"

#include <cstdio>

#include "flowvip/errors.hpp"
#include "flowvip/optim.hpp"

namespace flowvip::pipeline {

std::string log_header() { return "iteration L_rec L_adv L_flow L_D L_total"; }

std::string log_row(const model::StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld %.9e %.9e %.9e %.9e %.9e", static_cast<long long>(r.iteration),
                static_cast<double>(r.rec), static_cast<double>(r.adv), static_cast<double>(r.flow),
                static_cast<double>(r.disc), static_cast<double>(r.total));
  return buf;
}

std::vector<const data::SceneData*> split(const std::vector<data::SceneData>& scenes, bool held_out) {
  std::vector<const data::SceneData*> out;
  for (const auto& s : scenes)
    if (s.held_out == held_out) out.push_back(&s);
  return out;
}

void train(model::Trainer& trainer, const std::vector<const data::SceneData*>& scenes, const TrainOptions& opts) {
  if (scenes.empty()) throw DataError("no training scenes");
  const auto& cfg = trainer.generator.config;
  while (trainer.iteration() < opts.iterations) {
    std::mt19937_64 rng(data::derive_seed(opts.seed, static_cast<uint64_t>(trainer.iteration())));
    std::vector<model::Batch> batches;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& scene = *scenes[std::uniform_int_distribution<size_t>(0, scenes.size() - 1)(rng)];
      model::Batch clip = data::sample_clip(scene, cfg.local_frames, cfg.nonlocal_frames, rng);
      batches.push_back(cfg.augment ? data::augment_clip(clip, rng) : std::move(clip));
    }
    const model::StepRecord rec = trainer.train_step(batches);
    if (opts.on_step) opts.on_step(rec);
    if (!opts.checkpoint.empty() && opts.checkpoint_every > 0 && trainer.iteration() % opts.checkpoint_every == 0) {
      trainer.save(opts.checkpoint, opts.config_echo);
    }
  }
  if (!opts.checkpoint.empty()) trainer.save(opts.checkpoint, opts.config_echo);
}

void pretrain_flow(model::Generator& g, const std::vector<const data::SceneData*>& scenes, int64_t iterations,
                   double lr, uint64_t seed) {
  if (scenes.empty()) throw DataError("no scenes for flow pretraining");
  const nn::ParameterList params = g.group("flowcomp");
  const bool was_trainable = !params.empty() && params.front().tensor.requires_grad();
  nn::set_requires_grad(params, true);
  Adam opt(params, {static_cast<Scalar>(lr), Scalar(0.9), Scalar(0.99), Scalar(1e-8)});
  const int L = std::max(2, g.config.local_frames);
  for (int64_t it = 0; it < iterations; ++it) {
    std::mt19937_64 rng(data::derive_seed(seed, static_cast<uint64_t>(it)));
    const auto& scene = *scenes[std::uniform_int_distribution<size_t>(0, scenes.size() - 1)(rng)];
    const int T = scene.spec.frames;
    if (T < L) continue;
    const int begin = std::uniform_int_distribution<int>(0, T - L)(rng);
    const Tensor clip = narrow(scene.scene.video, 0, begin, L);
    Shape ms = clip.shape();
    ms.back() = 1;
    const Tensor small = flowcomp::downsample_quarter(model::Generator::corrupted_input(clip, Tensor::zeros(ms)));
    flowcomp::BidirectionalFlows gt;
    gt.forward = narrow(scene.scene.flows.forward, 0, begin, L - 1);
    gt.backward = narrow(scene.scene.flows.backward, 0, begin, L - 1);
    const Tensor loss = flowcomp::flow_loss(flowcomp::estimate_bidirectional(small, g.flownet), gt);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  opt.zero_grad();
  nn::set_requires_grad(params, was_trainable);
}

metrics::EvalReport evaluate(const model::Generator& g, const std::vector<const data::SceneData*>& scenes,
                             double threshold) {
  metrics::EvalReport report;
  for (const auto* s : scenes) {
    const Tensor out = model::sliding_window_inference(s->scene.video, s->stationary_masks, g);
    report.videos.push_back(metrics::evaluate_video(s->name, out, s->scene.video, s->scene.flows_full, threshold));
  }
  return report;
}

metrics::EvalReport copy_input_baseline(const std::vector<const data::SceneData*>& scenes, double threshold) {
  metrics::EvalReport report;
  report.label = "copy-input baseline";
  for (const auto* s : scenes) {
    const Tensor out = s->scene.video * (Scalar(1) - s->stationary_masks);
    report.videos.push_back(metrics::evaluate_video(s->name, out, s->scene.video, s->scene.flows_full, threshold));
  }
  return report;
}

double flow_epe(const model::Generator& g, const std::vector<const data::SceneData*>& scenes) {
  NoGradGuard guard;
  double total = 0;
  int64_t n = 0;
  for (const auto* s : scenes) {
    if (s->scene.flows.count() == 0) continue;
    const Tensor small = flowcomp::downsample_quarter(
        model::Generator::corrupted_input(s->scene.video, s->stationary_masks));
    const auto pred = flowcomp::estimate_bidirectional(small, g.flownet);
    total += static_cast<double>(flowcomp::endpoint_error(pred, s->scene.flows)) * s->scene.flows.count();
    n += s->scene.flows.count();
  }
  return n == 0 ? 0 : total / static_cast<double>(n);
}

}  // namespace flowvip::pipeline
