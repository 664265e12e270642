#include "flowvip/model.hpp"

#include <algorithm>
#include <cmath>

#include "flowvip/checkpoint.hpp"
#include "flowvip/errors.hpp"

namespace flowvip::model {

Encoder::Encoder(int in_channels, int channels, std::mt19937_64& rng)
    : conv1(in_channels, channels, 3, 2, 1, rng),
      conv2(channels, channels, 3, 2, 1, rng),
      conv3(channels, channels, 3, 1, 1, rng) {}

Tensor Encoder::operator()(const Tensor& x) const {
  return leaky_relu(conv3(leaky_relu(conv2(leaky_relu(conv1(x))))));
}

void Encoder::collect(const std::string& prefix, nn::ParameterList& out) const {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
  conv3.collect(prefix + ".conv3", out);
}

Decoder::Decoder(int channels, std::mt19937_64& rng)
    : conv1(channels, channels, 3, 1, 1, rng),
      conv2(channels, channels / 2, 3, 1, 1, rng),
      conv3(channels / 2, 3, 3, 1, 1, rng) {}

Tensor Decoder::operator()(const Tensor& x) const {
  Tensor y = leaky_relu(conv1(upsample_nearest2x(x)));
  y = leaky_relu(conv2(upsample_nearest2x(y)));
  return sigmoid(conv3(y));
}

void Decoder::collect(const std::string& prefix, nn::ParameterList& out) const {
  conv1.collect(prefix + ".conv1", out);
  conv2.collect(prefix + ".conv2", out);
  conv3.collect(prefix + ".conv3", out);
}

Generator::Generator(const ModelConfig& cfg, std::mt19937_64& rng) : config(cfg) {
  config.validate();
  const int C = cfg.channels;
  encoder = Encoder(4, C, rng);
  flownet = flowcomp::FlowPyramidNet(4, cfg.flow_levels, cfg.flow_hidden, rng);
  backward_cell = propagation::PropagationCell(C, cfg.kernel, cfg.groups, rng);
  forward_cell = propagation::PropagationCell(C, cfg.kernel, cfg.groups, rng);
  fusion = propagation::Fusion(C, rng);
  split = focal::SoftSplit(C, cfg.token_dim, cfg.split, rng);
  for (int b = 0; b < cfg.blocks; ++b) {
    blocks.emplace_back(cfg.token_dim, cfg.heads, cfg.f3n_channels, cfg.window, cfg.split, rng);
  }
  composite = focal::SoftComposite(C, cfg.token_dim, cfg.split, rng);
  decoder = Decoder(C, rng);
}

Tensor Generator::corrupted_input(const Tensor& frames, const Tensor& masks) {
  return concat({frames * (Scalar(1) - masks), masks}, 3);
}

GeneratorOutput Generator::forward(const Tensor& frames, const Tensor& masks, int64_t local_frames) const {
  if (frames.rank() != 4 || frames.dim(3) != 3) {
    throw ShapeError("generator: frames must be [T,H,W,3], got " + shape_str(frames.shape()));
  }
  Shape ms = frames.shape();
  ms.back() = 1;
  if (masks.shape() != ms) {
    throw ShapeError("generator: masks " + shape_str(masks.shape()) + " do not match frames " +
                     shape_str(frames.shape()));
  }
  const int64_t T = frames.dim(0), L = local_frames;
  if (L < 1 || L > T) throw ShapeError("generator: local frame count out of range");
  const int64_t h = frames.dim(1) / 4, w = frames.dim(2) / 4;

  const Tensor input = corrupted_input(frames, masks);
  const Tensor feats = encoder(input);
  const Tensor local = L == T ? feats : narrow(feats, 0, 0, L);

  GeneratorOutput out;
  if (L >= 2) {
    const Tensor small = flowcomp::downsample_quarter(narrow(input, 0, 0, L));
    if (config.freeze_flow) {
      NoGradGuard guard;
      out.flows = flowcomp::estimate_bidirectional(small, flownet);
    } else {
      out.flows = flowcomp::estimate_bidirectional(small, flownet);
    }
  }

  Tensor fused = local;
  if (!config.disable_propagation && L >= 2) {
    const bool dcn = !config.disable_dcn;
    const Tensor bwd = propagation::propagate_backward(local, out.flows.forward, backward_cell, dcn);
    const Tensor fwd = propagation::propagate_forward(local, out.flows.backward, forward_cell, dcn);
    fused = fusion(fwd, bwd);
  }
  const Tensor all = L == T ? fused : concat({fused, narrow(feats, 0, L, T - L)}, 0);

  Tensor z = split(all);
  for (const auto& blk : blocks) z = blk(z, h, w, config.attention);
  out.frames = decoder(all + composite(z, h, w));
  return out;
}

nn::ParameterList Generator::parameters() const {
  nn::ParameterList out;
  encoder.collect("encoder", out);
  flownet.collect("flowcomp", out);
  backward_cell.collect("propagation.backward", out);
  forward_cell.collect("propagation.forward", out);
  fusion.collect("fusion", out);
  split.collect("blocks.split", out);
  for (size_t b = 0; b < blocks.size(); ++b) blocks[b].collect("blocks." + std::to_string(b), out);
  composite.collect("blocks.composite", out);
  decoder.collect("decoder", out);
  return out;
}

nn::ParameterList Generator::group(const std::string& name) const {
  nn::ParameterList out;
  for (auto& p : parameters())
    if (p.name.rfind(name + ".", 0) == 0) out.push_back(p);
  return out;
}

Discriminator::Discriminator(int base, std::mt19937_64& rng) {
  const int ch[6] = {3, base, 2 * base, 4 * base, 4 * base, 1};
  Conv3dGeometry geo;
  geo.stride = {1, 2, 2};
  geo.padding = {1, 1, 1};
  for (int i = 0; i < 5; ++i) convs.emplace_back(ch[i], ch[i + 1], std::array<int, 3>{3, 3, 3}, geo, rng);
}

Tensor Discriminator::operator()(const Tensor& clip) const {
  Tensor x = clip;
  for (size_t i = 0; i < convs.size(); ++i) {
    x = convs[i](x);
    if (i + 1 < convs.size()) x = leaky_relu(x);
  }
  return x;
}

nn::ParameterList Discriminator::parameters() const {
  nn::ParameterList out;
  for (size_t i = 0; i < convs.size(); ++i) convs[i].collect("disc.conv" + std::to_string(i), out);
  return out;
}

LossTerms generator_losses(const Tensor& output, const Tensor& target, const flowcomp::BidirectionalFlows& pred,
                           const flowcomp::BidirectionalFlows& gt, const Tensor& d_fake, const LossWeights& w) {
  if (output.shape() != target.shape()) {
    throw ShapeError("losses: output " + shape_str(output.shape()) + " vs target " + shape_str(target.shape()));
  }
  LossTerms t;
  t.rec = mean(abs(output - target));
  t.adv = d_fake.defined() ? neg(mean(d_fake)) : Tensor::scalar(0);
  t.flow = flowcomp::flow_loss(pred, gt);
  t.total = t.rec * w.rec;
  if (w.adv != 0) t.total = t.total + t.adv * w.adv;
  if (w.flow != 0) t.total = t.total + t.flow * w.flow;
  return t;
}

Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake) {
  if (d_real.shape() != d_fake.shape()) {
    throw ShapeError("discriminator_loss: " + shape_str(d_real.shape()) + " vs " + shape_str(d_fake.shape()));
  }
  return mean(relu(Scalar(1) - d_real)) + mean(relu(d_fake + Scalar(1)));
}

Trainer::Trainer(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  std::mt19937_64 rng(seed);
  generator = Generator(cfg, rng);
  discriminator = Discriminator(cfg.disc_channels, rng);
  nn::ParameterList gp;
  for (auto& p : generator.parameters()) {
    if (cfg.freeze_flow && p.name.rfind("flowcomp.", 0) == 0) continue;
    gp.push_back(p);
  }
  if (cfg.freeze_flow) nn::set_requires_grad(generator.group("flowcomp"), false);
  const AdamOptions opts{static_cast<Scalar>(cfg.lr), static_cast<Scalar>(cfg.beta1), static_cast<Scalar>(cfg.beta2),
                         Scalar(1e-8)};
  g_opt_ = std::make_unique<Adam>(gp, opts);
  d_opt_ = std::make_unique<Adam>(discriminator.parameters(), opts);
}

LossWeights Trainer::weights() const {
  LossWeights w;
  w.rec = static_cast<Scalar>(cfg_.w_rec);
  w.adv = static_cast<Scalar>(cfg_.w_adv);
  w.flow = cfg_.disable_flow_loss ? Scalar(0) : static_cast<Scalar>(cfg_.w_flow);
  return w;
}

StepRecord Trainer::train_step(const Batch& batch) { return train_step(std::vector<Batch>{batch}); }

StepRecord Trainer::train_step(const std::vector<Batch>& batches) {
  if (batches.empty()) throw ConfigError("train_step: empty batch");
  ++iteration_;
  if (cfg_.lr_drop_iteration > 0 && iteration_ >= cfg_.lr_drop_iteration) {
    g_opt_->set_lr(static_cast<Scalar>(cfg_.lr * 0.1));
    d_opt_->set_lr(static_cast<Scalar>(cfg_.lr * 0.1));
  }
  const LossWeights w = weights();
  const Scalar share = Scalar(1) / static_cast<Scalar>(batches.size());
  std::vector<Tensor> fakes;
  std::vector<GeneratorOutput> outs;
  for (const Batch& b : batches) {
    outs.push_back(generator.forward(b.frames, b.masks, b.local_frames));
    fakes.push_back(outs.back().frames.detach());
  }

  StepRecord rec;
  rec.iteration = iteration_;
  d_opt_->zero_grad();
  for (size_t i = 0; i < batches.size(); ++i) {
    const Tensor d_loss = discriminator_loss(discriminator(batches[i].frames), discriminator(fakes[i])) * share;
    d_loss.backward();
    rec.disc += d_loss.item();
  }
  d_opt_->step();

  const nn::ParameterList dparams = discriminator.parameters();
  nn::set_requires_grad(dparams, false);
  try {
    g_opt_->zero_grad();
    for (size_t i = 0; i < batches.size(); ++i) {
      const Tensor d_fake = w.adv != 0 ? discriminator(outs[i].frames) : Tensor();
      const LossTerms terms =
          generator_losses(outs[i].frames, batches[i].frames, outs[i].flows, batches[i].gt_flows, d_fake, w);
      (terms.total * share).backward();
      rec.total += terms.total.item() * share;
      rec.rec += terms.rec.item() * share;
      rec.adv += terms.adv.item() * share;
      rec.flow += terms.flow.item() * share;
    }
    g_opt_->step();
  } catch (...) {
    nn::set_requires_grad(dparams, true);
    throw;
  }
  nn::set_requires_grad(dparams, true);
  return rec;
}

namespace {

void prefixed(nn::ParameterList& out, const nn::ParameterList& in, const std::string& prefix) {
  for (const auto& p : in) out.push_back({prefix + p.name, p.tensor});
}

nn::ParameterList strip(const nn::ParameterList& in, const std::string& prefix) {
  nn::ParameterList out;
  for (const auto& p : in)
    if (p.name.rfind(prefix, 0) == 0) out.push_back({p.name.substr(prefix.size()), p.tensor});
  return out;
}

}  // namespace

void Trainer::save(const std::string& path, const std::string& config_echo) const {
  nn::ParameterList records = generator.parameters();
  prefixed(records, discriminator.parameters(), "");
  prefixed(records, g_opt_->state(), "optim.g.");
  prefixed(records, d_opt_->state(), "optim.d.");
  records.push_back({"trainer.iteration", Tensor::scalar(static_cast<Scalar>(iteration_))});
  const std::string tmp = path + ".tmp";
  io::write_records(tmp, config_echo, records);
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot move checkpoint into " + path);
}

void Trainer::load(const std::string& path) {
  const io::RecordFile file = io::read_records(path);
  io::assign_records(generator.parameters(), file.records);
  io::assign_records(discriminator.parameters(), file.records);
  g_opt_->load_state(strip(file.records, "optim.g."));
  d_opt_->load_state(strip(file.records, "optim.d."));
  for (const auto& r : file.records)
    if (r.name == "trainer.iteration") iteration_ = static_cast<int64_t>(r.tensor.item());
}

void load_generator(Generator& g, const std::string& path) {
  io::assign_records(g.parameters(), io::read_records(path).records);
}

std::vector<int64_t> nonlocal_candidates(int64_t frames, int64_t begin, int64_t end, int64_t rate) {
  std::vector<int64_t> out;
  if (rate < 1) throw ConfigError("sampling rate must be >= 1");
  for (int64_t f = 0; f < frames; f += rate)
    if (f < begin || f >= end) out.push_back(f);
  return out;
}

std::vector<int64_t> select_nonlocal(const std::vector<int64_t>& candidates, int64_t begin, int64_t end,
                                     int64_t count) {
  auto dist = [&](int64_t f) { return f < begin ? begin - f : f - (end - 1); };
  std::vector<int64_t> sorted = candidates;
  std::stable_sort(sorted.begin(), sorted.end(), [&](int64_t a, int64_t b) {
    const int64_t da = dist(a), db = dist(b);
    return da != db ? da < db : a < b;
  });
  if (static_cast<int64_t>(sorted.size()) > count) sorted.resize(std::max<int64_t>(count, 0));
  std::sort(sorted.begin(), sorted.end());
  return sorted;
}

Tensor composite_output(const Tensor& output, const Tensor& input, const Tensor& masks) {
  return output * masks + input * (Scalar(1) - masks);
}

Tensor sliding_window_inference(const Tensor& video, const Tensor& masks, const Generator& g) {
  NoGradGuard guard;
  const int64_t T = video.dim(0);
  const int64_t win = g.config.sliding_window;
  std::vector<Tensor> parts;
  for (int64_t begin = 0; begin < T; begin += win) {
    const int64_t end = std::min(begin + win, T);
    std::vector<int64_t> idx;
    for (int64_t f = begin; f < end; ++f) idx.push_back(f);
    for (int64_t f : select_nonlocal(nonlocal_candidates(T, begin, end, g.config.sampling_rate), begin, end,
                                     g.config.nonlocal_frames))
      idx.push_back(f);
    const Tensor clip = index_select(video, idx);
    const Tensor clip_masks = index_select(masks, idx);
    const Tensor out = g.forward(clip, clip_masks, end - begin).frames;
    const int64_t L = end - begin;
    parts.push_back(composite_output(narrow(out, 0, 0, L), narrow(clip, 0, 0, L), narrow(clip_masks, 0, 0, L)));
  }
  return concat(parts, 0);
}

}  // namespace flowvip::model
