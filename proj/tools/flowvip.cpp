#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flowvip/data.hpp"
#include "flowvip/errors.hpp"
#include "flowvip/geom.hpp"
#include "flowvip/model.hpp"
#include "flowvip/pipeline.hpp"
#include "flowvip/run_config.hpp"
#include "flowvip/testing/properties.hpp"

namespace fs = std::filesystem;
using namespace flowvip;

namespace {

enum Exit { kOk = 0, kFailed = 1, kConfig = 2, kData = 3, kNumeric = 4, kOther = 5 };

struct Common {
  std::string config;
  std::string preset;
  std::optional<uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
  std::optional<bool> disable_propagation, disable_dcn, disable_flow_loss, freeze_flow;
  std::string attention;
  std::optional<int64_t> iterations;
  std::string data_dir, checkpoint;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key=value config file");
  app->add_option("--preset", c.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--out", c.out, "output path");
  app->add_option("--set", c.sets, "extra key=value override (repeatable)");
  app->add_option("--data", c.data_dir, "dataset directory");
  app->add_option("--checkpoint", c.checkpoint, "checkpoint path");
  app->add_option("--iterations", c.iterations, "training iterations");
  app->add_flag("--disable_propagation,--disable-propagation,!--enable-propagation", c.disable_propagation,
                "bypass flow-guided feature propagation");
  app->add_flag("--disable_dcn,--disable-dcn", c.disable_dcn, "align by flow warping only");
  app->add_flag("--disable_flow_loss,--disable-flow-loss", c.disable_flow_loss, "drop the flow loss term");
  app->add_flag("--freeze_flow,--freeze-flow", c.freeze_flow, "keep the flow network fixed");
  app->add_option("--attention", c.attention, "focal, local or global")
      ->check(CLI::IsMember({"focal", "local", "global"}));
}

RunConfig resolve(const Common& c) {
  RunConfig rc = c.config.empty() ? RunConfig::from_text("", c.preset) : RunConfig::from_file(c.config, c.preset);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) rc.seed = *c.seed;
  if (c.disable_propagation) rc.model.disable_propagation = *c.disable_propagation;
  if (c.disable_dcn) rc.model.disable_dcn = *c.disable_dcn;
  if (c.disable_flow_loss) rc.model.disable_flow_loss = *c.disable_flow_loss;
  if (c.freeze_flow) rc.model.freeze_flow = *c.freeze_flow;
  if (!c.attention.empty()) rc.model.attention = focal::parse_attention_mode(c.attention);
  if (c.iterations) rc.iterations = *c.iterations;
  if (!c.data_dir.empty()) rc.data_dir = c.data_dir;
  if (!c.checkpoint.empty()) rc.checkpoint = c.checkpoint;
  rc.model.validate();
  return rc;
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw DataError("cannot create directory " + parent.string() + ": " + ec.message());
  }
}

int cmd_gen(const RunConfig& rc, const Common& c) {
  const std::string dir = c.out.empty() ? rc.data_dir : c.out;
  data::DatasetSpec spec;
  spec.seed = rc.seed;
  spec.train_scenes = rc.scenes;
  spec.eval_scenes = rc.eval_scenes;
  spec.scene.frames = rc.scene_frames;
  spec.scene.height = rc.model.frame_height;
  spec.scene.width = rc.model.frame_width;
  spec.scene.sprites = rc.sprites;
  spec.scene.max_velocity = rc.max_velocity;
  spec.scene.fractional = rc.fractional_velocity;
  const auto scenes = data::generate_dataset(spec);
  data::write_dataset(dir, scenes);
  std::cout << "wrote " << scenes.size() << " scenes (" << rc.scenes << " train, " << rc.eval_scenes
            << " held out) to " << dir << "\n";
  return kOk;
}

int cmd_train(RunConfig rc, const Common& c, bool resume) {
  if (!c.out.empty()) {
    rc.checkpoint = (fs::path(c.out) / "checkpoint.fvip").string();
    rc.log = (fs::path(c.out) / "train_log.txt").string();
  }
  const auto scenes = data::read_dataset(rc.data_dir);
  const auto train_set = pipeline::split(scenes, false);
  model::Trainer trainer(rc.model, rc.seed);
  const bool resuming = resume && fs::exists(rc.checkpoint);
  if (resuming) trainer.load(rc.checkpoint);
  ensure_parent(rc.checkpoint);
  ensure_parent(rc.log);
  std::ofstream log(rc.log, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write log " + rc.log);
  if (!resuming) log << pipeline::log_header() << "\n";

  const auto t0 = std::chrono::steady_clock::now();
  pipeline::TrainOptions opts;
  opts.iterations = rc.iterations;
  opts.seed = rc.seed;
  opts.checkpoint = rc.checkpoint;
  opts.config_echo = rc.to_text();
  opts.checkpoint_every = rc.checkpoint_every;
  opts.on_step = [&](const model::StepRecord& r) {
    if (rc.log_every > 0 && r.iteration % rc.log_every == 0) {
      log << pipeline::log_row(r) << "\n";
      log.flush();
    }
    if (r.iteration % 100 == 0 || r.iteration == rc.iterations) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::fprintf(stderr, "iter %lld  L_rec %.4f  L_flow %.4f  L_D %.4f  (%.0fs)\n",
                   static_cast<long long>(r.iteration), static_cast<double>(r.rec), static_cast<double>(r.flow),
                   static_cast<double>(r.disc), s);
    }
  };
  pipeline::train(trainer, train_set, opts);
  std::cout << "trained to iteration " << trainer.iteration() << "; checkpoint " << rc.checkpoint << ", log " << rc.log
            << "\n";
  return kOk;
}

int cmd_eval(RunConfig rc, const Common& c) {
  if (!c.out.empty()) rc.report = c.out;
  if (!fs::exists(rc.checkpoint)) throw DataError("checkpoint not found: " + rc.checkpoint);
  std::mt19937_64 rng(0);
  model::Generator g(rc.model, rng);
  model::load_generator(g, rc.checkpoint);
  const auto scenes = data::read_dataset(rc.data_dir);
  auto eval_set = pipeline::split(scenes, true);
  if (eval_set.empty()) eval_set = pipeline::split(scenes, false);

  metrics::EvalReport report = pipeline::evaluate(g, eval_set, rc.occlusion_threshold);
  report.label = "model";
  const metrics::EvalReport baseline = pipeline::copy_input_baseline(eval_set, rc.occlusion_threshold);

  std::ostringstream text;
  text << report.table() << "\n" << baseline.table();
  std::cout << text.str();
  ensure_parent(rc.report);
  std::ofstream os(rc.report, std::ios::app);
  if (!os) throw DataError("cannot write report " + rc.report);
  os << "# config\n" << rc.to_text() << "# results\n" << text.str() << report.records() << baseline.records();
  return kOk;
}

int cmd_infer(const RunConfig& rc, const Common& c, const std::string& input, const std::string& mask_stem) {
  if (!fs::exists(rc.checkpoint)) throw DataError("checkpoint not found: " + rc.checkpoint);
  const std::string out_dir = c.out.empty() ? rc.out_dir : c.out;
  std::vector<Tensor> frames, masks;
  for (int t = 0;; ++t) {
    char f[64], m[96];
    std::snprintf(f, sizeof(f), "frame_%03d.ppm", t);
    std::snprintf(m, sizeof(m), "%s_%03d.pgm", mask_stem.c_str(), t);
    const fs::path fp = fs::path(input) / f;
    if (!fs::exists(fp)) break;
    frames.push_back(data::read_ppm(fp.string()));
    masks.push_back(data::read_pgm((fs::path(input) / m).string()));
  }
  if (frames.empty()) throw DataError("no frame_000.ppm in " + input);
  std::mt19937_64 rng(0);
  model::Generator g(rc.model, rng);
  model::load_generator(g, rc.checkpoint);
  const Tensor video = stack(frames), mask = stack(masks);
  const Tensor out = model::sliding_window_inference(video, mask, g);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  for (int64_t t = 0; t < out.dim(0); ++t) {
    char f[64];
    std::snprintf(f, sizeof(f), "frame_%03lld.ppm", static_cast<long long>(t));
    data::write_ppm((fs::path(out_dir) / f).string(), reshape(narrow(out, 0, t, 1), {out.dim(1), out.dim(2), 3}));
  }
  std::cout << "inpainted " << out.dim(0) << " frames into " << out_dir << "\n";
  return kOk;
}

int cmd_verify(const Common& c, bool inject_fault, bool skip_generator) {
  if (inject_fault) geom::testing::set_deform_backward_fault(true);
  const auto results = props::run(props::all_properties(!skip_generator), &std::cout);
  int failed = 0;
  double seconds = 0;
  for (const auto& r : results) {
    failed += r.passed ? 0 : 1;
    seconds += r.seconds;
  }
  std::ostringstream summary;
  summary << results.size() - failed << "/" << results.size() << " properties passed in " << seconds << "s\n";
  std::cout << summary.str();
  if (!c.out.empty()) {
    ensure_parent(c.out);
    std::ofstream os(c.out);
    for (const auto& r : results)
      os << (r.passed ? "PASS " : "FAIL ") << r.group << "/" << r.name << " " << r.detail << "\n";
    os << summary.str();
  }
  return failed == 0 ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowvip: flow-guided video inpainting at desk scale"};
  app.require_subcommand(1);
  Common c;
  bool resume = false, inject_fault = false, skip_generator = false;
  std::string input, mask_stem = "mask_stationary";

  auto* gen = app.add_subcommand("gen", "render a synthetic dataset");
  auto* train = app.add_subcommand("train", "train a model");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on held-out scenes");
  auto* infer = app.add_subcommand("infer", "inpaint a frame directory");
  auto* verify = app.add_subcommand("verify", "run the property suite");
  for (auto* sub : {gen, train, eval, infer, verify}) add_common(sub, c);
  train->add_flag("--resume", resume, "continue from the checkpoint if it exists");
  infer->add_option("--input", input, "directory with frame_XXX.ppm and masks")->required();
  infer->add_option("--masks", mask_stem, "mask file stem");
  verify->add_flag("--inject-dcn-fault", inject_fault, "corrupt the deformable-conv backward pass");
  verify->add_flag("--skip-generator", skip_generator, "skip the full-generator gradcheck");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (verify->parsed()) return cmd_verify(c, inject_fault, skip_generator);
    const RunConfig rc = resolve(c);
    if (gen->parsed()) return cmd_gen(rc, c);
    if (train->parsed()) return cmd_train(rc, c, resume);
    if (eval->parsed()) return cmd_eval(rc, c);
    if (infer->parsed()) return cmd_infer(rc, c, input, mask_stem);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOk;
}
