#include "flowvip/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "flowvip/errors.hpp"

namespace flowvip {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.channels = 128;
  c.token_dim = 512;
  c.blocks = 8;
  c.heads = 4;
  c.kernel = 3;
  c.groups = 16;
  c.local_frames = 5;
  c.nonlocal_frames = 3;
  c.window = {0, 5, 9};
  c.split = {7, 3, 3};
  c.f3n_channels = 40;
  c.flow_hidden = 32;
  c.disc_channels = 64;
  c.lr = 1e-4;
  c.batch = 8;
  c.frame_height = 240;
  c.frame_width = 432;
  c.sliding_window = 10;
  c.sampling_rate = 10;
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset '" + name + "' (expected paper or desk)");
}

bool ModelConfig::set(const std::string& k, const std::string& v) {
  auto i = [&] { return static_cast<int>(parse_int(k, v)); };
  if (k == "preset") preset = v;
  else if (k == "channels") channels = i();
  else if (k == "token_dim") token_dim = i();
  else if (k == "blocks") blocks = i();
  else if (k == "heads") heads = i();
  else if (k == "kernel") kernel = i();
  else if (k == "groups") groups = i();
  else if (k == "local_frames") local_frames = i();
  else if (k == "nonlocal_frames") nonlocal_frames = i();
  else if (k == "window_t") window.t = i();
  else if (k == "window_h") window.h = i();
  else if (k == "window_w") window.w = i();
  else if (k == "split_kernel") split.kernel = i();
  else if (k == "split_stride") split.stride = i();
  else if (k == "split_padding") split.padding = i();
  else if (k == "f3n_channels") f3n_channels = i();
  else if (k == "flow_levels") flow_levels = i();
  else if (k == "flow_hidden") flow_hidden = i();
  else if (k == "disc_channels") disc_channels = i();
  else if (k == "w_rec") w_rec = parse_double(k, v);
  else if (k == "w_adv") w_adv = parse_double(k, v);
  else if (k == "w_flow") w_flow = parse_double(k, v);
  else if (k == "lr") lr = parse_double(k, v);
  else if (k == "beta1") beta1 = parse_double(k, v);
  else if (k == "beta2") beta2 = parse_double(k, v);
  else if (k == "batch") batch = i();
  else if (k == "augment") augment = parse_bool(k, v);
  else if (k == "lr_drop_iteration") lr_drop_iteration = parse_int(k, v);
  else if (k == "frame_height") frame_height = i();
  else if (k == "frame_width") frame_width = i();
  else if (k == "sliding_window") sliding_window = i();
  else if (k == "sampling_rate") sampling_rate = i();
  else if (k == "disable_propagation") disable_propagation = parse_bool(k, v);
  else if (k == "disable_dcn") disable_dcn = parse_bool(k, v);
  else if (k == "disable_flow_loss") disable_flow_loss = parse_bool(k, v);
  else if (k == "freeze_flow") freeze_flow = parse_bool(k, v);
  else if (k == "attention") attention = focal::parse_attention_mode(v);
  else return false;
  return true;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  auto b = [](bool x) { return x ? "true" : "false"; };
  os << "preset=" << preset << "\n"
     << "channels=" << channels << "\n"
     << "token_dim=" << token_dim << "\n"
     << "blocks=" << blocks << "\n"
     << "heads=" << heads << "\n"
     << "kernel=" << kernel << "\n"
     << "groups=" << groups << "\n"
     << "local_frames=" << local_frames << "\n"
     << "nonlocal_frames=" << nonlocal_frames << "\n"
     << "window_t=" << window.t << "\n"
     << "window_h=" << window.h << "\n"
     << "window_w=" << window.w << "\n"
     << "split_kernel=" << split.kernel << "\n"
     << "split_stride=" << split.stride << "\n"
     << "split_padding=" << split.padding << "\n"
     << "f3n_channels=" << f3n_channels << "\n"
     << "flow_levels=" << flow_levels << "\n"
     << "flow_hidden=" << flow_hidden << "\n"
     << "disc_channels=" << disc_channels << "\n"
     << "w_rec=" << fmt_double(w_rec) << "\n"
     << "w_adv=" << fmt_double(w_adv) << "\n"
     << "w_flow=" << fmt_double(w_flow) << "\n"
     << "lr=" << fmt_double(lr) << "\n"
     << "beta1=" << fmt_double(beta1) << "\n"
     << "beta2=" << fmt_double(beta2) << "\n"
     << "batch=" << batch << "\n"
     << "augment=" << b(augment) << "\n"
     << "lr_drop_iteration=" << lr_drop_iteration << "\n"
     << "frame_height=" << frame_height << "\n"
     << "frame_width=" << frame_width << "\n"
     << "sliding_window=" << sliding_window << "\n"
     << "sampling_rate=" << sampling_rate << "\n"
     << "disable_propagation=" << b(disable_propagation) << "\n"
     << "disable_dcn=" << b(disable_dcn) << "\n"
     << "disable_flow_loss=" << b(disable_flow_loss) << "\n"
     << "freeze_flow=" << b(freeze_flow) << "\n"
     << "attention=" << focal::to_string(attention) << "\n";
  return os.str();
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(channels >= 2 && channels % 2 == 0, "channels must be even and >= 2");
  need(token_dim >= 1 && heads >= 1 && token_dim % heads == 0, "token_dim must be divisible by heads");
  need(blocks >= 0, "blocks must be >= 0");
  need(kernel >= 1 && kernel % 2 == 1, "kernel must be odd");
  need(groups >= 1 && channels % groups == 0, "channels must be divisible by groups");
  need(local_frames >= 1 && nonlocal_frames >= 0, "local_frames >= 1 and nonlocal_frames >= 0 required");
  need(window.t >= 0 && window.h >= 1 && window.w >= 1, "window extents must be positive (window_t may be 0)");
  need(split.kernel >= 1 && split.stride >= 1 && split.padding >= 0, "invalid split geometry");
  need(f3n_channels >= 1, "f3n_channels must be >= 1");
  need(flow_levels >= 1 && flow_hidden >= 2, "invalid flow network size");
  need(disc_channels >= 1, "disc_channels must be >= 1");
  need(frame_height % 4 == 0 && frame_width % 4 == 0, "frame size must be divisible by 4");
  const int scale = 4 << (flow_levels - 1);
  need(frame_height % scale == 0 && frame_width % scale == 0,
       "frame size must be divisible by " + std::to_string(scale) + " for the flow pyramid");
  need(lr > 0 && beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "invalid optimizer settings");
  need(batch >= 1, "batch must be >= 1");
  need(sliding_window >= 1 && sampling_rate >= 1, "sliding_window and sampling_rate must be >= 1");
  const int64_t M = split.tokens_along(frame_height / 4), N = split.tokens_along(frame_width / 4);
  need(M % window.h == 0, "token rows " + std::to_string(M) + " not divisible by window_h");
  need(N % window.w == 0, "token columns " + std::to_string(N) + " not divisible by window_w");
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& preset) {
  const auto kv = parse_key_values(text);
  RunConfig rc;
  std::string p = preset;
  if (p.empty()) {
    auto it = kv.find("preset");
    p = it == kv.end() ? "desk" : it->second;
  }
  rc.model = ModelConfig::from_preset(p);
  for (const auto& [k, v] : kv) {
    if (k == "preset") continue;
    rc.set(k, v);
  }
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path, const std::string& preset) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str(), preset);
}

void RunConfig::set(const std::string& k, const std::string& v) {
  if (model.set(k, v)) return;
  if (k == "data_dir") data_dir = v;
  else if (k == "checkpoint") checkpoint = v;
  else if (k == "log") log = v;
  else if (k == "report") report = v;
  else if (k == "out_dir") out_dir = v;
  else if (k == "seed") seed = static_cast<uint64_t>(parse_int(k, v));
  else if (k == "iterations") iterations = parse_int(k, v);
  else if (k == "checkpoint_every") checkpoint_every = parse_int(k, v);
  else if (k == "log_every") log_every = parse_int(k, v);
  else if (k == "scenes") scenes = static_cast<int>(parse_int(k, v));
  else if (k == "eval_scenes") eval_scenes = static_cast<int>(parse_int(k, v));
  else if (k == "scene_frames") scene_frames = static_cast<int>(parse_int(k, v));
  else if (k == "sprites") sprites = static_cast<int>(parse_int(k, v));
  else if (k == "max_velocity") max_velocity = static_cast<int>(parse_int(k, v));
  else if (k == "fractional_velocity") fractional_velocity = parse_bool(k, v);
  else if (k == "occlusion_threshold") occlusion_threshold = parse_double(k, v);
  else throw ConfigError("unknown config key '" + k + "'");
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << model.to_text() << "data_dir=" << data_dir << "\n"
     << "checkpoint=" << checkpoint << "\n"
     << "log=" << log << "\n"
     << "report=" << report << "\n"
     << "out_dir=" << out_dir << "\n"
     << "seed=" << seed << "\n"
     << "iterations=" << iterations << "\n"
     << "checkpoint_every=" << checkpoint_every << "\n"
     << "log_every=" << log_every << "\n"
     << "scenes=" << scenes << "\n"
     << "eval_scenes=" << eval_scenes << "\n"
     << "scene_frames=" << scene_frames << "\n"
     << "sprites=" << sprites << "\n"
     << "max_velocity=" << max_velocity << "\n"
     << "fractional_velocity=" << (fractional_velocity ? "true" : "false") << "\n"
     << "occlusion_threshold=" << fmt_double(occlusion_threshold) << "\n";
  return os.str();
}

}  // namespace flowvip
