#include "flowvip/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "flowvip/checkpoint.hpp"
#include "flowvip/config.hpp"
#include "flowvip/errors.hpp"

namespace flowvip::data {

namespace fs = std::filesystem;

uint64_t derive_seed(uint64_t base, uint64_t index) {
  // splitmix64 finaliser over the combined state
  uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;

struct Wave {
  double fx, fy, phase, amp;
};

struct Sprite {
  bool ellipse;
  double cx, cy, hx, hy, vx, vy;
  double color[3];
  double tex_x, tex_y;
};

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double velocity(std::mt19937_64& rng, int max_v, bool fractional) {
  if (max_v <= 0) return 0;
  return fractional ? uniform(rng, -max_v, max_v) : static_cast<double>(uniform_int(rng, -max_v, max_v));
}

bool covers(const Sprite& s, double x, double y, int t) {
  const double u = x - (s.cx + t * s.vx), v = y - (s.cy + t * s.vy);
  if (s.ellipse) return (u / s.hx) * (u / s.hx) + (v / s.hy) * (v / s.hy) <= 1;
  return std::abs(u) <= s.hx && std::abs(v) <= s.hy;
}

Scalar quantize(double v) { return static_cast<Scalar>(std::round(std::clamp(v, 0.0, 1.0) * 255) / 255); }

// Topmost sprite per pixel, -1 for background.
std::vector<int> coverage(const std::vector<Sprite>& sprites, int t, int H, int W) {
  std::vector<int> id(static_cast<size_t>(H) * W, -1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int s = static_cast<int>(sprites.size()) - 1; s >= 0; --s)
        if (covers(sprites[s], x, y, t)) {
          id[y * W + x] = s;
          break;
        }
  return id;
}

bool near_edge(const std::vector<int>& id, int y, int x, int H, int W, int radius) {
  const int c = id[y * W + x];
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const int yy = std::clamp(y + dy, 0, H - 1), xx = std::clamp(x + dx, 0, W - 1);
      if (id[yy * W + xx] != c) return true;
    }
  return false;
}

Tensor quarter_flow(const std::vector<Scalar>& full, int T, int H, int W) {
  const int h = H / 4, w = W / 4;
  std::vector<Scalar> out(static_cast<size_t>(T) * h * w * 2, 0);
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 2; ++c)
          out[((static_cast<size_t>(t) * h + y / 4) * w + x / 4) * 2 + c] +=
              full[((static_cast<size_t>(t) * H + y) * W + x) * 2 + c] / Scalar(64);
  return Tensor::from({T, h, w, 2}, std::move(out));
}

}  // namespace

Scene render_scene(const SceneSpec& spec) {
  const int T = spec.frames, H = spec.height, W = spec.width;
  if (T < 1 || H < 4 || W < 4 || H % 4 != 0 || W % 4 != 0) {
    throw DataError("scene: frames must be >= 1 and extents positive multiples of 4");
  }
  std::mt19937_64 rng(spec.seed);
  std::vector<Wave> waves[3];
  for (auto& ch : waves)
    for (int k = 0; k < 3; ++k) {
      const double wavelength = uniform(rng, 16, 48), angle = uniform(rng, 0, kTwoPi);
      ch.push_back({std::cos(angle) / wavelength, std::sin(angle) / wavelength, uniform(rng, 0, kTwoPi),
                    uniform(rng, 0.04, 0.13)});
    }
  const double bvx = velocity(rng, spec.max_velocity, spec.fractional);
  const double bvy = velocity(rng, spec.max_velocity, spec.fractional);
  std::vector<Sprite> sprites;
  for (int s = 0; s < spec.sprites; ++s) {
    Sprite sp{};
    sp.ellipse = uniform_int(rng, 0, 1) == 1;
    sp.cx = uniform(rng, 0, W);
    sp.cy = uniform(rng, 0, H);
    sp.hx = uniform(rng, W / 12.0, W / 5.0);
    sp.hy = uniform(rng, H / 12.0, H / 5.0);
    sp.vx = velocity(rng, spec.max_velocity, spec.fractional);
    sp.vy = velocity(rng, spec.max_velocity, spec.fractional);
    for (double& c : sp.color) c = uniform(rng, 0.1, 0.9);
    sp.tex_x = uniform(rng, 6, 14);
    sp.tex_y = uniform(rng, 6, 14);
    sprites.push_back(sp);
  }

  std::vector<std::vector<int>> ids;
  for (int t = 0; t < T; ++t) ids.push_back(coverage(sprites, t, H, W));

  std::vector<Scalar> video(static_cast<size_t>(T) * H * W * 3);
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int id = ids[t][y * W + x];
        Scalar* px = video.data() + ((static_cast<size_t>(t) * H + y) * W + x) * 3;
        if (id < 0) {
          const double X = x - t * bvx, Y = y - t * bvy;
          for (int c = 0; c < 3; ++c) {
            double v = 0.5;
            for (const auto& wv : waves[c]) v += wv.amp * std::sin(kTwoPi * (wv.fx * X + wv.fy * Y) + wv.phase);
            px[c] = quantize(v);
          }
        } else {
          const Sprite& s = sprites[id];
          const double u = x - (s.cx + t * s.vx), v = y - (s.cy + t * s.vy);
          const double tex = 0.75 + 0.25 * std::sin(kTwoPi * u / s.tex_x) * std::cos(kTwoPi * v / s.tex_y);
          for (int c = 0; c < 3; ++c) px[c] = quantize(s.color[c] * tex);
        }
      }

  Scene scene;
  scene.video = Tensor::from({T, H, W, 3}, std::move(video));

  std::vector<Scalar> boundary(static_cast<size_t>(T) * H * W, 0);
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        bool edge = near_edge(ids[t], y, x, H, W, 2);
        if (t + 1 < T) edge = edge || near_edge(ids[t + 1], y, x, H, W, 2);
        boundary[(static_cast<size_t>(t) * H + y) * W + x] = edge ? 1 : 0;
      }
  scene.boundary = Tensor::from({T, H, W, 1}, std::move(boundary));

  if (T >= 2) {
    auto vel = [&](int t, int y, int x, int c) {
      const int id = ids[t][y * W + x];
      if (id < 0) return c == 0 ? bvx : bvy;
      return c == 0 ? sprites[id].vx : sprites[id].vy;
    };
    std::vector<Scalar> fwd(static_cast<size_t>(T - 1) * H * W * 2), bwd(fwd.size());
    for (int t = 0; t + 1 < T; ++t)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          for (int c = 0; c < 2; ++c) {
            const size_t i = ((static_cast<size_t>(t) * H + y) * W + x) * 2 + c;
            fwd[i] = static_cast<Scalar>(vel(t, y, x, c));
            bwd[i] = static_cast<Scalar>(-vel(t + 1, y, x, c));
          }
    scene.flows.forward = quarter_flow(fwd, T - 1, H, W);
    scene.flows.backward = quarter_flow(bwd, T - 1, H, W);
    scene.flows_full.forward = Tensor::from({T - 1, H, W, 2}, std::move(fwd));
    scene.flows_full.backward = Tensor::from({T - 1, H, W, 2}, std::move(bwd));
  }
  return scene;
}

Tensor make_masks(const MaskSpec& spec, int T, int H, int W) {
  if (T < 1 || H < 1 || W < 1) throw DataError("masks: empty extents");
  std::mt19937_64 rng(spec.seed);
  const double area_lo = 0.05, area_hi = 0.60;
  auto frac = [&](const std::vector<Scalar>& m, int t) {
    int64_t n = 0;
    for (int i = 0; i < H * W; ++i) n += m[static_cast<size_t>(t) * H * W + i] > 0;
    return static_cast<double>(n) / (H * W);
  };
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::vector<Scalar> m(static_cast<size_t>(T) * H * W, 0);
    if (spec.mode == MaskMode::stationary) {
      const int rects = uniform_int(rng, 1, 3);
      for (int r = 0; r < rects; ++r) {
        const int rh = uniform_int(rng, std::max(1, H / 6), std::max(1, H * 2 / 5));
        const int rw = uniform_int(rng, std::max(1, W / 6), std::max(1, W * 2 / 5));
        const int y0 = uniform_int(rng, 0, H - rh), x0 = uniform_int(rng, 0, W - rw);
        for (int y = y0; y < y0 + rh; ++y)
          for (int x = x0; x < x0 + rw; ++x)
            for (int t = 0; t < T; ++t) m[(static_cast<size_t>(t) * H + y) * W + x] = 1;
      }
    } else {
      struct Blob {
        double dx, dy, r;
      };
      std::vector<Blob> blobs;
      const double base = std::min(H, W);
      for (int b = 0; b < 3; ++b) {
        blobs.push_back({uniform(rng, -base / 8, base / 8), uniform(rng, -base / 8, base / 8),
                         uniform(rng, base / 10, base / 6)});
      }
      double cx = uniform(rng, W * 0.3, W * 0.7), cy = uniform(rng, H * 0.3, H * 0.7);
      for (int t = 0; t < T; ++t) {
        if (t > 0) {
          double sx = 0, sy = 0;
          while (std::abs(sx) < 1 && std::abs(sy) < 1) {
            sx = uniform(rng, -3, 3);
            sy = uniform(rng, -3, 3);
          }
          cx = std::clamp(cx + sx, W * 0.15, W * 0.85);
          cy = std::clamp(cy + sy, H * 0.15, H * 0.85);
        }
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            for (const auto& b : blobs) {
              const double u = x - (cx + b.dx), v = y - (cy + b.dy);
              if (u * u + v * v <= b.r * b.r) {
                m[(static_cast<size_t>(t) * H + y) * W + x] = 1;
                break;
              }
            }
      }
    }
    bool ok = true;
    for (int t = 0; t < T && ok; ++t) ok = frac(m, t) >= area_lo && frac(m, t) <= area_hi;
    if (spec.mode == MaskMode::object)
      for (int t = 1; t < T && ok; ++t)
        ok = !std::equal(m.begin() + static_cast<ptrdiff_t>(t - 1) * H * W,
                         m.begin() + static_cast<ptrdiff_t>(t) * H * W, m.begin() + static_cast<ptrdiff_t>(t) * H * W);
    if (ok) return Tensor::from({T, H, W, 1}, std::move(m));
  }
  throw DataError("masks: could not meet the 5%-60% area bounds after 100 attempts");
}

std::vector<SceneData> generate_dataset(const DatasetSpec& spec) {
  std::vector<SceneData> out;
  const int total = spec.train_scenes + spec.eval_scenes;
  for (int i = 0; i < total; ++i) {
    SceneData d;
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d", i);
    d.name = name;
    d.spec = spec.scene;
    d.spec.seed = derive_seed(spec.seed, 3 * static_cast<uint64_t>(i));
    d.scene = render_scene(d.spec);
    d.stationary_masks = make_masks({MaskMode::stationary, derive_seed(spec.seed, 3 * static_cast<uint64_t>(i) + 1)},
                                    d.spec.frames, d.spec.height, d.spec.width);
    d.object_masks = make_masks({MaskMode::object, derive_seed(spec.seed, 3 * static_cast<uint64_t>(i) + 2)},
                                d.spec.frames, d.spec.height, d.spec.width);
    d.held_out = i >= spec.train_scenes;
    out.push_back(std::move(d));
  }
  return out;
}

void write_ppm(const std::string& path, const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(2) != 3) throw ShapeError("write_ppm: expected [H,W,3]");
  const int64_t H = frame.dim(0), W = frame.dim(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << "P6\n" << W << " " << H << "\n255\n";
  std::string bytes(static_cast<size_t>(H * W * 3), '\0');
  auto v = frame.data();
  for (size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp<double>(v[i], 0, 1) * 255)));
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for " + path);
}

void write_pgm(const std::string& path, const Tensor& mask) {
  if (mask.rank() != 3 || mask.dim(2) != 1) throw ShapeError("write_pgm: expected [H,W,1]");
  const int64_t H = mask.dim(0), W = mask.dim(1);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << "P5\n" << W << " " << H << "\n255\n";
  std::string bytes(static_cast<size_t>(H * W), '\0');
  auto v = mask.data();
  for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(v[i] > 0.5 ? 255 : 0);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for " + path);
}

namespace {

std::string read_token(std::istream& is, const std::string& path) {
  std::string tok;
  while (is >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(is, rest);
      continue;
    }
    return tok;
  }
  throw DataError(path + ": truncated image header");
}

std::vector<unsigned char> read_netpbm(const std::string& path, const char* magic, int64_t& H, int64_t& W,
                                       int channels) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  if (read_token(is, path) != magic) throw DataError(path + ": expected a " + magic + " image");
  W = parse_int("width", read_token(is, path));
  H = parse_int("height", read_token(is, path));
  if (parse_int("maxval", read_token(is, path)) != 255) throw DataError(path + ": only 8-bit images supported");
  if (W < 1 || H < 1) throw DataError(path + ": empty image");
  is.get();
  std::vector<unsigned char> bytes(static_cast<size_t>(H * W * channels));
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw DataError(path + ": truncated pixel data");
  }
  return bytes;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
  int64_t H = 0, W = 0;
  auto bytes = read_netpbm(path, "P6", H, W, 3);
  std::vector<Scalar> v(bytes.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(bytes[i] / 255.0);
  return Tensor::from({H, W, 3}, std::move(v));
}

Tensor read_pgm(const std::string& path) {
  int64_t H = 0, W = 0;
  auto bytes = read_netpbm(path, "P5", H, W, 1);
  std::vector<Scalar> v(bytes.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = bytes[i] >= 128 ? 1 : 0;
  return Tensor::from({H, W, 1}, std::move(v));
}

namespace {

std::string manifest_line(const SceneData& d) {
  std::ostringstream os;
  os << "name=" << d.name << " frames=" << d.spec.frames << " height=" << d.spec.height << " width=" << d.spec.width
     << " sprites=" << d.spec.sprites << " max_velocity=" << d.spec.max_velocity
     << " fractional=" << (d.spec.fractional ? "true" : "false") << " seed=" << d.spec.seed
     << " split=" << (d.held_out ? "eval" : "train");
  return os.str();
}

std::string frame_name(const char* stem, int t, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03d.%s", stem, t, ext);
  return buf;
}

Tensor frame_of(const Tensor& video, int t) { return unstack(narrow(video, 0, t, 1))[0]; }

}  // namespace

void write_dataset(const std::string& dir, const std::vector<SceneData>& scenes) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw DataError("cannot write manifest in " + dir);
  for (const auto& d : scenes) {
    const fs::path sd = fs::path(dir) / d.name;
    fs::create_directories(sd, ec);
    if (ec) throw DataError("cannot create " + sd.string() + ": " + ec.message());
    for (int t = 0; t < d.spec.frames; ++t) {
      write_ppm((sd / frame_name("frame", t, "ppm")).string(), frame_of(d.scene.video, t));
      write_pgm((sd / frame_name("mask_stationary", t, "pgm")).string(), frame_of(d.stationary_masks, t));
      write_pgm((sd / frame_name("mask_object", t, "pgm")).string(), frame_of(d.object_masks, t));
    }
    nn::ParameterList records;
    if (d.scene.flows.count() > 0) {
      records.push_back({"flow.forward", d.scene.flows.forward});
      records.push_back({"flow.backward", d.scene.flows.backward});
      records.push_back({"flow.forward_full", d.scene.flows_full.forward});
      records.push_back({"flow.backward_full", d.scene.flows_full.backward});
    }
    records.push_back({"boundary", d.scene.boundary});
    io::write_records((sd / "flows.fvip").string(), manifest_line(d), records);
    manifest << manifest_line(d) << "\n";
  }
  if (!manifest) throw DataError("manifest write failed in " + dir);
}

std::vector<SceneData> read_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw DataError("no manifest.txt in " + dir);
  std::vector<SceneData> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::map<std::string, std::string> kv;
    std::istringstream ls(line);
    std::string field;
    while (ls >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw DataError("malformed manifest entry: " + line);
      kv[field.substr(0, eq)] = field.substr(eq + 1);
    }
    auto need = [&](const char* k) {
      auto it = kv.find(k);
      if (it == kv.end()) throw DataError(std::string("manifest entry lacks ") + k + ": " + line);
      return it->second;
    };
    SceneData d;
    try {
      d.name = need("name");
      d.spec.frames = static_cast<int>(parse_int("frames", need("frames")));
      d.spec.height = static_cast<int>(parse_int("height", need("height")));
      d.spec.width = static_cast<int>(parse_int("width", need("width")));
      d.spec.sprites = static_cast<int>(parse_int("sprites", need("sprites")));
      d.spec.max_velocity = static_cast<int>(parse_int("max_velocity", need("max_velocity")));
      d.spec.fractional = parse_bool("fractional", need("fractional"));
      d.spec.seed = static_cast<uint64_t>(std::stoull(need("seed")));
    } catch (const ConfigError& e) {
      throw DataError(std::string("manifest: ") + e.what());
    }
    d.held_out = need("split") == "eval";
    const fs::path sd = fs::path(dir) / d.name;
    std::vector<Tensor> frames, stat, obj;
    for (int t = 0; t < d.spec.frames; ++t) {
      frames.push_back(read_ppm((sd / frame_name("frame", t, "ppm")).string()));
      stat.push_back(read_pgm((sd / frame_name("mask_stationary", t, "pgm")).string()));
      obj.push_back(read_pgm((sd / frame_name("mask_object", t, "pgm")).string()));
    }
    d.scene.video = stack(frames);
    d.stationary_masks = stack(stat);
    d.object_masks = stack(obj);
    const io::RecordFile rf = io::read_records((sd / "flows.fvip").string());
    for (const auto& r : rf.records) {
      if (r.name == "flow.forward") d.scene.flows.forward = r.tensor;
      else if (r.name == "flow.backward") d.scene.flows.backward = r.tensor;
      else if (r.name == "flow.forward_full") d.scene.flows_full.forward = r.tensor;
      else if (r.name == "flow.backward_full") d.scene.flows_full.backward = r.tensor;
      else if (r.name == "boundary") d.scene.boundary = r.tensor;
    }
    if (d.spec.frames >= 2 && d.scene.flows.count() != d.spec.frames - 1) {
      throw DataError(sd.string() + ": flow records missing or inconsistent");
    }
    out.push_back(std::move(d));
  }
  return out;
}

model::Batch sample_clip(const SceneData& d, int local_frames, int nonlocal_frames, std::mt19937_64& rng) {
  const int T = d.spec.frames;
  if (local_frames < 1 || local_frames > T) throw DataError("sample_clip: scene too short for the local window");
  const int begin = uniform_int(rng, 0, T - local_frames);
  std::vector<int64_t> idx;
  for (int t = begin; t < begin + local_frames; ++t) idx.push_back(t);
  std::vector<int64_t> others;
  for (int t = 0; t < T; ++t)
    if (t < begin || t >= begin + local_frames) others.push_back(t);
  const int take = std::min<int>(nonlocal_frames, static_cast<int>(others.size()));
  for (int i = 0; i < take; ++i) {
    const int j = uniform_int(rng, i, static_cast<int>(others.size()) - 1);
    std::swap(others[i], others[j]);
  }
  std::sort(others.begin(), others.begin() + take);
  idx.insert(idx.end(), others.begin(), others.begin() + take);

  const bool object = uniform_int(rng, 0, 1) == 1;
  model::Batch b;
  b.frames = index_select(d.scene.video, idx);
  b.masks = index_select(object ? d.object_masks : d.stationary_masks, idx);
  b.local_frames = local_frames;
  if (local_frames >= 2) {
    b.gt_flows.forward = narrow(d.scene.flows.forward, 0, begin, local_frames - 1);
    b.gt_flows.backward = narrow(d.scene.flows.backward, 0, begin, local_frames - 1);
  }
  return b;
}

namespace {

// Mirrors a [T, H, W, C] stack along axis 1 (rows) or 2 (columns); `negate`
// flips the sign of that channel.
Tensor mirror(const Tensor& x, int axis, int negate = -1) {
  const int64_t T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const auto v = x.data();
  std::vector<Scalar> out(v.size());
  for (int64_t t = 0; t < T; ++t)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx) {
        const int64_t sy = axis == 1 ? H - 1 - y : y, sx = axis == 2 ? W - 1 - xx : xx;
        const Scalar* src = v.data() + ((t * H + sy) * W + sx) * C;
        Scalar* dst = out.data() + ((t * H + y) * W + xx) * C;
        for (int64_t c = 0; c < C; ++c) dst[c] = c == negate ? -src[c] : src[c];
      }
  return Tensor::from(x.shape(), std::move(out));
}

Tensor reverse_frames(const Tensor& x, int64_t count) {
  std::vector<int64_t> idx;
  for (int64_t t = count - 1; t >= 0; --t) idx.push_back(t);
  for (int64_t t = count; t < x.dim(0); ++t) idx.push_back(t);
  return index_select(x, idx);
}

}  // namespace

model::Batch augment_clip(const model::Batch& batch, std::mt19937_64& rng) {
  model::Batch b = batch;
  const bool has_flow = b.gt_flows.count() > 0;
  for (int axis : {2, 1}) {
    if (uniform_int(rng, 0, 1) == 0) continue;
    const int component = axis == 2 ? 0 : 1;
    b.frames = mirror(b.frames, axis);
    b.masks = mirror(b.masks, axis);
    if (has_flow) {
      b.gt_flows.forward = mirror(b.gt_flows.forward, axis, component);
      b.gt_flows.backward = mirror(b.gt_flows.backward, axis, component);
    }
  }
  if (uniform_int(rng, 0, 1) == 1) {
    b.frames = reverse_frames(b.frames, b.local_frames);
    b.masks = reverse_frames(b.masks, b.local_frames);
    if (has_flow) {
      const int64_t n = b.gt_flows.count();
      const Tensor forward = reverse_frames(b.gt_flows.backward, n);
      b.gt_flows.backward = reverse_frames(b.gt_flows.forward, n);
      b.gt_flows.forward = forward;
    }
  }
  return b;
}

}  // namespace flowvip::data
