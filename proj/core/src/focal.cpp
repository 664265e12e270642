#include "flowvip/focal.hpp"

#include <algorithm>
#include <cmath>

#include "flowvip/errors.hpp"

namespace flowvip::focal {

using detail::make_result;
using detail::Node;

int64_t SplitGeometry::tokens_along(int64_t extent) const {
  if (kernel < 1 || stride < 1 || padding < 0) throw ShapeError("soft split: invalid kernel/stride/padding");
  const int64_t span = extent + 2 * padding - kernel;
  if (span < 0) {
    throw ShapeError("soft split: kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(extent + 2 * padding));
  }
  return span / stride + 1;
}

namespace {

// For every (m, n, ky, kx), the source pixel y*w + x or -1 for padding.
std::vector<int64_t> patch_map(const SplitGeometry& g, int64_t h, int64_t w, int64_t M, int64_t N) {
  const int64_t k = g.kernel;
  std::vector<int64_t> map(M * N * k * k);
  for (int64_t m = 0; m < M; ++m)
    for (int64_t n = 0; n < N; ++n)
      for (int64_t ky = 0; ky < k; ++ky)
        for (int64_t kx = 0; kx < k; ++kx) {
          const int64_t y = m * g.stride - g.padding + ky, x = n * g.stride - g.padding + kx;
          map[((m * N + n) * k + ky) * k + kx] = (y < 0 || y >= h || x < 0 || x >= w) ? -1 : y * w + x;
        }
  return map;
}

thread_local int64_t g_scores = 0;

Tensor split_heads(const Tensor& x, int heads) {
  const int64_t B = x.dim(0), L = x.dim(1), C = x.dim(2);
  return reshape(permute(reshape(x, {B, L, heads, C / heads}), {0, 2, 1, 3}), {B * heads, L, C / heads});
}

Tensor merge_heads(const Tensor& x, int heads) {
  const int64_t BH = x.dim(0), L = x.dim(1), d = x.dim(2), B = BH / heads;
  return reshape(permute(reshape(x, {B, heads, L, d}), {0, 2, 1, 3}), {B, L, heads * d});
}

// q: [B*H, Lq, d], k/v: [B*H, Lk, d].
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q.dim(2)));
  g_scores += q.dim(0) * q.dim(1) * k.dim(1);
  return matmul(softmax(matmul(q, k, true) * scale), v);
}

void check_windows(const Shape& s, const WindowShape& win) {
  const char* names[3] = {"temporal", "height", "width"};
  const int64_t ext[3] = {win.t, win.h, win.w};
  for (int i = 0; i < 3; ++i) {
    if (ext[i] < 1 || s[i] % ext[i] != 0) {
      throw ShapeError(std::string("window partition: ") + names[i] + " axis of extent " + std::to_string(s[i]) +
                       " not divisible by window " + std::to_string(ext[i]));
    }
  }
}

}  // namespace

Tensor unfold_patches(const Tensor& x, const SplitGeometry& geo) {
  if (x.rank() != 4) throw ShapeError("soft split: expected [T,h,w,C], got " + shape_str(x.shape()));
  const int64_t T = x.dim(0), h = x.dim(1), w = x.dim(2), C = x.dim(3);
  const int64_t M = geo.tokens_along(h), N = geo.tokens_along(w), kk = int64_t{geo.kernel} * geo.kernel;
  auto map = patch_map(geo, h, w, M, N);
  const int64_t P = M * N * kk;
  std::vector<Scalar> out(T * P * C, Scalar(0));
  const Scalar* px = x.data().data();
  for (int64_t t = 0; t < T; ++t)
    for (int64_t i = 0; i < P; ++i)
      if (map[i] >= 0) std::copy_n(px + (t * h * w + map[i]) * C, C, out.data() + (t * P + i) * C);
  return make_result({T, M, N, kk * C}, std::move(out), "unfold_patches", {x},
                     [=, map = std::move(map)](Node& self) {
                       Scalar* gx = self.input_grad(0);
                       if (!gx) return;
                       const Scalar* g = self.grad.data();
                       for (int64_t t = 0; t < T; ++t)
                         for (int64_t i = 0; i < P; ++i) {
                           if (map[i] < 0) continue;
                           Scalar* dst = gx + (t * h * w + map[i]) * C;
                           const Scalar* src = g + (t * P + i) * C;
                           for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
                         }
                     });
}

Tensor fold_patches(const Tensor& patches, const SplitGeometry& geo, int64_t h, int64_t w, int64_t C) {
  const int64_t M = geo.tokens_along(h), N = geo.tokens_along(w), kk = int64_t{geo.kernel} * geo.kernel;
  if (patches.rank() != 4 || patches.dim(1) != M || patches.dim(2) != N || patches.dim(3) != kk * C) {
    throw ShapeError("soft composite: patches " + shape_str(patches.shape()) + " inconsistent with a " +
                     std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(C) + " canvas");
  }
  const int64_t T = patches.dim(0);
  auto map = patch_map(geo, h, w, M, N);
  const int64_t P = M * N * kk;
  std::vector<Scalar> out(T * h * w * C, Scalar(0));
  const Scalar* pp = patches.data().data();
  for (int64_t t = 0; t < T; ++t)
    for (int64_t i = 0; i < P; ++i) {
      if (map[i] < 0) continue;
      Scalar* dst = out.data() + (t * h * w + map[i]) * C;
      const Scalar* src = pp + (t * P + i) * C;
      for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
    }
  return make_result({T, h, w, C}, std::move(out), "fold_patches", {patches}, [=, map = std::move(map)](Node& self) {
    Scalar* gp = self.input_grad(0);
    if (!gp) return;
    const Scalar* g = self.grad.data();
    for (int64_t t = 0; t < T; ++t)
      for (int64_t i = 0; i < P; ++i) {
        if (map[i] < 0) continue;
        const Scalar* src = g + (t * h * w + map[i]) * C;
        Scalar* dst = gp + (t * P + i) * C;
        for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
      }
  });
}

Tensor overlap_count(const SplitGeometry& geo, int64_t h, int64_t w) {
  const int64_t M = geo.tokens_along(h), N = geo.tokens_along(w);
  auto map = patch_map(geo, h, w, M, N);
  std::vector<Scalar> count(h * w, Scalar(0));
  for (int64_t src : map)
    if (src >= 0) count[src] += 1;
  if (std::find(count.begin(), count.end(), Scalar(0)) != count.end()) {
    throw ShapeError("soft composite: geometry leaves pixels uncovered");
  }
  return Tensor::from({1, h, w, 1}, std::move(count));
}

SoftSplit::SoftSplit(int channels, int token_dim, SplitGeometry geo, std::mt19937_64& rng)
    : geometry(geo), proj(geo.kernel * geo.kernel * channels, token_dim, rng) {}

Tensor SoftSplit::operator()(const Tensor& features) const { return proj(unfold_patches(features, geometry)); }

SoftComposite::SoftComposite(int channels_, int token_dim, SplitGeometry geo, std::mt19937_64& rng)
    : geometry(geo), channels(channels_), proj(token_dim, geo.kernel * geo.kernel * channels_, rng) {}

Tensor SoftComposite::operator()(const Tensor& tokens, int64_t h, int64_t w) const {
  return fold_patches(proj(tokens), geometry, h, w, channels) / overlap_count(geometry, h, w);
}

Tensor partition_windows(const Tensor& tokens, const WindowShape& win) {
  if (tokens.rank() != 4) throw ShapeError("window partition: expected [T,M,N,C], got " + shape_str(tokens.shape()));
  const Shape& s = tokens.shape();
  check_windows(s, win);
  const int64_t T = s[0], M = s[1], N = s[2], C = s[3];
  Tensor x = reshape(tokens, {T / win.t, win.t, M / win.h, win.h, N / win.w, win.w, C});
  x = permute(x, {0, 2, 4, 1, 3, 5, 6});
  return reshape(x, {(T / win.t) * (M / win.h) * (N / win.w), win.t * win.h * win.w, C});
}

Tensor unpartition_windows(const Tensor& windows, const WindowShape& win, int64_t T, int64_t M, int64_t N) {
  check_windows({T, M, N}, win);
  const int64_t C = windows.dim(-1);
  if (windows.numel() != T * M * N * C) {
    throw ShapeError("window unpartition: " + shape_str(windows.shape()) + " does not fill a " + std::to_string(T) +
                     "x" + std::to_string(M) + "x" + std::to_string(N) + " grid");
  }
  Tensor x = reshape(windows, {T / win.t, M / win.h, N / win.w, win.t, win.h, win.w, C});
  x = permute(x, {0, 3, 1, 4, 2, 5, 6});
  return reshape(x, {T, M, N, C});
}

Tensor pool_windows(const Tensor& windows, const WindowShape& win, const nn::Linear& fp) {
  const int64_t nW = windows.dim(0), C = windows.dim(2), area = win.h * win.w;
  if (windows.dim(1) != win.t * area) {
    throw ShapeError("pool_windows: windows " + shape_str(windows.shape()) + " do not match the window shape");
  }
  Tensor x = permute(reshape(windows, {nW * win.t, area, C}), {0, 2, 1});
  return reshape(fp(x), {nW, win.t, C});
}

AttentionMode parse_attention_mode(const std::string& name) {
  if (name == "focal") return AttentionMode::focal;
  if (name == "local") return AttentionMode::local;
  if (name == "global") return AttentionMode::global;
  throw ConfigError("attention must be focal, local or global, got '" + name + "'");
}

std::string to_string(AttentionMode mode) {
  switch (mode) {
    case AttentionMode::focal: return "focal";
    case AttentionMode::local: return "local";
    case AttentionMode::global: return "global";
  }
  return "?";
}

int64_t attention_score_count() { return g_scores; }
void reset_attention_score_count() { g_scores = 0; }

FocalBlock::FocalBlock(int token_dim, int heads_, int f3n_channels_, const WindowShape& window_, SplitGeometry geo,
                       std::mt19937_64& rng)
    : heads(heads_), f3n_channels(f3n_channels_), window(window_), geometry(geo), ln1(token_dim), ln2(token_dim) {
  if (heads < 1 || token_dim % heads != 0) {
    throw ConfigError("token dim " + std::to_string(token_dim) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  fq = nn::Linear(token_dim, token_dim, rng);
  fkv = nn::Linear(token_dim, 2 * token_dim, rng);
  const int area = static_cast<int>(window.h * window.w);
  fp = nn::Linear(area, 1, rng);
  for (Scalar& v : fp.weight.mutable_data()) v = Scalar(1) / static_cast<Scalar>(area);
  proj = nn::Linear(token_dim, token_dim, rng);
  const int hidden = geo.kernel * geo.kernel * f3n_channels;
  ff1 = nn::Linear(token_dim, hidden, rng);
  ff2 = nn::Linear(hidden, token_dim, rng);
}

Tensor FocalBlock::attention(const Tensor& z, AttentionMode mode) const {
  if (z.rank() != 4) throw ShapeError("focal attention: expected [T,M,N,C], got " + shape_str(z.shape()));
  const int64_t T = z.dim(0), M = z.dim(1), N = z.dim(2), C = z.dim(3);
  const Tensor q = fq(z);
  const Tensor kv = fkv(z);
  Tensor out;
  if (mode == AttentionMode::global) {
    const Tensor qf = reshape(q, {1, T * M * N, C});
    const Tensor kvf = reshape(kv, {1, T * M * N, 2 * C});
    const Tensor o = scaled_dot_attention(split_heads(qf, heads), split_heads(narrow(kvf, 2, 0, C), heads),
                                          split_heads(narrow(kvf, 2, C, C), heads));
    out = reshape(merge_heads(o, heads), {T, M, N, C});
  } else {
    const WindowShape win = window.resolved(T);
    const Tensor qw = partition_windows(q, win);
    Tensor kvw = partition_windows(kv, win);
    if (mode == AttentionMode::focal) {
      const int64_t gt = T / win.t, gh = M / win.h, gw = N / win.w;
      const Tensor pooled = fkv(pool_windows(partition_windows(z, win), win, fp));  // [nW, st, 2C]
      std::vector<int64_t> gather;
      gather.reserve(gt * gh * gw * win.h * win.w);
      for (int64_t a = 0; a < gt; ++a)
        for (int64_t b = 0; b < gh; ++b)
          for (int64_t c = 0; c < gw; ++c)
            for (int64_t dy = 0; dy < win.h; ++dy)
              for (int64_t dx = 0; dx < win.w; ++dx) {
                const int64_t nb = std::clamp(b + dy - win.h / 2, int64_t{0}, gh - 1);
                const int64_t nc = std::clamp(c + dx - win.w / 2, int64_t{0}, gw - 1);
                gather.push_back((a * gh + nb) * gw + nc);
              }
      const int64_t nW = gt * gh * gw;
      const Tensor coarse = reshape(index_select(pooled, gather), {nW, win.h * win.w * win.t, 2 * C});
      kvw = concat({kvw, coarse}, 1);
    }
    const Tensor o = scaled_dot_attention(split_heads(qw, heads), split_heads(narrow(kvw, 2, 0, C), heads),
                                          split_heads(narrow(kvw, 2, C, C), heads));
    out = unpartition_windows(merge_heads(o, heads), win, T, M, N);
  }
  return proj(out);
}

Tensor FocalBlock::f3n(const Tensor& z, int64_t h, int64_t w) const {
  Tensor x = ff1(z);
  x = fold_patches(x, geometry, h, w, f3n_channels) / overlap_count(geometry, h, w);
  x = gelu(unfold_patches(x, geometry));
  return ff2(x);
}

Tensor FocalBlock::operator()(const Tensor& z, int64_t h, int64_t w, AttentionMode mode) const {
  const Tensor mid = attention(ln1(z), mode) + z;
  return f3n(ln2(mid), h, w) + mid;
}

void FocalBlock::collect(const std::string& prefix, nn::ParameterList& out) const {
  ln1.collect(prefix + ".ln1", out);
  ln2.collect(prefix + ".ln2", out);
  fq.collect(prefix + ".fq", out);
  fkv.collect(prefix + ".fkv", out);
  fp.collect(prefix + ".fp", out);
  proj.collect(prefix + ".proj", out);
  ff1.collect(prefix + ".ff1", out);
  ff2.collect(prefix + ".ff2", out);
}

}  // namespace flowvip::focal
