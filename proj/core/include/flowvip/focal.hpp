#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "flowvip/nn.hpp"

namespace flowvip::focal {

/// Overlapping patch geometry shared by soft split and soft composite.
struct SplitGeometry {
  int kernel = 7;
  int stride = 3;
  int padding = 3;

  /// floor((extent + 2 pad - kernel) / stride) + 1; throws when < 1.
  int64_t tokens_along(int64_t extent) const;
};

/// x: [T, h, w, C] -> patches [T, M, N, k*k*C] flattened as (ky, kx, c); zero padding.
Tensor unfold_patches(const Tensor& x, const SplitGeometry& geo);
/// Overlap-add inverse layout of unfold_patches onto an h x w canvas (no normalisation).
Tensor fold_patches(const Tensor& patches, const SplitGeometry& geo, int64_t h, int64_t w, int64_t channels);
/// Number of patches covering each pixel, shaped [1, h, w, 1].
Tensor overlap_count(const SplitGeometry& geo, int64_t h, int64_t w);

class SoftSplit {
 public:
  SoftSplit() = default;
  SoftSplit(int channels, int token_dim, SplitGeometry geo, std::mt19937_64& rng);

  Tensor operator()(const Tensor& features) const;
  void collect(const std::string& prefix, nn::ParameterList& out) const { proj.collect(prefix, out); }

  SplitGeometry geometry;
  nn::Linear proj;  // [k*k*C, C_e]
};

class SoftComposite {
 public:
  SoftComposite() = default;
  SoftComposite(int channels, int token_dim, SplitGeometry geo, std::mt19937_64& rng);

  /// tokens [T, M, N, C_e] -> features [T, h, w, C].
  Tensor operator()(const Tensor& tokens, int64_t h, int64_t w) const;
  void collect(const std::string& prefix, nn::ParameterList& out) const { proj.collect(prefix, out); }

  SplitGeometry geometry;
  int channels = 0;
  nn::Linear proj;  // [C_e, k*k*C]
};

/// Window extents over the token grid; t == 0 means "all frames".
struct WindowShape {
  int64_t t = 0;
  int64_t h = 5;
  int64_t w = 9;

  WindowShape resolved(int64_t frames) const { return {t == 0 ? frames : t, h, w}; }
};

/// [T, M, N, C] -> [nW, st*sh*sw, C]; windows ordered (t, y, x), tokens inside likewise.
Tensor partition_windows(const Tensor& tokens, const WindowShape& win);
Tensor unpartition_windows(const Tensor& windows, const WindowShape& win, int64_t T, int64_t M, int64_t N);

/// Collapses each temporal slice of each window to one token:
/// [nW, st*sh*sw, C] -> [nW, st, C] via a linear map over the sh*sw positions.
Tensor pool_windows(const Tensor& windows, const WindowShape& win, const nn::Linear& fp);

enum class AttentionMode { focal, local, global };

AttentionMode parse_attention_mode(const std::string& name);
std::string to_string(AttentionMode mode);

/// Query-key score evaluations performed by attention calls on this thread.
int64_t attention_score_count();
void reset_attention_score_count();

class FocalBlock {
 public:
  FocalBlock() = default;
  FocalBlock(int token_dim, int heads, int f3n_channels, const WindowShape& window, SplitGeometry geo,
             std::mt19937_64& rng);

  /// Multi-head attention part only (no norm, no residual).
  Tensor attention(const Tensor& tokens, AttentionMode mode) const;

  /// F3N: linear -> fold/normalise -> unfold -> GELU -> linear, on the
  /// feature canvas h x w of the surrounding soft split.
  Tensor f3n(const Tensor& tokens, int64_t h, int64_t w) const;

  /// Z' = MFSA(LN1 Z) + Z; out = F3N(LN2 Z') + Z'.
  Tensor operator()(const Tensor& tokens, int64_t h, int64_t w, AttentionMode mode) const;

  void collect(const std::string& prefix, nn::ParameterList& out) const;

  int heads = 1;
  int f3n_channels = 0;
  WindowShape window;
  SplitGeometry geometry;
  nn::LayerNorm ln1, ln2;
  nn::Linear fq, fkv, fp, proj;
  nn::Linear ff1, ff2;
};

}  // namespace flowvip::focal
