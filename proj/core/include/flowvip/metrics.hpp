#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowvip/flowcomp.hpp"

namespace flowvip::metrics {

inline constexpr double kPsnrCap = 99.0;

/// Per-frame PSNR in dB of [T, H, W, C] (or a single [H, W, C]) pairs in [0, 1].
std::vector<double> psnr(const Tensor& a, const Tensor& b);

/// Per-frame SSIM: 11x11 Gaussian window (sigma 1.5), valid positions only,
/// averaged over channels and positions.
std::vector<double> ssim(const Tensor& a, const Tensor& b);

/// Mean over consecutive pairs of the masked MSE between frame t and frame t+1
/// warped by F(t -> t+1). Pixels whose forward-backward round trip misses by
/// `threshold` px or more, or whose sample leaves the frame, are dropped, as
/// are pixels flagged in `exclude` ([T, H, W, 1], optional).
double warp_error(const Tensor& video, const flowcomp::BidirectionalFlows& flows_full, double threshold = 1.0,
                  const Tensor& exclude = Tensor());

struct VideoMetrics {
  std::string name;
  int64_t frames = 0;
  double psnr = 0;
  double ssim = 0;
  double ewarp = 0;
};

struct EvalReport {
  std::string label;
  std::vector<VideoMetrics> videos;

  /// Frame-count-weighted means.
  VideoMetrics aggregate() const;
  /// Aligned plain-text table; E_warp shown in units of 1e-2, VFID as "-".
  std::string table() const;
  /// One key=value record per video plus one for the aggregate.
  std::string records() const;
};

/// PSNR/SSIM against the clean video and E_warp of the output under the
/// ground-truth flows.
VideoMetrics evaluate_video(const std::string& name, const Tensor& output, const Tensor& clean,
                            const flowcomp::BidirectionalFlows& flows_full, double threshold = 1.0);

}  // namespace flowvip::metrics
