#include "flowvip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "flowvip/errors.hpp"

namespace flowvip::metrics {

namespace {

struct Frames {
  int64_t T, H, W, C;
};

Frames frames_of(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (a.rank() == 3) return {1, a.dim(0), a.dim(1), a.dim(2)};
  if (a.rank() == 4) return {a.dim(0), a.dim(1), a.dim(2), a.dim(3)};
  throw ShapeError(std::string(what) + ": expected [T,H,W,C] or [H,W,C], got " + shape_str(a.shape()));
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(size);
  double s = 0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    s += g[i];
  }
  for (double& v : g) v /= s;
  return g;
}

// Valid-region separable filter of one H x W plane.
std::vector<double> filter_valid(const std::vector<double>& img, int64_t H, int64_t W, const std::vector<double>& g) {
  const int64_t k = static_cast<int64_t>(g.size()), oh = H - k + 1, ow = W - k + 1;
  std::vector<double> rows(H * ow), out(oh * ow);
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0;
      for (int64_t i = 0; i < k; ++i) s += g[i] * img[y * W + x + i];
      rows[y * ow + x] = s;
    }
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double s = 0;
      for (int64_t i = 0; i < k; ++i) s += g[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

}  // namespace

std::vector<double> psnr(const Tensor& a, const Tensor& b) {
  const Frames f = frames_of(a, b, "psnr");
  const int64_t n = f.H * f.W * f.C;
  auto pa = a.data();
  auto pb = b.data();
  std::vector<double> out(f.T);
  for (int64_t t = 0; t < f.T; ++t) {
    double se = 0;
    for (int64_t i = t * n; i < (t + 1) * n; ++i) {
      const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
      se += d * d;
    }
    const double mse = se / static_cast<double>(n);
    out[t] = mse == 0 ? kPsnrCap : std::min(kPsnrCap, 10 * std::log10(1 / mse));
  }
  return out;
}

std::vector<double> ssim(const Tensor& a, const Tensor& b) {
  const Frames f = frames_of(a, b, "ssim");
  constexpr int kWin = 11;
  if (f.H < kWin || f.W < kWin) {
    throw ShapeError("ssim: frame " + std::to_string(f.H) + "x" + std::to_string(f.W) + " smaller than the 11x11 window");
  }
  const auto g = gaussian_window(kWin, 1.5);
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  auto pa = a.data();
  auto pb = b.data();
  std::vector<double> out(f.T);
  const int64_t plane = f.H * f.W;
  for (int64_t t = 0; t < f.T; ++t) {
    double total = 0;
    int64_t count = 0;
    for (int64_t c = 0; c < f.C; ++c) {
      std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
      for (int64_t i = 0; i < plane; ++i) {
        x[i] = pa[(t * plane + i) * f.C + c];
        y[i] = pb[(t * plane + i) * f.C + c];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
      }
      const auto mx = filter_valid(x, f.H, f.W, g), my = filter_valid(y, f.H, f.W, g);
      const auto exx = filter_valid(xx, f.H, f.W, g), eyy = filter_valid(yy, f.H, f.W, g);
      const auto exy = filter_valid(xy, f.H, f.W, g);
      for (size_t i = 0; i < mx.size(); ++i) {
        const double vx = exx[i] - mx[i] * mx[i], vy = eyy[i] - my[i] * my[i], cxy = exy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + C1) * (2 * cxy + C2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
        ++count;
      }
    }
    out[t] = total / static_cast<double>(count);
  }
  return out;
}

double warp_error(const Tensor& video, const flowcomp::BidirectionalFlows& flows, double threshold,
                  const Tensor& exclude) {
  if (video.rank() != 4) throw ShapeError("warp_error: expected [T,H,W,C], got " + shape_str(video.shape()));
  const int64_t T = video.dim(0), H = video.dim(1), W = video.dim(2), C = video.dim(3);
  if (T < 2) return 0;
  if (flows.count() != T - 1) {
    throw DataError("warp_error: " + std::to_string(flows.count()) + " flow pairs for " + std::to_string(T) +
                    " frames");
  }
  if (flows.forward.dim(1) != H || flows.forward.dim(2) != W) {
    throw ShapeError("warp_error: flows " + shape_str(flows.forward.shape()) + " are not at full resolution");
  }
  if (exclude.defined() && exclude.shape() != Shape{T, H, W, 1}) {
    throw ShapeError("warp_error: exclusion mask " + shape_str(exclude.shape()) + " does not match the video");
  }
  auto v = video.data();
  auto ff = flows.forward.data();
  auto fb = flows.backward.data();
  auto bilinear = [&](const Scalar* img, int64_t ch, int64_t c, double y, double x) {
    const int64_t y0 = static_cast<int64_t>(std::floor(y)), x0 = static_cast<int64_t>(std::floor(x));
    const int64_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const double ly = y - y0, lx = x - x0;
    auto at = [&](int64_t yy, int64_t xx) { return static_cast<double>(img[(yy * W + xx) * ch + c]); };
    return (1 - ly) * ((1 - lx) * at(y0, x0) + lx * at(y0, x1)) + ly * ((1 - lx) * at(y1, x0) + lx * at(y1, x1));
  };
  double sum_pairs = 0;
  int64_t pairs = 0;
  for (int64_t t = 0; t + 1 < T; ++t) {
    const Scalar* f0 = v.data() + t * H * W * C;
    const Scalar* f1 = f0 + H * W * C;
    const Scalar* fw = ff.data() + t * H * W * 2;
    const Scalar* bw = fb.data() + t * H * W * 2;
    double se = 0;
    int64_t n = 0;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const int64_t p = y * W + x;
        if (exclude.defined() && exclude.data()[t * H * W + p] > 0) continue;
        const double qx = x + fw[p * 2], qy = y + fw[p * 2 + 1];
        if (qx < 0 || qy < 0 || qx > W - 1 || qy > H - 1) continue;
        const double rx = fw[p * 2] + bilinear(bw, 2, 0, qy, qx);
        const double ry = fw[p * 2 + 1] + bilinear(bw, 2, 1, qy, qx);
        if (std::hypot(rx, ry) >= threshold) continue;
        for (int64_t c = 0; c < C; ++c) {
          const double d = f0[p * C + c] - bilinear(f1, C, c, qy, qx);
          se += d * d;
        }
        n += C;
      }
    if (n > 0) {
      sum_pairs += se / static_cast<double>(n);
      ++pairs;
    }
  }
  return pairs == 0 ? 0 : sum_pairs / static_cast<double>(pairs);
}

VideoMetrics EvalReport::aggregate() const {
  VideoMetrics agg;
  agg.name = "mean";
  for (const auto& v : videos) {
    agg.frames += v.frames;
    agg.psnr += v.psnr * static_cast<double>(v.frames);
    agg.ssim += v.ssim * static_cast<double>(v.frames);
    agg.ewarp += v.ewarp * static_cast<double>(v.frames);
  }
  if (agg.frames > 0) {
    const double n = static_cast<double>(agg.frames);
    agg.psnr /= n;
    agg.ssim /= n;
    agg.ewarp /= n;
  }
  return agg;
}

std::string EvalReport::table() const {
  std::ostringstream os;
  if (!label.empty()) os << "# " << label << "\n";
  os << std::left << std::setw(14) << "video" << std::right << std::setw(8) << "frames" << std::setw(10) << "PSNR"
     << std::setw(10) << "SSIM" << std::setw(14) << "E_warp*" << std::setw(8) << "VFID" << "\n";
  auto row = [&](const VideoMetrics& m) {
    os << std::left << std::setw(14) << m.name << std::right << std::setw(8) << m.frames << std::fixed
       << std::setprecision(3) << std::setw(10) << m.psnr << std::setprecision(4) << std::setw(10) << m.ssim
       << std::setprecision(4) << std::setw(14) << m.ewarp * 100 << std::setw(8) << "-" << "\n";
    os.unsetf(std::ios::fixed);
  };
  for (const auto& v : videos) row(v);
  row(aggregate());
  os << "E_warp* = E_warp x 10^-2 (values shown multiplied by 100); VFID not computed\n";
  return os.str();
}

std::string EvalReport::records() const {
  std::ostringstream os;
  os.precision(10);
  auto rec = [&](const VideoMetrics& m) {
    os << "label=" << (label.empty() ? "-" : label) << " video=" << m.name << " frames=" << m.frames
       << " psnr=" << m.psnr << " ssim=" << m.ssim << " ewarp_x1e-2=" << m.ewarp * 100 << " vfid=null\n";
  };
  for (const auto& v : videos) rec(v);
  rec(aggregate());
  return os.str();
}

VideoMetrics evaluate_video(const std::string& name, const Tensor& output, const Tensor& clean,
                            const flowcomp::BidirectionalFlows& flows_full, double threshold) {
  VideoMetrics m;
  m.name = name;
  m.frames = output.dim(0);
  const auto p = psnr(output, clean);
  const auto s = ssim(output, clean);
  for (double v : p) m.psnr += v;
  for (double v : s) m.ssim += v;
  m.psnr /= static_cast<double>(p.size());
  m.ssim /= static_cast<double>(s.size());
  m.ewarp = warp_error(output, flows_full, threshold);
  return m;
}

}  // namespace flowvip::metrics
