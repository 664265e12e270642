#include "flowvip/geom.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "blas.hpp"
#include "flowvip/errors.hpp"
#include "flowvip/ops.hpp"
#include "flowvip/parallel.hpp"

namespace flowvip::geom {

using detail::make_result;
using detail::Node;

namespace {

std::atomic<bool> g_deform_fault{false};

// Clamped bilinear footprint of one sampling coordinate.
struct Footprint {
  int64_t y0, y1, x0, x1;
  Scalar ly, lx;
  bool y_inside, x_inside;  // coordinate strictly moves the sample (not clamped)

  Footprint(Scalar y, Scalar x, int64_t h, int64_t w) {
    const Scalar ymax = static_cast<Scalar>(h - 1), xmax = static_cast<Scalar>(w - 1);
    y_inside = y >= 0 && y <= ymax;
    x_inside = x >= 0 && x <= xmax;
    const Scalar yc = std::clamp(y, Scalar(0), ymax);
    const Scalar xc = std::clamp(x, Scalar(0), xmax);
    const Scalar fy = std::floor(yc), fx = std::floor(xc);
    y0 = static_cast<int64_t>(fy);
    x0 = static_cast<int64_t>(fx);
    y1 = std::min(y0 + 1, h - 1);
    x1 = std::min(x0 + 1, w - 1);
    ly = yc - fy;
    lx = xc - fx;
  }

  Scalar w00() const { return (1 - ly) * (1 - lx); }
  Scalar w01() const { return (1 - ly) * lx; }
  Scalar w10() const { return ly * (1 - lx); }
  Scalar w11() const { return ly * lx; }
};

// Samples channels [c0, c0 + cn) of an [h, w, c] image.
inline void sample(const Scalar* img, int64_t w, int64_t c, const Footprint& f, int64_t c0, int64_t cn,
                   Scalar* out) {
  const Scalar* p00 = img + (f.y0 * w + f.x0) * c + c0;
  const Scalar* p01 = img + (f.y0 * w + f.x1) * c + c0;
  const Scalar* p10 = img + (f.y1 * w + f.x0) * c + c0;
  const Scalar* p11 = img + (f.y1 * w + f.x1) * c + c0;
  const Scalar a = f.w00(), b = f.w01(), d = f.w10(), e = f.w11();
  for (int64_t i = 0; i < cn; ++i) out[i] = a * p00[i] + b * p01[i] + d * p10[i] + e * p11[i];
}

// Scatters upstream gradient g (per channel) into the image gradient and
// returns d(sum g*sample)/dy and /dx.
inline void sample_backward(const Scalar* img, Scalar* gimg, int64_t w, int64_t c, const Footprint& f, int64_t c0,
                            int64_t cn, const Scalar* g, Scalar& dy, Scalar& dx) {
  const int64_t o00 = (f.y0 * w + f.x0) * c + c0, o01 = (f.y0 * w + f.x1) * c + c0;
  const int64_t o10 = (f.y1 * w + f.x0) * c + c0, o11 = (f.y1 * w + f.x1) * c + c0;
  const Scalar a = f.w00(), b = f.w01(), d = f.w10(), e = f.w11();
  Scalar sy = 0, sx = 0;
  for (int64_t i = 0; i < cn; ++i) {
    const Scalar gi = g[i];
    if (gi == 0) continue;
    if (gimg) {
      gimg[o00 + i] += a * gi;
      gimg[o01 + i] += b * gi;
      gimg[o10 + i] += d * gi;
      gimg[o11 + i] += e * gi;
    }
    const Scalar v00 = img[o00 + i], v01 = img[o01 + i], v10 = img[o10 + i], v11 = img[o11 + i];
    sy += gi * ((1 - f.lx) * (v10 - v00) + f.lx * (v11 - v01));
    sx += gi * ((1 - f.ly) * (v01 - v00) + f.ly * (v11 - v10));
  }
  dy = f.y_inside ? sy : Scalar(0);
  dx = f.x_inside ? sx : Scalar(0);
}

}  // namespace

namespace testing {
void set_deform_backward_fault(bool enabled) { g_deform_fault = enabled; }
bool deform_backward_fault() { return g_deform_fault; }
}  // namespace testing

Tensor bilinear_warp(const Tensor& src, const Tensor& flow) {
  const Shape& ss = src.shape();
  const Shape& fs = flow.shape();
  const bool batched = ss.size() == 4;
  if (!(ss.size() == 3 || batched) || fs.size() != ss.size() || fs.back() != 2 ||
      !std::equal(ss.begin(), ss.end() - 1, fs.begin())) {
    throw ShapeError("bilinear_warp: source " + shape_str(ss) + " and flow " + shape_str(fs) +
                     " do not match (expected [..,h,w,c] with [..,h,w,2])");
  }
  const int64_t n = batched ? ss[0] : 1;
  const int64_t h = ss[ss.size() - 3], w = ss[ss.size() - 2], c = ss.back();
  const Scalar* ps = src.data().data();
  const Scalar* pf = flow.data().data();
  std::vector<Scalar> out(src.numel());
  parallel_for(n * h, 16, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const int64_t b = r / h, y = r % h;
      const Scalar* img = ps + b * h * w * c;
      for (int64_t x = 0; x < w; ++x) {
        const int64_t pix = r * w + x;
        const Footprint f(static_cast<Scalar>(y) + pf[pix * 2 + 1], static_cast<Scalar>(x) + pf[pix * 2], h, w);
        sample(img, w, c, f, 0, c, out.data() + pix * c);
      }
    }
  });
  return make_result(ss, std::move(out), "bilinear_warp", {src, flow}, [n, h, w, c](Node& self) {
    const Scalar* g = self.grad.data();
    const Scalar* ps = self.inputs[0]->value.data();
    const Scalar* pf = self.inputs[1]->value.data();
    Scalar* gs = self.input_grad(0);
    Scalar* gf = self.input_grad(1);
    for (int64_t b = 0; b < n; ++b) {
      const Scalar* img = ps + b * h * w * c;
      Scalar* gimg = gs ? gs + b * h * w * c : nullptr;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          const int64_t pix = (b * h + y) * w + x;
          const Footprint f(static_cast<Scalar>(y) + pf[pix * 2 + 1], static_cast<Scalar>(x) + pf[pix * 2], h, w);
          Scalar dy = 0, dx = 0;
          sample_backward(img, gimg, w, c, f, 0, c, g + pix * c, dy, dx);
          if (gf) {
            gf[pix * 2] += dx;
            gf[pix * 2 + 1] += dy;
          }
        }
    }
  });
}

Tensor mod_deform_conv_masked(const Tensor& input, const Tensor& weight, const Tensor& bias,
                              const Tensor& base_flow, const Tensor& offsets, const Tensor& mask, int groups) {
  const Shape& si = input.shape();
  const Shape& sw = weight.shape();
  if (si.size() != 3) throw ShapeError("mod_deform_conv: input must be [h,w,c], got " + shape_str(si));
  const int64_t h = si[0], w = si[1], cin = si[2];
  if (sw.size() != 4 || sw[0] != sw[1] || sw[2] != cin) {
    throw ShapeError("mod_deform_conv: weight " + shape_str(sw) + " incompatible with input " + shape_str(si));
  }
  const int64_t K = sw[0], cout = sw[3], KK = K * K;
  if (K % 2 == 0) throw ShapeError("mod_deform_conv: kernel size " + std::to_string(K) + " must be odd");
  if (groups < 1 || cin % groups != 0) {
    throw ShapeError("mod_deform_conv: " + std::to_string(cin) + " input channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  const int64_t G = groups, cg = cin / G;
  if (!bias.defined() || bias.numel() != cout) throw ShapeError("mod_deform_conv: bias must be [c_out]");
  if (offsets.shape() != Shape{h, w, KK * G * 2}) {
    throw ShapeError("mod_deform_conv: offsets " + shape_str(offsets.shape()) + " expected " +
                     shape_str({h, w, KK * G * 2}));
  }
  if (mask.shape() != Shape{h, w, KK * G}) {
    throw ShapeError("mod_deform_conv: mask " + shape_str(mask.shape()) + " expected " + shape_str({h, w, KK * G}));
  }
  const bool has_flow = base_flow.defined();
  if (has_flow && base_flow.shape() != Shape{h, w, 2}) {
    throw ShapeError("mod_deform_conv: base flow " + shape_str(base_flow.shape()) + " expected " +
                     shape_str({h, w, 2}));
  }

  const int64_t P = h * w, cols_w = KK * cin, r = K / 2;
  const Scalar* px = input.data().data();
  const Scalar* po = offsets.data().data();
  const Scalar* pm = mask.data().data();
  const Scalar* pf = has_flow ? base_flow.data().data() : nullptr;

  // samples[p, k, ci] = bilinear sample (unmodulated); cols = samples * mask.
  std::vector<Scalar> samples(P * cols_w);
  std::vector<Scalar> cols(P * cols_w);
  parallel_for(P, 32, [&](int64_t p0, int64_t p1) {
    for (int64_t p = p0; p < p1; ++p) {
      const int64_t y = p / w, x = p % w;
      const Scalar by = pf ? pf[p * 2 + 1] : 0, bx = pf ? pf[p * 2] : 0;
      for (int64_t g = 0; g < G; ++g)
        for (int64_t k = 0; k < KK; ++k) {
          const int64_t ch = g * KK + k;
          const Scalar sy = static_cast<Scalar>(y + k / K - r) + by + po[(p * KK * G + ch) * 2 + 1];
          const Scalar sx = static_cast<Scalar>(x + k % K - r) + bx + po[(p * KK * G + ch) * 2];
          const Footprint f(sy, sx, h, w);
          Scalar* dst = samples.data() + p * cols_w + k * cin + g * cg;
          sample(px, w, cin, f, g * cg, cg, dst);
          const Scalar m = pm[p * KK * G + ch];
          Scalar* cd = cols.data() + p * cols_w + k * cin + g * cg;
          for (int64_t i = 0; i < cg; ++i) cd[i] = dst[i] * m;
        }
    }
  });

  std::vector<Scalar> out(P * cout);
  const Scalar* pb = bias.data().data();
  for (int64_t p = 0; p < P; ++p) std::copy_n(pb, cout, out.data() + p * cout);
  detail::gemm(false, false, static_cast<int>(P), static_cast<int>(cout), static_cast<int>(cols_w), 1, cols.data(),
               static_cast<int>(cols_w), weight.data().data(), static_cast<int>(cout), 1, out.data(),
               static_cast<int>(cout));

  std::vector<Tensor> inputs{input, weight, bias, offsets, mask};
  if (has_flow) inputs.push_back(base_flow);
  return make_result(
      {h, w, cout}, std::move(out), "mod_deform_conv", inputs,
      [=, samples = std::move(samples), cols = std::move(cols)](Node& self) {
        const Scalar* g = self.grad.data();
        const Scalar* px = self.inputs[0]->value.data();
        const Scalar* pw = self.inputs[1]->value.data();
        const Scalar* po = self.inputs[3]->value.data();
        const Scalar* pm = self.inputs[4]->value.data();
        const Scalar* pf = has_flow ? self.inputs[5]->value.data() : nullptr;
        Scalar* gx = self.input_grad(0);
        Scalar* gw = self.input_grad(1);
        Scalar* gb = self.input_grad(2);
        Scalar* go = self.input_grad(3);
        Scalar* gm = self.input_grad(4);
        Scalar* gf = has_flow ? self.input_grad(5) : nullptr;
        const int Pi = static_cast<int>(P), Ci = static_cast<int>(cols_w), Oi = static_cast<int>(cout);
        if (gb)
          for (int64_t p = 0; p < P; ++p)
            for (int64_t o = 0; o < cout; ++o) gb[o] += g[p * cout + o];
        if (gw) detail::gemm(true, false, Ci, Oi, Pi, 1, cols.data(), Ci, g, Oi, 1, gw, Oi);
        if (!(gx || go || gm || gf)) return;
        std::vector<Scalar> dcols(P * cols_w);
        detail::gemm(false, true, Pi, Ci, Oi, 1, g, Oi, pw, Oi, 0, dcols.data(), Ci);
        const bool fault = g_deform_fault.load();
        std::vector<Scalar> dval(cg);
        for (int64_t p = 0; p < P; ++p) {
          const int64_t y = p / w, x = p % w;
          const Scalar by = pf ? pf[p * 2 + 1] : 0, bx = pf ? pf[p * 2] : 0;
          for (int64_t gi = 0; gi < G; ++gi)
            for (int64_t k = 0; k < KK; ++k) {
              const int64_t ch = gi * KK + k;
              const int64_t base = p * cols_w + k * cin + gi * cg;
              const Scalar m = pm[p * KK * G + ch];
              if (gm) {
                Scalar s = 0;
                for (int64_t i = 0; i < cg; ++i) s += dcols[base + i] * samples[base + i];
                gm[p * KK * G + ch] += fault ? -s : s;
              }
              if (!(gx || go || gf)) continue;
              for (int64_t i = 0; i < cg; ++i) dval[i] = dcols[base + i] * m;
              const Scalar sy = static_cast<Scalar>(y + k / K - r) + by + po[(p * KK * G + ch) * 2 + 1];
              const Scalar sx = static_cast<Scalar>(x + k % K - r) + bx + po[(p * KK * G + ch) * 2];
              const Footprint f(sy, sx, h, w);
              Scalar dy = 0, dx = 0;
              sample_backward(px, gx, w, cin, f, gi * cg, cg, dval.data(), dy, dx);
              if (go) {
                go[(p * KK * G + ch) * 2] += dx;
                go[(p * KK * G + ch) * 2 + 1] += dy;
              }
              if (gf) {
                gf[p * 2] += dx;
                gf[p * 2 + 1] += dy;
              }
            }
        }
      });
}

Tensor mod_deform_conv(const Tensor& input, const Tensor& weight, const Tensor& bias, const Tensor& base_flow,
                       const Tensor& offsets, const Tensor& mask_logits, int groups) {
  return mod_deform_conv_masked(input, weight, bias, base_flow, offsets, sigmoid(mask_logits), groups);
}

}  // namespace flowvip::geom
