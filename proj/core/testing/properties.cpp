#include "flowvip/testing/properties.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "flowvip/checkpoint.hpp"
#include "flowvip/data.hpp"
#include "flowvip/errors.hpp"
#include "flowvip/flowcomp.hpp"
#include "flowvip/focal.hpp"
#include "flowvip/geom.hpp"
#include "flowvip/gradcheck.hpp"
#include "flowvip/metrics.hpp"
#include "flowvip/model.hpp"
#include "flowvip/optim.hpp"
#include "flowvip/propagation.hpp"
#include "flowvip/testing/oracles.hpp"

namespace flowvip::props {

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;
using Rng = std::mt19937_64;

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(3) << v;
  return os.str();
}

Outcome within(double err, double tol, const std::string& what = "max |diff|") {
  return {err <= tol, what + " = " + num(err) + " (tol " + num(tol) + ")"};
}

Outcome expect(bool ok, const std::string& detail) { return {ok, detail}; }

// Random values with |v| in [lo, hi] and random sign: keeps kinks at 0 out of reach.
Tensor away(const Shape& s, Rng& rng, double lo = 0.1, double hi = 1.0) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<Scalar> v(numel_of(s));
  for (auto& x : v) x = static_cast<Scalar>(sign(rng) ? mag(rng) : -mag(rng));
  return Tensor::from(s, std::move(v));
}

Tensor rnd(const Shape& s, Rng& rng, double lo = -1, double hi = 1) { return Tensor::uniform(s, rng, lo, hi); }

// Turns a tensor-valued function into the scalar sum(f(x) * R) with a fixed random R.
Fn scalarize(const Fn& f, const std::vector<Tensor>& inputs, Rng& rng) {
  Shape s;
  {
    NoGradGuard guard;
    s = f(inputs).shape();
  }
  const Tensor R = Tensor::uniform(s, rng, -1, 1);
  return [f, R](const std::vector<Tensor>& in) { return sum(f(in) * R); };
}

struct Case {
  Fn f;
  std::vector<Tensor> inputs;
};

Property grad(const std::string& name, std::function<Case(Rng&)> make, GradcheckOptions opts = {}, int seeds = 3) {
  return {name, "gradient", [=] {
            double worst = 0;
            int64_t checked = 0;
            for (int s = 0; s < seeds; ++s) {
              Rng rng(1000 + 17 * s);
              Case c = make(rng);
              const Fn f = scalarize(c.f, c.inputs, rng);
              const GradcheckReport r = gradcheck(f, c.inputs, opts);
              checked += r.checked;
              if (!r.passed) return Outcome{false, "seed " + std::to_string(s) + ": " + r.describe()};
              worst = std::max<double>(worst, r.worst_rel_error);
            }
            return Outcome{true, std::to_string(seeds) + " seeds, " + std::to_string(checked) +
                                     " elements, worst rel err " + num(worst)};
          }};
}

// Gradcheck over parameters of a module closure (plus optional inputs).
struct ParamCase {
  std::function<Tensor()> f;
  std::vector<Tensor> params;
  std::shared_ptr<void> keep;  // owns the module
};

Property grad_params(const std::string& name, std::function<ParamCase(Rng&)> make, GradcheckOptions opts = {},
                     int seeds = 3) {
  return {name, "gradient", [=] {
            double worst = 0;
            int64_t checked = 0;
            for (int s = 0; s < seeds; ++s) {
              Rng rng(2000 + 31 * s);
              ParamCase c = make(rng);
              const GradcheckReport r = gradcheck_params(c.f, c.params, opts);
              checked += r.checked;
              if (!r.passed) return Outcome{false, "seed " + std::to_string(s) + ": " + r.describe()};
              worst = std::max<double>(worst, r.worst_rel_error);
            }
            return Outcome{true, std::to_string(seeds) + " seeds, " + std::to_string(checked) +
                                     " elements, worst rel err " + num(worst)};
          }};
}

std::vector<Tensor> tensors_of(const nn::ParameterList& ps) {
  std::vector<Tensor> out;
  for (const auto& p : ps) out.push_back(p.tensor);
  return out;
}

// Replaces zero-initialised layers with small random values.
void jitter(const nn::Conv2d& conv, Rng& rng, double scale) {
  for (Tensor t : {conv.weight, conv.bias})
    for (Scalar& v : t.mutable_data()) v = static_cast<Scalar>(std::uniform_real_distribution<double>(-scale, scale)(rng));
}

std::function<Tensor()> weighted_sum(std::function<Tensor()> f, Rng& rng) {
  Shape s;
  {
    NoGradGuard guard;
    s = f().shape();
  }
  const Tensor R = Tensor::uniform(s, rng, -1, 1);
  return [f, R] { return sum(f() * R); };
}

}  // namespace

std::vector<Property> oracle_properties() {
  std::vector<Property> p;

  p.push_back({"matmul_vs_triple_loop", "oracle", [] {
                 Rng rng(1);
                 const Tensor a = rnd({4, 5}, rng), b = rnd({5, 3}, rng);
                 const auto ref = oracle::matmul({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}, 4, 5, 3);
                 return within(oracle::max_abs_diff(matmul(a, b), Tensor::from({4, 3}, {ref.begin(), ref.end()})), 1e-6);
               }});

  p.push_back({"conv2d_vs_direct_loop", "oracle", [] {
                 Rng rng(2);
                 double err = 0;
                 for (int stride : {1, 2}) {
                   const Tensor x = rnd({2, 7, 6, 3}, rng), w = rnd({3, 3, 3, 4}, rng), b = rnd({4}, rng);
                   err = std::max(err, oracle::max_abs_diff(conv2d(x, w, b, stride, 1), oracle::conv_zero(x, w, b, stride, 1)));
                 }
                 return within(err, 1e-10);
               }});

  p.push_back({"dcn_equals_direct_conv", "oracle", [] {
                 Rng rng(3);
                 double err = 0;
                 for (int K : {3, 5}) {
                   const int G = 2;
                   const Tensor x = rnd({6, 7, 4}, rng), w = rnd({K, K, 4, 5}, rng), b = rnd({5}, rng);
                   const Tensor off = Tensor::zeros({6, 7, K * K * G * 2});
                   const Tensor logits = Tensor::full({6, 7, K * K * G}, 20);
                   const Tensor out = geom::mod_deform_conv(x, w, b, Tensor::zeros({6, 7, 2}), off, logits, G);
                   err = std::max(err, oracle::max_abs_diff(out, oracle::conv_replicate(x, w, b)));
                 }
                 return within(err, 1e-5);
               }});

  p.push_back({"dcn_masked_taps_give_bias", "oracle", [] {
                 Rng rng(4);
                 const Tensor x = rnd({5, 5, 4}, rng), w = rnd({3, 3, 4, 3}, rng), b = rnd({3}, rng);
                 const Tensor off = rnd({5, 5, 9 * 2 * 2}, rng);
                 const Tensor out = geom::mod_deform_conv(x, w, b, Tensor(), off, Tensor::full({5, 5, 18}, -40), 2);
                 double err = 0;
                 for (int64_t i = 0; i < out.numel(); ++i) err = std::max(err, std::abs(out.data()[i] - b.data()[i % 3]));
                 return within(err, 1e-8);
               }});

  p.push_back({"dcn_vs_gather_oracle", "oracle", [] {
                 Rng rng(5);
                 double err = 0;
                 {
                   const Tensor x = rnd({5, 5, 2}, rng), w = rnd({3, 3, 2, 3}, rng), b = rnd({3}, rng);
                   const Tensor off = rnd({5, 5, 18}, rng), mask = rnd({5, 5, 9}, rng, 0, 1);
                   err = oracle::max_abs_diff(geom::mod_deform_conv_masked(x, w, b, Tensor(), off, mask, 1),
                                              oracle::deform_gather(x, w, b, Tensor(), off, mask, 1));
                 }
                 {
                   const Tensor x = rnd({6, 4, 4}, rng), w = rnd({3, 3, 4, 2}, rng), b = rnd({2}, rng);
                   const Tensor flow = rnd({6, 4, 2}, rng, -2, 2), off = rnd({6, 4, 36}, rng, -1.5, 1.5);
                   const Tensor mask = rnd({6, 4, 18}, rng, 0, 1);
                   err = std::max(err, oracle::max_abs_diff(geom::mod_deform_conv_masked(x, w, b, flow, off, mask, 2),
                                                            oracle::deform_gather(x, w, b, flow, off, mask, 2)));
                 }
                 return within(err, 1e-6);
               }});

  p.push_back({"dcn_group_relabel_invariance", "oracle", [] {
                 Rng rng(6);
                 const int K = 3, G = 2, cin = 4, cg = 2;
                 const Tensor x = rnd({5, 5, cin}, rng), w = rnd({K, K, cin, 3}, rng), b = rnd({3}, rng);
                 const Tensor off = rnd({5, 5, K * K * G * 2}, rng), mask = rnd({5, 5, K * K * G}, rng, 0, 1);
                 // swap groups 0 and 1 everywhere: input channels, weight rows, offsets and mask channels
                 auto swap_last = [](const Tensor& t, int64_t block) {
                   const int64_t last = t.dim(-1), half = last / 2;
                   std::vector<Scalar> v(t.numel());
                   for (int64_t i = 0; i < t.numel(); ++i) {
                     const int64_t c = i % last, base = i - c;
                     v[base + (c + half) % last] = t.data()[i];
                   }
                   (void)block;
                   return Tensor::from(t.shape(), std::move(v));
                 };
                 std::vector<Scalar> wv(w.numel());
                 for (int64_t ky = 0; ky < K; ++ky)
                   for (int64_t kx = 0; kx < K; ++kx)
                     for (int64_t c = 0; c < cin; ++c)
                       for (int64_t o = 0; o < 3; ++o)
                         wv[((ky * K + kx) * cin + (c + cg) % cin) * 3 + o] = w.at({ky, kx, c, o});
                 const Tensor a = geom::mod_deform_conv_masked(x, w, b, Tensor(), off, mask, G);
                 const Tensor bb = geom::mod_deform_conv_masked(swap_last(x, cg), Tensor::from(w.shape(), wv), b, Tensor(),
                                                                swap_last(off, 0), swap_last(mask, 0), G);
                 return within(oracle::max_abs_diff(a, bb), 1e-10);
               }});

  p.push_back({"warp_zero_flow_identity", "oracle", [] {
                 Rng rng(7);
                 const Tensor x = rnd({6, 5, 3}, rng);
                 const Tensor y = geom::bilinear_warp(x, Tensor::zeros({6, 5, 2}));
                 bool exact = true;
                 for (int64_t i = 0; i < x.numel(); ++i) exact = exact && x.data()[i] == y.data()[i];
                 return expect(exact, exact ? "bit-identical" : "differs");
               }});

  p.push_back({"warp_fractional_shift_hand_case", "oracle", [] {
                 const Tensor src = Tensor::from({2, 2, 1}, {0, 1, 2, 3});
                 const Tensor flow = Tensor::from({2, 2, 2}, {0.5, 0, 0.5, 0, 0.5, 0, 0.5, 0});
                 const Tensor y = geom::bilinear_warp(src, flow);
                 const double err = std::max(std::abs(y.at({0, 0, 0}) - 0.5), std::abs(y.at({1, 0, 0}) - 2.5));
                 return within(err, 1e-10);
               }});

  p.push_back({"warp_integer_shift_replicates_edge", "oracle", [] {
                 Rng rng(8);
                 const Tensor x = rnd({4, 5, 2}, rng);
                 std::vector<Scalar> f(4 * 5 * 2, 0);
                 for (int i = 0; i < 20; ++i) f[i * 2] = 1;
                 const Tensor y = geom::bilinear_warp(x, Tensor::from({4, 5, 2}, f));
                 double err = 0;
                 for (int64_t r = 0; r < 4; ++r)
                   for (int64_t c = 0; c < 5; ++c)
                     for (int64_t k = 0; k < 2; ++k)
                       err = std::max(err, std::abs(y.at({r, c, k}) - x.at({r, std::min<int64_t>(c + 1, 4), k})));
                 return within(err, 0.0);
               }});

  p.push_back({"warp_linear_in_source", "oracle", [] {
                 Rng rng(9);
                 const Tensor a = rnd({5, 6, 3}, rng), b = rnd({5, 6, 3}, rng), f = rnd({5, 6, 2}, rng, -3, 3);
                 const Scalar al = 0.7, be = -1.3;
                 const Tensor lhs = geom::bilinear_warp(a * al + b * be, f);
                 const Tensor rhs = geom::bilinear_warp(a, f) * al + geom::bilinear_warp(b, f) * be;
                 return within(oracle::max_abs_diff(lhs, rhs), 1e-10);
               }});

  p.push_back({"warp_vs_scalar_oracle", "oracle", [] {
                 Rng rng(10);
                 const Tensor a = rnd({6, 7, 3}, rng), f = rnd({6, 7, 2}, rng, -4, 4);
                 return within(oracle::max_abs_diff(geom::bilinear_warp(a, f), oracle::warp(a, f)), 1e-12);
               }});

  p.push_back({"focal_degenerate_equals_dense", "oracle", [] {
                 Rng rng(11);
                 double err = 0;
                 for (Shape s : {Shape{2, 4, 4, 8}, Shape{1, 2, 3, 8}}) {
                   const focal::WindowShape whole{s[0], s[1], s[2]};
                   focal::FocalBlock blk(8, 2, 2, whole, {3, 1, 1}, rng);
                   for (auto* l : {&blk.fq, &blk.fkv, &blk.proj})
                     for (Scalar& v : l->bias.mutable_data()) v = static_cast<Scalar>(std::uniform_real_distribution<double>(-0.3, 0.3)(rng));
                   const Tensor z = rnd(s, rng, -2, 2);
                   err = std::max(err, oracle::max_abs_diff(blk.attention(z, focal::AttentionMode::local),
                                                            oracle::dense_attention(z, blk)));
                   err = std::max(err, oracle::max_abs_diff(blk.attention(z, focal::AttentionMode::global),
                                                            oracle::dense_attention(z, blk)));
                 }
                 return within(err, 1e-5);
               }});

  p.push_back({"attention_identical_keys_average_values", "oracle", [] {
                 Rng rng(12);
                 focal::FocalBlock blk(8, 2, 2, {0, 2, 2}, {3, 1, 1}, rng);
                 // f_kv key half zeroed: every key equals the bias, softmax is uniform.
                 auto w = blk.fkv.weight.mutable_data();
                 for (int64_t i = 0; i < 8; ++i)
                   for (int64_t o = 0; o < 8; ++o) w[i * 16 + o] = 0;
                 const Tensor z = rnd({2, 2, 2, 8}, rng);
                 const Tensor out = blk.attention(z, focal::AttentionMode::global);
                 // expected: proj(mean over tokens of V)
                 const Tensor v = narrow(blk.fkv(z), 3, 8, 8);
                 const Tensor mv = mean(reshape(v, {8, 8}) * Scalar(1));
                 std::vector<Scalar> avg(8, 0);
                 for (int64_t i = 0; i < 8; ++i)
                   for (int64_t c = 0; c < 8; ++c) avg[c] += v.data()[i * 8 + c] / 8;
                 (void)mv;
                 const Tensor expected_row = blk.proj(Tensor::from({1, 8}, avg));
                 double err = 0;
                 for (int64_t i = 0; i < 8; ++i)
                   for (int64_t c = 0; c < 8; ++c) err = std::max(err, std::abs(out.data()[i * 8 + c] - expected_row.data()[c]));
                 return within(err, 1e-12);
               }});

  p.push_back({"softmax_rows_sum_to_one", "oracle", [] {
                 Rng rng(13);
                 const Tensor s = softmax(rnd({7, 45}, rng, -20, 20));
                 double err = 0;
                 for (int64_t r = 0; r < 7; ++r) {
                   double t = 0;
                   for (int64_t c = 0; c < 45; ++c) t += s.at({r, c});
                   err = std::max(err, std::abs(t - 1));
                 }
                 return within(err, 1e-6);
               }});

  p.push_back({"soft_split_composite_roundtrip", "oracle", [] {
                 Rng rng(14);
                 const focal::SplitGeometry geo{7, 3, 3};
                 const int C = 2, D = 7 * 7 * C;
                 // random orthonormal D x D via Gram-Schmidt
                 std::vector<std::vector<double>> q;
                 std::normal_distribution<double> n01;
                 while (static_cast<int>(q.size()) < D) {
                   std::vector<double> v(D);
                   for (auto& x : v) x = n01(rng);
                   for (const auto& u : q) {
                     double d = 0;
                     for (int i = 0; i < D; ++i) d += v[i] * u[i];
                     for (int i = 0; i < D; ++i) v[i] -= d * u[i];
                   }
                   double nrm = 0;
                   for (double x : v) nrm += x * x;
                   nrm = std::sqrt(nrm);
                   for (double& x : v) x /= nrm;
                   q.push_back(v);
                 }
                 focal::SoftSplit split(C, D, geo, rng);
                 focal::SoftComposite comp(C, D, geo, rng);
                 auto ws = split.proj.weight.mutable_data();
                 auto wc = comp.proj.weight.mutable_data();
                 for (int i = 0; i < D; ++i)
                   for (int j = 0; j < D; ++j) {
                     ws[i * D + j] = static_cast<Scalar>(q[j][i]);  // Q^T as [in, out]
                     wc[i * D + j] = static_cast<Scalar>(q[i][j]);  // Q
                   }
                 const Tensor x = rnd({2, 16, 16, C}, rng);
                 const Tensor y = comp(split(x), 16, 16);
                 return within(oracle::max_abs_diff(x, y), 1e-6);
               }});

  p.push_back({"soft_composite_of_equal_tokens_is_constant", "oracle", [] {
                 Rng rng(15);
                 const focal::SplitGeometry geo{7, 3, 3};
                 focal::SoftComposite comp(3, 5, geo, rng);
                 // projection maps every token to a patch of 0.37 in every entry
                 for (Scalar& v : comp.proj.weight.mutable_data()) v = 0;
                 for (Scalar& v : comp.proj.bias.mutable_data()) v = Scalar(0.37);
                 const Tensor y = comp(Tensor::full({2, 6, 6, 5}, 1.5), 16, 16);
                 double err = 0;
                 for (Scalar v : y.data()) err = std::max(err, std::abs(v - 0.37));
                 return within(err, 1e-12);
               }});

  p.push_back({"token_grid_size_formula", "oracle", [] {
                 const focal::SplitGeometry geo{7, 3, 3};
                 const bool ok = geo.tokens_along(60) == 20 && geo.tokens_along(108) == 36 && geo.tokens_along(16) == 6;
                 return expect(ok, "60x108 -> " + std::to_string(geo.tokens_along(60)) + "x" +
                                       std::to_string(geo.tokens_along(108)) + ", 16x16 -> " +
                                       std::to_string(geo.tokens_along(16)) + "x" + std::to_string(geo.tokens_along(16)));
               }});

  p.push_back({"window_partition_roundtrip", "oracle", [] {
                 Rng rng(16);
                 const Tensor z = rnd({8, 20, 36, 3}, rng);
                 const focal::WindowShape win{8, 5, 9};
                 const Tensor w = focal::partition_windows(z, win);
                 const Tensor back = focal::unpartition_windows(w, win, 8, 20, 36);
                 const bool shape_ok = w.shape() == Shape{16, 360, 3};
                 const double err = oracle::max_abs_diff(z, back);
                 return expect(shape_ok && err == 0, "windows " + shape_str(w.shape()) + ", roundtrip diff " + num(err));
               }});

  p.push_back({"pool_uniform_weights_is_mean", "oracle", [] {
                 Rng rng(17);
                 const focal::WindowShape win{2, 3, 3};
                 nn::Linear fp(9, 1, rng);
                 for (Scalar& v : fp.weight.mutable_data()) v = Scalar(1) / 9;
                 const Tensor w = focal::partition_windows(rnd({2, 6, 6, 4}, rng), win);
                 const Tensor pooled = focal::pool_windows(w, win, fp);
                 double err = 0;
                 for (int64_t i = 0; i < w.dim(0); ++i)
                   for (int64_t t = 0; t < 2; ++t)
                     for (int64_t c = 0; c < 4; ++c) {
                       double m = 0;
                       for (int64_t k = 0; k < 9; ++k) m += w.at({i, t * 9 + k, c}) / 9;
                       err = std::max(err, std::abs(pooled.at({i, t, c}) - m));
                     }
                 return within(err, 1e-12);
               }});

  p.push_back({"fuse_vs_pointwise_oracle", "oracle", [] {
                 Rng rng(18);
                 propagation::Fusion fuse(4, rng);
                 for (Scalar& v : fuse.conv.bias.mutable_data()) v = static_cast<Scalar>(std::uniform_real_distribution<double>(-1, 1)(rng));
                 const Tensor a = rnd({3, 5, 5, 4}, rng), b = rnd({3, 5, 5, 4}, rng);
                 return within(oracle::max_abs_diff(fuse(a, b), oracle::pointwise(concat({a, b}, 3), fuse.conv.weight, fuse.conv.bias)), 1e-6);
               }});

  p.push_back({"propagation_identity_construction", "oracle", [] {
                 Rng rng(19);
                 const int C = 4, K = 3, G = 2;
                 propagation::PropagationCell cell(C, K, G, rng);
                 // alignment: centre-tap identity, mask saturated; merge: select current frame
                 for (Scalar& v : cell.deform_weight.mutable_data()) v = 0;
                 for (int c = 0; c < C; ++c) cell.deform_weight.mutable_data()[((1 * K + 1) * C + c) * C + c] = 1;
                 for (Scalar& v : cell.offset3.bias.mutable_data().subspan(2 * K * K * G)) v = 40;
                 for (auto* conv : {&cell.merge1, &cell.merge2}) {
                   for (Scalar& v : conv->weight.mutable_data()) v = 0;
                   for (Scalar& v : conv->bias.mutable_data()) v = 0;
                 }
                 for (int c = 0; c < C; ++c) {
                   cell.merge1.weight.mutable_data()[((1 * 3 + 1) * 2 * C + c) * C + c] = 1;
                   cell.merge2.weight.mutable_data()[((1 * 3 + 1) * C + c) * C + c] = 1;
                 }
                 const Tensor frame = rnd({1, 6, 6, C}, rng, 0.1, 1);
                 const Tensor feats = concat({frame, frame, frame, frame, frame}, 0);
                 const Tensor flows = Tensor::zeros({4, 6, 6, 2});
                 const double err = std::max(oracle::max_abs_diff(propagation::propagate_backward(feats, flows, cell), feats),
                                             oracle::max_abs_diff(propagation::propagate_forward(feats, flows, cell), feats));
                 return within(err, 1e-5);
               }});

  p.push_back({"propagation_time_reversal_mirror", "oracle", [] {
                 Rng rng(20);
                 propagation::PropagationCell cell(4, 3, 2, rng);
                 jitter(cell.offset3, rng, 0.05);
                 const Tensor feats = rnd({4, 6, 6, 4}, rng), flows = rnd({3, 6, 6, 2}, rng, -1.5, 1.5);
                 auto reverse = [](const Tensor& t) {
                   std::vector<int64_t> idx;
                   for (int64_t i = t.dim(0) - 1; i >= 0; --i) idx.push_back(i);
                   return index_select(t, idx);
                 };
                 const Tensor a = reverse(propagation::propagate_backward(feats, flows, cell));
                 const Tensor b = propagation::propagate_forward(reverse(feats), reverse(flows), cell);
                 return within(oracle::max_abs_diff(a, b), 1e-12);
               }});

  p.push_back({"propagation_causality", "oracle", [] {
                 Rng rng(21);
                 propagation::PropagationCell cell(4, 3, 2, rng);
                 jitter(cell.offset3, rng, 0.05);
                 const Tensor feats = rnd({4, 6, 6, 4}, rng), flows = rnd({3, 6, 6, 2}, rng, -1.5, 1.5);
                 const Tensor out = propagation::propagate_backward(feats, flows, cell);
                 // zero frames 0 and 1: backward output at frames 2, 3 must not move
                 const Tensor cut = concat({Tensor::zeros({2, 6, 6, 4}), narrow(feats, 0, 2, 2)}, 0);
                 const Tensor out2 = propagation::propagate_backward(cut, flows, cell);
                 return within(oracle::max_abs_diff(narrow(out, 0, 2, 2), narrow(out2, 0, 2, 2)), 0.0);
               }});

  p.push_back({"flow_loss_vs_scalar_oracle", "oracle", [] {
                 Rng rng(22);
                 flowcomp::BidirectionalFlows a, b;
                 a.forward = rnd({3, 4, 5, 2}, rng, -3, 3);
                 a.backward = rnd({3, 4, 5, 2}, rng, -3, 3);
                 b.forward = rnd({3, 4, 5, 2}, rng, -3, 3);
                 b.backward = rnd({3, 4, 5, 2}, rng, -3, 3);
                 return within(std::abs(flowcomp::flow_loss(a, b).item() - oracle::flow_loss(a, b)), 1e-8);
               }});

  p.push_back({"generator_losses_vs_scalar_oracle", "oracle", [] {
                 Rng rng(23);
                 const Tensor out = rnd({2, 8, 8, 3}, rng, 0, 1), tgt = rnd({2, 8, 8, 3}, rng, 0, 1);
                 flowcomp::BidirectionalFlows a, b;
                 a.forward = rnd({1, 2, 2, 2}, rng);
                 a.backward = rnd({1, 2, 2, 2}, rng);
                 b.forward = rnd({1, 2, 2, 2}, rng);
                 b.backward = rnd({1, 2, 2, 2}, rng);
                 const Tensor d = rnd({2, 1, 1, 1}, rng);
                 const auto t = model::generator_losses(out, tgt, a, b, d, {1, Scalar(1e-2), 1});
                 const double rec = oracle::l1_mean(out, tgt), adv = -(d.data()[0] + d.data()[1]) / 2;
                 const double fl = oracle::flow_loss(a, b);
                 const double err = std::max({std::abs(t.rec.item() - rec), std::abs(t.adv.item() - adv),
                                              std::abs(t.flow.item() - fl), std::abs(t.total.item() - (rec + 1e-2 * adv + fl))});
                 return within(err, 1e-12);
               }});

  p.push_back({"adam_vs_scalar_recurrence", "oracle", [] {
                 Tensor x = nn::parameter(Tensor::scalar(0.3));
                 Adam opt({{"x", x}}, {Scalar(0.01), Scalar(0), Scalar(0.99), Scalar(1e-8)});
                 for (int i = 0; i < 5; ++i) {
                   opt.zero_grad();
                   (x * Scalar(2.5)).backward();
                   opt.step();
                 }
                 return within(std::abs(x.item() - oracle::adam_scalar(0.3, 2.5, 5, 0.01, 0, 0.99, 1e-8)), 1e-14);
               }});

  p.push_back({"sliding_window_schedule", "oracle", [] {
                 const auto plans = oracle::schedule(50, 10, 10);
                 const auto cand = model::nonlocal_candidates(50, 10, 20, 10);
                 bool ok = plans.size() == 5 && cand == plans[1].candidates &&
                           cand == std::vector<int64_t>{0, 20, 30, 40};
                 for (const auto& pl : plans) ok = ok && model::nonlocal_candidates(50, pl.begin, pl.end, 10) == pl.candidates;
                 const auto sel = model::select_nonlocal(cand, 10, 20, 3);
                 ok = ok && sel == std::vector<int64_t>{0, 20, 30};
                 return expect(ok, std::to_string(plans.size()) + " windows; window 2 candidates {0,20,30,40}, nearest 3 {0,20,30}");
               }});

  return p;
}

std::vector<Property> gradient_properties(bool include_generator) {
  std::vector<Property> p;
  const GradcheckOptions opts;

  p.push_back(grad("add_broadcast", [](Rng& r) { return Case{[](auto& x) { return add(x[0], x[1]); }, {rnd({3, 4}, r), rnd({4}, r)}}; }));
  p.push_back(grad("sub_broadcast", [](Rng& r) { return Case{[](auto& x) { return sub(x[0], x[1]); }, {rnd({2, 3, 1}, r), rnd({3, 4}, r)}}; }));
  p.push_back(grad("mul_broadcast", [](Rng& r) { return Case{[](auto& x) { return mul(x[0], x[1]); }, {rnd({3, 4}, r), rnd({1, 4}, r)}}; }));
  p.push_back(grad("div_broadcast", [](Rng& r) { return Case{[](auto& x) { return div(x[0], x[1]); }, {rnd({3, 4}, r), rnd({4}, r, 0.5, 2)}}; }));
  p.push_back(grad("scalar_ops", [](Rng& r) {
    return Case{[](auto& x) { return rsub(2, mul(add(x[0], 2.5), -1.5)); }, {rnd({5}, r)}};
  }));
  p.push_back(grad("neg_exp_log_sqrt", [](Rng& r) {
    return Case{[](auto& x) { return neg(exp(x[0])) + log(x[1]) + sqrt(x[1]); }, {rnd({6}, r), rnd({6}, r, 0.5, 2)}};
  }));
  p.push_back(grad("abs_square", [](Rng& r) { return Case{[](auto& x) { return abs(x[0]) + square(x[0]); }, {away({7}, r)}}; }));
  p.push_back(grad("relu_leaky_relu", [](Rng& r) { return Case{[](auto& x) { return relu(x[0]) + leaky_relu(x[0]); }, {away({8}, r)}}; }));
  p.push_back(grad("sigmoid_tanh_gelu", [](Rng& r) {
    return Case{[](auto& x) { return sigmoid(x[0]) * tanh(x[0]) + gelu(x[0]); }, {rnd({9}, r, -3, 3)}};
  }));
  p.push_back(grad("sum_mean", [](Rng& r) {
    return Case{[](auto& x) { return reshape(sum(x[0]) * mean(square(x[0])), {1}); }, {rnd({3, 4}, r)}};
  }));
  p.push_back(grad("reshape_permute", [](Rng& r) {
    return Case{[](auto& x) { return permute(reshape(x[0], {4, 3, 2}), {2, 0, 1}); }, {rnd({2, 3, 4}, r)}};
  }));
  p.push_back(grad("concat_narrow", [](Rng& r) {
    return Case{[](auto& x) { return narrow(concat({x[0], x[1]}, 1), 1, 1, 4); }, {rnd({2, 3, 2}, r), rnd({2, 2, 2}, r)}};
  }));
  p.push_back(grad("index_select_stack_unstack", [](Rng& r) {
    return Case{[](auto& x) {
                  auto parts = unstack(index_select(x[0], {1, 0, 1, 2}));
                  return stack({parts[0] * parts[1], parts[2], parts[3]});
                },
                {rnd({3, 2, 2}, r)}};
  }));
  p.push_back(grad("matmul_batched_shared_transposed", [](Rng& r) {
    return Case{[](auto& x) { return matmul(x[0], x[1]) + matmul(x[0], x[2]) + matmul(x[0], x[3], true); },
                {rnd({2, 3, 4}, r), rnd({2, 4, 5}, r), rnd({4, 5}, r), rnd({2, 5, 4}, r)}};
  }));
  p.push_back(grad("linear", [](Rng& r) {
    return Case{[](auto& x) { return linear(x[0], x[1], x[2]); }, {rnd({2, 3, 4}, r), rnd({4, 5}, r), rnd({5}, r)}};
  }));
  p.push_back(grad("conv2d", [](Rng& r) {
    return Case{[](auto& x) { return conv2d(x[0], x[1], x[2], 1, 1) ; },
                {rnd({2, 5, 5, 3}, r), rnd({3, 3, 3, 4}, r), rnd({4}, r)}};
  }));
  p.push_back(grad("conv2d_strided", [](Rng& r) {
    return Case{[](auto& x) { return conv2d(x[0], x[1], x[2], 2, 1); }, {rnd({1, 7, 6, 2}, r), rnd({3, 3, 2, 3}, r), rnd({3}, r)}};
  }));
  p.push_back(grad("conv3d", [](Rng& r) {
    return Case{[](auto& x) {
                  Conv3dGeometry g;
                  g.stride = {1, 2, 2};
                  g.padding = {1, 1, 1};
                  return conv3d(x[0], x[1], x[2], g);
                },
                {rnd({3, 5, 5, 2}, r), rnd({3, 3, 3, 2, 3}, r), rnd({3}, r)}};
  }));
  p.push_back(grad("avg_pool_upsample", [](Rng& r) {
    return Case{[](auto& x) { return upsample_bilinear2x(avg_pool(x[0], 2)) + upsample_nearest2x(x[1]); },
                {rnd({2, 4, 6, 3}, r), rnd({2, 2, 3, 3}, r)}};
  }));
  p.push_back(grad("softmax", [](Rng& r) { return Case{[](auto& x) { return softmax(x[0]); }, {rnd({3, 7}, r, -3, 3)}}; }));
  p.push_back(grad("layer_norm", [](Rng& r) {
    return Case{[](auto& x) { return layer_norm(x[0], x[1], x[2]); }, {rnd({4, 6}, r, -2, 2), rnd({6}, r), rnd({6}, r)}};
  }));
  p.push_back(grad("bilinear_warp", [](Rng& r) {
    return Case{[](auto& x) { return geom::bilinear_warp(x[0], x[1]); },
                {rnd({5, 6, 3}, r), oracle::smooth_flow({5, 6, 2}, -2.5, 2.5, r)}};
  }));
  p.push_back(grad("bilinear_warp_batched", [](Rng& r) {
    return Case{[](auto& x) { return geom::bilinear_warp(x[0], x[1]); },
                {rnd({2, 4, 5, 2}, r), oracle::smooth_flow({2, 4, 5, 2}, -2.5, 2.5, r)}};
  }));
  p.push_back(grad("mod_deform_conv", [](Rng& r) {
    const Tensor flow = oracle::smooth_flow({5, 5, 2}, -1, 1, r);
    const Tensor off = oracle::smooth_offsets(flow, 5, 5, 3, 2, r);
    return Case{[](auto& x) { return geom::mod_deform_conv(x[0], x[1], x[2], x[3], x[4], x[5], 2); },
                {rnd({5, 5, 4}, r), rnd({3, 3, 4, 3}, r), rnd({3}, r), flow, off, rnd({5, 5, 18}, r, -2, 2)}};
  }));
  p.push_back(grad("downsample_quarter", [](Rng& r) {
    return Case{[](auto& x) { return flowcomp::downsample_quarter(x[0]); }, {rnd({2, 8, 8, 3}, r)}};
  }));
  p.push_back(grad("standardize_colour", [](Rng& r) {
    return Case{[](auto& x) { return flowcomp::standardize_colour(x[0]); }, {rnd({3, 4, 4, 4}, r)}};
  }));
  p.push_back(grad("flow_loss", [](Rng& r) {
    const Tensor gf = rnd({2, 3, 3, 2}, r), gb = rnd({2, 3, 3, 2}, r);
    const Tensor pf = gf + away({2, 3, 3, 2}, r), pb = gb + away({2, 3, 3, 2}, r);
    return Case{[gf, gb](auto& x) {
                  return reshape(flowcomp::flow_loss({x[0], x[1]}, {gf, gb}), {1});
                },
                {pf.detach(), pb.detach()}};
  }));
  p.push_back(grad_params("flow_pyramid_net", [](Rng& r) {
    auto net = std::make_shared<flowcomp::FlowPyramidNet>(2, 2, 4, r);
    nn::ParameterList ps;
    net->collect("f", ps);
    // zero biases put dead units exactly on the relu kink; the coarse flow is
    // pushed off the integer grid so the fine-level warp stays smooth
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (auto& q : ps) {
      const bool last = q.name.find("conv4") != std::string::npos;
      const bool is_bias = q.name.find("bias") != std::string::npos;
      if (!is_bias && !last) continue;
      for (Scalar& v : q.tensor.mutable_data()) v = static_cast<Scalar>(is_bias ? u(r) : u(r) / 5);
      if (last && is_bias && q.name.find("level1") != std::string::npos)
        for (Scalar& v : q.tensor.mutable_data()) v = Scalar(0.35);
    }
    const Tensor a = rnd({3, 8, 8, 2}, r, 0, 1), b = rnd({3, 8, 8, 2}, r, 0, 1);
    auto f = weighted_sum([net, a, b] { return (*net)(a, b); }, r);
    return ParamCase{f, tensors_of(ps), net};
  }));
  p.push_back(grad_params("propagate_fuse_chain", [](Rng& r) {
    struct M {
      propagation::PropagationCell b, f;
      propagation::Fusion fuse;
    };
    auto m = std::make_shared<M>(M{{4, 3, 2, r}, {4, 3, 2, r}, {4, r}});
    jitter(m->b.offset3, r, 0.004);
    jitter(m->f.offset3, r, 0.004);
    nn::ParameterList ps;
    m->b.collect("b", ps);
    m->f.collect("f", ps);
    m->fuse.collect("fuse", ps);
    Tensor feats = rnd({2, 5, 5, 4}, r);
    Tensor ff = oracle::smooth_flow({1, 5, 5, 2}, -1.5, 1.5, r, 0.25);
    Tensor fb = oracle::smooth_flow({1, 5, 5, 2}, -1.5, 1.5, r, 0.25);
    auto f = weighted_sum([m, feats, ff, fb] {
      return m->fuse(propagation::propagate_forward(feats, fb, m->f), propagation::propagate_backward(feats, ff, m->b));
    }, r);
    std::vector<Tensor> probe = tensors_of(ps);
    probe.insert(probe.end(), {feats, ff, fb});
    return ParamCase{f, probe, m};
  }));
  p.push_back(grad("unfold_fold_patches", [](Rng& r) {
    return Case{[](auto& x) {
                  const focal::SplitGeometry g{3, 2, 1};
                  return focal::fold_patches(focal::unfold_patches(x[0], g) * x[1], g, 5, 6, 2);
                },
                {rnd({2, 5, 6, 2}, r), rnd({2, 3, 3, 18}, r)}};
  }));
  p.push_back(grad("soft_split_composite", [](Rng& r) {
    const focal::SplitGeometry g{7, 3, 3};
    auto split = std::make_shared<focal::SoftSplit>(2, 6, g, r);
    auto comp = std::make_shared<focal::SoftComposite>(2, 6, g, r);
    return Case{[split, comp](auto& x) {
                  return (*comp)(linear(focal::unfold_patches(x[0], split->geometry), x[1], x[2]), 8, 8);
                },
                {rnd({2, 8, 8, 2}, r), rnd({98, 6}, r, -0.2, 0.2), rnd({6}, r)}};
  }));
  p.push_back(grad("partition_pool_windows", [](Rng& r) {
    return Case{[](auto& x) {
                  const focal::WindowShape w{2, 2, 2};
                  nn::Linear fp;
                  fp.weight = x[1];
                  fp.bias = x[2];
                  return focal::pool_windows(focal::partition_windows(x[0], w), w, fp);
                },
                {rnd({2, 4, 4, 3}, r), rnd({4, 1}, r), rnd({1}, r)}};
  }));
  for (auto mode : {focal::AttentionMode::focal, focal::AttentionMode::local, focal::AttentionMode::global}) {
    p.push_back(grad_params("attention_" + focal::to_string(mode), [mode](Rng& r) {
      auto blk = std::make_shared<focal::FocalBlock>(8, 2, 2, focal::WindowShape{0, 2, 2}, focal::SplitGeometry{3, 1, 1}, r);
      for (auto* l : {&blk->fq, &blk->fkv, &blk->proj})
        for (Scalar& v : l->weight.mutable_data()) v *= 20;
      nn::ParameterList ps;
      blk->collect("blk", ps);
      Tensor z = rnd({2, 4, 4, 8}, r);
      auto f = weighted_sum([blk, z, mode] { return blk->attention(z, mode); }, r);
      std::vector<Tensor> probe;
      for (auto& q : ps)
        if (q.name.find("ln") == std::string::npos && q.name.find("ff") == std::string::npos) probe.push_back(q.tensor);
      probe.push_back(z);
      return ParamCase{f, probe, blk};
    }));
  }
  p.push_back(grad_params("focal_block", [](Rng& r) {
    auto blk = std::make_shared<focal::FocalBlock>(8, 2, 2, focal::WindowShape{0, 2, 2}, focal::SplitGeometry{3, 1, 1}, r);
    for (auto* l : {&blk->fq, &blk->fkv, &blk->proj, &blk->ff1, &blk->ff2})
      for (Scalar& v : l->weight.mutable_data()) v *= 20;
    for (Scalar& v : blk->ln1.gamma.mutable_data()) v = static_cast<Scalar>(std::uniform_real_distribution<double>(0.5, 1.5)(r));
    nn::ParameterList ps;
    blk->collect("blk", ps);
    Tensor z = rnd({2, 4, 4, 8}, r);
    auto f = weighted_sum([blk, z] { return (*blk)(z, 4, 4, focal::AttentionMode::focal); }, r);
    std::vector<Tensor> probe = tensors_of(ps);
    probe.push_back(z);
    return ParamCase{f, probe, blk};
  }));
  p.push_back(grad_params("encoder_decoder", [](Rng& r) {
    struct M {
      model::Encoder e;
      model::Decoder d;
    };
    auto m = std::make_shared<M>(M{{4, 4, r}, {4, r}});
    nn::ParameterList ps;
    m->e.collect("e", ps);
    m->d.collect("d", ps);
    Tensor x = rnd({1, 8, 8, 4}, r, 0, 1);
    auto f = weighted_sum([m, x] { return m->d(m->e(x)); }, r);
    std::vector<Tensor> probe = tensors_of(ps);
    probe.push_back(x);
    return ParamCase{f, probe, m};
  }));
  p.push_back(grad_params("discriminator", [](Rng& r) {
    auto d = std::make_shared<model::Discriminator>(2, r);
    Tensor x = rnd({3, 32, 32, 3}, r, 0, 1);
    auto f = weighted_sum([d, x] { return (*d)(x); }, r);
    std::vector<Tensor> probe = tensors_of(d->parameters());
    probe.push_back(x);
    GradcheckOptions o;
    return ParamCase{f, probe, d};
  }, [] { GradcheckOptions o; o.max_probes_per_input = 200; return o; }()));
  p.push_back(grad("generator_and_discriminator_losses", [](Rng& r) {
    const Tensor tgt = rnd({2, 4, 4, 3}, r, 0.3, 0.7);
    const Tensor out = tgt + away({2, 4, 4, 3}, r, 0.05, 0.2);
    const Tensor gf = rnd({1, 2, 2, 2}, r), gb = rnd({1, 2, 2, 2}, r);
    return Case{[tgt, gf, gb](auto& x) {
                  const auto t = model::generator_losses(x[0], tgt, {x[1], x[2]}, {gf, gb}, x[3], {1, Scalar(1e-2), 1});
                  return reshape(t.total + model::discriminator_loss(x[3], x[4]), {1});
                },
                {out.detach(), (gf + away({1, 2, 2, 2}, r)).detach(), (gb + away({1, 2, 2, 2}, r)).detach(),
                 rnd({2, 1, 1, 1}, r, -0.8, 0.8), rnd({2, 1, 1, 1}, r, -0.8, 0.8)}};
  }));

  if (include_generator) {
    GradcheckOptions g;
    g.max_probes_per_input = 4;
    // larger steps cross leaky-relu kinks somewhere in the 5x64x64 volume;
    // floor 1e-2 means an absolute tolerance of 1e-5 for near-zero entries
    g.abs_floor = Scalar(1e-2);
    p.push_back(grad_params("generator_desk_5x64x64", [](Rng& r) {
      ModelConfig cfg = ModelConfig::desk();
      auto gen = std::make_shared<model::Generator>(cfg, r);
      // zero-initialised heads get small random values so warps sample off-grid
      jitter(gen->backward_cell.offset3, r, 0.002);
      jitter(gen->forward_cell.offset3, r, 0.002);
      nn::ParameterList ps = gen->parameters();
      std::uniform_real_distribution<double> u(-0.1, 0.1);
      for (auto& q : ps) {
        const bool is_bias = q.name.find("bias") != std::string::npos;
        const bool flow_head = q.name.find("conv4") != std::string::npos;
        if (flow_head) {
          // coarse-to-fine flow settles near 0.5 px: 0.1 * 4 + 0.05 * 2
          const Scalar b = q.name.find("level2") != std::string::npos ? Scalar(0.1)
                           : q.name.find("level1") != std::string::npos ? Scalar(0.05) : Scalar(0);
          for (Scalar& v : q.tensor.mutable_data()) v = is_bias ? b : static_cast<Scalar>(u(r) / 20);
        } else if (is_bias) {
          for (Scalar& v : q.tensor.mutable_data()) v = static_cast<Scalar>(u(r));
        }
      }
      Tensor frames = rnd({5, 64, 64, 3}, r, 0, 1);
      const Tensor masks = data::make_masks({data::MaskMode::object, 5}, 5, 64, 64);
      auto f = weighted_sum([gen, frames, masks] { return gen->forward(frames, masks, 3).frames; }, r);
      std::vector<Tensor> probe = tensors_of(ps);
      probe.push_back(frames);
      return ParamCase{f, probe, gen};
    }, g, 1));
  }
  return p;
}

std::vector<Property> metric_properties() {
  std::vector<Property> p;
  p.push_back({"psnr_cases", "metrics", [] {
                 Rng rng(31);
                 const Tensor a = rnd({3, 8, 8, 3}, rng, 0, 1);
                 const Tensor b = rnd({3, 8, 8, 3}, rng, 0, 1);
                 const auto same = metrics::psnr(a, a);
                 const auto twenty = metrics::psnr(Tensor::full({1, 4, 4, 3}, 0.5), Tensor::full({1, 4, 4, 3}, 0.6));
                 const auto ab = metrics::psnr(a, b), ba = metrics::psnr(b, a);
                 double err = 0;
                 for (int t = 0; t < 3; ++t) err = std::max(err, std::abs(ab[t] - oracle::psnr(a, b, t)));
                 const bool ok = same[0] == 99.0 && std::abs(twenty[0] - 20) < 1e-9 && err < 1e-9 && ab == ba;
                 return expect(ok, "identical " + num(same[0]) + " dB, mse 0.01 -> " + num(twenty[0]) +
                                       " dB, oracle diff " + num(err));
               }});
  p.push_back({"ssim_cases", "metrics", [] {
                 Rng rng(32);
                 const Tensor a = rnd({2, 16, 16, 3}, rng, 0, 1), b = rnd({2, 16, 16, 3}, rng, 0, 1);
                 const double same = metrics::ssim(a, a)[0];
                 const double c01 = metrics::ssim(Tensor::zeros({1, 16, 16, 3}), Tensor::ones({1, 16, 16, 3}))[0];
                 const auto ab = metrics::ssim(a, b), ba = metrics::ssim(b, a);
                 double err = 0, sym = 0;
                 for (int t = 0; t < 2; ++t) {
                   err = std::max(err, std::abs(ab[t] - oracle::ssim(a, b, t)));
                   sym = std::max(sym, std::abs(ab[t] - ba[t]));
                 }
                 const Tensor pert = a + rnd({2, 16, 16, 3}, rng, -0.01, 0.01);
                 const double near = metrics::ssim(a, pert)[0];
                 const bool ok = same == 1.0 && std::abs(c01 - 1e-4 / (1 + 1e-4)) < 1e-12 && err < 1e-6 && sym < 1e-12 &&
                                 near < 1.0 && near > -1.0 && ab[0] >= -1 && ab[0] <= 1;
                 return expect(ok, "identical " + num(same) + ", 0 vs 1 " + num(c01) + ", oracle diff " + num(err) +
                                       ", perturbed " + num(near));
               }});
  p.push_back({"warp_error_cases", "metrics", [] {
                 const Tensor still = Tensor::full({4, 16, 16, 3}, 0.3);
                 flowcomp::BidirectionalFlows zero{Tensor::zeros({3, 16, 16, 2}), Tensor::zeros({3, 16, 16, 2})};
                 const double e0 = metrics::warp_error(still, zero);
                 const double e1 = metrics::warp_error(Tensor::full({1, 16, 16, 3}, 0.3), {});
                 return expect(e0 == 0 && e1 == 0, "static video " + num(e0) + ", single frame " + num(e1));
               }});
  p.push_back({"warp_error_rendered_scene", "metrics", [] {
                 double worst = 0;
                 for (uint64_t seed : {1u, 2u, 3u}) {
                   data::SceneSpec spec;
                   spec.seed = seed;
                   const data::Scene s = data::render_scene(spec);
                   worst = std::max(worst, metrics::warp_error(s.video, s.flows_full, 1.0, s.boundary));
                 }
                 return expect(worst < 1e-3, "E_warp away from sprite edges = " + num(worst) + " (< 1e-3)");
               }});
  return p;
}

std::vector<Property> persistence_properties() {
  std::vector<Property> p;
  p.push_back({"checkpoint_roundtrip_bitwise", "persistence", [] {
                 const ModelConfig cfg = ModelConfig::desk();
                 model::Trainer a(cfg, 11), b(cfg, 12);
                 Rng rng(5);
                 const Tensor frames = rnd({5, 64, 64, 3}, rng, 0, 1);
                 const Tensor masks = data::make_masks({data::MaskMode::stationary, 3}, 5, 64, 64);
                 const auto path = (std::filesystem::temp_directory_path() / "flowvip_roundtrip.fvip").string();
                 a.save(path, cfg.to_text());
                 b.load(path);
                 std::filesystem::remove(path);
                 NoGradGuard guard;
                 const Tensor ya = a.generator.forward(frames, masks, 3).frames;
                 const Tensor yb = b.generator.forward(frames, masks, 3).frames;
                 bool same = true;
                 for (int64_t i = 0; i < ya.numel(); ++i) same = same && ya.data()[i] == yb.data()[i];
                 return expect(same, same ? "forward outputs bit-identical" : "outputs differ");
               }});
  return p;
}

std::vector<Property> control_properties() {
  std::vector<Property> p;
  p.push_back({"gradcheck_flags_wrong_backward", "control", [] {
                 Rng rng(41);
                 // y = 2x with a backward rule that claims dy/dx = 1
                 auto bad = [](const std::vector<Tensor>& x) {
                   std::vector<Scalar> v(x[0].data().begin(), x[0].data().end());
                   for (auto& e : v) e *= 2;
                   return sum(detail::make_result(x[0].shape(), std::move(v), "bad_double", {x[0]}, [](detail::Node& self) {
                     Scalar* g = self.input_grad(0);
                     for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                   }));
                 };
                 const auto r = gradcheck(bad, {rnd({4}, rng)});
                 return expect(!r.passed, "wrong rule " + std::string(r.passed ? "NOT detected" : "detected: ") + r.describe());
               }});
  p.push_back({"gradcheck_flags_faulty_dcn_backward", "control", [] {
                 const bool previous = geom::testing::deform_backward_fault();
                 geom::testing::set_deform_backward_fault(true);
                 Outcome o;
                 try {
                   Rng rng(42);
                   const Tensor off = oracle::smooth_offsets(Tensor(), 4, 4, 3, 1, rng);
                   const auto r = gradcheck([](const std::vector<Tensor>& x) {
                     return sum(geom::mod_deform_conv(x[0], x[1], x[2], Tensor(), x[3], x[4], 1));
                   }, {rnd({4, 4, 2}, rng), rnd({3, 3, 2, 2}, rng), rnd({2}, rng), off, rnd({4, 4, 9}, rng)});
                   o = expect(!r.passed, std::string("mod_deform_conv: injected fault ") +
                                             (r.passed ? "NOT detected" : "detected, ") + r.describe());
                 } catch (...) {
                   geom::testing::set_deform_backward_fault(previous);
                   throw;
                 }
                 geom::testing::set_deform_backward_fault(previous);
                 return o;
               }});
  return p;
}

std::vector<Property> all_properties(bool include_generator) {
  std::vector<Property> out;
  for (auto&& group : {oracle_properties(), gradient_properties(include_generator), metric_properties(),
                       persistence_properties(), control_properties()})
    out.insert(out.end(), group.begin(), group.end());
  return out;
}

std::vector<Result> run(const std::vector<Property>& properties, std::ostream* progress) {
  std::vector<Result> results;
  for (const auto& prop : properties) {
    Result r{prop.name, prop.group, false, "", 0};
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const Outcome o = prop.run();
      r.passed = o.passed;
      r.detail = o.detail;
    } catch (const std::exception& e) {
      r.detail = std::string("threw: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (progress) {
      *progress << (r.passed ? "PASS " : "FAIL ") << r.group << "/" << r.name << " (" << std::fixed
                << std::setprecision(2) << r.seconds << "s) " << r.detail << "\n";
      progress->unsetf(std::ios::fixed);
      progress->flush();
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace flowvip::props
