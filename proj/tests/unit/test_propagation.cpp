#include <gtest/gtest.h>

#include "flowvip/errors.hpp"
#include "flowvip/geom.hpp"
#include "flowvip/ops.hpp"
#include "flowvip/propagation.hpp"

using namespace flowvip;

TEST(Propagation, SingleFrameIsIdentity) {
  std::mt19937_64 rng(1);
  propagation::PropagationCell cell(4, 3, 2, rng);
  const Tensor f = Tensor::uniform({1, 8, 8, 4}, rng, -1, 1);
  const Tensor flows = Tensor::zeros({0, 8, 8, 2});
  EXPECT_EQ(propagation::propagate_backward(f, flows, cell).to_vector(), f.to_vector());
  EXPECT_EQ(propagation::propagate_forward(f, flows, cell).to_vector(), f.to_vector());
}

TEST(Propagation, ShapeContract) {
  std::mt19937_64 rng(2);
  propagation::PropagationCell cell(4, 3, 2, rng);
  const Tensor f = Tensor::uniform({5, 16, 16, 4}, rng, -1, 1);
  const Tensor flows = Tensor::uniform({4, 16, 16, 2}, rng, -1, 1);
  EXPECT_EQ(propagation::propagate_backward(f, flows, cell).shape(), (Shape{5, 16, 16, 4}));
  EXPECT_EQ(propagation::propagate_forward(f, flows, cell, false).shape(), (Shape{5, 16, 16, 4}));
}

TEST(Propagation, FlowCountMismatchThrows) {
  std::mt19937_64 rng(3);
  propagation::PropagationCell cell(4, 3, 2, rng);
  EXPECT_THROW(propagation::propagate_backward(Tensor::zeros({3, 8, 8, 4}), Tensor::zeros({3, 8, 8, 2}), cell),
               ShapeError);
}

TEST(Propagation, WithoutDcnAlignmentIsTheWarp) {
  std::mt19937_64 rng(4);
  propagation::PropagationCell cell(4, 3, 2, rng);
  const Tensor cur = Tensor::uniform({6, 6, 4}, rng, -1, 1), nb = Tensor::uniform({6, 6, 4}, rng, -1, 1);
  const Tensor flow = Tensor::uniform({6, 6, 2}, rng, -2, 2);
  EXPECT_EQ(cell.align(cur, nb, flow, false).to_vector(), geom::bilinear_warp(nb, flow).to_vector());
}

TEST(Propagation, ZeroInitialOffsetsSampleAlongTheFlow) {
  // offset head starts at zero, so the deformable taps sit on the flow-warped grid
  std::mt19937_64 rng(5);
  propagation::PropagationCell cell(4, 3, 2, rng);
  const Tensor cur = Tensor::uniform({6, 6, 4}, rng, -1, 1), nb = Tensor::uniform({6, 6, 4}, rng, -1, 1);
  const Tensor flow = Tensor::uniform({6, 6, 2}, rng, -2, 2);
  propagation::reset_observed_mask_range();
  cell.align(cur, nb, flow, true);
  const auto range = propagation::observed_mask_range();
  EXPECT_GT(range.count, 0);
  EXPECT_DOUBLE_EQ(range.min, 0.5);
  EXPECT_DOUBLE_EQ(range.max, 0.5);
}

TEST(Fusion, HalfIdentityIsMean) {
  std::mt19937_64 rng(6);
  const int C = 3;
  propagation::Fusion fuse(C, rng);
  auto w = fuse.conv.weight.mutable_data();
  std::fill(w.begin(), w.end(), Scalar(0));
  for (int c = 0; c < C; ++c) {
    w[c * C + c] = 0.5;
    w[(C + c) * C + c] = 0.5;
  }
  const Tensor a = Tensor::uniform({2, 4, 4, C}, rng, -1, 1), b = Tensor::uniform({2, 4, 4, C}, rng, -1, 1);
  const Tensor out = fuse(a, b);
  for (int64_t i = 0; i < out.numel(); ++i) EXPECT_NEAR(out.data()[i], (a.data()[i] + b.data()[i]) / 2, 1e-15);
}

TEST(Fusion, ZeroWeightsGiveBias) {
  std::mt19937_64 rng(7);
  propagation::Fusion fuse(2, rng);
  for (Scalar& v : fuse.conv.weight.mutable_data()) v = 0;
  fuse.conv.bias.mutable_data()[0] = 0.3;
  fuse.conv.bias.mutable_data()[1] = -0.4;
  const Tensor out = fuse(Tensor::uniform({1, 3, 3, 2}, rng, -1, 1), Tensor::uniform({1, 3, 3, 2}, rng, -1, 1));
  for (int64_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.data()[i], i % 2 == 0 ? Scalar(0.3) : Scalar(-0.4));
}
