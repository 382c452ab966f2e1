#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "poseadapt/gradcheck.hpp"
#include "poseadapt/nn_ops.hpp"
#include "poseadapt/rng.hpp"

using namespace poseadapt;
using Catch::Approx;

namespace {

Value random_leaf(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return Value::leaf(std::move(t), true);
}

}  // namespace

TEST_CASE("matmul", "[nn_ops]") {
  SECTION("1x2 times 2x1 gives [[11]]") {
    Value a = Value::leaf(Tensor({1, 2}, {1, 2}));
    Value b = Value::leaf(Tensor({2, 1}, {3, 4}));
    Tensor c = matmul(a, b).val();
    REQUIRE(c.shape() == Shape{1, 1});
    REQUIRE(c[0] == 11.0);
  }

  SECTION("shape mismatch rejected") {
    Value a = Value::leaf(Tensor({2, 3}));
    Value b = Value::leaf(Tensor({2, 3}));
    REQUIRE_THROWS_AS(matmul(a, b), std::invalid_argument);
  }

  SECTION("gradcheck both operands") {
    Rng rng(21);
    auto f = [](const std::vector<Value>& v) { return sum(square(matmul(v[0], v[1]))); };
    for (int trial = 0; trial < 10; ++trial) {
      Value a = random_leaf(rng, {3, 4});
      Value b = random_leaf(rng, {4, 2});
      REQUIRE(grad_check(f, {a, b}).max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("transpose", "[nn_ops]") {
  Value a = Value::leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Tensor t = transpose(a).val();
  REQUIRE(t.shape() == Shape{3, 2});
  REQUIRE(t.at2(0, 1) == 4.0);
  REQUIRE(t.at2(2, 0) == 3.0);

  Rng rng(22);
  auto f = [](const std::vector<Value>& v) { return sum(square(matmul(transpose(v[0]), v[0]))); };
  for (int trial = 0; trial < 5; ++trial) {
    Value x = random_leaf(rng, {3, 2});
    REQUIRE(grad_check(f, {x}).max_rel_err < 1e-4);
  }
}

TEST_CASE("softmax", "[nn_ops]") {
  SECTION("spatial softmax of all-equal 2x2 map is 0.25 everywhere") {
    Value x = Value::leaf(Tensor::full({1, 1, 2, 2}, 3.7));
    Tensor s = spatial_softmax(x).val();
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(s[i] == Approx(0.25).margin(1e-15));
  }

  SECTION("rows sum to one and order preserved") {
    Value x = Value::leaf(Tensor({2, 3}, {1, 2, 3, -1, 0, 1}));
    Tensor s = softmax(x, 1).val();
    REQUIRE(s.at2(0, 0) + s.at2(0, 1) + s.at2(0, 2) == Approx(1.0));
    REQUIRE(s.at2(1, 0) + s.at2(1, 1) + s.at2(1, 2) == Approx(1.0));
    REQUIRE(s.at2(0, 2) > s.at2(0, 1));
  }

  SECTION("stable for large logits") {
    Value x = Value::leaf(Tensor({1, 2}, {1000.0, 1001.0}));
    Tensor s = softmax(x, 1).val();
    REQUIRE(std::isfinite(s[0]));
    REQUIRE(s[1] > s[0]);
  }

  SECTION("gradcheck over both axes") {
    Rng rng(23);
    for (std::size_t axis = 0; axis < 2; ++axis) {
      auto f = [axis](const std::vector<Value>& v) {
        return sum(square(softmax(v[0], axis) * v[1]));
      };
      for (int trial = 0; trial < 5; ++trial) {
        Value x = random_leaf(rng, {3, 4}, -2, 2);
        Value w = random_leaf(rng, {3, 4});
        REQUIRE(grad_check(f, {x, w}).max_rel_err < 1e-4);
      }
    }
  }
}

TEST_CASE("conv2d", "[nn_ops]") {
  SECTION("hand-computed 3x3 input, 2x2 diagonal kernel") {
    Value x = Value::leaf(Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
    Value w = Value::leaf(Tensor({1, 1, 2, 2}, {1, 0, 0, 1}));
    Tensor y = conv2d(x, w, Value{}, 1, 0).val();
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    REQUIRE(y[0] == 6.0);   // 1+5
    REQUIRE(y[1] == 8.0);   // 2+6
    REQUIRE(y[2] == 12.0);  // 4+8
    REQUIRE(y[3] == 14.0);  // 5+9
  }

  SECTION("stride 2 with padding 1") {
    Value x = Value::leaf(Tensor({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
    Value w = Value::leaf(Tensor({1, 1, 2, 2}, {1, 0, 0, 1}));
    Tensor y = conv2d(x, w, Value{}, 2, 1).val();
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    REQUIRE(y[0] == 1.0);   // only in(0,0) lands under the kernel
    REQUIRE(y[1] == 3.0);   // in(0,2)
    REQUIRE(y[2] == 7.0);   // in(2,0)
    REQUIRE(y[3] == 14.0);  // in(1,1) + in(2,2) = 5 + 9
  }

  SECTION("bias broadcast per channel") {
    Value x = Value::leaf(Tensor::full({1, 1, 2, 2}, 1.0));
    Value w = Value::leaf(Tensor::full({2, 1, 1, 1}, 2.0));
    Value b = Value::leaf(Tensor({2}, {0.5, -0.5}));
    Tensor y = conv2d(x, w, b).val();
    REQUIRE(y.shape() == Shape{1, 2, 2, 2});
    REQUIRE(y[0] == 2.5);
    REQUIRE(y[4] == 1.5);
  }

  SECTION("gradcheck: 5x5 input, 3x3 kernel matches finite differences") {
    Rng rng(24);
    auto f = [](const std::vector<Value>& v) {
      return sum(square(conv2d(v[0], v[1], v[2], 1, 1)));
    };
    for (int trial = 0; trial < 5; ++trial) {
      Value x = random_leaf(rng, {1, 2, 5, 5});
      Value w = random_leaf(rng, {3, 2, 3, 3});
      Value b = random_leaf(rng, {3});
      REQUIRE(grad_check(f, {x, w, b}, 1e-5).max_rel_err < 1e-4);
    }
  }

  SECTION("gradcheck with stride 2") {
    Rng rng(25);
    auto f = [](const std::vector<Value>& v) {
      return sum(square(conv2d(v[0], v[1], v[2], 2, 1)));
    };
    Value x = random_leaf(rng, {2, 1, 6, 6});
    Value w = random_leaf(rng, {2, 1, 3, 3});
    Value b = random_leaf(rng, {2});
    REQUIRE(grad_check(f, {x, w, b}, 1e-5).max_rel_err < 1e-4);
  }
}

TEST_CASE("maxpool2d", "[nn_ops]") {
  SECTION("value and first-index tie rule") {
    Value x = Value::leaf(Tensor({1, 1, 2, 2}, {5, 5, 3, 1}), true);
    Value y = maxpool2d(x, 2, 2);
    REQUIRE(y.val()[0] == 5.0);
    backward(sum(y));
    REQUIRE(x.grad()[0] == 1.0);  // ties go to the smallest row-major index
    REQUIRE(x.grad()[1] == 0.0);
  }

  SECTION("gradcheck with well-separated entries") {
    Rng rng(26);
    auto f = [](const std::vector<Value>& v) { return sum(square(maxpool2d(v[0], 2, 2))); };
    for (int trial = 0; trial < 5; ++trial) {
      // Entries spaced >= 0.05 apart so eps=1e-5 cannot flip an argmax.
      Tensor t({1, 1, 4, 4});
      std::vector<double> vals(16);
      for (int i = 0; i < 16; ++i) vals[i] = 0.05 * i;
      for (int i = 15; i > 0; --i) std::swap(vals[i], vals[rng.uniform_index(i + 1)]);
      for (int i = 0; i < 16; ++i) t[i] = vals[i];
      Value x = Value::leaf(std::move(t), true);
      REQUIRE(grad_check(f, {x}).max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("upsampling", "[nn_ops]") {
  SECTION("nearest replicates blocks") {
    Value x = Value::leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
    Tensor y = upsample_nearest2d(x, 2).val();
    REQUIRE(y.shape() == Shape{1, 1, 4, 4});
    REQUIRE(y.at4(0, 0, 0, 0) == 1.0);
    REQUIRE(y.at4(0, 0, 1, 1) == 1.0);
    REQUIRE(y.at4(0, 0, 0, 2) == 2.0);
    REQUIRE(y.at4(0, 0, 3, 3) == 4.0);
  }

  SECTION("bilinear factor-2 half-pixel values") {
    Value x = Value::leaf(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
    Tensor y = upsample_bilinear2d(x, 2).val();
    const double expect[16] = {1, 1.25, 1.75, 2,    1.5, 1.75, 2.25, 2.5,
                               2.5, 2.75, 3.25, 3.5, 3,   3.25, 3.75, 4};
    for (std::size_t i = 0; i < 16; ++i) REQUIRE(y[i] == Approx(expect[i]).margin(1e-12));
  }

  SECTION("gradcheck both modes") {
    Rng rng(27);
    auto fn = [](const std::vector<Value>& v) { return sum(square(upsample_nearest2d(v[0], 2))); };
    auto fb = [](const std::vector<Value>& v) { return sum(square(upsample_bilinear2d(v[0], 2))); };
    for (int trial = 0; trial < 5; ++trial) {
      Value x = random_leaf(rng, {1, 2, 3, 3});
      REQUIRE(grad_check(fn, {x}).max_rel_err < 1e-4);
      Value x2 = random_leaf(rng, {1, 2, 3, 3});
      REQUIRE(grad_check(fb, {x2}).max_rel_err < 1e-4);
    }
  }
}

TEST_CASE("warp_affine", "[nn_ops]") {
  SECTION("identity map leaves values unchanged") {
    Rng rng(28);
    Value x = random_leaf(rng, {1, 1, 4, 4});
    Tensor y = warp_affine(x, {Affine2::identity()}).val();
    for (std::size_t i = 0; i < 16; ++i) REQUIRE(y[i] == x.val()[i]);
  }

  SECTION("integer translation with zero padding") {
    // dest→src map (x,y) -> (x+2, y): out(i,j) = in(i, j+2), 0 off the grid.
    Tensor t({1, 1, 2, 4});
    for (std::size_t i = 0; i < 8; ++i) t[i] = static_cast<double>(i);
    Value x = Value::leaf(std::move(t));
    Tensor y = warp_affine(x, {Affine2::translation(2, 0)}).val();
    REQUIRE(y.at4(0, 0, 0, 0) == 2.0);
    REQUIRE(y.at4(0, 0, 0, 1) == 3.0);
    REQUIRE(y.at4(0, 0, 0, 2) == 0.0);
    REQUIRE(y.at4(0, 0, 0, 3) == 0.0);
    REQUIRE(y.at4(0, 0, 1, 0) == 6.0);
  }

  SECTION("per-sample maps act independently") {
    Tensor t({2, 1, 1, 2}, {1, 2, 3, 4});
    Value x = Value::leaf(std::move(t));
    Tensor y = warp_affine(x, {Affine2::identity(), Affine2::translation(1, 0)}).val();
    REQUIRE(y.at4(0, 0, 0, 0) == 1.0);
    REQUIRE(y.at4(1, 0, 0, 0) == 4.0);
  }

  SECTION("gradcheck through a rotation") {
    Rng rng(29);
    auto f = [](const std::vector<Value>& v) {
      Affine2 center = Affine2::translation(1.5, 1.5)
                           .compose(Affine2::rotation(17.0 * 3.14159265358979 / 180.0))
                           .compose(Affine2::translation(-1.5, -1.5));
      return sum(square(warp_affine(v[0], {center})));
    };
    for (int trial = 0; trial < 5; ++trial) {
      Value x = random_leaf(rng, {1, 1, 4, 4});
      REQUIRE(grad_check(f, {x}).max_rel_err < 1e-4);
    }
  }
}
