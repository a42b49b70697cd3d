#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include "ctsnet/normalization.hpp"
#include "ctsnet/ops.hpp"
#include "ctsnet/tensor.hpp"
#include "test_helpers.hpp"

using namespace ctsnet;
using testutil::max_rel_grad_error;
using testutil::random_tensor;

TEST_CASE("tensor basics and invariants") {
  Tensor<double> t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.shape() == Shape{2, 3});
  CHECK_THROWS_AS(Tensor<double>::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);

  // grad has the tensor's shape and accumulates
  t.grad()[0] = 3.0;
  CHECK(t.grad_values().size() == 6);
  t.zero_grad();
  CHECK(t.grad()[0] == 0.0);
}

TEST_CASE("conv2d identity kernel") {
  Tensor<double> x({1, 1, 4, 4}, 1.0);
  Tensor<double> k = Tensor<double>::from({1, 1, 1, 1}, {1.0});
  Tensor<double> y = conv2d(x, k, ConvSpec{});
  CHECK(y.shape() == x.shape());
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 1.0);
}

TEST_CASE("conv2d causal hand example [1,2,3] * [1,1] = [1,3,5]") {
  Tensor<double> x = Tensor<double>::from({1, 1, 3, 1}, {1, 2, 3});
  Tensor<double> k = Tensor<double>::from({1, 1, 2, 1}, {1, 1});
  Tensor<double> y = conv2d(x, k, ConvSpec::causal(2));
  REQUIRE(y.shape() == Shape{1, 1, 3, 1});
  CHECK(y.data()[0] == doctest::Approx(1));  // first frame sees the zero pad
  CHECK(y.data()[1] == doctest::Approx(3));
  CHECK(y.data()[2] == doctest::Approx(5));
}

TEST_CASE("encoder frequency chain 161 -> 79 -> 39 -> 19 -> 9 -> 4") {
  ctsnet::Rng rng(11);
  const int64_t kfs[5] = {5, 3, 3, 3, 3};
  Tensor<double> x = random_tensor({1, 1, 4, 161}, rng);
  const int64_t expect[5] = {79, 39, 19, 9, 4};
  for (int i = 0; i < 5; ++i) {
    Tensor<double> k = random_tensor({1, 1, 1, kfs[i]}, rng);
    ConvSpec sp;
    sp.stride_f = 2;
    x = conv2d(x, k, sp);
    CHECK(x.dim(3) == expect[i]);
  }
}

TEST_CASE("conv2d_transposed mirrors the decoder chain 4 -> ... -> 161") {
  ctsnet::Rng rng(12);
  const int64_t kfs[5] = {3, 3, 3, 3, 5};
  Tensor<double> x = random_tensor({1, 1, 4, 4}, rng);
  const int64_t expect[5] = {9, 19, 39, 79, 161};
  for (int i = 0; i < 5; ++i) {
    Tensor<double> k = random_tensor({1, 1, 1, kfs[i]}, rng);
    ConvSpec sp;
    sp.stride_f = 2;
    x = conv2d_transposed(x, k, sp);
    CHECK(x.dim(3) == expect[i]);
  }
}

TEST_CASE("conv2d_transposed is the exact adjoint of conv2d") {
  ctsnet::Rng rng(13);
  for (int trial = 0; trial < 8; ++trial) {
    ConvSpec sp;
    sp.stride_f = 1 + int64_t(rng.below(2));
    sp.dil_t = 1 + int64_t(rng.below(3));
    sp.pad_t_left = int64_t(rng.below(3));
    sp.pad_f_left = int64_t(rng.below(2));
    const int64_t cin = 1 + int64_t(rng.below(3));
    const int64_t cout = 1 + int64_t(rng.below(3));
    const int64_t kt = 1 + int64_t(rng.below(2)), kf = 1 + int64_t(rng.below(3));
    Tensor<double> x = random_tensor({2, cin, 6, 7}, rng);
    Tensor<double> w = random_tensor({cout, cin, kt, kf}, rng);
    Tensor<double> y = conv2d(x, w, sp);

    Tensor<double> z = random_tensor(y.shape(), rng);
    // transposed kernel layout is [Cin, Cout, Kt, Kf]
    Tensor<double> wt({cin, cout, kt, kf});
    for (int64_t a = 0; a < cout; ++a)
      for (int64_t b = 0; b < cin; ++b)
        for (int64_t i = 0; i < kt * kf; ++i)
          wt.data()[(b * cout + a) * kt * kf + i] =
              w.data()[(a * cin + b) * kt * kf + i];
    Tensor<double> xt = conv2d_transposed(z, wt, sp);
    REQUIRE(xt.shape() == x.shape());

    double lhs = 0.0, rhs = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) lhs += y.data()[i] * z.data()[i];
    for (int64_t i = 0; i < x.numel(); ++i) rhs += x.data()[i] * xt.data()[i];
    CHECK(std::fabs(lhs - rhs) <= 1e-10 * std::max(1.0, std::fabs(lhs)));
  }
}

TEST_CASE("conv2d_transposed of zero input is zero") {
  Tensor<double> x({1, 2, 3, 4});
  ctsnet::Rng rng(14);
  Tensor<double> w = random_tensor({2, 3, 2, 3}, rng);
  ConvSpec sp;
  sp.stride_f = 2;
  Tensor<double> y = conv2d_transposed(x, w, sp);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
}

TEST_CASE("conv2d rejects mismatched shapes with both shapes reported") {
  Tensor<double> x({1, 3, 4, 4});
  Tensor<double> w({2, 4, 1, 1});
  try {
    conv2d(x, w, ConvSpec{});
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,3,4,4)") != std::string::npos);
    CHECK(msg.find("(2,4,1,1)") != std::string::npos);
  }
}

TEST_CASE("conv2d flags non-finite results") {
  Tensor<double> x({1, 1, 2, 2}, std::numeric_limits<double>::infinity());
  Tensor<double> k = Tensor<double>::from({1, 1, 1, 1}, {1.0});
  CHECK_THROWS_AS(conv2d(x, k, ConvSpec{}), NumericError);
}

TEST_CASE("causal convolution ignores the future bit-exactly") {
  ctsnet::Rng rng(15);
  Tensor<double> w = random_tensor({4, 3, 3, 1}, rng);
  Tensor<double> x0 = random_tensor({1, 3, 12, 1}, rng);
  const int64_t t = 5;
  Tensor<double> x1 = x0.clone();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t ti = t + 1; ti < 12; ++ti)
      x1.data()[x1.index4(0, c, ti, 0)] = rng.uniform(-10.0, 10.0);
  Tensor<double> y0 = conv2d(x0, w, ConvSpec::causal(3, 2));
  Tensor<double> y1 = conv2d(x1, w, ConvSpec::causal(3, 2));
  for (int64_t c = 0; c < 4; ++c)
    for (int64_t ti = 0; ti <= t; ++ti)
      CHECK(y0.data()[y0.index4(0, c, ti, 0)] ==
            y1.data()[y1.index4(0, c, ti, 0)]);
}

TEST_CASE("pointwise analytic values") {
  Tensor<double> z = Tensor<double>::scalar(0.0);
  CHECK(softplus(z).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(sigmoid(z).item() == doctest::Approx(0.5));

  Tensor<double> x = Tensor<double>::from({1, 1, 1, 1}, {-2.0});
  Tensor<double> alpha = Tensor<double>::from({1}, {0.25});
  CHECK(prelu(x, alpha).item() == doctest::Approx(-0.5));

  // softplus is strictly positive, sigmoid in (0,1)
  ctsnet::Rng rng(16);
  Tensor<double> r = random_tensor({1, 2, 5, 5}, rng, -30.0, 30.0);
  Tensor<double> sp = softplus(r), sg = sigmoid(r);
  for (int64_t i = 0; i < r.numel(); ++i) {
    CHECK(sp.data()[i] > 0.0);
    CHECK(sg.data()[i] > 0.0);
    CHECK(sg.data()[i] < 1.0);
  }
}

TEST_CASE("d(sigmoid)(0) = 0.25") {
  Tensor<double> x = Tensor<double>::scalar(0.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y = sum(sigmoid(x));
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(0.25));
}

TEST_CASE("backward of sum gives all-ones and accumulates across calls") {
  ctsnet::Rng rng(17);
  Tensor<double> x = random_tensor({2, 3, 2, 2}, rng);
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> loss = sum(x);
  tape.backward(loss);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 1.0);
  tape.backward(loss);  // repeated call without reset accumulates
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2.0);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tensor<double> x({2, 2});
  x.set_requires_grad(true);
  Tape<double> tape;
  CHECK_THROWS_AS(tape.backward(x), ShapeError);
}

TEST_CASE("fan-out gradients add: y = f(x) + g(x)") {
  ctsnet::Rng rng(18);
  Tensor<double> x = random_tensor({1, 1, 3, 3}, rng, 0.5, 2.0);
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y = sum(add(sigmoid(x), mul(x, x)));
  tape.backward(y);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double v = x.data()[i];
    const double s = 1.0 / (1.0 + std::exp(-v));
    CHECK(x.grad()[i] == doctest::Approx(s * (1 - s) + 2 * v).epsilon(1e-12));
  }
}

TEST_CASE("instance_norm normalizes each slice") {
  ctsnet::Rng rng(19);
  Tensor<double> x = random_tensor({2, 3, 7, 5}, rng, -4.0, 4.0);
  Tensor<double> gain({3}, 1.0), bias({3}, 0.0);
  Tensor<double> y = instance_norm(x, gain, bias);
  const int64_t N = 35;
  for (int64_t bc = 0; bc < 6; ++bc) {
    double mu = 0.0, var = 0.0;
    for (int64_t i = 0; i < N; ++i) mu += y.data()[bc * N + i];
    mu /= N;
    for (int64_t i = 0; i < N; ++i) {
      const double d = y.data()[bc * N + i] - mu;
      var += d * d;
    }
    var /= N;
    CHECK(std::fabs(mu) < 1e-6);
    CHECK(std::fabs(var - 1.0) < 1e-4);  // eps shifts variance by ~1e-5
  }
}

TEST_CASE("instance_norm on a constant slice is zero before affine") {
  Tensor<double> x({1, 2, 4, 4}, 3.25);
  Tensor<double> gain({2}, 1.0), bias({2}, 0.0);
  Tensor<double> y = instance_norm(x, gain, bias);
  for (int64_t i = 0; i < y.numel(); ++i)
    CHECK(y.data()[i] == doctest::Approx(0.0));
}

TEST_CASE("finite-difference checks for every op, 10 seeds") {
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    ctsnet::Rng rng(seed);

    {  // conv2d incl. grouped/depthwise
      Tensor<double> x = random_tensor({2, 4, 5, 3}, rng);
      Tensor<double> w = random_tensor({6, 2, 2, 2}, rng);
      ConvSpec sp;
      sp.groups = 2;
      sp.pad_t_left = 1;
      const double err = max_rel_grad_error(
          [&] { return sum(mul(conv2d(x, w, sp), conv2d(x, w, sp))); }, {x, w});
      CHECK(err < 1e-4);
    }
    {  // conv2d_transposed
      Tensor<double> x = random_tensor({1, 3, 4, 3}, rng);
      Tensor<double> w = random_tensor({3, 2, 2, 3}, rng);
      ConvSpec sp;
      sp.stride_f = 2;
      sp.pad_t_right = 1;
      const double err = max_rel_grad_error(
          [&] {
            Tensor<double> y = conv2d_transposed(x, w, sp);
            return sum(mul(y, y));
          },
          {x, w});
      CHECK(err < 1e-4);
    }
    {  // shared smoothing kernel
      Tensor<double> x = random_tensor({2, 3, 6, 1}, rng);
      Tensor<double> k = random_tensor({3}, rng);
      const double err = max_rel_grad_error(
          [&] {
            Tensor<double> y = shared_smooth(x, k);
            return sum(mul(y, y));
          },
          {x, k});
      CHECK(err < 1e-4);
    }
    {  // pointwise chain: prelu, sigmoid, softplus, sqrt_shift, bias
      Tensor<double> x = random_tensor({1, 2, 3, 4}, rng, 0.1, 2.0);
      Tensor<double> a = random_tensor({2}, rng, 0.05, 0.9);
      Tensor<double> b = random_tensor({2}, rng);
      const double err = max_rel_grad_error(
          [&] {
            Tensor<double> h = add_channel_bias(prelu(x, a), b);
            h = sigmoid(h);
            h = softplus(h);
            return sum(sqrt_shift(mul(h, h), 1e-8));
          },
          {x, a, b});
      CHECK(err < 1e-4);
    }
    {  // add/sub/mul/scale/concat/fold/unfold
      Tensor<double> x = random_tensor({1, 2, 3, 4}, rng);
      Tensor<double> y = random_tensor({1, 2, 3, 4}, rng);
      const double err = max_rel_grad_error(
          [&] {
            Tensor<double> c = concat_channels(add(x, y), sub(x, y));
            Tensor<double> f = fold_freq_into_channels(scale(c, 0.7));
            Tensor<double> u = unfold_channels_into_freq(f, 4);
            return sum(mul(u, u));
          },
          {x, y});
      CHECK(err < 1e-4);
    }
    {  // instance_norm (full slice)
      Tensor<double> x = random_tensor({1, 2, 4, 3}, rng, -2.0, 2.0);
      Tensor<double> g = random_tensor({2}, rng, 0.5, 1.5);
      Tensor<double> b = random_tensor({2}, rng);
      const double err = max_rel_grad_error(
          [&] {
            Tensor<double> y = instance_norm(x, g, b);
            return sum(mul(y, y));
          },
          {x, g, b});
      CHECK(err < 1e-4);
    }
    {  // cumulative_norm (causal)
      Tensor<double> x = random_tensor({1, 2, 5, 3}, rng, -2.0, 2.0);
      Tensor<double> g = random_tensor({2}, rng, 0.5, 1.5);
      Tensor<double> b = random_tensor({2}, rng);
      const double err = max_rel_grad_error(
          [&] {
            Tensor<double> y = cumulative_norm(x, g, b);
            return sum(mul(y, y));
          },
          {x, g, b});
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("serial and OpenMP backends agree bitwise") {
  ctsnet::Rng rng(23);
  Tensor<double> x = random_tensor({2, 3, 10, 8}, rng);
  Tensor<double> w = random_tensor({4, 3, 2, 3}, rng);
  ConvSpec sp;
  sp.stride_f = 2;
  sp.pad_t_left = 1;

  kernels::set_backend(kernels::Backend::serial);
  Tensor<double> ys = conv2d(x, w, sp);
  kernels::set_backend(kernels::Backend::openmp);
  Tensor<double> yp = conv2d(x, w, sp);
  CHECK(testutil::bitwise_equal(ys, yp));
}
