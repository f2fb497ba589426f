#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "covidnet/tensor/conv.hpp"
#include "covidnet/tensor/grad_check.hpp"
#include "covidnet/tensor/ops.hpp"
#include "covidnet/tensor/tape.hpp"
#include "support/reference.hpp"

using namespace covidnet;
using covidnet::reference::random_tensor;

namespace {

ConvSpec make_spec(std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                   std::size_t pad, std::size_t groups) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = k;
  s.stride = stride;
  s.padding = pad;
  s.groups = groups;
  return s;
}

}  // namespace

TEST_CASE("tensor shape and storage invariants") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.values().size() == 6);
  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
  CHECK(Tensor::scalar(4.0).item() == 4.0);
  Tensor copy = t;
  CHECK(copy.same_storage(t));
  Tensor deep = t.clone();
  CHECK_FALSE(deep.same_storage(t));
  CHECK(deep.identical(t));
}

TEST_CASE("1x1 convolution with identity weights reproduces its input") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({2, 5, 4, 3}, rng);
  Tensor w({5, 5, 1, 1});
  for (std::size_t c = 0; c < 5; ++c) w.mutable_values()[c * 5 + c] = 1.0;
  Tensor b({5}, 0.0);
  Tensor y = conv2d(x, w, b, ConvSpec::pointwise(5, 5));
  CHECK(y.identical(x));
}

TEST_CASE("depthwise 3x3 all-ones kernel sums each neighbourhood") {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor({1, 4, 8, 8}, rng);
  ConvSpec spec = ConvSpec::depthwise(4, 3);
  Tensor w(spec.weight_shape(), 1.0);
  Tensor y = conv2d(x, w, Tensor(), spec);
  Tensor expected = reference::conv2d_naive(x, w, Tensor(), spec);
  CHECK(y.shape() == Shape{1, 4, 8, 8});
  CHECK(reference::max_abs_diff(y, expected) < 1e-12);
  // Interior pixel: explicit 3x3 neighbourhood within its own channel.
  double manual = 0.0;
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj) manual += x.at((2 * 8 + 3 + di) * 8 + 4 + dj);
  CHECK(y.at((2 * 8 + 3) * 8 + 4) == doctest::Approx(manual).epsilon(1e-14));
}

TEST_CASE("1x1 convolution equals per-pixel matrix product") {
  std::mt19937_64 rng(3);
  const std::size_t c = 6, co = 4, h = 5, w = 7;
  Tensor x = random_tensor({1, c, h, w}, rng);
  Tensor wt = random_tensor({co, c, 1, 1}, rng);
  Tensor y = conv2d(x, wt, Tensor(), ConvSpec::pointwise(c, co));
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t o = 0; o < co; ++o) {
      double acc = 0.0;
      for (std::size_t i = 0; i < c; ++i) acc += wt.at(o * c + i) * x.at(i * h * w + p);
      CHECK(y.at(o * h * w + p) == doctest::Approx(acc).epsilon(1e-13));
    }
  }
}

TEST_CASE("optimized convolution matches the naive loop nest") {
  struct Case { std::size_t in, out, k, stride, pad, groups, h, w; };
  const std::vector<Case> cases = {
      {3, 4, 3, 1, 1, 1, 6, 5}, {4, 6, 3, 2, 1, 2, 7, 7}, {1, 8, 7, 2, 3, 1, 16, 16},
      {6, 6, 3, 1, 1, 6, 5, 5}, {6, 6, 3, 2, 0, 6, 9, 8}, {4, 8, 1, 2, 0, 1, 6, 6},
      {4, 4, 5, 1, 2, 4, 6, 6},  {2, 2, 1, 1, 1, 1, 3, 3}};
  std::mt19937_64 rng(4);
  for (const Case& c : cases) {
    ConvSpec spec = make_spec(c.in, c.out, c.k, c.stride, c.pad, c.groups);
    Tensor x = random_tensor({2, c.in, c.h, c.w}, rng);
    Tensor w = random_tensor(spec.weight_shape(), rng);
    Tensor b = random_tensor({c.out}, rng);
    Tensor fast = conv2d(x, w, b, spec);
    Tensor slow = reference::conv2d_naive(x, w, b, spec);
    REQUIRE(fast.shape() == slow.shape());
    CHECK(reference::max_abs_diff(fast, slow) < 1e-12);
  }
}

TEST_CASE("grouped convolution equals blockwise ungrouped convolutions") {
  std::mt19937_64 rng(5);
  const std::size_t groups = 3, cin_g = 2, cout_g = 4;
  ConvSpec grouped = make_spec(groups * cin_g, groups * cout_g, 3, 1, 1, groups);
  Tensor x = random_tensor({1, groups * cin_g, 5, 5}, rng);
  Tensor w = random_tensor(grouped.weight_shape(), rng);
  Tensor y = conv2d(x, w, Tensor(), grouped);
  for (std::size_t g = 0; g < groups; ++g) {
    std::vector<double> xs(x.values().begin() + g * cin_g * 25, x.values().begin() + (g + 1) * cin_g * 25);
    std::vector<double> ws(w.values().begin() + g * cout_g * cin_g * 9,
                           w.values().begin() + (g + 1) * cout_g * cin_g * 9);
    ConvSpec single = make_spec(cin_g, cout_g, 3, 1, 1, 1);
    Tensor part = conv2d(Tensor({1, cin_g, 5, 5}, xs), Tensor(single.weight_shape(), ws), Tensor(), single);
    for (std::size_t i = 0; i < part.numel(); ++i) {
      CHECK(part.at(i) == doctest::Approx(y.at(g * cout_g * 25 + i)).epsilon(1e-13));
    }
  }
}

TEST_CASE("conv2d rejects malformed shapes with a named dimension") {
  ConvSpec spec = make_spec(4, 8, 3, 1, 1, 1);
  Tensor x({1, 3, 5, 5});
  try {
    conv2d(x, Tensor(spec.weight_shape()), Tensor(), spec);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("channel dimension (axis 1)") != std::string::npos);
  }
  Tensor good({1, 4, 5, 5});
  try {
    conv2d(good, Tensor({8, 4, 3, 2}), Tensor(), spec);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("kernel_w") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(good, Tensor({8, 2, 3, 3}), Tensor(), make_spec(4, 8, 3, 1, 1, 3)),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_spec(4, 6, 1, 1, 0, 4).validate(), std::invalid_argument);
}

TEST_CASE("forward results are bitwise deterministic") {
  std::mt19937_64 rng(6);
  ConvSpec spec = make_spec(8, 16, 3, 2, 1, 1);
  Tensor x = random_tensor({3, 8, 9, 9}, rng);
  Tensor w = random_tensor(spec.weight_shape(), rng);
  CHECK(conv2d(x, w, Tensor(), spec).identical(conv2d(x, w, Tensor(), spec)));
}

TEST_CASE("softmax and cross entropy") {
  Tensor zeros({1, 3}, 0.0);
  Tensor p = ops::softmax(zeros, 1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  std::mt19937_64 rng(7);
  Tensor logits = random_tensor({4, 5}, rng, -30.0, 30.0);
  Tensor probs = ops::softmax(logits, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 5; ++c) total += probs.at(r * 5 + c);
    CHECK(std::abs(total - 1.0) <= 1e-12);
  }

  Tensor column = ops::softmax(random_tensor({3, 2}, rng), 0);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(std::abs(column.at(c) + column.at(2 + c) + column.at(4 + c) - 1.0) <= 1e-12);
  }

  const std::vector<int> label{1};
  Tensor one_hot({1, 3}, std::vector<double>{0.0, 1.0, 0.0});
  CHECK(std::abs(ops::cross_entropy(one_hot, label).item()) <= 1e-12);
  Tensor uniform({1, 3}, 1.0 / 3.0);
  CHECK(ops::cross_entropy(uniform, label).item() == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  const std::vector<int> bad{3};
  CHECK_THROWS_AS(ops::cross_entropy(uniform, bad), std::invalid_argument);
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(ops::cross_entropy(uniform, negative), std::invalid_argument);
}

TEST_CASE("softmax argmax is invariant to a constant logit shift") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = random_tensor({1, 3}, rng, -5.0, 5.0);
    std::vector<double> shifted(logits.values().begin(), logits.values().end());
    const double c = std::uniform_real_distribution<double>(-100.0, 100.0)(rng);
    for (double& v : shifted) v += c;
    Tensor a = ops::softmax(logits, 1);
    Tensor b = ops::softmax(Tensor({1, 3}, shifted), 1);
    auto argmax = [](const Tensor& t) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < t.numel(); ++i) if (t.at(i) > t.at(best)) best = i;
      return best;
    };
    CHECK(argmax(a) == argmax(b));
  }
}

TEST_CASE("pooling forward") {
  Tensor x({1, 1, 4, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  Tensor m = ops::max_pool2d(x, 2, 2);
  CHECK(m.shape() == Shape{1, 1, 2, 2});
  CHECK(m.at(0) == 6);
  CHECK(m.at(3) == 16);
  Tensor g = ops::global_avg_pool(x);
  CHECK(g.shape() == Shape{1, 1});
  CHECK(g.item() == doctest::Approx(8.5));
  Tensor odd({1, 1, 5, 5}, 1.0);
  CHECK(ops::max_pool2d(odd, 2, 2).shape() == Shape{1, 1, 2, 2});
}

TEST_CASE("backward basics") {
  Tensor x({2, 3}, std::vector<double>{-1.0, 2.0, -3.0, 4.0, 0.5, -0.25});
  x.set_requires_grad(true);
  Tensor unused({4}, 1.0);
  unused.set_requires_grad(true);
  Tape tape;
  Gradients g_sum, g_relu;
  {
    Tape::Scope scope(tape);
    g_sum = backward(tape, ops::sum(x));
  }
  for (double v : g_sum[x].values()) CHECK(v == 1.0);
  CHECK_FALSE(g_sum.contains(unused));
  const Tensor unused_grad = g_sum[unused];
  for (double v : unused_grad.values()) CHECK(v == 0.0);

  tape.clear();
  {
    Tape::Scope scope(tape);
    g_relu = backward(tape, ops::sum(ops::relu(x)));
  }
  const std::vector<double> mask{0, 1, 0, 1, 1, 0};
  for (std::size_t i = 0; i < mask.size(); ++i) CHECK(g_relu[x].at(i) == mask[i]);

  Tape other;
  Tape::Scope scope(other);
  Tensor y = ops::relu(x);
  CHECK_THROWS_AS(backward(other, y), std::invalid_argument);
}

TEST_CASE("no recording without an active tape") {
  Tensor x({3}, 1.0);
  x.set_requires_grad(true);
  Tensor y = ops::relu(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gradients of primitive ops agree with finite differences") {
  constexpr double eps = 1e-5;
  constexpr double tol = 1e-3;
  constexpr int seeds = 10;

  SUBCASE("dense") {
    for (int seed = 0; seed < seeds; ++seed) {
      const double err = grad_check(
          [](const std::vector<Tensor>& in) { return ops::dense(in[0], in[1], in[2]); },
          [](std::mt19937_64& rng) {
            return std::vector<Tensor>{random_tensor({4, 8}, rng), random_tensor({5, 8}, rng),
                                       random_tensor({5}, rng)};
          },
          eps, seed);
      CHECK(err <= tol);
    }
  }
  SUBCASE("relu") {
    for (int seed = 0; seed < seeds; ++seed) {
      const double err = grad_check(
          [](const std::vector<Tensor>& in) { return ops::relu(in[0]); },
          [](std::mt19937_64& rng) {
            return std::vector<Tensor>{reference::random_away_from_zero({3, 7}, rng, 10 * eps)};
          },
          eps, seed);
      CHECK(err <= tol);
    }
  }
  SUBCASE("softmax + cross entropy") {
    for (int seed = 0; seed < seeds; ++seed) {
      const double err = grad_check(
          [](const std::vector<Tensor>& in) {
            const std::vector<int> labels{0, 2, 1, 2};
            return ops::cross_entropy(ops::softmax(in[0], 1), labels);
          },
          [](std::mt19937_64& rng) { return std::vector<Tensor>{random_tensor({4, 3}, rng, -3, 3)}; },
          eps, seed);
      CHECK(err <= tol);
    }
  }
  SUBCASE("max pool and global average pool") {
    for (int seed = 0; seed < seeds; ++seed) {
      const double err = grad_check(
          [](const std::vector<Tensor>& in) {
            return ops::global_avg_pool(ops::max_pool2d(in[0], 2, 2));
          },
          [](std::mt19937_64& rng) {
            // A shuffled, well separated grid keeps every window free of ties.
            std::vector<double> v(2 * 3 * 6 * 6);
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * static_cast<double>(i);
            std::shuffle(v.begin(), v.end(), rng);
            return std::vector<Tensor>{Tensor({2, 3, 6, 6}, v)};
          },
          eps, seed);
      CHECK(err <= tol);
    }
  }
  SUBCASE("concat") {
    for (int seed = 0; seed < seeds; ++seed) {
      const double err = grad_check(
          [](const std::vector<Tensor>& in) { return ops::concat_channels(in); },
          [](std::mt19937_64& rng) {
            return std::vector<Tensor>{random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 1, 3, 3}, rng)};
          },
          eps, seed);
      CHECK(err <= tol);
    }
  }
  SUBCASE("conv2d ungrouped, grouped and depthwise") {
    const std::vector<ConvSpec> specs = {make_spec(3, 4, 3, 1, 1, 1), make_spec(4, 6, 3, 2, 1, 2),
                                         ConvSpec::depthwise(5, 3), make_spec(3, 5, 1, 1, 0, 1),
                                         make_spec(1, 4, 7, 2, 3, 1)};
    for (const ConvSpec& spec : specs) {
      for (int seed = 0; seed < seeds; ++seed) {
        const double err = grad_check(
            [spec](const std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], spec); },
            [spec](std::mt19937_64& rng) {
              return std::vector<Tensor>{random_tensor({2, spec.in_channels, 7, 6}, rng),
                                         random_tensor(spec.weight_shape(), rng),
                                         random_tensor({spec.out_channels}, rng)};
            },
            eps, seed);
        CHECK(err <= tol);
      }
    }
  }
}
