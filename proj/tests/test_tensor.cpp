#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "grad_check.hpp"
#include "rgen/tensor.hpp"

using namespace rgen;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = rng.uniform(-1.5, 1.5);
  return t;
}

}  // namespace

TEST_CASE("matmul identity leaves the operand unchanged") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_data({2, 2}, {3.5, -1.25, 0.75, 9});
  Tensor out = matmul(eye, a);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.data()[i] == a.data()[i]);
}

TEST_CASE("matmul hand arithmetic") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {5, 6});
  Tensor out = matmul(a, b);
  CHECK(out.shape() == std::vector<std::size_t>{2, 1});
  CHECK(out.data()[0] == doctest::Approx(17));
  CHECK(out.data()[1] == doctest::Approx(39));
}

TEST_CASE("matmul gradient matches finite differences on 3x4 * 4x2") {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  const double err =
      oracle::finite_difference_max_err({a, b}, [&]() { return sum(matmul(a, b)); });
  CHECK(err <= 1e-6);
}

TEST_CASE("matmul broadcasts leading batch extents") {
  Rng rng(11);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor w = random_tensor({4, 5}, rng);
  Tensor out = matmul(a, w);
  REQUIRE(out.shape() == std::vector<std::size_t>{2, 3, 5});
  // reference: per-slice 2d product
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        double want = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
          want += a.data()[s * 12 + i * 4 + k] * w.data()[k * 5 + j];
        }
        CHECK(out.data()[s * 15 + i * 5 + j] == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
  const double err = oracle::finite_difference_max_err(
      {a, w}, [&]() { return sum(matmul(a, w)); });
  CHECK(err <= 1e-6);
}

TEST_CASE("matmul rejects mismatched inner extents naming both shapes") {
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({5, 2});
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    CHECK(what.find("[3,4]") != std::string::npos);
    CHECK(what.find("[5,2]") != std::string::npos);
  }
}

TEST_CASE("softmax of a constant row is uniform") {
  Tensor x = Tensor::from_data({3}, {0, 0, 0});
  Tensor out = softmax(x, 0);
  for (double v : out.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax is stable under large magnitudes") {
  Tensor x = Tensor::from_data({3}, {1000, 0, 0});
  Tensor out = softmax(x, 0);
  CHECK(out.data()[0] == doctest::Approx(1.0));
  CHECK(out.data()[1] == doctest::Approx(0.0));
  CHECK(out.data()[2] == doctest::Approx(0.0));
  for (double v : out.data()) CHECK(std::isfinite(v));
}

TEST_CASE("softmax values match a scalar-exp oracle") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3});
  Tensor out = softmax(x, 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(out.data()[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
  CHECK(out.data()[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
  CHECK(out.data()[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-12));
  CHECK(out.data()[0] == doctest::Approx(0.09003057));
  CHECK(out.data()[1] == doctest::Approx(0.24472847));
  CHECK(out.data()[2] == doctest::Approx(0.66524096));
}

TEST_CASE("softmax rows sum to one and stay non-negative on random input") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + rng.bounded(4);
    const std::size_t cols = 1 + rng.bounded(6);
    Tensor x = random_tensor({rows, cols}, rng, false);
    Tensor out = softmax(x, -1);
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        const double v = out.data()[r * cols + c];
        CHECK(v >= 0.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("softmax over a middle axis") {
  Rng rng(5);
  Tensor x = random_tensor({2, 3, 2}, rng, false);
  Tensor out = softmax(x, 1);
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t i = 0; i < 2; ++i) {
      double total = 0.0;
      for (std::size_t t = 0; t < 3; ++t) total += out.data()[o * 6 + t * 2 + i];
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(softmax(x, 3), std::invalid_argument);
}

TEST_CASE("layer_norm maps a constant row to zero") {
  Tensor x = Tensor::from_data({2, 3}, {0.1, 0.1, 0.1, 7, 7, 7});
  Tensor gain = Tensor::full({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  Tensor out = layer_norm(x, gain, bias, 1e-5);
  for (double v : out.data()) CHECK(std::abs(v) <= 1e-9);
}

TEST_CASE("layer_norm standardizes [1,3] exactly with eps 0") {
  Tensor x = Tensor::from_data({1, 2}, {1, 3});
  Tensor gain = Tensor::full({2}, 1.0);
  Tensor bias = Tensor::zeros({2});
  Tensor out = layer_norm(x, gain, bias, 0.0);
  CHECK(out.data()[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(out.data()[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("layer_norm gradient matches finite differences") {
  Rng rng(13);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor gain = random_tensor({5}, rng);
  Tensor bias = random_tensor({5}, rng);
  Tensor w = random_tensor({3, 5}, rng, false);
  const double err = oracle::finite_difference_max_err({x, gain, bias}, [&]() {
    return sum(multiply(layer_norm(x, gain, bias, 1e-5), w));
  });
  CHECK(err <= 1e-6);
}

TEST_CASE("cross entropy is zero when the target takes all probability") {
  Tensor logits = Tensor::from_data({1, 1, 3}, {0, 1000, 0});
  Tensor loss = cross_entropy_from_logits(logits, {1}, 0);
  CHECK(loss.value() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy of uniform logits is ln(V)") {
  Tensor logits = Tensor::from_data({1, 2, 4}, std::vector<double>(8, 0.25));
  Tensor loss = cross_entropy_from_logits(logits, {1, 3}, 0);
  CHECK(loss.value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(loss.value() == doctest::Approx(1.3862944));
}

TEST_CASE("cross entropy matches an explicit softmax-then-log oracle") {
  Rng rng(17);
  Tensor logits = random_tensor({2, 3, 5}, rng);
  const std::vector<int> targets = {1, 4, 0, 2, 0, 3};
  const int pad = 0;
  Tensor loss = cross_entropy_from_logits(logits, targets, pad);

  double expected = 0.0;
  std::size_t live = 0;
  for (std::size_t r = 0; r < 6; ++r) {
    if (targets[r] == pad) continue;
    double z = 0.0;
    for (std::size_t v = 0; v < 5; ++v) z += std::exp(logits.data()[r * 5 + v]);
    const double p = std::exp(logits.data()[r * 5 + static_cast<std::size_t>(targets[r])]) / z;
    expected += -std::log(p);
    ++live;
  }
  expected /= static_cast<double>(live);
  CHECK(std::abs(loss.value() - expected) <= 1e-9);
}

TEST_CASE("cross entropy excludes pad positions and rejects an all-pad batch") {
  Rng rng(19);
  Tensor logits = random_tensor({1, 2, 4}, rng, false);
  Tensor more = Tensor::from_data({1, 3, 4}, [&] {
    std::vector<double> d(logits.data());
    d.resize(12, -3.0);  // extra padded row with arbitrary logits
    return d;
  }());
  Tensor a = cross_entropy_from_logits(logits, {1, 2}, 0);
  Tensor b = cross_entropy_from_logits(more, {1, 2, 0}, 0);
  CHECK(a.value() == b.value());
  CHECK_THROWS_WITH_AS(cross_entropy_from_logits(logits, {0, 0}, 0),
                       doctest::Contains("degenerate"), std::invalid_argument);
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(23);
  Tensor logits = random_tensor({2, 2, 4}, rng);
  const std::vector<int> targets = {2, 0, 1, 3};
  const double err = oracle::finite_difference_max_err(
      {logits}, [&]() { return cross_entropy_from_logits(logits, targets, 0); });
  CHECK(err <= 1e-6);
}

TEST_CASE("backward on sum gives unit gradients") {
  Tensor x = Tensor::from_data({3}, {5, -2, 0.5}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(x));
  }
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward through multiply gives 2x") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(multiply(x, x)));
  }
  CHECK(x.grad()[0] == doctest::Approx(2));
  CHECK(x.grad()[1] == doctest::Approx(4));
  CHECK(x.grad()[2] == doctest::Approx(6));
}

TEST_CASE("backward accumulates both paths of a fan-out") {
  Tensor x = Tensor::from_data({4}, {1, 2, 3, 4}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(add(x, x)));
  }
  for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("backward rejects a non-scalar loss") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = add(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(x);
    tape.backward(loss);
    tape.backward(loss);
  }
  for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
  x.zero_grad();
  for (double g : x.grad()) CHECK(g == doctest::Approx(0.0));
}

TEST_CASE("add broadcasts a trailing suffix and reduces its gradient") {
  Rng rng(29);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor out = add(a, b);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(out.data()[r * 4 + j] == doctest::Approx(a.data()[r * 4 + j] + b.data()[j]));
    }
  }
  const double err =
      oracle::finite_difference_max_err({a, b}, [&]() { return sum(add(a, b)); });
  CHECK(err <= 1e-6);
  CHECK_THROWS_AS(add(a, Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("scale, relu, reshape and transpose gradients match finite differences") {
  Rng rng(31);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({4, 3}, rng, false);
  const double err = oracle::finite_difference_max_err({x}, [&]() {
    Tensor y = scale(x, -2.5);
    y = relu(y);
    y = reshape(y, {2, 6});
    y = transpose_last_two(y);
    return sum(multiply(reshape(y, {4, 3}), w));
  });
  CHECK(err <= 1e-4);
}

TEST_CASE("transpose_last_two round-trips") {
  Rng rng(37);
  Tensor x = random_tensor({2, 3, 4}, rng, false);
  Tensor back = transpose_last_two(transpose_last_two(x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("embedding lookup gathers rows and scatter-adds gradients") {
  Rng rng(41);
  Tensor table = random_tensor({5, 3}, rng);
  const std::vector<int> ids = {4, 0, 4, 2};
  Tensor out = embedding_lookup(table, ids);
  REQUIRE(out.shape() == std::vector<std::size_t>{4, 3});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(out.data()[i * 3 + j] ==
            table.data()[static_cast<std::size_t>(ids[i]) * 3 + j]);
    }
  }
  Tensor w = random_tensor({4, 3}, rng, false);
  const double err = oracle::finite_difference_max_err(
      {table}, [&]() { return sum(multiply(embedding_lookup(table, ids), w)); });
  CHECK(err <= 1e-6);
  CHECK_THROWS_AS(embedding_lookup(table, {5}), std::invalid_argument);
}

TEST_CASE("dropout is the identity in eval mode") {
  Rng rng(43);
  Tensor x = random_tensor({5, 5}, rng, false);
  Tensor out = dropout(x, 0.5, false, rng);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out.data()[i] == x.data()[i]);
}

TEST_CASE("train-mode dropout is unbiased over many draws") {
  Rng rng(47);
  const double p = 0.3;
  Tensor x = Tensor::full({100}, 1.0);
  double total = 0.0;
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    Tensor out = dropout(x, p, true, rng);
    for (double v : out.data()) total += v;
  }
  const double mean = total / (draws * 100.0);
  CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("train-mode dropout scales surviving gradients by 1/(1-p)") {
  Rng rng(53);
  Tensor x = Tensor::full({64}, 2.0, true);
  const double p = 0.25;
  Tape tape;
  Tensor out;
  {
    TapeScope scope(tape);
    out = dropout(x, p, true, rng);
    tape.backward(sum(out));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool kept = out.data()[i] != 0.0;
    CHECK(x.grad()[i] == doctest::Approx(kept ? 1.0 / (1.0 - p) : 0.0));
  }
}

TEST_CASE("concat and split are inverse and propagate gradients") {
  Rng rng(59);
  Tensor a = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({2, 2}, rng);
  Tensor cat = concat_last_axis({a, b});
  REQUIRE(cat.shape() == std::vector<std::size_t>{2, 5});

  Tensor whole = random_tensor({2, 6}, rng);
  auto parts = split_last_axis(whole, 3);
  REQUIRE(parts.size() == 3);
  Tensor rejoined = concat_last_axis(parts);
  for (std::size_t i = 0; i < whole.size(); ++i) CHECK(rejoined.data()[i] == whole.data()[i]);

  Tensor w = random_tensor({2, 5}, rng, false);
  const double err = oracle::finite_difference_max_err({a, b}, [&]() {
    return sum(multiply(concat_last_axis({a, b}), w));
  });
  CHECK(err <= 1e-6);

  Tensor w2 = random_tensor({2, 2}, rng, false);
  const double err2 = oracle::finite_difference_max_err({whole}, [&]() {
    auto pieces = split_last_axis(whole, 3);
    return sum(multiply(pieces[1], w2));
  });
  CHECK(err2 <= 1e-6);
  CHECK_THROWS_AS(split_last_axis(whole, 4), std::invalid_argument);
}

TEST_CASE("randomized gradient checks across every differentiable op") {
  Rng rng(61);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng.bounded(3);
    const std::size_t k = 1 + rng.bounded(3);
    const std::size_t n = 1 + rng.bounded(3);
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor gain = random_tensor({n}, rng);
    Tensor bias = random_tensor({n}, rng);
    Tensor w = random_tensor({m, n}, rng, false);

    const double err = oracle::finite_difference_max_err({a, b, gain, bias}, [&]() {
      Tensor y = matmul(a, b);
      y = layer_norm(y, gain, bias, 1e-5);
      y = softmax(y, -1);
      y = add(relu(scale(y, 1.7)), y);
      return sum(multiply(y, w));
    });
    worst = std::max(worst, err);
  }
  CHECK(worst <= 1e-4);
}
