#include <cmath>
#include <vector>

#include "doctest.h"
#include "mave/gradcheck.hpp"
#include "mave/rng.hpp"
#include "mave/tensor.hpp"

using namespace mave;

namespace {

Tensor<double> randn(Shape s, Rng& rng, double sd = 1.0) {
  Tensor<double> t(std::move(s));
  for (int64_t i = 0; i < t.numel(); ++i) t.mut()[i] = rng.normal() * sd;
  return t;
}

}  // namespace

TEST_CASE("gradient of sum(w*w) is 2w") {
  Rng rng(1);
  Tensor<double> w = randn({3, 2}, rng);
  Tape<double> tape;
  tape.watch(w);
  Context<double> ctx{&tape, nullptr};
  Tensor<double> loss = sum_all(ctx, mul(ctx, w, w));
  tape.backward(loss);
  const auto& g = tape.grad(w);
  for (int64_t i = 0; i < w.numel(); ++i)
    CHECK(g[static_cast<size_t>(i)] == doctest::Approx(2.0 * w.at(i)).epsilon(1e-12));
}

TEST_CASE("per-op gradients match central differences") {
  Rng rng(2);

  SUBCASE("matmul + bias") {
    Tensor<double> a = randn({3, 4}, rng), w = randn({4, 2}, rng), b = randn({2}, rng);
    auto res = grad_check({&a, &w, &b}, [&](Context<double>& ctx) {
      return sum_all(ctx, mul(ctx, linear(ctx, a, w, b), linear(ctx, a, w, b)));
    });
    CHECK(res.max_rel_err < 1e-6);
  }

  SUBCASE("unary chain silu(softplus(x)) * exp(-x)") {
    Tensor<double> x = randn({5}, rng);
    auto res = grad_check({&x}, [&](Context<double>& ctx) {
      Tensor<double> s = silu(ctx, softplus(ctx, x));
      return sum_all(ctx, mul(ctx, s, mave::exp(ctx, scale(ctx, x, -1.0))));
    });
    CHECK(res.max_rel_err < 1e-6);
  }

  SUBCASE("rmsnorm") {
    Tensor<double> x = randn({4, 6}, rng), g = randn({6}, rng);
    auto res = grad_check({&x, &g}, [&](Context<double>& ctx) {
      Tensor<double> y = rmsnorm(ctx, x, g);
      return sum_all(ctx, mul(ctx, y, y));
    });
    CHECK(res.max_rel_err < 1e-6);
  }

  SUBCASE("softmax rows") {
    Tensor<double> x = randn({3, 5}, rng);
    Tensor<double> c = randn({3, 5}, rng);  // fixed mixing weights
    auto res = grad_check({&x}, [&](Context<double>& ctx) {
      return sum_all(ctx, mul(ctx, softmax_rows(ctx, x), mul(ctx, c, c)));
    });
    CHECK(res.max_rel_err < 1e-6);
  }

  SUBCASE("embed with repeated ids accumulates") {
    Tensor<double> table = randn({4, 3}, rng);
    std::vector<int32_t> ids{1, 3, 1, 1};
    auto res = grad_check({&table}, [&](Context<double>& ctx) {
      Tensor<double> e = embed_rows(ctx, table, ids);
      return sum_all(ctx, mul(ctx, e, e));
    });
    CHECK(res.max_rel_err < 1e-6);
  }

  SUBCASE("concat and slice") {
    Tensor<double> a = randn({2, 3}, rng), b = randn({3, 3}, rng);
    auto res = grad_check({&a, &b}, [&](Context<double>& ctx) {
      Tensor<double> c = concat_rows(ctx, a, b);
      Tensor<double> s = slice_rows(ctx, c, 1, 4);
      return sum_all(ctx, mul(ctx, s, s));
    });
    CHECK(res.max_rel_err < 1e-6);
  }

  SUBCASE("causal conv with tail") {
    Tensor<double> x = randn({5, 3}, rng), k = randn({3, 4}, rng), b = randn({3}, rng);
    std::vector<double> tail(9);
    for (auto& v : tail) v = rng.normal();
    auto res = grad_check({&x, &k, &b}, [&](Context<double>& ctx) {
      Tensor<double> y = causal_conv1d(ctx, x, k, b, &tail);
      return sum_all(ctx, mul(ctx, y, y));
    });
    CHECK(res.max_rel_err < 1e-6);
  }

  SUBCASE("selective scan") {
    int64_t T = 7, D = 3, N = 2;
    Tensor<double> u = randn({T, D}, rng);
    Tensor<double> delta = randn({T, D}, rng, 0.3);
    for (int64_t i = 0; i < delta.numel(); ++i)
      delta.mut()[i] = std::fabs(delta.at(i)) + 0.05;
    Tensor<double> bi = randn({T, N}, rng), ci = randn({T, N}, rng);
    Tensor<double> a = randn({D, N}, rng, 0.5);
    for (int64_t i = 0; i < a.numel(); ++i) a.mut()[i] = -std::fabs(a.at(i)) - 0.05;
    std::vector<double> s0(static_cast<size_t>(D * N));
    for (auto& v : s0) v = rng.normal() * 0.2;
    auto res = grad_check({&u, &delta, &bi, &ci, &a}, [&](Context<double>& ctx) {
      ScanResult<double> r = selective_scan(ctx, u, delta, bi, ci, a, &s0);
      return sum_all(ctx, mul(ctx, r.y, r.y));
    });
    CHECK(res.max_rel_err < 1e-5);
  }

  SUBCASE("attention, causal and bidirectional") {
    Tensor<double> q = randn({3, 4}, rng), k = randn({5, 4}, rng), v = randn({5, 4}, rng);
    for (bool causal : {false, true}) {
      auto res = grad_check({&q, &k, &v}, [&, causal](Context<double>& ctx) {
        Tensor<double> o = attention(ctx, q, k, v, 2, causal);
        return sum_all(ctx, mul(ctx, o, o));
      });
      CHECK(res.max_rel_err < 1e-6);
    }
  }

  SUBCASE("masked nll") {
    Tensor<double> logits = randn({4, 6}, rng);
    std::vector<int32_t> targets{2, 0, 5, 1};
    std::vector<uint8_t> valid{1, 1, 0, 1};
    auto res = grad_check({&logits}, [&](Context<double>& ctx) {
      return masked_nll(ctx, logits, targets, valid);
    });
    CHECK(res.max_rel_err < 1e-6);
    // Invalid rows get exactly zero gradient.
    Tape<double> tape;
    tape.watch(logits);
    Context<double> ctx{&tape, nullptr};
    tape.backward(masked_nll(ctx, logits, targets, valid));
    const auto& g = tape.grad(logits);
    for (int64_t j = 0; j < 6; ++j) CHECK(g[static_cast<size_t>(2 * 6 + j)] == 0.0);
  }
}

TEST_CASE("backward requires a recorded scalar root") {
  Rng rng(9);
  Tensor<double> w = randn({2}, rng);
  Tape<double> tape;
  tape.watch(w);
  Context<double> ctx{&tape, nullptr};
  Tensor<double> vec = mul(ctx, w, w);
  CHECK_THROWS_AS(tape.backward(vec), data_error);  // not scalar
  Tensor<double> off_tape = vec;
  off_tape.node = -1;
  CHECK_THROWS_AS(tape.backward(off_tape), data_error);
}
