#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rclstr/core/rng.hpp"
#include "rclstr/ndiff/conv.hpp"
#include "rclstr/ndiff/grad_check.hpp"
#include "rclstr/ndiff/tensor.hpp"

using namespace rclstr;
using ndiff::Tensor;
using ndiff::Tape;

namespace {

Tensor<double> random_param(ndiff::Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(static_cast<size_t>(ndiff::shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::param(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("elementwise forward values", "[ndiff]") {
  auto x = Tensor<float>::from({3}, {-1.f, 0.f, 2.f});
  auto r = ndiff::relu(x);
  CHECK(r.values() == std::vector<float>{0.f, 0.f, 2.f});

  auto y = Tensor<double>::from({2}, {0.5, 1.0});
  auto back = ndiff::log(ndiff::exp(y));
  CHECK(back.values()[0] == Catch::Approx(0.5).margin(1e-12));
  CHECK(back.values()[1] == Catch::Approx(1.0).margin(1e-12));

  CHECK_THROWS_AS(ndiff::log(Tensor<double>::from({1}, {-1.0})), Error);
}

TEST_CASE("multiply gradient is the other factor", "[ndiff]") {
  auto a = Tensor<double>::param({1}, {2.0});
  auto b = Tensor<double>::param({1}, {3.0});
  {
    Tape<double> tape;
    auto c = ndiff::mul(a, b);
    tape.backward(c);
  }
  CHECK(a.grad()[0] == Catch::Approx(3.0));
  CHECK(b.grad()[0] == Catch::Approx(2.0));
}

TEST_CASE("trailing broadcast", "[ndiff]") {
  auto m = Tensor<double>::param({2, 3}, {1, 2, 3, 4, 5, 6});
  auto v = Tensor<double>::param({3}, {10, 20, 30});
  {
    Tape<double> tape;
    auto s = ndiff::sum_all(ndiff::add(m, v));
    tape.backward(s);
  }
  CHECK(v.grad() == std::vector<double>{2, 2, 2});

  auto bad = Tensor<double>::from({2}, {1, 1});
  CHECK_THROWS_AS(ndiff::add(m, bad), Error);
}

TEST_CASE("matmul identity and arithmetic", "[ndiff]") {
  auto id = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<float>::from({2, 2}, {3, -1, 7, 2});
  CHECK(ndiff::matmul(id, m).values() == m.values());

  auto a = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
  auto ones = Tensor<float>::from({2, 1}, {1, 1});
  auto prod = ndiff::matmul(a, ones);
  CHECK(prod.values() == std::vector<float>{3, 7});

  CHECK_THROWS_AS(ndiff::matmul(a, Tensor<float>::from({3, 1}, {1, 1, 1})), Error);
}

TEST_CASE("matmul gradient vs central differences", "[ndiff]") {
  auto a = random_param({3, 4}, 11);
  auto b = random_param({4, 2}, 12);
  auto f = [&]() { return ndiff::sum_all(ndiff::mul(ndiff::matmul(a, b), ndiff::matmul(a, b))); };
  double err = ndiff::grad_check_inputs<double>(f, {&a, &b}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("softmax values and stability", "[ndiff]") {
  auto x = Tensor<double>::from({2}, {0.0, 0.0});
  auto s = ndiff::softmax(x, 0, 1.0);
  CHECK(s.values()[0] == Catch::Approx(0.5));

  auto y = ndiff::softmax(Tensor<double>::from({2}, {1.0, 0.0}), 0, 1.0);
  CHECK(y.values()[0] == Catch::Approx(0.73106).margin(1e-5));
  CHECK(y.values()[1] == Catch::Approx(0.26894).margin(1e-5));

  auto z = ndiff::softmax(Tensor<double>::from({2}, {10.0, 0.0}), 0, 0.1);
  CHECK(z.values()[0] >= 1.0 - 1e-40);
  CHECK(z.values()[1] < 1e-40);
  CHECK(std::isfinite(z.values()[1]));

  CHECK_THROWS_AS(ndiff::softmax(x, 0, 0.0), Error);

  // rows sum to 1 for large-magnitude inputs
  Rng rng(5);
  std::vector<double> big(40);
  for (auto& v : big) v = rng.uniform(-1e4, 1e4);
  auto sm = ndiff::softmax(Tensor<double>::from({4, 10}, std::move(big)), 1, 0.07);
  for (int r = 0; r < 4; ++r) {
    double tot = 0;
    bool nonneg = true;
    for (int c = 0; c < 10; ++c) {
      tot += sm.values()[r * 10 + c];
      nonneg = nonneg && sm.values()[r * 10 + c] >= 0.0;
    }
    CHECK(nonneg);
    CHECK(tot == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("reductions", "[ndiff]") {
  auto x = Tensor<double>::from({3}, {2, 4, 6});
  CHECK(ndiff::mean(x, 0).item() == Catch::Approx(4.0));
  CHECK(ndiff::sum(Tensor<double>::zeros({5}), 0).item() == 0.0);

  auto p = Tensor<double>::param({5}, {1, 2, 3, 4, 5});
  {
    Tape<double> tape;
    auto m = ndiff::mean(p, 0);
    tape.backward(m);
  }
  for (double g : p.grad()) CHECK(g == Catch::Approx(0.2));
}

TEST_CASE("avgpool_seq values and edge bins", "[ndiff]") {
  auto x = Tensor<double>::from({1, 8}, {1, 3, 5, 7, 9, 11, 13, 15});
  auto pooled = ndiff::avgpool_seq(x, 4);
  CHECK(pooled.values() == std::vector<double>{2, 6, 10, 14});

  auto constant = Tensor<double>::full({2, 6}, 3.5);
  auto cp = ndiff::avgpool_seq(constant, 3);
  for (double v : cp.values()) CHECK(v == Catch::Approx(3.5));

  // T=26, 4 bins: boundaries 0,6,13,19,26
  std::vector<double> ramp(26);
  for (int i = 0; i < 26; ++i) ramp[i] = i;
  auto r = ndiff::avgpool_seq(Tensor<double>::from({1, 26}, std::move(ramp)), 4);
  CHECK(r.values()[0] == Catch::Approx((0 + 5) / 2.0));
  CHECK(r.values()[1] == Catch::Approx((6 + 12) / 2.0));
  CHECK(r.values()[2] == Catch::Approx((13 + 18) / 2.0));
  CHECK(r.values()[3] == Catch::Approx((19 + 25) / 2.0));

  CHECK_THROWS_AS(ndiff::avgpool_seq(x, 0), Error);
  CHECK_THROWS_AS(ndiff::avgpool_seq(x, 9), Error);

  // bins == T is the identity; bins == 1 equals the mean
  auto arbitrary = random_param({3, 7}, 21);
  auto ident = ndiff::avgpool_seq(arbitrary, 7);
  CHECK(ident.values() == arbitrary.values());
  auto one = ndiff::avgpool_seq(arbitrary, 1);
  auto mn = ndiff::mean(arbitrary, 1);
  for (int i = 0; i < 3; ++i) CHECK(one.values()[i] == Catch::Approx(mn.values()[i]).margin(1e-12));
}

TEST_CASE("l2_normalize", "[ndiff]") {
  auto x = Tensor<double>::from({1, 2}, {3, 4});
  auto n = ndiff::l2_normalize(x, 1);
  CHECK(n.values()[0] == Catch::Approx(0.6));
  CHECK(n.values()[1] == Catch::Approx(0.8));

  auto again = ndiff::l2_normalize(n, 1);
  CHECK(again.values()[0] == Catch::Approx(n.values()[0]).margin(1e-12));

  CHECK_THROWS_AS(ndiff::l2_normalize(Tensor<double>::zeros({1, 3}), 1), Error);

  auto p = random_param({1, 4}, 31);
  auto f = [&](Tensor<double>& t) { return ndiff::sum_all(ndiff::mul(ndiff::l2_normalize(t, 1), ndiff::l2_normalize(t, 1))); };
  // weighted so the gradient is nontrivial
  auto w = Tensor<double>::from({1, 4}, {0.3, -1.2, 0.7, 2.0});
  auto g = [&](Tensor<double>& t) { return ndiff::sum_all(ndiff::mul(w, ndiff::l2_normalize(t, 1))); };
  CHECK(ndiff::grad_check<double>(g, p, 1e-5) < 1e-4);
}

TEST_CASE("conv ops", "[ndiff]") {
  // 1x1 kernel of value 1 is the identity
  auto img = random_param({1, 4, 5}, 41);
  auto k1 = Tensor<double>::from({1, 1, 1, 1}, {1.0});
  auto same = ndiff::conv2d(img, k1, 1, 1);
  CHECK(same.values() == img.values());

  // maxpool of a constant image is constant
  auto flat = Tensor<double>::full({2, 4, 4}, 0.7);
  auto mp = ndiff::maxpool2d(flat, 2, 2);
  for (double v : mp.values()) CHECK(v == Catch::Approx(0.7));

  CHECK_THROWS_AS(ndiff::conv2d(img, Tensor<double>::from({1, 2, 1, 1}, {1, 1}), 1, 1), Error);

  // conv2d gradient vs finite differences: 6x6 input, 3x3 kernel
  auto x = random_param({1, 6, 6}, 42);
  auto w = random_param({2, 1, 3, 3}, 43);
  auto b = random_param({2}, 44);
  auto f = [&]() {
    auto y = ndiff::conv2d(x, w, b, 1, 1);
    return ndiff::sum_all(ndiff::mul(y, y));
  };
  CHECK(ndiff::grad_check_inputs<double>(f, {&x, &w, &b}, 1e-5) < 1e-4);

  auto xs = random_param({3, 10}, 45);
  auto ws = random_param({2, 3, 3}, 46);
  auto fs = [&]() {
    auto y = ndiff::conv1d_seq(xs, ws, 1);
    return ndiff::sum_all(ndiff::mul(y, y));
  };
  CHECK(ndiff::grad_check_inputs<double>(fs, {&xs, &ws}, 1e-5) < 1e-4);
}

TEST_CASE("backward basics", "[ndiff]") {
  auto x = Tensor<double>::param({2}, {1, 2});
  {
    Tape<double> tape;
    auto loss = ndiff::sum_all(ndiff::mul(x, x));
    tape.backward(loss);
  }
  CHECK(x.grad() == std::vector<double>{2, 4});

  // two uses accumulate
  auto y = Tensor<double>::param({3}, {1, 1, 1});
  {
    Tape<double> tape;
    auto loss = ndiff::add(ndiff::sum_all(y), ndiff::sum_all(y));
    tape.backward(loss);
  }
  CHECK(y.grad() == std::vector<double>{2, 2, 2});

  // non-scalar loss rejected
  auto z = Tensor<double>::param({2}, {1, 2});
  {
    Tape<double> tape;
    auto v = ndiff::mul(z, z);
    CHECK_THROWS_AS(tape.backward(v), Error);
  }
}

TEST_CASE("backward determinism", "[ndiff]") {
  auto run = [](uint64_t seed) {
    auto a = random_param({4, 4}, seed);
    auto b = random_param({4, 4}, seed + 1);
    Tape<double> tape;
    auto y = ndiff::sum_all(ndiff::mul(ndiff::matmul(a, b), ndiff::softmax(ndiff::matmul(a, b), 1, 0.5)));
    tape.backward(y);
    return std::make_pair(a.grad(), b.grad());
  };
  auto r1 = run(7);
  auto r2 = run(7);
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("layout ops gradients", "[ndiff]") {
  auto a = random_param({3, 4}, 51);
  auto b = random_param({3, 2}, 52);
  auto f = [&]() {
    auto cat = ndiff::concat<double>({a, b}, 1);
    auto t = ndiff::transpose(cat);
    auto s = ndiff::slice_cols(t, 1, 3);
    auto g = ndiff::take_rows(s, {0, 0, 3, 5});
    return ndiff::sum_all(ndiff::mul(g, g));
  };
  CHECK(ndiff::grad_check_inputs<double>(f, {&a, &b}, 1e-5) < 1e-4);
}

TEST_CASE("grad_check oracle calibration", "[ndiff]") {
  // exact gradient: f = sum(x)
  auto x = random_param({6}, 61);
  auto f = [](Tensor<double>& t) { return ndiff::sum_all(t); };
  CHECK(ndiff::grad_check<double>(f, x, 1e-5) < 1e-10);

  // deliberately wrong backward rule is caught
  auto y = random_param({4}, 62, 0.5, 1.5);
  auto wrong = [](Tensor<double>& t) {
    auto sq = ndiff::map_unary(
        t, [](double v) { return v * v; }, [](double v) { return v; });  // derivative should be 2v
    return ndiff::sum_all(sq);
  };
  CHECK(ndiff::grad_check<double>(wrong, y, 1e-5) > 1e-2);
}

TEST_CASE("differentiable ops pass grad_check on random shapes", "[ndiff]") {
  // every op, three shapes, h = 1e-5, 64-bit
  for (uint64_t seed : {100ull, 200ull, 300ull}) {
    Rng rng(seed);
    int64_t m = 2 + static_cast<int64_t>(rng.uniform_int(3));
    int64_t n = 2 + static_cast<int64_t>(rng.uniform_int(3));

    auto a = random_param({m, n}, seed + 1);
    auto b = random_param({m, n}, seed + 2);
    auto fadd = [&]() { return ndiff::sum_all(ndiff::mul(ndiff::add(a, b), ndiff::sub(a, b))); };
    CHECK(ndiff::grad_check_inputs<double>(fadd, {&a, &b}, 1e-5) < 1e-4);

    auto c = random_param({m, n}, seed + 3, 0.2, 1.8);  // keep relu/log away from kinks and zero
    auto funary = [&]() {
      auto r = ndiff::relu(c);
      auto e = ndiff::exp(ndiff::scale(c, 0.3));
      auto l = ndiff::log(c);
      return ndiff::sum_all(ndiff::add(ndiff::mul(r, e), l));
    };
    CHECK(ndiff::grad_check_inputs<double>(funary, {&c}, 1e-5) < 1e-4);

    auto d = random_param({m, n}, seed + 4);
    auto fsm = [&]() {
      auto s = ndiff::softmax(d, 1, 0.3);
      auto ls = ndiff::log_softmax(d, 0, 0.7);
      return ndiff::sum_all(ndiff::add(ndiff::mul(s, s), ndiff::mul(ls, ls)));
    };
    CHECK(ndiff::grad_check_inputs<double>(fsm, {&d}, 1e-5) < 1e-4);

    auto e = random_param({m, 6}, seed + 5);
    auto fpool = [&]() {
      auto p = ndiff::avgpool_seq(e, 3);
      auto nrm = ndiff::l2_normalize(e, 1);
      return ndiff::add(ndiff::sum_all(ndiff::mul(p, p)), ndiff::sum_all(ndiff::mul(nrm, nrm)));
    };
    CHECK(ndiff::grad_check_inputs<double>(fpool, {&e}, 1e-5) < 1e-4);

    auto g = random_param({1, 6, 8}, seed + 6);
    auto kw = random_param({2, 1, 3, 3}, seed + 7);
    auto fconv = [&]() {
      auto y = ndiff::conv2d(g, kw, 1, 1);
      auto p = ndiff::maxpool2d(y, 2, 2);
      return ndiff::sum_all(ndiff::mul(p, p));
    };
    CHECK(ndiff::grad_check_inputs<double>(fconv, {&g, &kw}, 1e-5) < 1e-4);
  }
}
