#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "rclstr/encoder.hpp"

using namespace rclstr;
using namespace rclstr::encoder;
using ndiff::Tensor;

namespace {

ModelGeometry desk_geom() {
  return ModelGeometry{};  // 16 x 64 -> 32 x 16, D = 16
}

Tensor<float> random_image(const ModelGeometry& g, uint64_t seed) {
  Rng rng(seed);
  std::vector<float> px(static_cast<size_t>(g.height * g.width));
  for (auto& v : px) v = static_cast<float>(rng.uniform());
  return Tensor<float>::from({g.height, g.width}, std::move(px));
}

double atom_norm(const Tensor<float>& atoms, int64_t row) {
  double ss = 0;
  for (int64_t c = 0; c < atoms.extent(1); ++c) {
    double v = atoms.values()[static_cast<size_t>(row * atoms.extent(1) + c)];
    ss += v * v;
  }
  return std::sqrt(ss);
}

}  // namespace

TEST_CASE("encode shape contract and finiteness", "[encoder]") {
  auto geom = desk_geom();
  auto params = init_params<float>(geom, 0);
  auto seq = encode(params, random_image(geom, 1));
  CHECK(seq.shape() == ndiff::Shape{32, 16});

  // zero image stays finite
  auto zero_seq = encode(params, Tensor<float>::zeros({16, 64}));
  for (float v : zero_seq.values()) CHECK(std::isfinite(v));

  // inputs anywhere in [0,1] stay finite at init scale
  for (uint64_t s = 2; s < 6; ++s) {
    auto out = encode(params, random_image(geom, s));
    for (float v : out.values()) CHECK(std::isfinite(v));
  }

  CHECK_THROWS_AS(encode(params, Tensor<float>::zeros({8, 64})), Error);

  ModelGeometry bad = geom;
  bad.frames = 20;  // incompatible with width/4
  CHECK_THROWS_AS(init_params<float>(bad, 0), Error);
}

TEST_CASE("predict_level contracts", "[encoder]") {
  auto geom = desk_geom();
  auto params = init_params<float>(geom, 3);
  auto seq = encode(params, random_image(geom, 4));

  auto word = predict_level(params, seq, Level::word);
  CHECK(word.shape() == ndiff::Shape{1, geom.embed_dim});
  CHECK(atom_norm(word, 0) == Catch::Approx(1.0).margin(1e-6));

  auto frame = predict_level(params, seq, Level::frame);
  CHECK(frame.shape() == ndiff::Shape{geom.frames, geom.embed_dim});
  for (int64_t r = 0; r < geom.frames; ++r) CHECK(atom_norm(frame, r) == Catch::Approx(1.0).margin(1e-6));

  auto sub = predict_level(params, seq, Level::subword);
  CHECK(sub.shape() == ndiff::Shape{geom.subword_bins, geom.embed_dim});

  // a constant sequence pools to identical subword atoms
  auto const_seq = Tensor<float>::full({geom.feat_dim, geom.frames}, 0.25f);
  auto csub = predict_level(params, const_seq, Level::subword);
  for (int64_t b = 1; b < geom.subword_bins; ++b)
    for (int64_t c = 0; c < geom.embed_dim; ++c)
      CHECK(csub.values()[static_cast<size_t>(b * geom.embed_dim + c)] ==
            Catch::Approx(csub.values()[static_cast<size_t>(c)]).margin(1e-6));
}

TEST_CASE("init determinism and momentum copy", "[encoder]") {
  auto geom = desk_geom();
  auto a = init_params<float>(geom, 42);
  auto b = init_params<float>(geom, 42);
  auto c = init_params<float>(geom, 43);
  auto an = a.named_params(), bn = b.named_params(), cn = c.named_params();
  bool all_equal = true, any_diff = false;
  for (size_t i = 0; i < an.size(); ++i) {
    all_equal = all_equal && (an[i].second->values() == bn[i].second->values());
    any_diff = any_diff || (an[i].second->values() != cn[i].second->values());
  }
  CHECK(all_equal);
  CHECK(any_diff);

  // weight magnitudes bounded by the kaiming-uniform scale
  const double bound1 = std::sqrt(6.0 / 3.0);
  for (float v : a.conv1_w.values()) CHECK(std::abs(v) <= bound1);
  for (float v : a.conv1_b.values()) CHECK(v == 0.0f);

  auto pair = init_pair<float>(geom, 42, 0.999f);
  auto on = pair.online.named_params();
  auto mo = pair.momentum.named_params();
  for (size_t i = 0; i < on.size(); ++i) {
    CHECK(on[i].second->values() == mo[i].second->values());
    CHECK_FALSE(mo[i].second->requires_grad());
  }
}

TEST_CASE("momentum update rule", "[encoder]") {
  auto geom = desk_geom();
  auto pair = init_pair<float>(geom, 5, 0.999f);

  auto before = pair.momentum.conv1_w.values();
  // perturb online so the copies differ
  for (auto& v : pair.online.conv1_w.mutable_values()) v += 1.0f;

  momentum_update(pair, 1.0f);
  CHECK(pair.momentum.conv1_w.values() == before);

  momentum_update(pair, 0.0f);
  CHECK(pair.momentum.conv1_w.values() == pair.online.conv1_w.values());

  auto p2 = init_pair<float>(geom, 6, 0.5f);
  for (auto& v : p2.momentum.conv1_w.mutable_values()) v = 0.0f;
  for (auto& v : p2.online.conv1_w.mutable_values()) v = 2.0f;
  momentum_update(p2, 0.5f);
  for (float v : p2.momentum.conv1_w.values()) CHECK(v == Catch::Approx(1.0f));

  CHECK_THROWS_AS(momentum_update(pair, 1.5f), Error);
}

TEST_CASE("momentum converges geometrically toward a fixed online copy", "[encoder]") {
  auto geom = desk_geom();
  auto pair = init_pair<float>(geom, 7, 0.5f);
  for (auto& v : pair.online.proj_w.mutable_values()) v += 0.5f;

  auto distance = [&]() {
    double ss = 0;
    const auto& on = pair.online.proj_w.values();
    const auto& mo = pair.momentum.proj_w.values();
    for (size_t i = 0; i < on.size(); ++i) ss += (on[i] - mo[i]) * static_cast<double>(on[i] - mo[i]);
    return std::sqrt(ss);
  };

  double prev = distance();
  auto online_before = pair.online.proj_w.values();
  for (int step = 0; step < 5; ++step) {
    momentum_update(pair, 0.5f);
    double now = distance();
    CHECK(now == Catch::Approx(prev * 0.5).epsilon(1e-3));
    prev = now;
  }
  // online never changes under momentum updates
  CHECK(pair.online.proj_w.values() == online_before);
}
