#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "rclstr/losses.hpp"
#include "rclstr/ndiff/grad_check.hpp"
#include "rclstr/permute.hpp"
#include "support/fixtures_io.hpp"
#include "support/test_util.hpp"

using namespace rclstr;
using fixtures::parse_fixtures;
using testutil::to_tensor;
using testutil::unit_rows_mat;

namespace {
const char* kGoldenPath = "tests/fixtures/golden.txt";
}

TEST_CASE("implementation reproduces the golden loss values", "[fixtures]") {
  auto all = parse_fixtures(kGoldenPath);
  REQUIRE(all.count("losses_seed0") == 1);
  const auto& fx = all.at("losses_seed0");
  CHECK(fx.fields.at("provenance") == "DERIVED");
  CHECK_FALSE(fx.fields.at("oracle").empty());

  const int64_t images = 2, frames = 4, bins = 2, d = 4, k = 8;
  losses::LossConfig<double> cfg;
  cfg.tau_info = 0.07;
  cfg.tau_kl = 0.1;
  cfg.alpha = 1.0;

  auto frame_q = to_tensor<double>(unit_rows_mat(images * frames, d, mix_seed(0, 10)));
  auto frame_p = to_tensor<double>(unit_rows_mat(images * frames, d, mix_seed(0, 11)));
  auto frame_qr = to_tensor<double>(unit_rows_mat(images * frames, d, mix_seed(0, 12)));
  auto sub_q = to_tensor<double>(unit_rows_mat(images * bins, d, mix_seed(0, 20)));
  auto sub_p = to_tensor<double>(unit_rows_mat(images * bins, d, mix_seed(0, 21)));
  auto sub_qr = to_tensor<double>(unit_rows_mat(images * bins, d, mix_seed(0, 22)));
  auto word_q = to_tensor<double>(unit_rows_mat(images, d, mix_seed(0, 30)));
  auto word_p = to_tensor<double>(unit_rows_mat(images, d, mix_seed(0, 31)));
  auto word_qr = to_tensor<double>(unit_rows_mat(images, d, mix_seed(0, 32)));
  auto bank_f = to_tensor<double>(unit_rows_mat(k, d, mix_seed(0, 40)));
  auto bank_s = to_tensor<double>(unit_rows_mat(k, d, mix_seed(0, 41)));
  auto bank_w = to_tensor<double>(unit_rows_mat(k, d, mix_seed(0, 42)));

  CHECK(losses::info_nce<double>(frame_q, frame_p, bank_f, 0.07).item() ==
        Catch::Approx(fx.expects.at("info_nce")).margin(1e-10));
  CHECK(losses::symmetric_kl<double>(frame_q, frame_p, bank_f, 0.1).item() ==
        Catch::Approx(fx.expects.at("symmetric_kl")).margin(1e-10));
  CHECK(losses::relational<double>(frame_q, frame_p, bank_f, cfg).item() ==
        Catch::Approx(fx.expects.at("relational")).margin(1e-10));

  losses::TotalLossInputs<double> in;
  in.images = images;
  in.frames = frames;
  in.subword_bins = bins;
  auto mk_level = [](ndiff::Tensor<double> q, ndiff::Tensor<double> p, ndiff::Tensor<double> qr) {
    losses::LevelAtoms<double> a;
    a.q = std::move(q);
    a.p = std::move(p);
    a.q_reg = std::move(qr);
    a.reg_mask.assign(static_cast<size_t>(a.q_reg.extent(0)), 1);
    return a;
  };
  in.levels[bank::Level::frame] = mk_level(frame_q, frame_p, frame_qr);
  in.levels[bank::Level::subword] = mk_level(sub_q, sub_p, sub_qr);
  in.levels[bank::Level::word] = mk_level(word_q, word_p, word_qr);
  in.banks[bank::Level::frame] = bank_f;
  in.banks[bank::Level::subword] = bank_s;
  in.banks[bank::Level::word] = bank_w;

  CHECK(losses::regularized<double>(frame_q, frame_p, frame_qr,
                                    in.levels[bank::Level::frame].reg_mask, bank_f, cfg)
            .item() == Catch::Approx(fx.expects.at("regularized")).margin(1e-10));

  auto breakdown = losses::total_loss<double>(in, cfg, losses::ModuleToggles{true, true, true},
                                              {bank::Level::frame, bank::Level::subword, bank::Level::word});
  CHECK(breakdown.terms.at("f2s") == Catch::Approx(fx.expects.at("f2s")).margin(1e-10));
  CHECK(breakdown.terms.at("s2w") == Catch::Approx(fx.expects.at("s2w")).margin(1e-10));
  CHECK(breakdown.terms.at("frame") + breakdown.terms.at("subword") + breakdown.terms.at("word") ==
        Catch::Approx(fx.expects.at("hierarchical")).margin(1e-10));
  CHECK(breakdown.total.item() == Catch::Approx(fx.expects.at("total")).margin(1e-9));
}

TEST_CASE("closed-form fixtures", "[fixtures]") {
  auto all = parse_fixtures(kGoldenPath);
  auto q = testutil::basis_vector(4, 0);
  auto p = testutil::basis_vector(4, 1);
  auto bank23 = to_tensor<double>(testutil::basis_mat(4, {1, 2}));
  auto bank01 = to_tensor<double>(testutil::basis_mat(4, {0, 1}));

  CHECK(losses::info_nce<double>(q, q, bank23, 1.0).item() ==
        Catch::Approx(all.at("info_nce_orthogonal_tau1").expects.at("value")).margin(1e-12));
  CHECK(losses::info_nce<double>(q, q, bank23, 0.5).item() ==
        Catch::Approx(all.at("info_nce_orthogonal_tau_half").expects.at("value")).margin(1e-12));
  CHECK(losses::symmetric_kl<double>(q, p, bank01, 1.0).item() ==
        Catch::Approx(all.at("symmetric_kl_two_point").expects.at("value")).margin(1e-12));
  CHECK(all.at("symmetric_kl_two_point").expects.at("value") ==
        Catch::Approx(std::tanh(0.5)).margin(1e-12));
}

TEST_CASE("gradient fixture matches the analytic backward pass", "[fixtures]") {
  auto all = parse_fixtures(kGoldenPath);
  const auto& fx = all.at("info_nce_grad_seed0");

  auto q = to_tensor<double>(unit_rows_mat(3, 4, mix_seed(0, 50)), /*requires_grad=*/true);
  auto p = to_tensor<double>(unit_rows_mat(3, 4, mix_seed(0, 51)));
  auto bank = to_tensor<double>(unit_rows_mat(6, 4, mix_seed(0, 52)));
  {
    ndiff::Tape<double> tape;
    auto loss = losses::info_nce<double>(q, p, bank, 0.2);
    tape.backward(loss);
  }
  CHECK(q.grad()[0] == Catch::Approx(fx.expects.at("dq00")).margin(1e-6));
}

TEST_CASE("permutation and pooling tables", "[fixtures]") {
  auto all = parse_fixtures(kGoldenPath);
  CHECK(all.at("permutation_slots_2031").fields.at("layout") == "B1A1|B2A2");
  CHECK(all.at("avgpool_boundaries_t26_b4").fields.at("boundaries") == "0,6,13,19,26");

  // drive the implementation to pi = (2,0,3,1) and compare the layout
  permute::PixelBatch b;
  b.count = 2;
  b.height = 1;
  b.width = 4;
  b.data = {1.f, 1.f, 2.f, 2.f, 3.f, 3.f, 4.f, 4.f};  // A1 A2 B1 B2 tagged by value
  auto d = permute::divide(b, 2, permute::DivisionStrategy::direct);
  permute::PermutationRecord rec;
  uint64_t seed = 0;
  for (;; ++seed) {
    permute::shuffle_groups(d, 2, seed, &rec);
    if (rec.pi[0] == std::vector<int>{2, 0, 3, 1}) break;
    REQUIRE(seed < 100000);
  }
  auto out = permute::shuffle_groups(d, 2, seed, &rec);
  const std::vector<float> expect = {3.f, 3.f, 1.f, 1.f, 4.f, 4.f, 2.f, 2.f};  // B1A1 | B2A2
  CHECK(out.data == expect);

  // bin boundaries reproduced by the pooling op: pool a ramp and compare
  std::vector<double> ramp(26);
  for (int i = 0; i < 26; ++i) ramp[i] = i;
  auto pooled = ndiff::avgpool_seq(ndiff::Tensor<double>::from({1, 26}, std::move(ramp)), 4);
  CHECK(pooled.values()[0] == Catch::Approx((0 + 5) / 2.0));
  CHECK(pooled.values()[3] == Catch::Approx((19 + 25) / 2.0));
}

TEST_CASE("fixture regeneration is stable and matches the committed file", "[fixtures]") {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "rclstr_fixtures";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string regen1 = (dir / "golden1.txt").string();
  const std::string regen2 = (dir / "golden2.txt").string();

  // the builder binary sits next to the test binary
  auto builder = fs::path("build") / "tests" / "rclstr_fixture_builder";
  REQUIRE(fs::exists(builder));
  REQUIRE(std::system((builder.string() + " " + regen1 + " > /dev/null").c_str()) == 0);
  REQUIRE(std::system((builder.string() + " " + regen2 + " > /dev/null").c_str()) == 0);

  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(regen1) == slurp(regen2));  // byte-identical across runs

  // regenerated values agree with the committed goldens
  auto committed = parse_fixtures(kGoldenPath);
  auto regen = parse_fixtures(regen1);
  REQUIRE(committed.size() == regen.size());
  for (const auto& [name, fx] : committed) {
    REQUIRE(regen.count(name) == 1);
    for (const auto& [label, value] : fx.expects) {
      CHECK(regen.at(name).expects.at(label) ==
            Catch::Approx(value).epsilon(1e-12).margin(1e-15));
    }
    CHECK(regen.at(name).fields == fx.fields);
  }
  fs::remove_all(dir);
}
