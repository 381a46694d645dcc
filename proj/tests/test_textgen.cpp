#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <map>

#include "rclstr/textgen/augment.hpp"
#include "rclstr/textgen/dataset.hpp"
#include "rclstr/textgen/textgen.hpp"

using namespace rclstr;
using namespace rclstr::textgen;

namespace {
const std::string kAlpha = "ABCDEFGHIJ";
}

TEST_CASE("sample_word basics", "[textgen]") {
  CHECK(sample_word("A", 1, 1, 8, 123) == "A");
  CHECK(sample_word(kAlpha, 3, 8, 8, 77) == sample_word(kAlpha, 3, 8, 8, 77));
  CHECK_THROWS_AS(sample_word(kAlpha, 3, 9, 8, 0), Error);

  // 10k symbols, alphabet of 10: frequencies within 3 sigma of 0.1
  std::map<char, int> counts;
  const int words = 2000, len = 5;
  for (int i = 0; i < words; ++i) {
    std::string w = sample_word(kAlpha, len, len, 8, mix_seed(9, static_cast<uint64_t>(i)));
    for (char c : w) counts[c]++;
  }
  const double n = words * len;
  const double sigma = std::sqrt(0.1 * 0.9 / n);
  for (char c : kAlpha) {
    double freq = counts[c] / n;
    CHECK(std::abs(freq - 0.1) < 3 * sigma + 1e-12);
  }
}

TEST_CASE("render invariants", "[textgen]") {
  RenderConfig cfg;
  auto strip = render("AB", cfg, 5);
  REQUIRE(strip.spans.size() == 2);
  CHECK(strip.spans[0].x_end <= strip.spans[1].x_start);
  CHECK(strip.spans[1].x_end <= cfg.width);

  // ink only inside spans
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      float v = strip.pixels[static_cast<size_t>(y * cfg.width + x)];
      bool in_span = false;
      for (auto& sp : strip.spans) in_span = in_span || (x >= sp.x_start && x < sp.x_end);
      if (!in_span) CHECK(v <= cfg.background_level);
    }

  // bit-identical re-render
  auto strip2 = render("AB", cfg, 5);
  CHECK(strip.pixels == strip2.pixels);
  CHECK(render("AB", cfg, 6).pixels != strip.pixels);

  // ink centroid of a single glyph lies inside its span
  auto a = render("A", cfg, 11);
  double cx = 0, mass = 0;
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      double v = a.pixels[static_cast<size_t>(y * cfg.width + x)];
      if (v > cfg.background_level) {
        cx += v * x;
        mass += v;
      }
    }
  cx /= mass;
  CHECK(cx >= a.spans[0].x_start);
  CHECK(cx < a.spans[0].x_end);

  CHECK_THROWS_AS(render("", cfg, 0), Error);
  CHECK_THROWS_AS(render("ABCDEFGHIJ", cfg, 0), Error);  // 10 glyphs cannot fit 64 px at advance 8
}

TEST_CASE("frame labels", "[textgen]") {
  TextStrip s;
  s.height = 16;
  s.width = 64;
  s.text = "AB";
  s.spans = {{0, 32}, {32, 64}};
  CHECK(frame_labels(s, 8) == "AAAABBBB");

  // a 1-frame gap between glyphs labels as blank
  TextStrip g;
  g.height = 16;
  g.width = 64;
  g.text = "AB";
  g.spans = {{0, 24}, {32, 64}};  // frames of width 8: frame 3 center 28 in the gap
  CHECK(frame_labels(g, 8) == "AAA_BBBB");

  CHECK(frame_labels(s, 1) == "B");  // center 32 falls in the second span
}

TEST_CASE("collapse readout", "[textgen]") {
  CHECK(collapse("AA_BB") == "AB");
  CHECK(collapse("A_A") == "AA");
  CHECK(collapse("__") == "");
  CHECK(collapse("") == "");
}

TEST_CASE("label collapse recovers rendered words at default geometry", "[textgen]") {
  RenderConfig cfg;
  for (uint64_t seed = 0; seed < 300; ++seed) {
    std::string word = sample_word(kAlpha, 1, 8, cfg.max_chars(), mix_seed(42, seed));
    auto strip = render(word, cfg, mix_seed(43, seed));
    CHECK(collapse(frame_labels(strip, 16)) == word);
  }
}

TEST_CASE("augment identity configurations", "[textgen]") {
  RenderConfig rcfg;
  auto strip = render("CAFE", rcfg, 3);

  AugmentConfig off;
  off.p_contrast = off.p_blur = off.p_crop = off.p_noise = 0.0;
  CHECK(augment(strip, off, 99) == strip.pixels);

  AugmentConfig neutral;
  neutral.p_contrast = neutral.p_blur = neutral.p_crop = neutral.p_noise = 1.0;
  neutral.contrast_lo = neutral.contrast_hi = 1.0;
  neutral.blur_sigma_lo = neutral.blur_sigma_hi = 0.0;
  neutral.crop_frac_lo = neutral.crop_frac_hi = 0.0;
  neutral.noise_std = 0.0;
  auto out = augment(strip, neutral, 99);
  REQUIRE(out.size() == strip.pixels.size());
  for (size_t i = 0; i < out.size(); ++i)
    CHECK(out[i] == Catch::Approx(strip.pixels[i]).margin(1e-6));
}

TEST_CASE("augment determinism, variation, and bounds", "[textgen]") {
  RenderConfig rcfg;
  auto strip = render("HEAD", rcfg, 17);
  AugmentConfig cfg;

  auto a = augment(strip, cfg, 1);
  auto b = augment(strip, cfg, 1);
  auto c = augment(strip, cfg, 2);
  CHECK(a == b);
  CHECK(a != c);

  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto px = augment(strip, cfg, seed);
    REQUIRE(px.size() == strip.pixels.size());
    for (float v : px) {
      CHECK(v >= 0.f);
      CHECK(v <= 1.f);
    }
  }

  AugmentConfig bad;
  bad.noise_std = 2.0;
  CHECK_THROWS_AS(augment(strip, bad, 0), Error);
}

TEST_CASE("dataset round trip and error paths", "[textgen]") {
  RenderConfig rcfg;
  std::vector<TextStrip> strips;
  for (uint64_t i = 0; i < 5; ++i) {
    std::string w = sample_word(kAlpha, 2, 6, rcfg.max_chars(), mix_seed(7, i));
    strips.push_back(render(w, rcfg, mix_seed(8, i)));
  }
  const std::string path = "/tmp/rclstr_test_dataset.rcld";
  write_dataset(path, strips);

  auto header = read_dataset_header(path);
  CHECK(header.height == 16);
  CHECK(header.width == 64);
  CHECK(header.count == 5);

  auto back = read_dataset(path);
  REQUIRE(back.size() == strips.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].text == strips[i].text);
    CHECK(back[i].seed == strips[i].seed);
    CHECK(back[i].pixels == strips[i].pixels);
    REQUIRE(back[i].spans.size() == strips[i].spans.size());
    for (size_t j = 0; j < back[i].spans.size(); ++j) {
      CHECK(back[i].spans[j].x_start == strips[i].spans[j].x_start);
      CHECK(back[i].spans[j].x_end == strips[i].spans[j].x_end);
    }
  }

  // truncation is an IoError, not silent corruption
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out("/tmp/rclstr_test_trunc.rcld", std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(read_dataset("/tmp/rclstr_test_trunc.rcld"), Error);
  std::remove(path.c_str());
  std::remove("/tmp/rclstr_test_trunc.rcld");
}
