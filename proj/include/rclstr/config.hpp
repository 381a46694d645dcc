#pragma once

// Run configuration: a flat key=value schema with defaults, loaded from a
// config file (# comments), overridden by RCLSTR_* environment variables,
// then by explicit key=value pairs. Unknown keys are rejected. The resolved
// form serializes canonically (sorted) and hashes to a digest that
// checkpoints carry.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rclstr/bank.hpp"
#include "rclstr/core/errors.hpp"
#include "rclstr/encoder.hpp"
#include "rclstr/losses.hpp"
#include "rclstr/permute.hpp"
#include "rclstr/textgen/augment.hpp"

namespace rclstr::config {

struct KeySpec {
  const char* key;
  const char* default_value;
  const char* doc;
};

inline const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"seed", "0", "master seed; all randomness derives from it"},
      // geometry
      {"height", "16", "strip height in pixels"},
      {"width", "64", "strip width in pixels"},
      {"feat_dim", "32", "sequence feature channels F"},
      {"frames", "16", "sequence length T (must equal width/4)"},
      {"embed_dim", "16", "contrastive feature dimension D"},
      {"subword_bins", "4", "subword pooling bins"},
      // text generation
      {"alphabet", "ABCDEFGHIJ", "symbols drawn for synthetic words (subset of A-Z)"},
      {"word_len_min", "3", "minimum word length"},
      {"word_len_max", "8", "maximum word length"},
      {"glyph_advance", "8", "horizontal pixels per glyph cell"},
      {"background_level", "0.1", "background gray level"},
      {"ink_level", "0.9", "glyph gray level"},
      {"texture_amplitude", "0.05", "subtractive background texture amplitude"},
      // augmentation
      {"aug_contrast_lo", "0.5", "linear contrast factor, low"},
      {"aug_contrast_hi", "1.0", "linear contrast factor, high"},
      {"aug_blur_sigma_lo", "0.5", "gaussian blur sigma, low"},
      {"aug_blur_sigma_hi", "1.5", "gaussian blur sigma, high"},
      {"aug_crop_frac_lo", "0.0", "horizontal crop fraction per side, low"},
      {"aug_crop_frac_hi", "0.15", "horizontal crop fraction per side, high"},
      {"aug_noise_std", "0.05", "additive gaussian noise std"},
      {"aug_p_contrast", "0.5", "probability of the contrast op"},
      {"aug_p_blur", "0.5", "probability of the blur op"},
      {"aug_p_crop", "0.5", "probability of the crop op"},
      {"aug_p_noise", "0.5", "probability of the noise op"},
      // permutation regularization
      {"patches_n", "2", "horizontal patches per image N"},
      {"group_m", "2", "images per shuffle group M"},
      {"division_strategy", "direct", "direct | drop_boundary | vertical_projection"},
      // losses
      {"tau_info", "0.07", "InfoNCE temperature"},
      {"tau_kl", "0.1", "similarity-distribution KL temperature"},
      {"alpha", "1.0", "KL term weight in the relational loss"},
      {"cross_hierarchy_loss_kind", "kl_only", "kl_only | relational"},
      {"hierarchy_levels", "frame,subword,word", "levels used when hier is on"},
      {"toggle_reg", "true", "permutation regularization module"},
      {"toggle_hier", "true", "hierarchical relation module"},
      {"toggle_con", "true", "cross-hierarchy consistency module"},
      // negative banks
      {"bank_k", "512", "negative bank capacity per level"},
      // encoder
      {"encoder_momentum", "0.999", "momentum coefficient m"},
      // training
      {"batch_size", "32", "images per iteration"},
      {"iterations", "2000", "training iterations"},
      {"lr", "0.01", "SGD learning rate (constant schedule)"},
      {"weight_decay", "0.0001", "coupled L2 weight decay"},
      {"sgd_momentum", "0.9", "SGD momentum"},
      {"checkpoint_interval", "500", "iterations between checkpoints (0 = final only)"},
      // probe
      {"probe_iterations", "2000", "probe training iterations"},
      {"probe_lr", "0.05", "probe learning rate"},
      {"probe_batch", "64", "strips per probe iteration"},
      {"probe_train_count", "256", "labeled strips for probe training"},
      {"probe_eval_count", "256", "held-out strips for evaluation"},
      {"probe_mode", "frozen", "frozen | finetune"},
      {"labels_fraction", "1.0", "fraction of the labeled strips actually used"},
  };
  return keys;
}

class Config {
 public:
  static Config defaults() {
    Config c;
    for (const auto& k : schema()) c.values_[k.key] = k.default_value;
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    check(values_.count(key) == 1, ErrorKind::ConfigError, "unknown config key '" + key + "'");
    values_[key] = value;
  }

  const std::string& raw(const std::string& key) const {
    auto it = values_.find(key);
    check(it != values_.end(), ErrorKind::ConfigError, "unknown config key '" + key + "'");
    return it->second;
  }

  int64_t get_int(const std::string& key) const {
    const std::string& s = raw(key);
    try {
      size_t pos = 0;
      int64_t v = std::stoll(s, &pos);
      check(pos == s.size(), ErrorKind::ConfigError, "");
      return v;
    } catch (...) {
      raise(ErrorKind::ConfigError, "key '" + key + "' expects an integer, got '" + s + "'");
    }
  }

  double get_double(const std::string& key) const {
    const std::string& s = raw(key);
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      check(pos == s.size(), ErrorKind::ConfigError, "");
      return v;
    } catch (...) {
      raise(ErrorKind::ConfigError, "key '" + key + "' expects a number, got '" + s + "'");
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& s = raw(key);
    if (s == "true" || s == "1" || s == "on") return true;
    if (s == "false" || s == "0" || s == "off") return false;
    raise(ErrorKind::ConfigError, "key '" + key + "' expects true/false, got '" + s + "'");
  }

  /// Loads `key = value` lines; '#' starts a comment; blank lines ignored.
  void load_file(const std::string& path) {
    std::ifstream is(path);
    check(static_cast<bool>(is), ErrorKind::ConfigError, "cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        auto issp = [](unsigned char c) { return std::isspace(c); };
        while (!s.empty() && issp(s.front())) s.erase(s.begin());
        while (!s.empty() && issp(s.back())) s.pop_back();
        return s;
      };
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      check(eq != std::string::npos, ErrorKind::ConfigError,
            path + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  /// Applies RCLSTR_<KEY> environment overrides for every schema key.
  void load_env() {
    for (const auto& k : schema()) {
      std::string env = "RCLSTR_";
      for (const char* c = k.key; *c; ++c) env += static_cast<char>(std::toupper(static_cast<unsigned char>(*c)));
      if (const char* v = std::getenv(env.c_str())) set(k.key, v);
    }
  }

  /// Applies `key=value` strings (command-line overrides).
  void apply_overrides(const std::vector<std::string>& pairs) {
    for (const std::string& p : pairs) {
      auto eq = p.find('=');
      check(eq != std::string::npos, ErrorKind::ConfigError, "override '" + p + "' is not key=value");
      set(p.substr(0, eq), p.substr(eq + 1));
    }
  }

  /// Canonical serialization: sorted key = value lines.
  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
  }

  /// FNV-1a 64-bit digest of the canonical serialization.
  uint64_t digest() const {
    const std::string text = to_text();
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Typed views used by the pipeline
// ---------------------------------------------------------------------------

struct TrainConfig {
  uint64_t seed = 0;
  encoder::ModelGeometry geom;
  textgen::RenderConfig render;
  textgen::AugmentConfig augment;
  std::string alphabet;
  int word_len_min = 3, word_len_max = 8;

  int patches_n = 2, group_m = 2;
  permute::DivisionStrategy strategy = permute::DivisionStrategy::direct;

  losses::LossConfig<float> loss;
  losses::ModuleToggles toggles;
  std::vector<bank::Level> hierarchy_levels;

  int64_t bank_k = 512;
  float encoder_momentum = 0.999f;

  int64_t batch_size = 32;
  int64_t iterations = 2000;
  float lr = 0.01f;
  float weight_decay = 1e-4f;
  float sgd_momentum = 0.9f;
  int64_t checkpoint_interval = 500;

  // probe section
  int64_t probe_iterations = 2000;
  float probe_lr = 0.05f;
  int64_t probe_batch = 64;
  int64_t probe_train_count = 256;
  int64_t probe_eval_count = 256;
  bool probe_finetune = false;
  double labels_fraction = 1.0;

  uint64_t config_digest = 0;
};

inline std::vector<bank::Level> parse_levels(const std::string& csv) {
  std::vector<bank::Level> levels;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "frame") levels.push_back(bank::Level::frame);
    else if (item == "subword") levels.push_back(bank::Level::subword);
    else if (item == "word") levels.push_back(bank::Level::word);
    else raise(ErrorKind::ConfigError, "unknown hierarchy level '" + item + "'");
  }
  check(!levels.empty(), ErrorKind::ConfigError, "hierarchy_levels must not be empty");
  return levels;
}

inline TrainConfig make_train_config(const Config& c) {
  TrainConfig t;
  t.seed = static_cast<uint64_t>(c.get_int("seed"));

  t.geom.height = c.get_int("height");
  t.geom.width = c.get_int("width");
  t.geom.feat_dim = c.get_int("feat_dim");
  t.geom.frames = c.get_int("frames");
  t.geom.embed_dim = c.get_int("embed_dim");
  t.geom.subword_bins = c.get_int("subword_bins");

  t.render.height = static_cast<int>(t.geom.height);
  t.render.width = static_cast<int>(t.geom.width);
  t.render.glyph_advance = static_cast<int>(c.get_int("glyph_advance"));
  t.render.background_level = static_cast<float>(c.get_double("background_level"));
  t.render.ink_level = static_cast<float>(c.get_double("ink_level"));
  t.render.texture_amplitude = static_cast<float>(c.get_double("texture_amplitude"));

  t.alphabet = c.raw("alphabet");
  for (char ch : t.alphabet)
    check(ch >= 'A' && ch <= 'Z', ErrorKind::ConfigError, "alphabet must be uppercase A-Z");
  t.word_len_min = static_cast<int>(c.get_int("word_len_min"));
  t.word_len_max = static_cast<int>(c.get_int("word_len_max"));

  t.augment.contrast_lo = c.get_double("aug_contrast_lo");
  t.augment.contrast_hi = c.get_double("aug_contrast_hi");
  t.augment.blur_sigma_lo = c.get_double("aug_blur_sigma_lo");
  t.augment.blur_sigma_hi = c.get_double("aug_blur_sigma_hi");
  t.augment.crop_frac_lo = c.get_double("aug_crop_frac_lo");
  t.augment.crop_frac_hi = c.get_double("aug_crop_frac_hi");
  t.augment.noise_std = c.get_double("aug_noise_std");
  t.augment.p_contrast = c.get_double("aug_p_contrast");
  t.augment.p_blur = c.get_double("aug_p_blur");
  t.augment.p_crop = c.get_double("aug_p_crop");
  t.augment.p_noise = c.get_double("aug_p_noise");
  t.augment.validate();

  t.patches_n = static_cast<int>(c.get_int("patches_n"));
  t.group_m = static_cast<int>(c.get_int("group_m"));
  t.strategy = permute::division_strategy_from_string(c.raw("division_strategy"));
  check(t.geom.frames % t.patches_n == 0, ErrorKind::ConfigError,
        "frames must be divisible by patches_n");
  check(t.geom.width % t.patches_n == 0, ErrorKind::ConfigError,
        "width must be divisible by patches_n");

  t.loss.tau_info = static_cast<float>(c.get_double("tau_info"));
  t.loss.tau_kl = static_cast<float>(c.get_double("tau_kl"));
  t.loss.alpha = static_cast<float>(c.get_double("alpha"));
  t.loss.cross_kind = losses::cross_loss_kind_from_string(c.raw("cross_hierarchy_loss_kind"));
  t.loss.validate();
  t.toggles.reg = c.get_bool("toggle_reg");
  t.toggles.hier = c.get_bool("toggle_hier");
  t.toggles.con = c.get_bool("toggle_con");
  t.hierarchy_levels = parse_levels(c.raw("hierarchy_levels"));

  t.bank_k = c.get_int("bank_k");
  t.encoder_momentum = static_cast<float>(c.get_double("encoder_momentum"));
  check(t.encoder_momentum >= 0.f && t.encoder_momentum <= 1.f, ErrorKind::ConfigError,
        "encoder_momentum must be in [0, 1]");

  t.batch_size = c.get_int("batch_size");
  t.iterations = c.get_int("iterations");
  t.lr = static_cast<float>(c.get_double("lr"));
  t.weight_decay = static_cast<float>(c.get_double("weight_decay"));
  t.sgd_momentum = static_cast<float>(c.get_double("sgd_momentum"));
  t.checkpoint_interval = c.get_int("checkpoint_interval");
  check(t.batch_size >= 1 && t.iterations >= 0, ErrorKind::ConfigError,
        "batch_size and iterations must be positive");

  t.probe_iterations = c.get_int("probe_iterations");
  t.probe_lr = static_cast<float>(c.get_double("probe_lr"));
  t.probe_batch = c.get_int("probe_batch");
  t.probe_train_count = c.get_int("probe_train_count");
  t.probe_eval_count = c.get_int("probe_eval_count");
  const std::string mode = c.raw("probe_mode");
  check(mode == "frozen" || mode == "finetune", ErrorKind::ConfigError,
        "probe_mode must be frozen or finetune");
  t.probe_finetune = mode == "finetune";
  t.labels_fraction = c.get_double("labels_fraction");
  check(t.labels_fraction > 0.0 && t.labels_fraction <= 1.0, ErrorKind::ConfigError,
        "labels_fraction must be in (0, 1]");

  t.config_digest = c.digest();
  return t;
}

}  // namespace rclstr::config
