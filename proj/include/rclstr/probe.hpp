#pragma once

// Representation-quality probe: a per-frame linear classifier (alphabet +
// blank) trained on top of the encoder, frozen or fine-tuned, with word
// accuracy via the greedy collapse readout, plus labeled frame-embedding
// export.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rclstr/checkpoint.hpp"
#include "rclstr/config.hpp"
#include "rclstr/core/errors.hpp"
#include "rclstr/core/rng.hpp"
#include "rclstr/encoder.hpp"
#include "rclstr/ndiff/tensor.hpp"
#include "rclstr/textgen/textgen.hpp"
#include "rclstr/train.hpp"

namespace rclstr::probe {

using config::TrainConfig;
using ndiff::Tensor;

inline constexpr uint64_t kSaltProbeInit = 0x21;
inline constexpr uint64_t kSaltProbeBatch = 0x22;
inline constexpr uint64_t kSaltLabeledWord = 0x23;
inline constexpr uint64_t kSaltLabeledRender = 0x24;
inline constexpr uint64_t kSaltEvalWord = 0x25;
inline constexpr uint64_t kSaltEvalRender = 0x26;

/// Affine map F -> (alphabet size + 1 blank), applied per frame.
struct ProbeParams {
  Tensor<float> w;  // F x classes
  Tensor<float> b;  // classes
  int64_t classes = 0;
};

inline ProbeParams init_probe(int64_t feat_dim, int64_t alphabet_size, uint64_t seed) {
  ProbeParams p;
  p.classes = alphabet_size + 1;
  Rng rng(seed);
  const double bound = std::sqrt(6.0 / static_cast<double>(feat_dim));
  std::vector<float> w(static_cast<size_t>(feat_dim * p.classes));
  for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
  p.w = Tensor<float>::param({feat_dim, p.classes}, std::move(w));
  p.b = Tensor<float>::param({p.classes}, std::vector<float>(static_cast<size_t>(p.classes), 0.f));
  return p;
}

/// Class id of a frame label character: alphabet index, or alphabet size
/// for blank.
inline int64_t class_of(char label, const std::string& alphabet) {
  if (label == textgen::kBlank) return static_cast<int64_t>(alphabet.size());
  auto pos = alphabet.find(label);
  check(pos != std::string::npos, ErrorKind::DomainError,
        std::string("label '") + label + "' not in alphabet");
  return static_cast<int64_t>(pos);
}

/// Deterministic labeled / held-out strip sets in disjoint seed streams.
inline std::vector<textgen::TextStrip> generate_strips(const TrainConfig& cfg, int64_t count,
                                                       uint64_t word_salt, uint64_t render_salt) {
  std::vector<textgen::TextStrip> strips;
  strips.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    const uint64_t id = static_cast<uint64_t>(i);
    std::string word = textgen::sample_word(cfg.alphabet, cfg.word_len_min, cfg.word_len_max,
                                            cfg.render.max_chars(), mix_seed(cfg.seed, word_salt, id));
    strips.push_back(textgen::render(word, cfg.render, mix_seed(cfg.seed, render_salt, id)));
  }
  return strips;
}

inline std::vector<textgen::TextStrip> labeled_strips(const TrainConfig& cfg) {
  const int64_t count = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(cfg.labels_fraction * static_cast<double>(cfg.probe_train_count))));
  return generate_strips(cfg, count, kSaltLabeledWord, kSaltLabeledRender);
}

inline std::vector<textgen::TextStrip> eval_strips(const TrainConfig& cfg) {
  return generate_strips(cfg, cfg.probe_eval_count, kSaltEvalWord, kSaltEvalRender);
}

/// Per-frame logits for one strip: T x classes.
inline Tensor<float> frame_logits(const encoder::EncoderParams<float>& enc, const ProbeParams& p,
                                  const textgen::TextStrip& strip) {
  auto seq = encoder::encode(enc, Tensor<float>::from({static_cast<int64_t>(strip.height),
                                                       static_cast<int64_t>(strip.width)},
                                                      strip.pixels));
  return ndiff::add(ndiff::matmul(ndiff::transpose(seq), p.w), p.b);
}

namespace detail {

// mean cross-entropy of one strip's frames against its ground-truth labels
inline Tensor<float> frame_cross_entropy(const Tensor<float>& logits, const std::string& labels,
                                         const std::string& alphabet) {
  const int64_t t = logits.extent(0), classes = logits.extent(1);
  std::vector<float> onehot(static_cast<size_t>(t * classes), 0.f);
  for (int64_t f = 0; f < t; ++f)
    onehot[static_cast<size_t>(f * classes + class_of(labels[static_cast<size_t>(f)], alphabet))] = 1.f;
  auto y = Tensor<float>::from({t, classes}, std::move(onehot));
  auto logp = ndiff::log_softmax(logits, 1, 1.0f);
  return ndiff::scale(ndiff::mean_all(ndiff::sum(ndiff::mul(y, logp), 1)), -1.0f);
}

}  // namespace detail

struct ProbeTrainResult {
  ProbeParams params;
  float first_loss = 0;
  float last_loss = 0;
};

/// Trains the probe head on precomputed features (frozen-encoder path) or
/// through the encoder (finetune). In frozen mode the encoder parameters are
/// not in the optimizer and no tape reaches them.
inline ProbeTrainResult train_probe(encoder::EncoderParams<float>& enc,
                                    const std::vector<textgen::TextStrip>& strips,
                                    const TrainConfig& cfg) {
  check(!strips.empty(), ErrorKind::ConfigError, "probe training needs at least one strip");
  ProbeTrainResult result;
  result.params = init_probe(cfg.geom.feat_dim, static_cast<int64_t>(cfg.alphabet.size()),
                             mix_seed(cfg.seed, kSaltProbeInit));
  ProbeParams& p = result.params;

  // frozen mode: encode every strip once, outside any tape
  std::vector<Tensor<float>> frozen_feats;
  std::vector<std::string> labels;
  labels.reserve(strips.size());
  for (const auto& s : strips) labels.push_back(textgen::frame_labels(s, static_cast<int>(cfg.geom.frames)));
  if (!cfg.probe_finetune) {
    frozen_feats.reserve(strips.size());
    for (const auto& s : strips)
      frozen_feats.push_back(ndiff::transpose(encoder::encode(
          enc, Tensor<float>::from({cfg.geom.height, cfg.geom.width}, s.pixels))));
  }

  std::vector<std::pair<std::string, Tensor<float>*>> params = {{"probe.w", &p.w}, {"probe.b", &p.b}};
  if (cfg.probe_finetune)
    for (auto& [name, t] : enc.named_params()) params.emplace_back("enc." + name, t);
  std::map<std::string, std::vector<float>> velocity;

  for (int64_t iter = 0; iter < cfg.probe_iterations; ++iter) {
    Rng rng(mix_seed(cfg.seed, kSaltProbeBatch, static_cast<uint64_t>(iter)));
    ndiff::Tape<float> tape;
    Tensor<float> loss;
    const int64_t bsz = std::min<int64_t>(cfg.probe_batch, static_cast<int64_t>(strips.size()));
    for (int64_t i = 0; i < bsz; ++i) {
      const size_t idx = static_cast<size_t>(rng.uniform_int(strips.size()));
      Tensor<float> logits;
      if (cfg.probe_finetune) {
        logits = frame_logits(enc, p, strips[idx]);
      } else {
        logits = ndiff::add(ndiff::matmul(frozen_feats[idx], p.w), p.b);
      }
      auto ce = detail::frame_cross_entropy(logits, labels[idx], cfg.alphabet);
      loss = loss.defined() ? ndiff::add(loss, ce) : ce;
    }
    loss = ndiff::scale(loss, 1.0f / static_cast<float>(bsz));
    const float lv = loss.item();
    if (iter == 0) result.first_loss = lv;
    result.last_loss = lv;
    check(std::isfinite(lv), ErrorKind::NonFiniteLoss, "probe loss diverged at iteration " + std::to_string(iter));
    tape.backward(loss);
    train::sgd_step(params, velocity, cfg.probe_lr, 0.f, cfg.sgd_momentum);
    for (auto& [name, t] : params) t->zero_grad();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalReport {
  double frame_accuracy = 0;
  double word_accuracy = 0;
  int64_t frames_total = 0;
  int64_t words_total = 0;
  std::vector<int64_t> confusion;  // (classes)^2, row = truth, col = prediction
  int64_t classes = 0;
  std::string config_digest_hex;
  std::string encoder_checkpoint_id;
};

/// Scores predicted frame labels against ground truth; word accuracy via
/// collapse. Empty input yields a zero report rather than an error.
inline EvalReport score_predictions(const std::vector<std::string>& predicted,
                                    const std::vector<std::string>& truth,
                                    const std::vector<std::string>& words,
                                    const std::string& alphabet) {
  EvalReport r;
  r.classes = static_cast<int64_t>(alphabet.size()) + 1;
  r.confusion.assign(static_cast<size_t>(r.classes * r.classes), 0);
  int64_t frame_hits = 0, word_hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    for (size_t f = 0; f < predicted[i].size(); ++f) {
      const int64_t tc = class_of(truth[i][f], alphabet);
      const int64_t pc = class_of(predicted[i][f], alphabet);
      r.confusion[static_cast<size_t>(tc * r.classes + pc)] += 1;
      frame_hits += tc == pc ? 1 : 0;
      r.frames_total += 1;
    }
    word_hits += textgen::collapse(predicted[i]) == words[i] ? 1 : 0;
    r.words_total += 1;
  }
  r.frame_accuracy = r.frames_total ? static_cast<double>(frame_hits) / r.frames_total : 0.0;
  r.word_accuracy = r.words_total ? static_cast<double>(word_hits) / r.words_total : 0.0;
  return r;
}

/// Frame predictions of the trained probe for one strip.
inline std::string predict_frames(const encoder::EncoderParams<float>& enc, const ProbeParams& p,
                                  const textgen::TextStrip& strip, const std::string& alphabet) {
  auto logits = frame_logits(enc, p, strip);
  const int64_t t = logits.extent(0), classes = logits.extent(1);
  std::string out(static_cast<size_t>(t), textgen::kBlank);
  for (int64_t f = 0; f < t; ++f) {
    int64_t best = 0;
    for (int64_t c = 1; c < classes; ++c)
      if (logits.values()[static_cast<size_t>(f * classes + c)] >
          logits.values()[static_cast<size_t>(f * classes + best)])
        best = c;
    out[static_cast<size_t>(f)] =
        best == static_cast<int64_t>(alphabet.size()) ? textgen::kBlank : alphabet[static_cast<size_t>(best)];
  }
  return out;
}

/// Pure function of (encoder, probe, strips): frame accuracy, word accuracy
/// via collapse, confusion counts.
inline EvalReport evaluate(const encoder::EncoderParams<float>& enc, const ProbeParams& p,
                           const std::vector<textgen::TextStrip>& strips, const TrainConfig& cfg) {
  std::vector<std::string> predicted, truth, words;
  for (const auto& s : strips) {
    predicted.push_back(predict_frames(enc, p, s, cfg.alphabet));
    truth.push_back(textgen::frame_labels(s, static_cast<int>(cfg.geom.frames)));
    words.push_back(s.text);
  }
  return score_predictions(predicted, truth, words, cfg.alphabet);
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

inline void save_probe(const std::string& path, const ProbeParams& p, uint64_t config_digest) {
  std::vector<checkpoint::ArrayRecord> records;
  records.push_back(checkpoint::digest_record(config_digest));
  records.push_back({"probe/w", p.w.shape(), p.w.values()});
  records.push_back({"probe/b", p.b.shape(), p.b.values()});
  checkpoint::write_records(path, records);
}

inline ProbeParams load_probe(const std::string& path) {
  auto records = checkpoint::index_records(checkpoint::read_records(path));
  auto wit = records.find("probe/w");
  auto bit = records.find("probe/b");
  check(wit != records.end() && bit != records.end(), ErrorKind::CheckpointError,
        path + " is not a probe checkpoint");
  ProbeParams p;
  p.w = Tensor<float>::param(wit->second.shape, wit->second.data);
  p.b = Tensor<float>::param(bit->second.shape, bit->second.data);
  p.classes = p.b.extent(0);
  return p;
}

/// One CSV row per frame: strip id, frame index, ground-truth label, and the
/// D normalized frame-feature values from the frame-level predictor.
inline void export_embeddings(const encoder::EncoderParams<float>& enc,
                              const std::vector<textgen::TextStrip>& strips, const TrainConfig& cfg,
                              const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  check(static_cast<bool>(os), ErrorKind::IoError, "cannot open " + path + " for writing");
  os << "strip,frame,label";
  for (int64_t d = 0; d < cfg.geom.embed_dim; ++d) os << ",f" << d;
  os << "\n";
  char buf[64];
  for (size_t i = 0; i < strips.size(); ++i) {
    auto seq = encoder::encode(enc, Tensor<float>::from({cfg.geom.height, cfg.geom.width},
                                                        strips[i].pixels));
    auto atoms = encoder::predict_level(enc, seq, bank::Level::frame);  // T x D, unit rows
    const std::string labels = textgen::frame_labels(strips[i], static_cast<int>(cfg.geom.frames));
    for (int64_t f = 0; f < cfg.geom.frames; ++f) {
      os << i << ',' << f << ',' << labels[static_cast<size_t>(f)];
      for (int64_t d = 0; d < cfg.geom.embed_dim; ++d) {
        std::snprintf(buf, sizeof(buf), "%.8g",
                      static_cast<double>(atoms.values()[static_cast<size_t>(f * cfg.geom.embed_dim + d)]));
        os << ',' << buf;
      }
      os << "\n";
    }
  }
  check(static_cast<bool>(os), ErrorKind::IoError, "short write to " + path);
}

inline void write_report(const std::string& path, const EvalReport& r) {
  std::ofstream os(path, std::ios::trunc);
  check(static_cast<bool>(os), ErrorKind::IoError, "cannot open " + path + " for writing");
  os << "{\n";
  os << "  \"frame_accuracy\": " << r.frame_accuracy << ",\n";
  os << "  \"word_accuracy\": " << r.word_accuracy << ",\n";
  os << "  \"frames_total\": " << r.frames_total << ",\n";
  os << "  \"words_total\": " << r.words_total << ",\n";
  os << "  \"classes\": " << r.classes << ",\n";
  os << "  \"config_digest\": \"" << r.config_digest_hex << "\",\n";
  os << "  \"encoder_checkpoint\": \"" << r.encoder_checkpoint_id << "\",\n";
  os << "  \"confusion\": [";
  for (size_t i = 0; i < r.confusion.size(); ++i) os << (i ? "," : "") << r.confusion[i];
  os << "]\n}\n";
}

}  // namespace rclstr::probe
