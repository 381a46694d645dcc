#pragma once

// The pre-training loop: per iteration, two augmented views per strip, a
// patch-permuted copy of the query view through the online branch only,
// per-level atoms, the composed loss, SGD with momentum, the momentum
// encoder update, and FIFO bank maintenance. Deterministic: every random
// draw is a pure function of (seed, iteration, item).

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rclstr/bank.hpp"
#include "rclstr/checkpoint.hpp"
#include "rclstr/config.hpp"
#include "rclstr/core/errors.hpp"
#include "rclstr/core/rng.hpp"
#include "rclstr/encoder.hpp"
#include "rclstr/losses.hpp"
#include "rclstr/ndiff/tensor.hpp"
#include "rclstr/permute.hpp"
#include "rclstr/textgen/augment.hpp"
#include "rclstr/textgen/dataset.hpp"
#include "rclstr/textgen/textgen.hpp"

namespace rclstr::train {

using bank::Level;
using config::TrainConfig;
using encoder::ModelPair;
using ndiff::Tensor;

// seed-stream salts
inline constexpr uint64_t kSaltWord = 0x11;
inline constexpr uint64_t kSaltRender = 0x12;
inline constexpr uint64_t kSaltAugQ = 0x13;
inline constexpr uint64_t kSaltAugK = 0x14;
inline constexpr uint64_t kSaltPermute = 0x15;
inline constexpr uint64_t kSaltBank = 0x16;

/// Source of training strips, addressed by (iteration, item) so workers can
/// render ahead without changing results.
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual textgen::TextStrip strip(int64_t iteration, int64_t item) = 0;
};

/// Infinite on-the-fly generator.
class GeneratedStream : public DataSource {
 public:
  explicit GeneratedStream(const TrainConfig& cfg) : cfg_(cfg) {}

  textgen::TextStrip strip(int64_t iteration, int64_t item) override {
    const uint64_t it = static_cast<uint64_t>(iteration), id = static_cast<uint64_t>(item);
    std::string word = textgen::sample_word(cfg_.alphabet, cfg_.word_len_min, cfg_.word_len_max,
                                            cfg_.render.max_chars(), mix_seed(cfg_.seed, kSaltWord, it, id));
    return textgen::render(word, cfg_.render, mix_seed(cfg_.seed, kSaltRender, it, id));
  }

 private:
  TrainConfig cfg_;
};

/// Fixed dataset read from an RCLD file; raises DataExhausted past the end.
class FileDataset : public DataSource {
 public:
  explicit FileDataset(const std::string& path) : strips_(textgen::read_dataset(path)) {}

  textgen::TextStrip strip(int64_t iteration, int64_t item) override {
    const size_t idx = static_cast<size_t>(iteration) * batch_hint_ + static_cast<size_t>(item);
    check(idx < strips_.size(), ErrorKind::DataExhausted,
          "dataset exhausted at iteration " + std::to_string(iteration));
    return strips_[idx];
  }

  void set_batch_hint(int64_t b) { batch_hint_ = static_cast<size_t>(b); }
  size_t size() const { return strips_.size(); }

 private:
  std::vector<textgen::TextStrip> strips_;
  size_t batch_hint_ = 1;
};

// ---------------------------------------------------------------------------
// SGD with momentum
// ---------------------------------------------------------------------------

/// v := momentum * v + (grad + weight_decay * param); param -= lr * v.
/// Gradients are left untouched (the loop zeroes them afterwards).
template <typename S>
void sgd_step(std::vector<std::pair<std::string, Tensor<S>*>>& params,
              std::map<std::string, std::vector<S>>& velocity, S lr, S weight_decay, S momentum) {
  for (auto& [name, p] : params) {
    const auto& g = p->grad();
    auto& v = velocity[name];
    if (v.empty()) v.assign(g.size(), S(0));
    check(v.size() == g.size(), ErrorKind::ShapeMismatch, "velocity shape mismatch for " + name);
    auto& w = p->mutable_values();
    for (size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum * v[i] + (g[i] + weight_decay * w[i]);
      w[i] -= lr * v[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Training state and checkpoints
// ---------------------------------------------------------------------------

struct TrainState {
  ModelPair<float> pair;
  std::map<Level, std::unique_ptr<bank::NegativeBank>> banks;
  std::map<std::string, std::vector<float>> velocity;
  int64_t iteration = 0;
};

/// Levels whose banks participate under the given toggles: the hierarchy
/// levels when hier is on (word only otherwise), plus subword/word for the
/// consistency terms.
inline std::vector<Level> active_levels(const TrainConfig& cfg) {
  std::vector<Level> levels = cfg.toggles.hier ? cfg.hierarchy_levels : std::vector<Level>{Level::word};
  auto ensure = [&](Level l) {
    for (Level x : levels)
      if (x == l) return;
    levels.push_back(l);
  };
  if (cfg.toggles.con) {
    ensure(Level::frame);
    ensure(Level::subword);
    ensure(Level::word);
  }
  return levels;
}

inline TrainState init_state(const TrainConfig& cfg) {
  TrainState st;
  st.pair = encoder::init_pair<float>(cfg.geom, mix_seed(cfg.seed, 0x01), cfg.encoder_momentum);
  for (Level l : {Level::frame, Level::subword, Level::word}) {
    st.banks[l] = std::make_unique<bank::NegativeBank>(
        cfg.bank_k, cfg.geom.embed_dim, mix_seed(cfg.seed, kSaltBank, static_cast<uint64_t>(l)), l);
  }
  return st;
}

inline void save_checkpoint(const std::string& path, const TrainState& st, uint64_t config_digest) {
  std::vector<checkpoint::ArrayRecord> records;
  records.push_back(checkpoint::scalar_record("meta/iteration", static_cast<float>(st.iteration)));
  records.push_back(checkpoint::digest_record(config_digest));
  auto dump = [&records](const std::string& prefix, encoder::EncoderParams<float>& params) {
    for (auto& [name, t] : params.named_params())
      records.push_back({prefix + name, t->shape(), t->values()});
  };
  dump("online/", const_cast<encoder::EncoderParams<float>&>(st.pair.online));
  dump("momentum/", const_cast<encoder::EncoderParams<float>&>(st.pair.momentum));
  for (auto& [name, t] : const_cast<encoder::EncoderParams<float>&>(st.pair.online).named_params()) {
    auto it = st.velocity.find(name);
    std::vector<float> v = it != st.velocity.end() ? it->second : std::vector<float>(t->values().size(), 0.f);
    records.push_back({"opt/v/" + name, t->shape(), std::move(v)});
  }
  for (const auto& [level, b] : st.banks) {
    const std::string base = std::string("bank/") + bank::level_name(level) + "/";
    records.push_back({base + "rows", {b->capacity(), b->dim()}, b->storage()});
    records.push_back(checkpoint::scalar_record(base + "cursor", static_cast<float>(b->cursor())));
    records.push_back(checkpoint::scalar_record(base + "fill", static_cast<float>(b->fill())));
  }
  checkpoint::write_records(path, records);
}

/// Restores a full training state. The stored config digest must match the
/// digest of the resolved config driving the resumed run.
inline TrainState load_checkpoint(const std::string& path, const TrainConfig& cfg) {
  auto records = checkpoint::index_records(checkpoint::read_records(path));
  auto find = [&records, &path](const std::string& name) -> checkpoint::ArrayRecord& {
    auto it = records.find(name);
    check(it != records.end(), ErrorKind::CheckpointError, path + " lacks record '" + name + "'");
    return it->second;
  };

  const uint64_t stored = checkpoint::digest_from_record(find("meta/config_digest"));
  check(stored == cfg.config_digest, ErrorKind::DigestMismatch,
        "checkpoint was produced under a different resolved config");

  TrainState st = init_state(cfg);
  st.iteration = static_cast<int64_t>(find("meta/iteration").data[0]);
  auto restore = [&find](const std::string& prefix, encoder::EncoderParams<float>& params) {
    for (auto& [name, t] : params.named_params()) {
      auto& r = find(prefix + name);
      check(r.shape == t->shape(), ErrorKind::CheckpointError, "shape mismatch for " + prefix + name);
      t->mutable_values() = r.data;
    }
  };
  restore("online/", st.pair.online);
  restore("momentum/", st.pair.momentum);
  for (auto& [name, t] : st.pair.online.named_params()) st.velocity[name] = find("opt/v/" + name).data;
  for (auto& [level, b] : st.banks) {
    const std::string base = std::string("bank/") + bank::level_name(level) + "/";
    b->restore(find(base + "rows").data, static_cast<int64_t>(find(base + "cursor").data[0]),
               static_cast<int64_t>(find(base + "fill").data[0]));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsRecord {
  int64_t iteration = 0;
  std::map<std::string, float> terms;  // per-term losses
  float total = 0;
  float grad_norm = 0;
  int64_t bank_fill = 0;
  double wall_ms = 0;
};

// ---------------------------------------------------------------------------
// One iteration / full loop
// ---------------------------------------------------------------------------

struct IterationTrace {
  uint64_t last_bank_read_seq = 0;
  uint64_t last_bank_write_seq = 0;
};

struct PretrainHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(int64_t iteration, const std::string& path)> on_checkpoint;
  std::function<void(const IterationTrace&)> on_iteration;
};

namespace detail {

struct LevelStack {
  std::vector<Tensor<float>> q_atoms, p_atoms, qreg_atoms;
};

// stacks per-image atom matrices (atoms x D) image-major
inline Tensor<float> stack(std::vector<Tensor<float>>& parts) {
  return parts.size() == 1 ? parts[0] : ndiff::concat(parts, 0);
}

}  // namespace detail

/// Runs one training iteration on the given batch index. Exposed separately
/// from pretrain() so tests can drive single steps.
inline MetricsRecord pretrain_iteration(const TrainConfig& cfg, DataSource& data, TrainState& st,
                                        const PretrainHooks& hooks = {}) {
  const auto t_start = std::chrono::steady_clock::now();
  const int64_t iter = st.iteration;
  const uint64_t uiter = static_cast<uint64_t>(iter);
  const int64_t b = cfg.batch_size;
  const auto levels = active_levels(cfg);

  // batch: render once, augment twice
  std::vector<textgen::TextStrip> strips;
  strips.reserve(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) strips.push_back(data.strip(iter, i));

  permute::PixelBatch xq;
  xq.count = b;
  xq.height = cfg.geom.height;
  xq.width = cfg.geom.width;
  xq.data.resize(static_cast<size_t>(b * cfg.geom.height * cfg.geom.width));
  std::vector<std::vector<float>> xk(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    auto q_px = textgen::augment(strips[static_cast<size_t>(i)], cfg.augment,
                                 mix_seed(cfg.seed, kSaltAugQ, uiter, static_cast<uint64_t>(i)));
    std::copy(q_px.begin(), q_px.end(), xq.image(i));
    xk[static_cast<size_t>(i)] = textgen::augment(strips[static_cast<size_t>(i)], cfg.augment,
                                                  mix_seed(cfg.seed, kSaltAugK, uiter, static_cast<uint64_t>(i)));
  }

  // permuted copy of the query view (online branch only); remainder images
  // beyond a full group are excluded from the regularization term
  const int64_t covered = cfg.toggles.reg ? (b / cfg.group_m) * cfg.group_m : 0;
  losses::ModuleToggles toggles = cfg.toggles;
  if (covered == 0) toggles.reg = false;
  permute::PermutationRecord rec;
  permute::PixelBatch xq_reg;
  if (covered > 0) {
    permute::PixelBatch head;
    head.count = covered;
    head.height = xq.height;
    head.width = xq.width;
    head.data.assign(xq.data.begin(), xq.data.begin() + covered * xq.height * xq.width);
    auto divided = permute::divide(head, cfg.patches_n, cfg.strategy);
    xq_reg = permute::shuffle_groups(divided, cfg.group_m, mix_seed(cfg.seed, kSaltPermute, uiter), &rec);
  }

  MetricsRecord metrics;
  metrics.iteration = iter;
  IterationTrace trace;
  float grad_norm_sq = 0.f;
  std::map<Level, Tensor<float>> keys;  // momentum atoms to enqueue after the loss

  {
    ndiff::Tape<float> tape;

    // encode all branches; momentum outputs carry no tape links
    std::vector<Tensor<float>> seq_q, seq_k, seq_qr;
    for (int64_t i = 0; i < b; ++i) {
      seq_q.push_back(encoder::encode(
          st.pair.online, Tensor<float>::from({cfg.geom.height, cfg.geom.width},
                                              std::vector<float>(xq.image(i), xq.image(i) + xq.height * xq.width))));
      seq_k.push_back(encoder::encode(
          st.pair.momentum,
          Tensor<float>::from({cfg.geom.height, cfg.geom.width}, xk[static_cast<size_t>(i)])));
    }
    for (int64_t i = 0; i < covered; ++i) {
      seq_qr.push_back(encoder::encode(
          st.pair.online,
          Tensor<float>::from({cfg.geom.height, cfg.geom.width},
                              std::vector<float>(xq_reg.image(i), xq_reg.image(i) + xq_reg.height * xq_reg.width))));
    }
    if (covered > 0) seq_qr = permute::unshuffle_features(seq_qr, rec);

    // per-level atoms
    losses::TotalLossInputs<float> inputs;
    inputs.images = b;
    inputs.frames = cfg.geom.frames;
    inputs.subword_bins = cfg.geom.subword_bins;
    const auto frame_mask_one = permute::boundary_frame_mask(cfg.geom.frames, cfg.patches_n, cfg.strategy);

    for (Level l : levels) {
      losses::LevelAtoms<float> atoms;
      std::vector<Tensor<float>> qs, ps, qrs;
      for (int64_t i = 0; i < b; ++i) {
        qs.push_back(encoder::predict_level(st.pair.online, seq_q[static_cast<size_t>(i)], l));
        ps.push_back(encoder::predict_level(st.pair.momentum, seq_k[static_cast<size_t>(i)], l));
      }
      for (int64_t i = 0; i < covered; ++i)
        qrs.push_back(encoder::predict_level(st.pair.online, seq_qr[static_cast<size_t>(i)], l));
      atoms.q = detail::stack(qs);
      atoms.p = detail::stack(ps);
      if (toggles.reg) {
        atoms.q_reg = detail::stack(qrs);
        const int64_t per_image = atoms.q_reg.extent(0) / covered;
        atoms.reg_mask.reserve(static_cast<size_t>(atoms.q_reg.extent(0)));
        for (int64_t i = 0; i < covered; ++i)
          for (int64_t a = 0; a < per_image; ++a)
            atoms.reg_mask.push_back(l == Level::frame ? frame_mask_one[static_cast<size_t>(a)] : 1);
      }
      keys[l] = atoms.p;  // constant snapshot of momentum atoms
      inputs.banks[l] = st.banks.at(l)->negatives();
      inputs.levels[l] = std::move(atoms);
    }

    auto breakdown = losses::total_loss(inputs, cfg.loss, toggles, cfg.hierarchy_levels);
    metrics.terms = std::map<std::string, float>(breakdown.terms.begin(), breakdown.terms.end());
    metrics.total = breakdown.total.item();
    if (!std::isfinite(metrics.total))
      raise(ErrorKind::NonFiniteLoss, "non-finite loss at iteration " + std::to_string(iter) +
                                          " (batch seeds mix(seed," + std::to_string(kSaltWord) + "," +
                                          std::to_string(iter) + ", 0.." + std::to_string(b - 1) + "))");

    tape.backward(breakdown.total);
  }

  // SGD over online parameters only; momentum copy is never in this list
  auto params = st.pair.online.named_params();
  for (auto& [name, p] : params)
    for (float g : p->grad()) grad_norm_sq += g * g;
  metrics.grad_norm = std::sqrt(grad_norm_sq);
  sgd_step(params, st.velocity, cfg.lr, cfg.weight_decay, cfg.sgd_momentum);
  for (auto& [name, p] : params) p->zero_grad();

  encoder::momentum_update(st.pair, cfg.encoder_momentum);

  // enqueue momentum keys last; an iteration's keys are never its own
  // negatives. Chunked so one batch may carry more keys than the bank holds
  // (only the freshest K survive, in order).
  for (Level l : levels) {
    auto& bnk = *st.banks.at(l);
    const auto& kt = keys.at(l);
    const int64_t rows = kt.extent(0), dim = kt.extent(1);
    for (int64_t r0 = 0; r0 < rows; r0 += bnk.capacity()) {
      const int64_t count = std::min(bnk.capacity(), rows - r0);
      bnk.enqueue(kt.values().data() + r0 * dim, count);
    }
    trace.last_bank_read_seq = std::max(trace.last_bank_read_seq, st.banks.at(l)->last_read_seq());
    trace.last_bank_write_seq = std::max(trace.last_bank_write_seq, st.banks.at(l)->last_write_seq());
  }
  check(trace.last_bank_read_seq < trace.last_bank_write_seq, ErrorKind::DomainError,
        "bank read/write ordering violated");

  metrics.bank_fill = st.banks.at(levels.front())->fill();
  metrics.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();

  st.iteration += 1;
  if (hooks.on_iteration) hooks.on_iteration(trace);
  if (hooks.on_metrics) hooks.on_metrics(metrics);
  return metrics;
}

struct PretrainResult {
  int64_t iterations = 0;
  std::string final_checkpoint;
  float first_loss = 0;
  float last_loss = 0;
};

/// Full loop with periodic checkpoints under `out_dir` (empty = no
/// checkpoints). Resumable: pass a state loaded from a checkpoint.
inline PretrainResult pretrain(const TrainConfig& cfg, DataSource& data, TrainState& st,
                               const std::string& out_dir, const PretrainHooks& hooks = {}) {
  PretrainResult result;
  auto ckpt_path = [&out_dir](int64_t iter) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ckpt_%06lld.rcl1", static_cast<long long>(iter));
    return out_dir + "/" + buf;
  };
  while (st.iteration < cfg.iterations) {
    MetricsRecord m = pretrain_iteration(cfg, data, st, hooks);
    if (m.iteration == 0) result.first_loss = m.total;
    result.last_loss = m.total;
    const bool at_interval = cfg.checkpoint_interval > 0 && st.iteration % cfg.checkpoint_interval == 0;
    if (!out_dir.empty() && (at_interval || st.iteration == cfg.iterations)) {
      const std::string path = ckpt_path(st.iteration);
      save_checkpoint(path, st, cfg.config_digest);
      result.final_checkpoint = path;
      if (hooks.on_checkpoint) hooks.on_checkpoint(st.iteration, path);
    }
  }
  if (!out_dir.empty() && result.final_checkpoint.empty()) {
    const std::string path = ckpt_path(st.iteration);
    save_checkpoint(path, st, cfg.config_digest);
    result.final_checkpoint = path;
  }
  result.iterations = st.iteration;
  return result;
}

}  // namespace rclstr::train
