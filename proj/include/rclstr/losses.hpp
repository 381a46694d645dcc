#pragma once

// The relational contrastive losses: InfoNCE over a negative bank,
// symmetric KL between similarity distributions, their weighted sum, the
// permutation-regularized variant, the per-level hierarchy sum, and the
// cross-hierarchy consistency terms.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rclstr/bank.hpp"
#include "rclstr/core/errors.hpp"
#include "rclstr/ndiff/tensor.hpp"

namespace rclstr::losses {

using bank::Level;

enum class CrossLossKind { kl_only, relational };

inline CrossLossKind cross_loss_kind_from_string(const std::string& s) {
  if (s == "kl_only") return CrossLossKind::kl_only;
  if (s == "relational") return CrossLossKind::relational;
  raise(ErrorKind::ConfigError, "unknown cross_hierarchy_loss_kind '" + s + "'");
}

template <typename S>
struct LossConfig {
  S tau_info = S(0.07);
  S tau_kl = S(0.1);
  S alpha = S(1);
  CrossLossKind cross_kind = CrossLossKind::kl_only;

  void validate() const {
    check(tau_info > S(0) && tau_kl > S(0), ErrorKind::DomainError, "temperatures must be positive");
    check(alpha >= S(0), ErrorKind::DomainError, "alpha must be >= 0");
  }
};

namespace detail {

template <typename S>
void check_atoms(const ndiff::Tensor<S>& q, const ndiff::Tensor<S>& p, const ndiff::Tensor<S>& bank) {
  check(q.rank() == 2 && p.rank() == 2 && bank.rank() == 2, ErrorKind::ShapeMismatch,
        "losses expect atoms x D matrices");
  check(q.shape() == p.shape(), ErrorKind::ShapeMismatch,
        "query/positive shape mismatch: " + ndiff::shape_str(q.shape()) + " vs " +
            ndiff::shape_str(p.shape()));
  check(bank.extent(1) == q.extent(1), ErrorKind::ShapeMismatch,
        "bank dim " + std::to_string(bank.extent(1)) + " != atom dim " + std::to_string(q.extent(1)));
  check(bank.extent(0) >= 1, ErrorKind::ShapeMismatch, "bank must hold at least one negative");
}

// per-atom dot products as a column: A x 1
template <typename S>
ndiff::Tensor<S> row_dots(const ndiff::Tensor<S>& q, const ndiff::Tensor<S>& p) {
  return ndiff::reshape(ndiff::sum(ndiff::mul(q, p), 1), {q.extent(0), int64_t{1}});
}

// InfoNCE given the positive column and the A x K negative logits
template <typename S>
ndiff::Tensor<S> info_from_logits(const ndiff::Tensor<S>& l_pos, const ndiff::Tensor<S>& l_neg, S tau) {
  auto logits = ndiff::concat<S>({l_pos, l_neg}, 1);
  auto log_probs = ndiff::log_softmax(logits, 1, tau);
  return ndiff::scale(ndiff::mean_all(ndiff::slice_cols(log_probs, 0, 1)), S(-1));
}

// symmetric KL given both sides' A x K bank logits
template <typename S>
ndiff::Tensor<S> skl_from_logits(const ndiff::Tensor<S>& lq, const ndiff::Tensor<S>& lp, S tau) {
  auto [prob_q, logq] = ndiff::softmax_pair(lq, 1, tau);
  auto [prob_p, logp] = ndiff::softmax_pair(lp, 1, tau);
  // KL(P||Q) + KL(Q||P) = sum (P - Q) (log P - log Q)
  auto per_atom = ndiff::sum(ndiff::mul(ndiff::sub(prob_p, prob_q), ndiff::sub(logp, logq)), 1);
  return ndiff::scale(ndiff::mean_all(per_atom), S(0.5));
}

}  // namespace detail

/// InfoNCE with the positive as logit 0 against K bank negatives, computed
/// via one log-softmax over 1+K temperature-scaled logits, averaged over
/// atoms.
template <typename S>
ndiff::Tensor<S> info_nce(const ndiff::Tensor<S>& q, const ndiff::Tensor<S>& p,
                          const ndiff::Tensor<S>& bank, S tau) {
  check(tau > S(0), ErrorKind::DomainError, "info_nce temperature must be positive");
  detail::check_atoms(q, p, bank);
  auto l_pos = detail::row_dots(q, p);                       // A x 1
  auto l_neg = ndiff::matmul(q, ndiff::transpose(bank));     // A x K
  return detail::info_from_logits(l_pos, l_neg, tau);
}

/// Symmetric KL divergence between the query's and the positive's softmax
/// similarity distributions over the bank, averaged over atoms. The
/// positive enters only through its own distribution, never as a logit of
/// the query's.
template <typename S>
ndiff::Tensor<S> symmetric_kl(const ndiff::Tensor<S>& q, const ndiff::Tensor<S>& p,
                              const ndiff::Tensor<S>& bank, S tau) {
  check(tau > S(0), ErrorKind::DomainError, "symmetric_kl temperature must be positive");
  detail::check_atoms(q, p, bank);
  auto bank_t = ndiff::transpose(bank);
  return detail::skl_from_logits(ndiff::matmul(q, bank_t), ndiff::matmul(p, bank_t), tau);
}

/// InfoNCE plus alpha-weighted symmetric KL. With alpha == 0 this is
/// bit-identical to info_nce. The q-side bank logits are computed once and
/// shared by both terms.
template <typename S>
ndiff::Tensor<S> relational(const ndiff::Tensor<S>& q, const ndiff::Tensor<S>& p,
                            const ndiff::Tensor<S>& bank, const LossConfig<S>& cfg) {
  cfg.validate();
  detail::check_atoms(q, p, bank);
  auto bank_t = ndiff::transpose(bank);
  auto l_neg = ndiff::matmul(q, bank_t);
  auto loss = detail::info_from_logits(detail::row_dots(q, p), l_neg, cfg.tau_info);
  if (cfg.alpha != S(0)) {
    auto skl = detail::skl_from_logits(l_neg, ndiff::matmul(p, bank_t), cfg.tau_kl);
    loss = ndiff::add(loss, ndiff::scale(skl, cfg.alpha));
  }
  return loss;
}

/// Relational loss on the plain pair plus the same loss on the
/// permutation-regularized queries. q_reg rows correspond to the leading
/// rows of p (covered images, image-major); reg_mask selects which of them
/// participate (drop_boundary exclusions).
template <typename S>
ndiff::Tensor<S> regularized(const ndiff::Tensor<S>& q, const ndiff::Tensor<S>& p,
                             const ndiff::Tensor<S>& q_reg, const std::vector<uint8_t>& reg_mask,
                             const ndiff::Tensor<S>& bank, const LossConfig<S>& cfg) {
  auto base = relational(q, p, bank, cfg);
  check(q_reg.rank() == 2 && q_reg.extent(0) <= p.extent(0), ErrorKind::ShapeMismatch,
        "regularized queries exceed positives");
  check(static_cast<int64_t>(reg_mask.size()) == q_reg.extent(0), ErrorKind::ShapeMismatch,
        "mask length != regularized atom count");
  std::vector<int64_t> idx;
  for (size_t i = 0; i < reg_mask.size(); ++i)
    if (reg_mask[i]) idx.push_back(static_cast<int64_t>(i));
  check(!idx.empty(), ErrorKind::MaskAllFalse, "regularization mask excludes every atom");
  auto q_sel = ndiff::take_rows(q_reg, idx);
  auto p_sel = ndiff::take_rows(p, std::move(idx));
  return ndiff::add(base, relational(q_sel, p_sel, bank, cfg));
}

/// One hierarchy level's inputs, atoms stacked image-major.
template <typename S>
struct LevelAtoms {
  ndiff::Tensor<S> q;                // A x D online atoms
  ndiff::Tensor<S> p;                // A x D momentum atoms (constant)
  ndiff::Tensor<S> q_reg;            // A_reg x D unshuffled regularized atoms; undefined when reg is off
  std::vector<uint8_t> reg_mask;     // size A_reg
};

/// Sum of per-level losses over the enabled hierarchy: regularized form
/// when use_reg, plain relational otherwise.
template <typename S>
ndiff::Tensor<S> hierarchical(const std::vector<std::pair<const LevelAtoms<S>*, const ndiff::Tensor<S>*>>& levels,
                              const LossConfig<S>& cfg, bool use_reg) {
  check(!levels.empty(), ErrorKind::DomainError, "hierarchical loss over an empty level set");
  ndiff::Tensor<S> total;
  for (const auto& [atoms, bank_rows] : levels) {
    auto term = use_reg ? regularized(atoms->q, atoms->p, atoms->q_reg, atoms->reg_mask, *bank_rows, cfg)
                        : relational(atoms->q, atoms->p, *bank_rows, cfg);
    total = total.defined() ? ndiff::add(total, term) : term;
  }
  return total;
}

/// Index map pairing each frame atom with the subword atom of the pooling
/// bin that contains it (image-major stacking on both sides).
inline std::vector<int64_t> frame_to_subword_index(int64_t images, int64_t frames, int64_t bins) {
  std::vector<int64_t> bin_of(static_cast<size_t>(frames));
  for (int64_t b = 0; b < bins; ++b) {
    const int64_t lo = b * frames / bins, hi = (b + 1) * frames / bins;
    for (int64_t t = lo; t < hi; ++t) bin_of[static_cast<size_t>(t)] = b;
  }
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(images * frames));
  for (int64_t i = 0; i < images; ++i)
    for (int64_t t = 0; t < frames; ++t) idx.push_back(i * bins + bin_of[static_cast<size_t>(t)]);
  return idx;
}

/// Index map pairing each subword atom with its image's word atom.
inline std::vector<int64_t> subword_to_word_index(int64_t images, int64_t bins) {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(images * bins));
  for (int64_t i = 0; i < images; ++i)
    for (int64_t b = 0; b < bins; ++b) idx.push_back(i);
  return idx;
}

/// Cross-hierarchy consistency between a lower level's queries and the
/// spatially corresponding upper-level momentum atoms, against the upper
/// level's bank. Loss kind per config: symmetric KL (default) or the full
/// relational loss.
template <typename S>
ndiff::Tensor<S> cross_hierarchy(const ndiff::Tensor<S>& lower_q, const ndiff::Tensor<S>& upper_p,
                                 const std::vector<int64_t>& pairing, const ndiff::Tensor<S>& upper_bank,
                                 const LossConfig<S>& cfg) {
  check(static_cast<int64_t>(pairing.size()) == lower_q.extent(0), ErrorKind::ShapeMismatch,
        "pairing length != lower atom count");
  auto p_aligned = ndiff::take_rows(upper_p, pairing);
  if (cfg.cross_kind == CrossLossKind::kl_only) return symmetric_kl(lower_q, p_aligned, upper_bank, cfg.tau_kl);
  return relational(lower_q, p_aligned, upper_bank, cfg);
}

struct ModuleToggles {
  bool reg = true;
  bool hier = true;
  bool con = true;
};

/// Everything total_loss needs: per-level atoms, per-level bank snapshots,
/// and the batch layout for cross-level pairing.
template <typename S>
struct TotalLossInputs {
  std::map<Level, LevelAtoms<S>> levels;
  std::map<Level, ndiff::Tensor<S>> banks;
  int64_t images = 0;
  int64_t frames = 0;
  int64_t subword_bins = 0;
};

template <typename S>
struct LossBreakdown {
  ndiff::Tensor<S> total;
  std::map<std::string, S> terms;  // frame / subword / word / f2s / s2w, enabled only
};

/// Composes the full objective under the module toggles:
///   hier on  -> per-level terms over `level_set`; off -> word level only
///   reg  on  -> each level term is the regularized form
///   con  on  -> adds frame->subword and subword->word consistency
/// Returns the scalar total plus the named per-term values.
template <typename S>
LossBreakdown<S> total_loss(const TotalLossInputs<S>& in, const LossConfig<S>& cfg,
                            const ModuleToggles& toggles, const std::vector<Level>& level_set) {
  cfg.validate();
  LossBreakdown<S> out;
  std::vector<Level> levels = toggles.hier ? level_set : std::vector<Level>{Level::word};
  check(!levels.empty(), ErrorKind::ConfigError, "empty hierarchy level set");

  auto term_for = [&](Level l) {
    const auto& atoms = in.levels.at(l);
    const auto& bank_rows = in.banks.at(l);
    return toggles.reg ? regularized(atoms.q, atoms.p, atoms.q_reg, atoms.reg_mask, bank_rows, cfg)
                       : relational(atoms.q, atoms.p, bank_rows, cfg);
  };

  ndiff::Tensor<S> total;
  for (Level l : levels) {
    auto term = term_for(l);
    out.terms[bank::level_name(l)] = term.item();
    total = total.defined() ? ndiff::add(total, term) : term;
  }

  if (toggles.con) {
    auto f2s = cross_hierarchy(in.levels.at(Level::frame).q, in.levels.at(Level::subword).p,
                               frame_to_subword_index(in.images, in.frames, in.subword_bins),
                               in.banks.at(Level::subword), cfg);
    auto s2w = cross_hierarchy(in.levels.at(Level::subword).q, in.levels.at(Level::word).p,
                               subword_to_word_index(in.images, in.subword_bins),
                               in.banks.at(Level::word), cfg);
    out.terms["f2s"] = f2s.item();
    out.terms["s2w"] = s2w.item();
    total = ndiff::add(total, ndiff::add(f2s, s2w));
  }

  out.total = total;
  return out;
}

}  // namespace rclstr::losses
