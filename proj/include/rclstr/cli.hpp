#pragma once

// Command-line entry point: gen-data, pretrain, probe, eval, gradcheck,
// inspect, ablation. Config precedence is file < RCLSTR_* environment <
// --set overrides; every run with an output directory writes its resolved
// config there. Exit codes: 0 success, 1 runtime error, 2 config error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rclstr/checkpoint.hpp"
#include "rclstr/config.hpp"
#include "rclstr/core/errors.hpp"
#include "rclstr/gradcheck_suite.hpp"
#include "rclstr/probe.hpp"
#include "rclstr/textgen/dataset.hpp"
#include "rclstr/train.hpp"

namespace rclstr::cli {

namespace fs = std::filesystem;

inline constexpr uint64_t kSaltGenWord = 0x31;
inline constexpr uint64_t kSaltGenRender = 0x32;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<int64_t> seed;
  std::string out_dir;
};

inline config::Config resolve_config(const CommonArgs& args) {
  auto cfg = config::Config::defaults();
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  cfg.load_env();
  cfg.apply_overrides(args.overrides);
  if (args.seed) cfg.set("seed", std::to_string(*args.seed));
  return cfg;
}

inline void write_resolved(const config::Config& cfg, const std::string& out_dir) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  std::ofstream os(out_dir + "/config.resolved", std::ios::trunc);
  check(static_cast<bool>(os), ErrorKind::IoError, "cannot write resolved config to " + out_dir);
  os << cfg.to_text();
}

inline std::string digest_hex(uint64_t d) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(d));
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

inline int run_gen_data(const config::Config& cfg, const std::string& out_dir, int64_t count,
                        std::ostream& out) {
  auto tc = config::make_train_config(cfg);
  check(count >= 1, ErrorKind::ConfigError, "gen-data needs --count >= 1");
  std::vector<textgen::TextStrip> strips;
  strips.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    const uint64_t id = static_cast<uint64_t>(i);
    auto word = textgen::sample_word(tc.alphabet, tc.word_len_min, tc.word_len_max,
                                     tc.render.max_chars(), mix_seed(tc.seed, kSaltGenWord, id));
    strips.push_back(textgen::render(word, tc.render, mix_seed(tc.seed, kSaltGenRender, id)));
  }
  const std::string path = out_dir + "/dataset.rcld";
  textgen::write_dataset(path, strips);
  out << "wrote " << count << " strips to " << path << "\n";
  return 0;
}

inline int run_pretrain(const config::Config& cfg, const std::string& out_dir,
                        const std::string& data_path, const std::string& resume_path,
                        std::ostream& out) {
  auto tc = config::make_train_config(cfg);

  std::unique_ptr<train::DataSource> data;
  if (data_path.empty()) {
    data = std::make_unique<train::GeneratedStream>(tc);
  } else {
    auto file = std::make_unique<train::FileDataset>(data_path);
    file->set_batch_hint(tc.batch_size);
    data = std::move(file);
  }

  train::TrainState state = resume_path.empty() ? train::init_state(tc)
                                                : train::load_checkpoint(resume_path, tc);

  std::ofstream metrics(out_dir + "/metrics.jsonl", resume_path.empty() ? std::ios::trunc : std::ios::app);
  check(static_cast<bool>(metrics), ErrorKind::IoError, "cannot open metrics stream in " + out_dir);

  train::PretrainHooks hooks;
  hooks.on_metrics = [&metrics, &out, &tc](const train::MetricsRecord& m) {
    nlohmann::json j{{"iteration", m.iteration}, {"total", m.total},      {"grad_norm", m.grad_norm},
                     {"bank_fill", m.bank_fill}, {"wall_ms", m.wall_ms}};
    for (const auto& [k, v] : m.terms) j[k] = v;
    metrics << j.dump() << "\n";
    if (m.iteration % 100 == 0 || m.iteration + 1 == tc.iterations)
      out << "iter " << m.iteration << " total " << m.total << " grad_norm " << m.grad_norm << "\n";
  };

  auto result = train::pretrain(tc, *data, state, out_dir, hooks);
  out << "finished " << result.iterations << " iterations; final checkpoint " << result.final_checkpoint
      << "\n";
  return 0;
}

inline int run_probe(const config::Config& cfg, const std::string& out_dir,
                     const std::string& checkpoint_path, std::ostream& out) {
  auto tc = config::make_train_config(cfg);
  auto state = train::load_checkpoint(checkpoint_path, tc);

  auto labeled = probe::labeled_strips(tc);
  auto holdout = probe::eval_strips(tc);
  auto trained = probe::train_probe(state.pair.online, labeled, tc);
  auto report = probe::evaluate(state.pair.online, trained.params, holdout, tc);
  report.config_digest_hex = digest_hex(tc.config_digest);
  report.encoder_checkpoint_id = checkpoint_path;

  probe::save_probe(out_dir + "/probe.rcl1", trained.params, tc.config_digest);
  probe::write_report(out_dir + "/report.json", report);
  probe::export_embeddings(state.pair.online, holdout, tc, out_dir + "/embeddings.csv");
  if (tc.probe_finetune)
    train::save_checkpoint(out_dir + "/encoder_finetuned.rcl1", state, tc.config_digest);

  out << "probe " << (tc.probe_finetune ? "finetune" : "frozen") << ": frame_acc " << report.frame_accuracy
      << " word_acc " << report.word_accuracy << " (" << labeled.size() << " labeled / "
      << holdout.size() << " eval strips)\n";
  return 0;
}

inline int run_eval(const config::Config& cfg, const std::string& out_dir,
                    const std::string& checkpoint_path, const std::string& probe_path,
                    std::ostream& out) {
  auto tc = config::make_train_config(cfg);
  auto state = train::load_checkpoint(checkpoint_path, tc);
  auto params = probe::load_probe(probe_path);
  auto holdout = probe::eval_strips(tc);
  auto report = probe::evaluate(state.pair.online, params, holdout, tc);
  report.config_digest_hex = digest_hex(tc.config_digest);
  report.encoder_checkpoint_id = checkpoint_path;
  probe::write_report(out_dir + "/report.json", report);
  out << "eval: frame_acc " << report.frame_accuracy << " word_acc " << report.word_accuracy << "\n";
  return 0;
}

inline int run_gradcheck(const config::Config& cfg, const std::string& out_dir, std::ostream& out) {
  auto tc = config::make_train_config(cfg);
  auto rows = gradcheck::run_all(tc.seed);
  bool all_pass = true;
  std::ostringstream table;
  for (const auto& r : rows) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-22s runs=%d  max_rel_err=%.3e  %s\n", r.name.c_str(), r.runs,
                  r.max_rel_err, r.pass ? "PASS" : "FAIL");
    table << line;
    all_pass = all_pass && r.pass;
  }
  out << table.str();
  out << (all_pass ? "all gradient checks passed\n" : "gradient checks FAILED\n");
  if (!out_dir.empty()) {
    std::ofstream os(out_dir + "/gradcheck.txt", std::ios::trunc);
    os << table.str();
  }
  return all_pass ? 0 : 1;
}

inline int run_inspect(const std::string& path, std::ostream& out) {
  std::ifstream probe_magic(path, std::ios::binary);
  check(static_cast<bool>(probe_magic), ErrorKind::IoError, "cannot open " + path);
  char magic[4] = {};
  probe_magic.read(magic, 4);
  probe_magic.close();

  if (std::string(magic, 4) == "RCLD") {
    auto h = textgen::read_dataset_header(path);
    out << "strip dataset: version " << h.version << ", " << h.count << " strips of " << h.height << "x"
        << h.width << "\n";
    return 0;
  }
  auto records = checkpoint::read_records(path);
  out << "checkpoint: " << records.size() << " records\n";
  for (const auto& r : records) {
    double ss = 0;
    for (float v : r.data) ss += static_cast<double>(v) * v;
    char line[160];
    std::snprintf(line, sizeof(line), "  %-28s %-14s l2=%.6g\n", r.name.c_str(),
                  ndiff::shape_str(r.shape).c_str(), std::sqrt(ss));
    out << line;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Ablation matrix
// ---------------------------------------------------------------------------

inline losses::ModuleToggles parse_toggle_combo(const std::string& combo) {
  losses::ModuleToggles t{false, false, false};
  if (combo == "none") return t;
  std::stringstream ss(combo);
  std::string tok;
  while (std::getline(ss, tok, '+')) {
    if (tok == "reg") t.reg = true;
    else if (tok == "hier") t.hier = true;
    else if (tok == "con") t.con = true;
    else raise(ErrorKind::ConfigError, "unknown toggle '" + tok + "' in combination '" + combo + "'");
  }
  return t;
}

struct AblationCell {
  std::string combo;
  uint64_t seed = 0;
  double frame_acc = 0;
  double word_acc = 0;
};

/// Pretrain + frozen probe for one (toggle combination, seed) cell.
inline AblationCell run_ablation_cell(config::Config cfg, const std::string& combo, uint64_t seed,
                                      const std::string& cell_dir) {
  auto toggles = parse_toggle_combo(combo);
  cfg.set("toggle_reg", toggles.reg ? "true" : "false");
  cfg.set("toggle_hier", toggles.hier ? "true" : "false");
  cfg.set("toggle_con", toggles.con ? "true" : "false");
  cfg.set("seed", std::to_string(seed));
  cfg.set("probe_mode", "frozen");
  auto tc = config::make_train_config(cfg);

  fs::create_directories(cell_dir);
  write_resolved(cfg, cell_dir);
  train::GeneratedStream data(tc);
  auto state = train::init_state(tc);
  train::pretrain(tc, data, state, cell_dir);

  auto labeled = probe::labeled_strips(tc);
  auto holdout = probe::eval_strips(tc);
  auto trained = probe::train_probe(state.pair.online, labeled, tc);
  auto report = probe::evaluate(state.pair.online, trained.params, holdout, tc);
  probe::write_report(cell_dir + "/report.json", report);

  return AblationCell{combo, seed, report.frame_accuracy, report.word_accuracy};
}

inline int run_ablation(const config::Config& cfg, const std::string& out_dir,
                        const std::string& toggles_arg, const std::string& seeds_arg,
                        std::ostream& out) {
  std::vector<std::string> combos;
  {
    std::stringstream ss(toggles_arg);
    std::string item;
    while (std::getline(ss, item, ';'))
      if (!item.empty()) combos.push_back(item);
  }
  std::vector<uint64_t> seeds;
  {
    std::stringstream ss(seeds_arg);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) seeds.push_back(std::stoull(item));
  }
  check(!combos.empty() && !seeds.empty(), ErrorKind::ConfigError,
        "ablation needs at least one toggle combination and one seed");

  std::ofstream table(out_dir + "/ablation.txt", std::ios::trunc);
  check(static_cast<bool>(table), ErrorKind::IoError, "cannot write ablation table");
  auto emit = [&](const std::string& line) {
    table << line << "\n";
    table.flush();  // partial results survive interruption
    out << line << "\n";
  };
  emit("combo            seeds          mean_frame_acc  mean_word_acc");

  for (const auto& combo : combos) {
    double frame_sum = 0, word_sum = 0;
    std::string seed_list;
    for (uint64_t seed : seeds) {
      auto cell = run_ablation_cell(cfg, combo, seed,
                                    out_dir + "/" + combo + "/seed" + std::to_string(seed));
      frame_sum += cell.frame_acc;
      word_sum += cell.word_acc;
      seed_list += (seed_list.empty() ? "" : ",") + std::to_string(seed);
    }
    char line[160];
    std::snprintf(line, sizeof(line), "%-16s %-14s %-15.4f %.4f", combo.c_str(), seed_list.c_str(),
                  frame_sum / static_cast<double>(seeds.size()),
                  word_sum / static_cast<double>(seeds.size()));
    emit(line);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int cli_main(const std::vector<std::string>& args, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"self-supervised text-strip representation pre-training"};
  app.require_subcommand(1);

  CommonArgs common;
  int64_t gen_count = 1024;
  std::string data_path, resume_path, checkpoint_path, probe_path, inspect_path;
  std::string toggles_arg = "none;reg;reg+hier;reg+hier+con";
  std::string seeds_arg = "0,1,2";

  auto add_common = [&common](CLI::App* sub, bool out_required) {
    sub->add_option("--config", common.config_path, "config file (key = value lines)");
    sub->add_option("--set", common.overrides, "config override key=value (repeatable)");
    sub->add_option("--seed", common.seed, "shorthand for --set seed=N");
    auto* o = sub->add_option("--out", common.out_dir, "output directory");
    if (out_required) o->required();
  };

  auto* gen = app.add_subcommand("gen-data", "write a synthetic strip dataset");
  add_common(gen, true);
  gen->add_option("--count", gen_count, "number of strips");

  auto* pre = app.add_subcommand("pretrain", "run self-supervised pre-training");
  add_common(pre, true);
  pre->add_option("--data", data_path, "train from an existing dataset file instead of the generator");
  pre->add_option("--resume", resume_path, "resume from a checkpoint");

  auto* prb = app.add_subcommand("probe", "train and evaluate a linear probe on a checkpoint");
  add_common(prb, true);
  prb->add_option("--checkpoint", checkpoint_path, "encoder checkpoint")->required();
  prb->add_option("--mode", [&common](const std::vector<std::string>& vals) {
    common.overrides.push_back("probe_mode=" + vals.front());
    return true;
  }, "frozen | finetune");
  prb->add_option("--labels-fraction", [&common](const std::vector<std::string>& vals) {
    common.overrides.push_back("labels_fraction=" + vals.front());
    return true;
  }, "fraction of labeled strips used");

  auto* ev = app.add_subcommand("eval", "evaluate an existing probe");
  add_common(ev, true);
  ev->add_option("--checkpoint", checkpoint_path, "encoder checkpoint")->required();
  ev->add_option("--probe", probe_path, "probe checkpoint")->required();

  auto* gc = app.add_subcommand("gradcheck", "central-difference checks over all registered ops");
  add_common(gc, false);

  auto* ins = app.add_subcommand("inspect", "describe a checkpoint or dataset file");
  ins->add_option("--path", inspect_path, "file to inspect")->required();

  auto* abl = app.add_subcommand("ablation", "pretrain+probe over toggle combinations and seeds");
  add_common(abl, true);
  abl->add_option("--toggles", toggles_arg, "semicolon-separated combinations, e.g. none;reg;reg+hier");
  abl->add_option("--seeds", seeds_arg, "comma-separated seed list");

  try {
    std::vector<const char*> argv;
    argv.push_back("rclstr");
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      out << app.help();
      return 0;
    }
    nlohmann::json j{{"kind", "ConfigError"}, {"message", e.what()}};
    err << "error: " << j.dump() << "\n";
    return 2;
  }

  try {
    if (ins->parsed()) return run_inspect(inspect_path, out);

    auto cfg = resolve_config(common);
    write_resolved(cfg, common.out_dir);

    if (gen->parsed()) return run_gen_data(cfg, common.out_dir, gen_count, out);
    if (pre->parsed()) return run_pretrain(cfg, common.out_dir, data_path, resume_path, out);
    if (prb->parsed()) return run_probe(cfg, common.out_dir, checkpoint_path, out);
    if (ev->parsed()) return run_eval(cfg, common.out_dir, checkpoint_path, probe_path, out);
    if (gc->parsed()) return run_gradcheck(cfg, common.out_dir, out);
    if (abl->parsed()) return run_ablation(cfg, common.out_dir, toggles_arg, seeds_arg, out);
    raise(ErrorKind::ConfigError, "no subcommand selected");
  } catch (const Error& e) {
    nlohmann::json j{{"kind", error_kind_name(e.kind())}, {"message", e.what()}};
    err << "error: " << j.dump() << "\n";
    return e.kind() == ErrorKind::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    nlohmann::json j{{"kind", "RuntimeError"}, {"message", e.what()}};
    err << "error: " << j.dump() << "\n";
    return 1;
  }
}

}  // namespace rclstr::cli
