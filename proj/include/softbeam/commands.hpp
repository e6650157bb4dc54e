#pragma once

// Command implementations behind the softbeam CLI. Every artifact carries the
// config hash and seed; wall-clock times go to timing.csv so metrics files
// are byte-identical across reruns.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "softbeam/checkpoint.hpp"
#include "softbeam/config.hpp"
#include "softbeam/data.hpp"
#include "softbeam/decoding.hpp"
#include "softbeam/gradcheck.hpp"
#include "softbeam/metrics.hpp"
#include "softbeam/training.hpp"

namespace softbeam {

inline constexpr const char* kVersion = "0.1.0";

namespace fs = std::filesystem;

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Task data

struct TaskData {
  CorpusSplits splits;
  std::optional<std::size_t> default_label;
  json manifest;  // null for TSV tasks
};

inline json longrange_params_json(const LongRangeParams& p) {
  return {{"sentences", p.sentences},
          {"min_length", p.min_length},
          {"max_length", p.max_length},
          {"input_vocab", p.input_vocab},
          {"labels", p.labels},
          {"groups", p.groups},
          {"lag", p.lag},
          {"zipf_exponent", p.zipf_exponent},
          {"token_zipf_exponent", p.token_zipf_exponent},
          {"noise", p.noise}};
}

inline json skewed_params_json(const SkewedParams& p) {
  return {{"sentences", p.sentences},         {"min_length", p.min_length},
          {"max_length", p.max_length},       {"entity_types", p.entity_types},
          {"triggers_per_type", p.triggers_per_type}, {"name_tokens", p.name_tokens},
          {"filler_tokens", p.filler_tokens}, {"p_default", p.p_default},
          {"distractor_rate", p.distractor_rate}, {"weak_trigger_share", p.weak_trigger_share},
          {"weak_entity_prob", p.weak_entity_prob}};
}

inline TaskData load_task(const TaskConfig& t) {
  TaskData d;
  switch (t.kind) {
    case TaskConfig::Kind::longrange:
      d.splits = split_corpus(gen_longrange(t.longrange, t.seed), t.seed);
      d.manifest = corpus_manifest("longrange", longrange_params_json(t.longrange), t.seed, d.splits);
      break;
    case TaskConfig::Kind::skewed:
      d.splits = split_corpus(gen_skewed(t.skewed, t.seed), t.seed);
      d.manifest = corpus_manifest("skewed", skewed_params_json(t.skewed), t.seed, d.splits);
      break;
    case TaskConfig::Kind::tsv: {
      // Inputs come from train only (dev/test OOV map to <unk>); labels are
      // the union over all files in first-seen order.
      TaggedCorpus base;
      const auto train_raw = read_tsv_file(t.train_path);
      const auto dev_raw = read_tsv_file(t.dev_path);
      std::vector<RawSentence> test_raw;
      if (!t.test_path.empty()) test_raw = read_tsv_file(t.test_path);
      d.splits.train.sentences = index_sentences(train_raw, base.inputs, base.labels, true, true);
      d.splits.dev.sentences = index_sentences(dev_raw, base.inputs, base.labels, false, true);
      d.splits.test.sentences = index_sentences(test_raw, base.inputs, base.labels, false, true);
      for (auto* c : {&d.splits.train, &d.splits.dev, &d.splits.test}) {
        c->inputs = base.inputs;
        c->labels = base.labels;
      }
      break;
    }
  }
  if (t.default_label) {
    auto id = d.splits.train.labels.find(*t.default_label);
    if (!id) throw ConfigError("task.default_label: '" + *t.default_label + "' is not a label of the task");
    d.default_label = *id;
  }
  if (d.splits.train.size() == 0) throw InputError("task has no training sentences");
  if (d.splits.dev.size() == 0) throw InputError("task has no dev sentences");
  return d;
}

inline void write_task_data(const fs::path& dir, const TaskData& d) {
  fs::create_directories(dir);
  write_tsv(dir / "train.tsv", d.splits.train);
  write_tsv(dir / "dev.tsv", d.splits.dev);
  write_tsv(dir / "test.tsv", d.splits.test);
  if (!d.manifest.is_null()) write_json(dir / "manifest.json", d.manifest);
}

inline CostFunction make_cost(const CostConfig& c, std::size_t labels, std::optional<std::size_t> default_label) {
  if (c.kind == CostFunction::Kind::weighted_hamming) {
    if (!default_label) throw ConfigError("cost.kind: weighted_hamming needs task.default_label");
    return CostFunction::weighted_hamming(labels, *default_label, c.default_penalty);
  }
  return CostFunction::hamming(labels);
}

inline ModelSizes model_sizes(const ExperimentConfig& cfg, const TaggedCorpus& train) {
  ModelSizes s = cfg.sizes;
  s.input_vocab = train.inputs.size();
  s.labels = train.labels.size();
  return s;
}

// ---------------------------------------------------------------------------
// Metrics files

struct RunIdentity {
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline std::string metrics_header(const std::vector<Decoder>& decoders) {
  std::string h = "config_hash,seed,stage,epoch,alpha,objective";
  for (auto d : decoders) h += std::string(",") + decoder_name(d) + "_accuracy," + decoder_name(d) + "_macro_f1";
  return h + ",selected\n";
}

inline std::string metrics_rows(const RunIdentity& id, const std::string& stage, const TrainResult& r) {
  std::string out;
  for (const auto& rec : r.history) {
    out += id.config_hash + "," + std::to_string(id.seed) + "," + stage + "," + std::to_string(rec.epoch) + "," +
           format_number(rec.alpha) + "," + (rec.epoch == 0 ? std::string() : format_number(rec.objective));
    for (const auto& [d, m] : rec.dev) out += "," + format_metric(m.accuracy) + "," + format_metric(m.macro_f1);
    out += std::string(",") + (rec.epoch == r.best_epoch ? "1" : "0") + "\n";
  }
  return out;
}

inline std::string timing_rows(const std::string& stage, const TrainResult& r) {
  std::string out;
  for (const auto& rec : r.history) {
    out += stage + "," + std::to_string(rec.epoch) + "," + format_number(rec.seconds) + "\n";
  }
  return out;
}

inline TrainHooks progress_hooks(std::ostream* log, const std::string& stage) {
  TrainHooks h;
  if (!log) return h;
  h.on_epoch = [log, stage](const EpochRecord& r) {
    std::ostringstream os;
    os << "[" << stage << "] epoch " << r.epoch << " alpha " << format_number(r.alpha) << " objective "
       << format_number(r.objective);
    for (const auto& [d, m] : r.dev) os << " " << decoder_name(d) << " acc " << format_metric(m.accuracy) << " f1 " << format_metric(m.macro_f1);
    os << (r.improved ? " *" : "") << "\n";
    *log << os.str() << std::flush;
  };
  h.warn = [log](const std::string& w) { *log << "warning: " << w << "\n"; };
  return h;
}

inline Checkpoint make_checkpoint(const TaggerModel& model, const TaskData& d, const json& manifest) {
  Checkpoint c;
  c.model = model.clone();
  c.inputs = d.splits.train.inputs;
  c.labels = d.splits.train.labels;
  if (d.default_label) c.default_label = d.splits.train.labels.name(*d.default_label);
  c.manifest = manifest;
  return c;
}

inline void check_checkpoint_vocab(const Checkpoint& c, const TaggedCorpus& corpus) {
  if (!(c.inputs == corpus.inputs) || !(c.labels == corpus.labels)) {
    throw CheckpointError("checkpoint vocabularies do not match the task (inputs " + hex64(c.inputs.hash()) +
                          " vs " + hex64(corpus.inputs.hash()) + ", labels " + hex64(c.labels.hash()) + " vs " +
                          hex64(corpus.labels.hash()) + ")");
  }
}

// ---------------------------------------------------------------------------
// train

struct TrainSummary {
  fs::path checkpoint;
  std::vector<std::pair<std::string, TrainResult>> stages;
};

inline TrainSummary cmd_train(const ExperimentConfig& cfg, std::ostream* log = &std::cerr) {
  const fs::path out = cfg.out;
  fs::create_directories(out);
  const auto data = load_task(cfg.task);
  if (!data.manifest.is_null()) write_task_data(out / "data", data);
  const auto sizes = model_sizes(cfg, data.splits.train);
  const auto cost = make_cost(cfg.cost, sizes.labels, data.default_label);
  const RunIdentity id{cfg.hash_hex(), cfg.train.seed};
  TrainConfig main_cfg = cfg.train, ce_cfg = cfg.ce;
  main_cfg.report_decoders = ce_cfg.report_decoders = cfg.decoders;

  json manifest = {{"command", "train"},     {"config_hash", id.config_hash}, {"seed", id.seed},
                   {"version", kVersion},    {"config", cfg.canonical},     {"stages", json::array()}};
  std::string metrics = metrics_header(main_cfg.dev_decoders());
  std::string ce_metrics;
  std::string timing = "stage,epoch,seconds\n";
  TrainSummary summary;

  std::optional<TaggerModel> warm;
  if (cfg.train.objective != Objective::ce) {
    if (cfg.warm_start) {
      auto c = load_checkpoint(*cfg.warm_start);
      check_checkpoint_vocab(c, data.splits.train);
      warm = std::move(c.model);
      manifest["warm_start"] = *cfg.warm_start;
    } else {
      // Warm-start chain: CE first, then the configured objective.
      const fs::path dir = out / "ce";
      fs::create_directories(dir);
      auto ce = train(data.splits.train, data.splits.dev, ce_cfg, cost, sizes, std::nullopt, data.default_label,
                      progress_hooks(log, "ce"));
      json stage = {{"stage", "ce"},
                    {"objective", "ce"},
                    {"seed", cfg.ce.seed},
                    {"best_epoch", ce.best_epoch},
                    {"best_dev", ce.best_score},
                    {"checkpoint", "ce/checkpoint.json"}};
      save_checkpoint(dir / "checkpoint.json", make_checkpoint(ce.best, data, stage));
      const RunIdentity ce_id{id.config_hash, cfg.ce.seed};
      write_text(dir / "metrics.csv", metrics_header(ce_cfg.dev_decoders()) + metrics_rows(ce_id, "ce", ce));
      timing += timing_rows("ce", ce);
      manifest["stages"].push_back(stage);
      warm = ce.best.clone();
      summary.stages.emplace_back("ce", std::move(ce));
    }
  }

  const std::string name = objective_name(cfg.train.objective);
  auto result = train(data.splits.train, data.splits.dev, main_cfg, cost, sizes, warm, data.default_label,
                      progress_hooks(log, name));
  json stage = {{"stage", name},
                {"objective", name},
                {"seed", cfg.train.seed},
                {"best_epoch", result.best_epoch},
                {"best_dev", result.best_score},
                {"final_alpha", result.final_alpha},
                {"checkpoint", "checkpoint.json"}};
  manifest["stages"].push_back(stage);
  metrics += metrics_rows(id, name, result);
  timing += timing_rows(name, result);
  summary.checkpoint = out / "checkpoint.json";
  save_checkpoint(summary.checkpoint, make_checkpoint(result.best, data, manifest));
  write_text(out / "metrics.csv", metrics);
  write_text(out / "timing.csv", timing);
  write_json(out / "run.json", manifest);
  summary.stages.emplace_back(name, std::move(result));
  return summary;
}

// ---------------------------------------------------------------------------
// decode

struct DecodeSummary {
  std::size_t sentences = 0;
  std::size_t lines = 0;
};

// Reads a TSV (label column optional) and writes token<TAB>prediction with
// the input's line structure, blank lines included.
inline DecodeSummary cmd_decode(const fs::path& checkpoint_path, const fs::path& input, const DecodeOptions& opt,
                                std::ostream& out) {
  const auto ckpt = load_checkpoint(checkpoint_path);
  std::ifstream in(input);
  if (!in) throw InputError("cannot open " + input.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  std::istringstream again;
  {
    std::string joined;
    for (const auto& l : lines) joined += l + "\n";
    again.str(joined);
  }
  std::vector<RawSentence> raw;
  try {
    raw = read_tsv(again, false);
  } catch (const ParseError& e) {
    throw ParseError(input.string() + ": " + e.what());
  }
  for (const auto& s : raw) {
    for (const auto& l : s.labels) {
      if (!ckpt.labels.find(l)) {
        throw CheckpointError("line " + std::to_string(s.first_line) + ": label '" + l +
                              "' is not in the checkpoint's label vocabulary");
      }
    }
  }
  DecodeSummary summary;
  std::vector<std::vector<std::size_t>> predictions;
  for (const auto& s : raw) {
    std::vector<std::size_t> ids;
    for (const auto& t : s.tokens) ids.push_back(ckpt.inputs.find(t).value_or(0));
    predictions.push_back(decode(ids, ckpt.model, opt));
  }
  std::size_t sentence = 0, position = 0;
  bool inside = false;
  for (const auto& line : lines) {
    if (line.empty()) {
      if (inside) {
        ++sentence;
        position = 0;
        inside = false;
      }
      out << '\n';
      continue;
    }
    inside = true;
    const auto tab = line.find('\t');
    const std::string token = tab == std::string::npos ? line : line.substr(0, tab);
    out << token << '\t' << ckpt.labels.name(predictions.at(sentence).at(position++)) << '\n';
  }
  summary.sentences = raw.size();
  summary.lines = lines.size();
  return summary;
}

// ---------------------------------------------------------------------------
// eval

inline json metrics_json(const Metrics& m, const Vocabulary& labels, std::optional<std::size_t> default_label) {
  json per = json::object();
  for (std::size_t l = 0; l < labels.size(); ++l) {
    const auto& c = m.per_label[l];
    per[labels.name(l)] = {{"support", c.support},     {"predicted", c.predicted}, {"correct", c.correct},
                           {"precision", c.precision()}, {"recall", c.recall()},     {"f1", c.f1()}};
  }
  json j = {{"tokens", m.tokens}, {"correct", m.correct}, {"accuracy", m.accuracy}, {"macro_f1", m.macro_f1},
            {"per_label", per}};
  j["default_label"] = default_label ? json(labels.name(*default_label)) : json(nullptr);
  return j;
}

// Compares two token<TAB>label files line by line. If no default label is
// given, 'O' is used when it occurs in the gold labels.
inline json cmd_eval(const fs::path& predicted, const fs::path& gold,
                     const std::optional<std::string>& default_label = std::nullopt) {
  auto read_lines = [](const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw InputError("cannot open " + p.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(std::move(line));
    }
    return lines;
  };
  const auto pl = read_lines(predicted);
  const auto gl = read_lines(gold);
  auto split = [](const std::string& line, std::size_t lineno, const fs::path& file) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos || tab == 0 ||
        tab + 1 == line.size()) {
      throw ParseError(file.string() + ": line " + std::to_string(lineno) + ": expected token<TAB>label");
    }
    return std::pair{line.substr(0, tab), line.substr(tab + 1)};
  };
  Vocabulary labels;
  std::vector<std::vector<std::size_t>> pred_ids, gold_ids;
  bool inside = false;
  const std::size_t n = std::max(pl.size(), gl.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lineno = i + 1;
    const bool p_blank = i >= pl.size() || pl[i].empty();
    const bool g_blank = i >= gl.size() || gl[i].empty();
    if (p_blank != g_blank) {
      throw InputError("misaligned files at line " + std::to_string(lineno) + ": " +
                       (p_blank ? "prediction has no token" : "gold has no token"));
    }
    if (g_blank) {
      inside = false;
      continue;
    }
    auto [pt, plab] = split(pl[i], lineno, predicted);
    auto [gt, glab] = split(gl[i], lineno, gold);
    if (pt != gt) {
      throw InputError("misaligned files at line " + std::to_string(lineno) + ": token '" + pt + "' vs '" + gt + "'");
    }
    if (!inside) {
      pred_ids.emplace_back();
      gold_ids.emplace_back();
      inside = true;
    }
    gold_ids.back().push_back(labels.add(glab));
    pred_ids.back().push_back(labels.add(plab));
  }
  std::optional<std::size_t> def;
  if (default_label) {
    def = labels.find(*default_label);
    if (!def) throw VocabularyError("default label '" + *default_label + "' does not occur in either file");
  } else if (auto o = labels.find("O")) {
    def = o;
  }
  const auto m = evaluate(pred_ids, gold_ids, labels.size(), def);
  json report = metrics_json(m, labels, def);
  report["predicted"] = predicted.string();
  report["gold"] = gold.string();
  report["sentences"] = gold_ids.size();
  return report;
}

// ---------------------------------------------------------------------------
// gradcheck

inline std::string gradcheck_table(const GradcheckReport& r) {
  std::ostringstream os;
  for (const auto& b : r.blocks) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-28s %-26s max_rel_err %.3e  max|grad| %.3e\n", b.check.c_str(), b.block.c_str(),
                  b.max_relative_error, b.max_abs_grad);
    os << buf;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "worst %.3e tolerance %.1e %s\n", r.worst, r.tolerance, r.passed() ? "PASS" : "FAIL");
  os << buf;
  return os.str();
}

// ---------------------------------------------------------------------------
// experiment

struct CellResult {
  std::string name;  // grid entry
  Objective objective = Objective::ce;
  std::size_t restart = 0;
  std::uint64_t seed = 0;
  std::size_t best_epoch = 0;
  double best_score = -1.0;  // training-time selection score on dev
  std::vector<std::pair<Decoder, Metrics>> dev, test;
  std::string error;
};

struct ExperimentSummary {
  std::vector<CellResult> cells;
  json summary;
};

inline std::size_t experiment_threads() {
  if (const char* env = std::getenv("SOFTBEAM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
    throw ConfigError("SOFTBEAM_THREADS must be a positive integer");
  }
  return 1;
}

// Runs `jobs` on up to `threads` workers; each job must only touch its own
// outputs.
inline void run_parallel(std::vector<std::function<void()>>& jobs, std::size_t threads) {
  if (threads <= 1 || jobs.size() <= 1) {
    for (auto& j : jobs) j();
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, jobs.size()); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < jobs.size();) jobs[i]();
    });
  }
  for (auto& th : pool) th.join();
}

inline std::string cell_dir_name(const std::string& name) {
  std::string out;
  for (char c : name) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

inline ExperimentSummary cmd_experiment(const ExperimentConfig& cfg, std::ostream* log = &std::cerr) {
  const fs::path out = cfg.out;
  fs::create_directories(out);
  const auto data = load_task(cfg.task);
  if (!data.manifest.is_null()) write_task_data(out / "data", data);
  const auto sizes = model_sizes(cfg, data.splits.train);
  const auto cost = make_cost(cfg.cost, sizes.labels, data.default_label);
  const std::string hash = cfg.hash_hex();
  const std::size_t threads = experiment_threads();
  std::mutex log_mutex;
  auto locked_log = [&](const std::string& s) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    *log << s << std::flush;
  };

  auto evaluate_all = [&](const TaggerModel& m, const TaggedCorpus& corpus) {
    std::vector<std::pair<Decoder, Metrics>> out_metrics;
    for (auto d : cfg.decoders) {
      out_metrics.emplace_back(d, evaluate_decoder(corpus, m, {d, cfg.train.beam_size, cfg.decode_alpha}, data.default_label));
    }
    return out_metrics;
  };

  auto run_cell = [&](CellResult& cell, TrainConfig tc, const std::optional<TaggerModel>& warm, TaggerModel* keep) {
    const fs::path dir = out / "cells" / cell_dir_name(cell.name) / ("restart" + std::to_string(cell.restart));
    fs::create_directories(dir);
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& r) {
      std::ostringstream os;
      os << "[" << cell.name << " #" << cell.restart << "] epoch " << r.epoch << " alpha " << format_number(r.alpha)
         << " objective " << format_number(r.objective) << " dev " << format_metric(r.selection_score)
         << (r.improved ? " *" : "") << "\n";
      locked_log(os.str());
    };
    try {
      auto r = train(data.splits.train, data.splits.dev, tc, cost, sizes, warm, data.default_label, hooks);
      cell.best_epoch = r.best_epoch;
      cell.best_score = r.best_score;
      cell.dev = evaluate_all(r.best, data.splits.dev);
      if (data.splits.test.size() > 0) cell.test = evaluate_all(r.best, data.splits.test);
      const RunIdentity id{hash, tc.seed};
      write_text(dir / "metrics.csv", metrics_header(tc.dev_decoders()) + metrics_rows(id, objective_name(tc.objective), r));
      write_text(dir / "timing.csv", "stage,epoch,seconds\n" + timing_rows(objective_name(tc.objective), r));
      json stage = {{"cell", cell.name},   {"restart", cell.restart},     {"seed", tc.seed},
                    {"config_hash", hash}, {"best_epoch", r.best_epoch},  {"best_dev", r.best_score}};
      save_checkpoint(dir / "checkpoint.json", make_checkpoint(r.best, data, stage));
      if (keep) *keep = r.best.clone();
    } catch (const Error& e) {
      cell.error = e.category() + ": " + e.what();
      locked_log("[" + cell.name + " #" + std::to_string(cell.restart) + "] failed: " + cell.error + "\n");
    }
  };

  // CE restarts: they are the CE row and the source of the shared warm start.
  std::vector<CellResult> ce_cells(cfg.restarts);
  std::vector<TaggerModel> ce_models(cfg.restarts);
  std::vector<std::function<void()>> jobs;
  std::string ce_name = "CE";
  bool ce_in_grid = false;
  for (const auto& g : cfg.grid) {
    if (g.objective == Objective::ce) {
      ce_name = g.name;
      ce_in_grid = true;
    }
  }
  const std::size_t ce_runs = ce_in_grid || !cfg.warm_start ? cfg.restarts : 0;
  ce_cells.resize(ce_runs);
  for (std::size_t r = 0; r < ce_runs; ++r) {
    ce_cells[r].name = ce_name;
    ce_cells[r].objective = Objective::ce;
    ce_cells[r].restart = r;
    ce_cells[r].seed = mix_seed(cfg.ce.seed, r);
    jobs.push_back([&, r] {
      TrainConfig tc = cfg.ce;
      tc.seed = ce_cells[r].seed;
      run_cell(ce_cells[r], tc, std::nullopt, &ce_models[r]);
    });
  }
  std::optional<TaggerModel> warm;
  if (cfg.warm_start) {
    auto c = load_checkpoint(*cfg.warm_start);
    check_checkpoint_vocab(c, data.splits.train);
    warm = std::move(c.model);
  }
  run_parallel(jobs, threads);
  std::optional<std::size_t> warm_restart;
  if (!warm) {
    for (std::size_t r = 0; r < ce_runs; ++r) {
      if (!ce_cells[r].error.empty()) continue;
      if (!warm_restart || ce_cells[r].best_score > ce_cells[*warm_restart].best_score) warm_restart = r;
    }
    if (warm_restart) warm = ce_models[*warm_restart].clone();
  }

  std::vector<CellResult> cells;
  for (const auto& c : ce_cells) cells.push_back(c);
  std::vector<CellResult> soft_cells;
  for (const auto& g : cfg.grid) {
    if (g.objective == Objective::ce) continue;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
      CellResult c;
      c.name = g.name;
      c.objective = g.objective;
      c.restart = r;
      c.seed = mix_seed(cfg.train.seed, r);
      soft_cells.push_back(c);
    }
  }
  jobs.clear();
  {
    std::size_t i = 0;
    for (const auto& g : cfg.grid) {
      if (g.objective == Objective::ce) continue;
      for (std::size_t r = 0; r < cfg.restarts; ++r, ++i) {
        jobs.push_back([&, i, g] {
          if (!warm) {
            soft_cells[i].error = "input: no CE warm start available";
            return;
          }
          TrainConfig tc = cfg.train;
          tc.objective = g.objective;
          tc.schedule = g.schedule;
          tc.seed = soft_cells[i].seed;
          run_cell(soft_cells[i], tc, warm, nullptr);
        });
      }
    }
  }
  run_parallel(jobs, threads);
  for (auto& c : soft_cells) cells.push_back(std::move(c));

  // raw rows
  std::string raw = "config_hash,cell,objective,restart,seed,best_epoch,decoder,dev_accuracy,dev_macro_f1,test_accuracy,test_macro_f1,status\n";
  for (const auto& c : cells) {
    if (!c.error.empty()) {
      raw += hash + "," + c.name + "," + objective_name(c.objective) + "," + std::to_string(c.restart) + "," +
             std::to_string(c.seed) + ",,,,,,,\"" + c.error + "\"\n";
      continue;
    }
    for (std::size_t k = 0; k < c.dev.size(); ++k) {
      const auto& dm = c.dev[k].second;
      raw += hash + "," + c.name + "," + objective_name(c.objective) + "," + std::to_string(c.restart) + "," +
             std::to_string(c.seed) + "," + std::to_string(c.best_epoch) + "," + decoder_name(c.dev[k].first) + "," +
             format_metric(dm.accuracy) + "," + format_metric(dm.macro_f1) + ",";
      if (k < c.test.size()) raw += format_metric(c.test[k].second.accuracy) + "," + format_metric(c.test[k].second.macro_f1);
      else raw += ",";
      raw += ",ok\n";
    }
  }
  write_text(out / "raw_results.csv", raw);

  // Best-dev selection per (grid row, decoder column).
  const bool use_f1 = cfg.train.stop_metric == StopMetric::macro_f1;
  std::vector<std::string> row_names;
  for (const auto& g : cfg.grid) row_names.push_back(g.objective == Objective::ce ? ce_name : g.name);
  std::string results = "config_hash,row,decoder,selected_restart,dev_accuracy,dev_macro_f1,test_accuracy,test_macro_f1\n";
  json rows = json::array();
  std::ostringstream md;
  md << "| objective |";
  for (auto d : cfg.decoders) md << " " << decoder_name(d) << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < cfg.decoders.size(); ++i) md << "---|";
  md << "\n";
  for (const auto& row : row_names) {
    md << "| " << row << " |";
    json jr = {{"row", row}, {"decoders", json::object()}};
    for (std::size_t k = 0; k < cfg.decoders.size(); ++k) {
      const CellResult* best = nullptr;
      auto score = [&](const CellResult& c) {
        return use_f1 ? c.dev[k].second.macro_f1 : c.dev[k].second.accuracy;
      };
      for (const auto& c : cells) {
        if (c.name != row || !c.error.empty()) continue;
        if (!best || score(c) > score(*best)) best = &c;
      }
      if (!best) {
        md << " failed |";
        continue;
      }
      const auto& dm = best->dev[k].second;
      const bool has_test = k < best->test.size();
      const Metrics tm = has_test ? best->test[k].second : Metrics{};
      results += hash + "," + row + "," + decoder_name(cfg.decoders[k]) + "," + std::to_string(best->restart) + "," +
                 format_metric(dm.accuracy) + "," + format_metric(dm.macro_f1) + "," +
                 (has_test ? format_metric(tm.accuracy) + "," + format_metric(tm.macro_f1) : std::string(",")) + "\n";
      const double shown_test = use_f1 ? tm.macro_f1 : tm.accuracy;
      const double shown_dev = use_f1 ? dm.macro_f1 : dm.accuracy;
      char cell_text[64];
      std::snprintf(cell_text, sizeof cell_text, " %.2f (dev %.2f) |", 100.0 * shown_test, 100.0 * shown_dev);
      md << cell_text;
      jr["decoders"][decoder_name(cfg.decoders[k])] = {{"restart", best->restart},
                                                       {"dev_accuracy", dm.accuracy},
                                                       {"dev_macro_f1", dm.macro_f1},
                                                       {"test_accuracy", tm.accuracy},
                                                       {"test_macro_f1", tm.macro_f1}};
    }
    md << "\n";
    rows.push_back(jr);
  }
  write_text(out / "results.csv", results);
  write_text(out / "results.md", std::string("Metric: test ") + (use_f1 ? "macro F1" : "token accuracy") +
                                      " (%) of the best-dev restart; config " + hash + "\n\n" + md.str());

  json summary = {{"config_hash", hash},     {"seed", cfg.train.seed},       {"version", kVersion},
                  {"rows", rows},            {"restarts", cfg.restarts},     {"metric", use_f1 ? "macro_f1" : "accuracy"},
                  {"config", cfg.canonical}, {"data", data.manifest}};
  summary["warm_start_restart"] = warm_restart ? json(*warm_restart) : json(nullptr);

  // Decoder comparisons on the shared warm start.
  if (warm) {
    auto dev_metric = [&](Decoder d, double alpha) {
      return evaluate_decoder(data.splits.dev, *warm, {d, cfg.train.beam_size, alpha}, data.default_label);
    };
    const auto greedy = dev_metric(Decoder::greedy, 1.0);
    const auto beam = dev_metric(Decoder::hard_beam, 1.0);
    summary["ce_greedy_vs_beam"] = {{"greedy_accuracy", greedy.accuracy}, {"hard_beam_accuracy", beam.accuracy},
                                    {"greedy_macro_f1", greedy.macro_f1}, {"hard_beam_macro_f1", beam.macro_f1},
                                    {"macro_f1_gap", greedy.macro_f1 - beam.macro_f1},
                                    {"accuracy_gap", greedy.accuracy - beam.accuracy}};
    const double small_alpha = 0.5;
    const auto hard = decode_corpus(data.splits.dev, *warm, {Decoder::hard_beam, cfg.train.beam_size, 1.0});
    const auto soft = decode_corpus(data.splits.dev, *warm, {Decoder::soft_beam, cfg.train.beam_size, small_alpha});
    std::size_t differ_sent = 0, differ_tok = 0, tokens = 0;
    for (std::size_t i = 0; i < hard.size(); ++i) {
      differ_sent += hard[i] != soft[i];
      for (std::size_t t = 0; t < hard[i].size(); ++t) differ_tok += hard[i][t] != soft[i][t];
      tokens += hard[i].size();
    }
    summary["soft_vs_hard_disagreement"] = {
        {"alpha", small_alpha},
        {"sentence_rate", hard.empty() ? 0.0 : static_cast<double>(differ_sent) / static_cast<double>(hard.size())},
        {"token_rate", tokens ? static_cast<double>(differ_tok) / static_cast<double>(tokens) : 0.0}};
  }
  write_json(out / "summary.json", summary);

  ExperimentSummary result{std::move(cells), std::move(summary)};
  for (const auto& c : result.cells) {
    if (!c.error.empty()) throw Error("experiment", "cell " + c.name + " #" + std::to_string(c.restart) + " failed: " + c.error);
  }
  return result;
}

}  // namespace softbeam
