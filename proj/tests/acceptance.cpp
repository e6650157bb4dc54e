// Acceptance harness: one PASS/FAIL line per criterion on stdout, details on
// stderr. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "softbeam/commands.hpp"
#include "softbeam/gradcheck.hpp"
#include "softbeam/soft_beam.hpp"
#include "test_support.hpp"

using namespace softbeam;
using namespace softbeam::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path kConfigs = SOFTBEAM_CONFIG_DIR;
const fs::path kOut = SOFTBEAM_ACCEPTANCE_OUT;

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

std::vector<std::vector<std::size_t>> all_sequences(std::size_t labels, std::size_t length) {
  std::vector<std::vector<std::size_t>> out{{}};
  for (std::size_t t = 0; t < length; ++t) {
    std::vector<std::vector<std::size_t>> next;
    for (const auto& p : out) {
      for (std::size_t w = 0; w < labels; ++w) {
        next.push_back(p);
        next.back().push_back(w);
      }
    }
    out = std::move(next);
  }
  return out;
}

struct Instance {
  TaggerModel model;
  std::vector<std::size_t> tokens, gold;
};

Instance random_instance(std::uint64_t seed, std::size_t labels, std::size_t length, std::size_t hidden,
                         double scale) {
  Rng rng(mix_seed(seed, 17));
  auto sizes = tiny_sizes(labels, hidden, 6);
  Instance inst{init_params(mix_seed(seed, 3), scale, sizes), {}, {}};
  inst.tokens = random_ids(rng, length, sizes.input_vocab);
  inst.gold = random_ids(rng, length, labels);
  return inst;
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  GradcheckOptions o;
  o.labels = 5;
  o.length = 4;
  o.beam_size = 3;
  o.hidden = 6;
  o.alphas = {1.0, 5.0};
  o.tolerance = 1e-4;
  const auto report = run_gradcheck(o);
  std::cerr << gradcheck_table(report);
  std::set<std::string> checks;
  for (const auto& b : report.blocks) checks.insert(b.check);
  // two alphas for each soft objective, one ce_loss
  const bool all_present = checks.size() == 5;
  return {report.passed() && all_present,
          fmt("worst relative error %.2e over %zu checks (need < 1e-4)", report.worst, checks.size())};
}

struct LimitCounts {
  int models = 0, loss_fail = 0, decode_fail = 0;
  double worst_loss_error = 0.0, largest_failing_gap = 0.0;
};

LimitCounts large_alpha_limit(double min_gap) {
  const auto ham = CostFunction::hamming(5);
  LimitCounts c;
  for (std::uint64_t seed = 0; c.models < 50; ++seed) {
    auto inst = random_instance(seed, 5, 4, 6, 1.0);
    const auto enc = encode(inst.tokens, inst.model);
    const auto hard = beam_search(enc, inst.model, 3);
    const double gap = min_top_k_gap(hard.trace, 3);
    if (gap < min_gap) continue;
    ++c.models;
    NoGradGuard g;
    const double soft = soft_beam_forward(enc, inst.gold, inst.model, {3, 1e4}, ham).value.item();
    const double err = std::abs(soft - direct_loss(hard.best.labels, inst.gold, ham));
    const bool loss_bad = !(err < 1e-3);
    const bool decode_bad = soft_beam_decode(enc, inst.model, {3, 1e4}).labels != hard.best.labels;
    c.loss_fail += loss_bad;
    c.decode_fail += decode_bad;
    c.worst_loss_error = std::max(c.worst_loss_error, err);
    if (loss_bad || decode_bad) {
      c.largest_failing_gap = std::max(c.largest_failing_gap, gap);
      std::cerr << fmt("  seed %llu gap %.4g |L_soft - L_hard| %.3g decode %s\n", static_cast<unsigned long long>(seed),
                       gap, err, decode_bad ? "differs" : "agrees");
    }
  }
  return c;
}

Outcome limit() {
  const auto c = large_alpha_limit(1e-3);
  const auto wide = large_alpha_limit(0.05);
  std::cerr << fmt("  with gaps >= 0.05 instead: loss %d/50, decode %d/50 agree\n", 50 - wide.loss_fail,
                   50 - wide.decode_fail);
  return {c.loss_fail == 0 && c.decode_fail == 0,
          fmt("alpha=1e4, gaps >= 1e-3: loss within 1e-3 on %d/50, decode equal on %d/50 (worst error %.3g, "
              "largest failing gap %.3g)",
              50 - c.loss_fail, 50 - c.decode_fail, c.worst_loss_error, c.largest_failing_gap)};
}

Outcome exhaustive() {
  const std::size_t labels = 3, length = 3;
  const auto sequences = all_sequences(labels, length);
  int checked = 0, agree = 0, ties = 0;
  for (std::uint64_t seed = 0; checked < 100; ++seed) {
    auto inst = random_instance(seed, labels, length, 6, 1.0);
    const auto enc = encode(inst.tokens, inst.model);
    std::vector<double> scores;
    for (const auto& y : sequences) scores.push_back(rescore(enc, y, inst.model));
    std::sort(scores.begin(), scores.end(), std::greater<>());
    if (scores[0] - scores[1] < 1e-9) {
      ++ties;
      continue;
    }
    ++checked;
    const auto beam = beam_search(enc, inst.model, sequences.size()).best;
    const auto exact = exhaustive_search(enc, inst.model);
    agree += beam.labels == exact.labels && std::abs(beam.score - exact.score) < 1e-9;
  }
  return {agree == checked, fmt("k=27 beam equals exhaustive search on %d/%d instances (%d tied skipped)", agree,
                                checked, ties)};
}

Outcome hinge() {
  int evaluated = 0, negative = 0;
  double lowest = 1e300;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto inst = random_instance(seed, 5, 4, 6, 1.0);
    for (double alpha : {0.5, 1.0, 5.0, 100.0, 1e4}) {
      NoGradGuard g;
      const double h = soft_hinge_forward(inst.tokens, inst.gold, inst.model, {3, alpha},
                                          CostFunction::hamming(5)).value.item();
      ++evaluated;
      negative += h < 0.0;
      lowest = std::min(lowest, h);
    }
  }
  // Zero-cost fixture: gold is the exhaustive argmax, ahead of every other
  // sequence by at least 1 after scaling the output layer.
  const std::size_t labels = 3, length = 4;
  const auto sequences = all_sequences(labels, length);
  int fixtures = 0, vanished = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; fixtures < 20; ++seed) {
    auto inst = random_instance(seed, labels, length, 4, 1.0);
    auto& m = inst.model;
    const auto enc = encode(inst.tokens, m);
    auto margin = [&](std::vector<std::size_t>& best) {
      std::size_t b = 0;
      std::vector<double> s;
      for (const auto& y : sequences) s.push_back(rescore(enc, y, m));
      for (std::size_t i = 1; i < s.size(); ++i) {
        if (s[i] > s[b]) b = i;
      }
      double second = -1e300;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i != b) second = std::max(second, s[i]);
      }
      best = sequences[b];
      return s[b] - second;
    };
    std::vector<std::size_t> gold;
    const double raw = margin(gold);
    if (raw < 1e-6) continue;
    const double c = 1.5 / raw;
    for (double& w : m.output_weight.mutable_values()) w *= c;
    for (double& b : m.output_bias.mutable_values()) b *= c;
    std::vector<std::size_t> scaled;
    if (margin(scaled) < 1.0 || scaled != gold) continue;
    ++fixtures;
    NoGradGuard g;
    const double h = soft_hinge_forward(enc, gold, m, {3, 1e4}, CostFunction::zero(labels)).value.item();
    worst = std::max(worst, h);
    vanished += h >= 0.0 && h < 1e-6;
  }
  return {negative == 0 && vanished == fixtures,
          fmt("hinge >= 0 on %d/%d evaluations (min %.3g); zero-cost margin>=1 fixtures below 1e-6: %d/%d (max %.3g)",
              evaluated - negative, evaluated, lowest, vanished, fixtures, worst)};
}

// ---------------------------------------------------------------------------
// Experiments

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

const json* row_decoder(const json& summary, const std::string& row, const std::string& decoder) {
  for (const auto& r : summary["rows"]) {
    if (r["row"] == row && r["decoders"].contains(decoder)) return &r["decoders"][decoder];
  }
  return nullptr;
}

struct LongRange {
  bool ran = false;
  std::string error;
  json summary;
  double cpu = 0.0;
};

LongRange& longrange_run() {
  static LongRange lr;
  if (lr.ran) return lr;
  lr.ran = true;
  auto doc = read_json(kConfigs / "acceptance_longrange.json");
  doc["out"] = (kOut / "longrange").string();
  fs::remove_all(kOut / "longrange");
  const double start = cpu_seconds();
  try {
    lr.summary = cmd_experiment(parse_config(doc), &std::cerr).summary;
  } catch (const Error& e) {
    lr.error = e.category() + ": " + e.what();
  }
  lr.cpu = cpu_seconds() - start;
  return lr;
}

Outcome longrange_gain() {
  const auto& lr = longrange_run();
  if (!lr.error.empty()) return {false, lr.error};
  const double warm = lr.summary["ce_greedy_vs_beam"]["hard_beam_accuracy"];
  const json* annealed = row_decoder(lr.summary, "soft_direct annealed", "hard_beam");
  if (!annealed) return {false, "annealed soft_direct row missing"};
  const double dev = (*annealed)["dev_accuracy"];
  const double gain = 100.0 * (dev - warm);
  const bool fast = lr.cpu < 30 * 60;
  return {gain >= 2.0 && fast,
          fmt("hard-beam dev accuracy CE warm start %.2f%% -> annealed soft_direct %.2f%% (+%.2f points, need 2); "
              "CPU %.0f s (limit 1800)",
              100.0 * warm, 100.0 * dev, gain, lr.cpu)};
}

Outcome anneal_vs_constant() {
  const auto& lr = longrange_run();
  if (!lr.error.empty()) return {false, lr.error};
  // Same task, seeds and warm start; only the schedule changes.
  auto doc = read_json(kConfigs / "acceptance_longrange.json");
  const fs::path out = kOut / "longrange_constant";
  fs::remove_all(out);
  const std::size_t warm_restart = lr.summary["warm_start_restart"];
  doc["out"] = out.string();
  doc["warm_start"] = (kOut / "longrange" / "cells" / "CE" / ("restart" + std::to_string(warm_restart)) /
                       "checkpoint.json").string();
  doc["grid"] = json::array({{{"name", "soft_direct alpha=1"},
                              {"objective", "soft_direct"},
                              {"alpha", {{"schedule", "constant"}, {"alpha0", 1.0}}}}});
  json summary;
  try {
    summary = cmd_experiment(parse_config(doc), &std::cerr).summary;
  } catch (const Error& e) {
    return {false, e.category() + ": " + e.what()};
  }
  const json* annealed = row_decoder(lr.summary, "soft_direct annealed", "hard_beam");
  const json* constant = row_decoder(summary, "soft_direct alpha=1", "hard_beam");
  if (!annealed || !constant) return {false, "result rows missing"};
  const double a = (*annealed)["dev_accuracy"], c = (*constant)["dev_accuracy"];
  return {a >= c, fmt("hard-beam dev accuracy, best of 3: annealed %.2f%% vs constant alpha=1 %.2f%%", 100.0 * a,
                      100.0 * c)};
}

Outcome skewed() {
  auto doc = read_json(kConfigs / "acceptance_skewed.json");
  doc["out"] = (kOut / "skewed").string();
  fs::remove_all(kOut / "skewed");
  json summary;
  try {
    summary = cmd_experiment(parse_config(doc), &std::cerr).summary;
  } catch (const Error& e) {
    return {false, e.category() + ": " + e.what()};
  }
  if (!summary.contains("ce_greedy_vs_beam") || !summary["ce_greedy_vs_beam"].contains("macro_f1_gap")) {
    return {false, "greedy vs hard-beam gap not reported"};
  }
  const double gap = summary["ce_greedy_vs_beam"]["macro_f1_gap"];
  const json* ce = row_decoder(summary, "CE", "hard_beam");
  const json* annealed = row_decoder(summary, "soft_direct annealed", "hard_beam");
  if (!ce || !annealed) return {false, "result rows missing"};
  const double c = (*ce)["dev_macro_f1"], a = (*annealed)["dev_macro_f1"];
  const double gain = 100.0 * (a - c);
  return {gain >= 1.0, fmt("CE greedy - hard beam dev macro-F1 gap %.2f points; hard-beam dev macro-F1 CE %.2f -> "
                           "annealed soft_direct %.2f (+%.2f points, need 1)",
                           100.0 * gap, 100.0 * c, 100.0 * a, gain)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Every metrics/results CSV under `a`, compared with its twin under `b`.
int compare_csvs(const fs::path& a, const fs::path& b, int& files) {
  int differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (e.path().extension() != ".csv" || e.path().filename() == "timing.csv") continue;
    ++files;
    const auto twin = b / fs::relative(e.path(), a);
    if (!fs::exists(twin) || slurp(e.path()) != slurp(twin)) {
      ++differ;
      std::cerr << "  differs: " << fs::relative(e.path(), a).string() << "\n";
    }
  }
  return differ;
}

Outcome reproducible() {
  const auto doc = read_json(kConfigs / "acceptance_determinism.json");
  int files = 0, differ = 0;
  try {
    for (const char* run : {"train_a", "train_b"}) {
      auto d = doc;
      d["out"] = (kOut / "determinism" / run).string();
      fs::remove_all(d["out"].get<std::string>());
      cmd_train(parse_config(d), nullptr);
    }
    differ += compare_csvs(kOut / "determinism" / "train_a", kOut / "determinism" / "train_b", files);
    for (const char* run : {"experiment_a", "experiment_b"}) {
      auto d = doc;
      d["out"] = (kOut / "determinism" / run).string();
      fs::remove_all(d["out"].get<std::string>());
      cmd_experiment(parse_config(d), nullptr);
    }
    differ += compare_csvs(kOut / "determinism" / "experiment_a", kOut / "determinism" / "experiment_b", files);
  } catch (const Error& e) {
    return {false, e.category() + ": " + e.what()};
  }
  return {differ == 0 && files > 0, fmt("%d/%d metrics CSVs byte-identical across reruns", files - differ, files)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
    double wall_limit;  // seconds, 0: none
  };
  const std::vector<Criterion> criteria = {
      {"gradient check", gradients, 120},
      {"large-alpha limit", limit, 60},
      {"beam vs exhaustive", exhaustive, 60},
      {"long-range gain over CE", longrange_gain, 0},
      {"annealing vs constant alpha", anneal_vs_constant, 0},
      {"skewed macro-F1", skewed, 0},
      {"hinge bounds", hinge, 0},
      {"reproducibility", reproducible, 0},
  };
  fs::create_directories(kOut);
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    std::cerr << "-- criterion " << id << ": " << criteria[i].name << "\n";
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (criteria[i].wall_limit > 0 && secs >= criteria[i].wall_limit) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s limit", criteria[i].wall_limit);
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].name << ": " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
