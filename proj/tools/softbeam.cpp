// softbeam command-line entry point.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "softbeam/commands.hpp"

namespace sb = softbeam;

namespace {

struct Common {
  std::string config;
  std::string checkpoint;
  std::string decoder;
  std::size_t k = 3;
  std::optional<double> alpha;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool quiet = false;
};

// Command-line overrides are folded into the JSON document before parsing so
// the config hash covers them ("out" excepted).
sb::ExperimentConfig load_with_overrides(const Common& c, CLI::App* app) {
  if (c.config.empty()) throw sb::ConfigError("--config is required");
  auto doc = sb::read_json_file(c.config);
  if (!doc.is_object()) throw sb::ConfigError("config must be a JSON object");
  auto section = [&](const char* name) -> sb::json& {
    if (!doc.contains(name)) doc[name] = sb::json::object();
    return doc[name];
  };
  if (c.seed) {
    section("train")["seed"] = *c.seed;
    section("ce")["seed"] = *c.seed;
  }
  if (app->count("--k")) {
    section("train")["beam_size"] = c.k;
    section("ce")["beam_size"] = c.k;
  }
  if (c.alpha) doc["decode_alpha"] = *c.alpha;
  if (!c.decoder.empty()) doc["decoders"] = sb::json::array({c.decoder});
  if (!c.out.empty()) doc["out"] = c.out;
  return sb::parse_config(doc);
}

std::ostream* progress(const Common& c) { return c.quiet ? nullptr : &std::cerr; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft beam search training and decoding for sequence taggers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sb::kVersion);
  Common c;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", c.seed, "random seed (training and initialisation)");
    sub->add_option("--out", c.out, "output directory");
    sub->add_flag("--quiet", c.quiet, "no progress on stderr");
  };

  auto* train = app.add_subcommand("train", "train a tagger (CE warm start first for soft objectives)");
  train->add_option("--config", c.config, "experiment config (JSON)")->required();
  train->add_option("--k", c.k, "beam size used in training and beam decoding");
  train->add_option("--alpha", c.alpha, "soft beam decoding alpha for dev metrics");
  train->add_option("--decoder", c.decoder, "decoder used for reporting")
      ->check(CLI::IsMember({"greedy", "hard_beam", "soft_beam"}));
  add_common(train);

  std::string input;
  auto* decode = app.add_subcommand("decode", "tag a TSV file with a checkpoint");
  decode->add_option("--checkpoint", c.checkpoint, "checkpoint file")->required();
  decode->add_option("input", input, "input TSV (token or token<TAB>label per line)")->required();
  decode->add_option("--decoder", c.decoder, "greedy, hard_beam or soft_beam")
      ->check(CLI::IsMember({"greedy", "hard_beam", "soft_beam"}));
  decode->add_option("--k", c.k, "beam size")->capture_default_str();
  decode->add_option("--alpha", c.alpha, "soft beam alpha");
  add_common(decode);

  std::string predicted, gold, default_label;
  auto* eval = app.add_subcommand("eval", "score predictions against gold labels");
  eval->add_option("predicted", predicted, "predicted TSV");
  eval->add_option("gold", gold, "gold TSV")->required();
  eval->add_option("--checkpoint", c.checkpoint, "decode the gold file with this checkpoint instead");
  eval->add_option("--decoder", c.decoder, "decoder when --checkpoint is given")
      ->check(CLI::IsMember({"greedy", "hard_beam", "soft_beam"}));
  eval->add_option("--k", c.k, "beam size when --checkpoint is given")->capture_default_str();
  eval->add_option("--alpha", c.alpha, "soft beam alpha when --checkpoint is given");
  eval->add_option("--default-label", default_label, "label excluded from macro F1 (default: O if present)");
  add_common(eval);

  sb::GradcheckOptions gopt;
  std::vector<double> alphas;
  auto* grad = app.add_subcommand("gradcheck", "compare backpropagated gradients with finite differences");
  grad->add_option("--alpha", alphas, "alpha values (repeatable; default 1 and 5)");
  grad->add_option("--k", c.k, "beam size")->capture_default_str();
  grad->add_option("--labels", gopt.labels, "label vocabulary size")->capture_default_str();
  grad->add_option("--length", gopt.length, "sentence length")->capture_default_str();
  grad->add_option("--hidden", gopt.hidden, "LSTM hidden size")->capture_default_str();
  grad->add_option("--tolerance", gopt.tolerance, "maximum relative error")->capture_default_str();
  add_common(grad);

  auto* exp = app.add_subcommand("experiment", "run the objective x decoder x restart grid");
  exp->add_option("--config", c.config, "experiment config (JSON)")->required();
  exp->add_option("--k", c.k, "beam size");
  exp->add_option("--alpha", c.alpha, "soft beam decoding alpha");
  exp->add_option("--decoder", c.decoder, "restrict the decoder columns to one decoder")
      ->check(CLI::IsMember({"greedy", "hard_beam", "soft_beam"}));
  add_common(exp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (auto& ch : msg) if (ch == '\n') ch = ' ';
    std::cerr << "error usage: " << msg << "\n";
    return 2;
  }

  try {
    if (*train) {
      const auto cfg = load_with_overrides(c, train);
      const auto s = sb::cmd_train(cfg, progress(c));
      std::cout << "checkpoint " << s.checkpoint.string() << "\n";
      for (const auto& [name, r] : s.stages) {
        std::cout << name << " best_epoch " << r.best_epoch << " dev " << sb::format_metric(r.best_score) << "\n";
      }
      std::cout << "config_hash " << cfg.hash_hex() << "\n";
    } else if (*decode) {
      sb::DecodeOptions opt{c.decoder.empty() ? sb::Decoder::hard_beam : sb::parse_decoder(c.decoder), c.k,
                            c.alpha.value_or(1000.0)};
      if (c.out.empty()) {
        sb::cmd_decode(c.checkpoint, input, opt, std::cout);
      } else {
        sb::fs::create_directories(c.out);
        const auto path = sb::fs::path(c.out) / "predictions.tsv";
        std::ofstream out(path);
        if (!out) throw sb::InputError("cannot write " + path.string());
        const auto s = sb::cmd_decode(c.checkpoint, input, opt, out);
        sb::write_json(sb::fs::path(c.out) / "decode.json",
                       {{"checkpoint", c.checkpoint}, {"input", input}, {"decoder", sb::decoder_name(opt.decoder)},
                        {"k", opt.beam_size}, {"alpha", opt.alpha}, {"sentences", s.sentences}, {"lines", s.lines},
                        {"version", sb::kVersion}});
        std::cout << "predictions " << path.string() << " sentences " << s.sentences << " lines " << s.lines << "\n";
      }
    } else if (*eval) {
      std::optional<std::string> def;
      if (!default_label.empty()) def = default_label;
      std::string pred_path = predicted;
      if (!c.checkpoint.empty()) {
        if (!predicted.empty()) throw sb::InputError("give either a predicted file or --checkpoint, not both");
        sb::DecodeOptions opt{c.decoder.empty() ? sb::Decoder::hard_beam : sb::parse_decoder(c.decoder), c.k,
                              c.alpha.value_or(1000.0)};
        const sb::fs::path dir = c.out.empty() ? sb::fs::temp_directory_path() : sb::fs::path(c.out);
        sb::fs::create_directories(dir);
        pred_path = (dir / "predictions.tsv").string();
        std::ofstream out(pred_path);
        sb::cmd_decode(c.checkpoint, gold, opt, out);
      } else if (predicted.empty()) {
        throw sb::InputError("missing predicted file");
      }
      const auto report = sb::cmd_eval(pred_path, gold, def);
      std::cout << "tokens " << report["tokens"].get<std::size_t>() << " accuracy "
                << sb::format_metric(report["accuracy"].get<double>()) << " macro_f1 "
                << sb::format_metric(report["macro_f1"].get<double>()) << "\n";
      for (const auto& [label, m] : report["per_label"].items()) {
        std::cout << "  " << label << " support " << m["support"].get<std::size_t>() << " predicted "
                  << m["predicted"].get<std::size_t>() << " correct " << m["correct"].get<std::size_t>() << " f1 "
                  << sb::format_metric(m["f1"].get<double>()) << "\n";
      }
      if (!c.out.empty()) {
        sb::fs::create_directories(c.out);
        sb::write_json(sb::fs::path(c.out) / "eval.json", report);
      }
    } else if (*grad) {
      if (c.seed) gopt.seed = *c.seed;
      gopt.beam_size = c.k;
      if (!alphas.empty()) gopt.alphas = alphas;
      const auto report = sb::run_gradcheck(gopt);
      std::cout << sb::gradcheck_table(report);
      if (!c.out.empty()) {
        sb::fs::create_directories(c.out);
        sb::json blocks = sb::json::array();
        for (const auto& b : report.blocks) {
          blocks.push_back({{"check", b.check}, {"block", b.block}, {"max_relative_error", b.max_relative_error},
                            {"max_abs_grad", b.max_abs_grad}});
        }
        sb::write_json(sb::fs::path(c.out) / "gradcheck.json",
                       {{"seed", gopt.seed}, {"passed", report.passed()}, {"worst", report.worst},
                        {"tolerance", report.tolerance}, {"blocks", blocks}});
      }
      if (!report.passed()) {
        std::cerr << "error gradcheck: max relative error " << report.worst << " exceeds " << report.tolerance << "\n";
        return 1;
      }
    } else if (*exp) {
      const auto cfg = load_with_overrides(c, exp);
      sb::cmd_experiment(cfg, progress(c));
      std::ifstream md(sb::fs::path(cfg.out) / "results.md");
      std::cout << md.rdbuf();
    }
  } catch (const sb::Error& e) {
    std::string msg = e.what();
    for (auto& ch : msg) if (ch == '\n') ch = ' ';
    std::cerr << "error " << e.category() << ": " << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
