#pragma once

// Backpropagated gradients against central finite differences, reported per
// parameter block.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "softbeam/soft_beam.hpp"
#include "softbeam/training.hpp"

namespace softbeam {

struct BlockError {
  std::string check;  // e.g. "soft_beam_forward alpha=1"
  std::string block;
  double max_relative_error = 0.0;
  double max_abs_grad = 0.0;
};

struct GradcheckReport {
  std::vector<BlockError> blocks;
  double tolerance = 1e-4;
  double worst = 0.0;
  bool passed() const { return worst < tolerance; }
};

// |a - n| / max(|a|, |n|, floor): the floor keeps entries whose true
// gradient is (numerically) zero from dominating.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline void check_model_gradient(const std::string& check, TaggerModel& model, const std::function<Tensor()>& loss,
                                 GradcheckReport& report, double step = 1e-5, double floor = 1e-6) {
  model.zero_grad();
  backward(loss());
  for (auto& [name, p] : model.parameters()) {
    BlockError e{check, name, 0.0, 0.0};
    auto values = p.mutable_values();
    const auto grad = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double up, down;
      {
        NoGradGuard g;
        values[i] = saved + step;
        up = loss().item();
        values[i] = saved - step;
        down = loss().item();
      }
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      e.max_relative_error = std::max(e.max_relative_error, relative_error(grad[i], numeric, floor));
      e.max_abs_grad = std::max(e.max_abs_grad, std::abs(grad[i]));
    }
    report.worst = std::max(report.worst, e.max_relative_error);
    report.blocks.push_back(std::move(e));
  }
}

struct GradcheckOptions {
  std::uint64_t seed = 1;
  std::size_t labels = 5;
  std::size_t length = 4;
  std::size_t beam_size = 3;
  std::size_t hidden = 6;
  std::size_t input_vocab = 7;
  std::size_t embedding = 4;
  double init_scale = 0.5;
  std::vector<double> alphas{1.0, 5.0};
  double step = 1e-5;
  double tolerance = 1e-4;
};

// soft_beam_forward, soft_hinge_forward (cost-augmented, Hamming) and ce_loss
// on a seeded random model and sentence.
inline GradcheckReport run_gradcheck(const GradcheckOptions& o) {
  if (o.labels < 2 || o.length < 1 || o.beam_size < 1 || o.hidden < 1) throw ConfigError("gradcheck: sizes too small");
  ModelSizes sizes{o.input_vocab, o.labels, o.embedding, o.embedding, o.hidden};
  auto model = init_params(mix_seed(o.seed, 1), o.init_scale, sizes);
  if (model.parameter_count() > 5000) throw ConfigError("gradcheck: model too large for finite differences");
  Rng rng(mix_seed(o.seed, 2));
  std::vector<std::size_t> tokens(o.length), gold(o.length);
  for (auto& t : tokens) t = static_cast<std::size_t>(rng.below(o.input_vocab));
  for (auto& y : gold) y = static_cast<std::size_t>(rng.below(o.labels));
  const auto cost = CostFunction::hamming(o.labels);

  GradcheckReport report;
  report.tolerance = o.tolerance;
  for (double alpha : o.alphas) {
    const SoftBeamOptions opt{o.beam_size, alpha};
    const std::string suffix = " alpha=" + nlohmann::json(alpha).dump();
    check_model_gradient("soft_beam_forward" + suffix, model,
                         [&] { return soft_beam_forward(tokens, gold, model, opt, cost).value; }, report, o.step);
    check_model_gradient("soft_hinge_forward" + suffix, model,
                         [&] { return soft_hinge_forward(tokens, gold, model, opt, cost).value; }, report, o.step);
  }
  check_model_gradient("ce_loss", model, [&] { return ce_loss(tokens, gold, model); }, report, o.step);
  return report;
}

}  // namespace softbeam
