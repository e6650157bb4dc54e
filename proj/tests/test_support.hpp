#pragma once

// Test-only oracles: central finite differences and small random fixtures.
// Deliberately independent of the library's gradcheck utility.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "softbeam/autodiff.hpp"
#include "softbeam/model.hpp"
#include "softbeam/random.hpp"

namespace softbeam::testing {

// d f / d x by central differences, perturbing x in place and restoring it.
inline std::vector<double> central_differences(const std::function<double()>& f,
                                               std::span<double> x, double step) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

inline std::vector<double> random_values(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline std::vector<std::size_t> random_ids(Rng& rng, std::size_t n, std::size_t bound) {
  std::vector<std::size_t> v(n);
  for (auto& x : v) x = rng.below(bound);
  return v;
}

inline ModelSizes tiny_sizes(std::size_t labels = 4, std::size_t hidden = 5,
                             std::size_t input_vocab = 7) {
  ModelSizes s;
  s.input_vocab = input_vocab;
  s.labels = labels;
  s.input_embedding = 3;
  s.label_embedding = 3;
  s.hidden = hidden;
  return s;
}

// Max relative error of d loss / d theta over every parameter block of a
// model, against central differences of the same closure.
inline double model_gradient_error(TaggerModel& model, const std::function<Tensor()>& loss,
                                   double step = 1e-5, double floor = 1e-6) {
  model.zero_grad();
  backward(loss());
  double worst = 0.0;
  for (auto& [name, p] : model.parameters()) {
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto numeric = central_differences([&] { NoGradGuard g; return loss().item(); },
                                       p.mutable_values(), step);
    worst = std::max(worst, max_relative_error(analytic, numeric, floor));
  }
  return worst;
}

}  // namespace softbeam::testing

#include "softbeam/hard_beam.hpp"

namespace softbeam::testing {

// Smallest gap between consecutive values among the top min(k+1, n)
// candidates of every step of a hard beam trace, and between the final beam
// scores.
inline double min_top_k_gap(const std::vector<BeamStep>& trace, std::size_t k) {
  double gap = std::numeric_limits<double>::infinity();
  auto scan = [&](std::vector<double> v) {
    std::sort(v.begin(), v.end(), std::greater<>());
    const std::size_t upto = std::min(k + 1, v.size());
    for (std::size_t i = 0; i + 1 < upto; ++i) gap = std::min(gap, v[i] - v[i + 1]);
  };
  for (const auto& step : trace) scan(step.candidate_scores);
  if (!trace.empty()) scan(trace.back().scores);
  return gap;
}

}  // namespace softbeam::testing
