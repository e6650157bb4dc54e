#pragma once

// Continuous relaxation of top-k-argmax. For a score matrix s and its i-th
// largest entry m_i, the peaked matrix
//
//   p_i = peaked-softmax_alpha( -(s - m_i)^2 )      (elementwise square)
//
// is normalized over all entries of s and concentrates on the position of the
// i-th max as alpha grows. Row sums of p_i give a soft backpointer, column
// sums a soft label choice.

#include <cstddef>
#include <vector>

#include "softbeam/autodiff.hpp"

namespace softbeam {

// Whether the top-k values m_i pass gradient back to the scores.
enum class MaxGradient { flow, stop };

struct SelectionMatrices {
  Tensor stacked;  // [k x (rows * cols)], row i is p_i flattened row-major
  std::size_t rows = 0;
  std::size_t cols = 0;
  double alpha = 1.0;

  std::size_t count() const { return stacked.rows(); }

  // p_i as a [rows x cols] matrix (zero-based i).
  Tensor matrix(std::size_t i) const { return reshape(row(stacked, i), {rows, cols}); }
};

inline SelectionMatrices continuous_top_k_argmax(const Tensor& scores, std::size_t k, double alpha,
                                                 MaxGradient max_gradient = MaxGradient::flow) {
  if (scores.rank() != 2) throw DimensionError("continuous_top_k_argmax: scores must be a matrix");
  if (!(alpha > 0.0)) throw ContractError("continuous_top_k_argmax: alpha must be positive");
  detail::require_finite(scores.values(), "continuous_top_k_argmax");
  const std::size_t n = scores.size();
  auto flat = flatten(scores);
  auto m = top_k_values(flat, k);
  if (max_gradient == MaxGradient::stop) m = detach(m);
  auto diff = sub(broadcast_rows(flat, k), broadcast_cols(m, n));
  auto p = softmax_rows_scaled(neg(square(diff)), alpha);
  return {std::move(p), scores.rows(), scores.cols(), alpha};
}

// b~ = row_sum(p_i): contribution of each previous beam element.
inline Tensor soft_backpointer(const Tensor& p) { return row_sum(p); }

// a = column_sum(p_i): contribution of each vocabulary item.
inline Tensor vocab_contribution(const Tensor& p) { return column_sum(p); }

// All soft backpointers, one per row: [k x rows].
inline Tensor soft_backpointers(const SelectionMatrices& sel) {
  std::vector<Tensor> out;
  out.reserve(sel.count());
  for (std::size_t i = 0; i < sel.count(); ++i) out.push_back(soft_backpointer(sel.matrix(i)));
  return concat_rows(out);
}

// All vocabulary contributions, one per row: [k x cols].
inline Tensor vocab_contributions(const SelectionMatrices& sel) {
  std::vector<Tensor> out;
  out.reserve(sel.count());
  for (std::size_t i = 0; i < sel.count(); ++i) out.push_back(vocab_contribution(sel.matrix(i)));
  return concat_rows(out);
}

}  // namespace softbeam
