#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "optree/errors.hpp"
#include "optree/tree.hpp"

namespace optree {

// Classic edit-distance DP over any comparable sequence.
template <typename Seq>
int levenshtein(const Seq& a, const Seq& b) {
  const int n = static_cast<int>(a.size()), m = static_cast<int>(b.size());
  std::vector<int> prev(m + 1), cur(m + 1);
  for (int j = 0; j <= m; ++j) prev[j] = j;
  for (int i = 1; i <= n; ++i) {
    cur[0] = i;
    for (int j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

struct SampleMetrics {
  bool reconstructed = false;   // A_i
  int d_rl_tokens = 0;          // token-level edit distance on de-padded sequences
  int target_token_len = 0;     // l(t_i)
  int d_rl_formula = 0;         // character-level distance, only valid when A_i
  int target_formula_len = 0;   // l(t̃_i)
};

struct MetricReport {
  double acc_r = 0;
  double s_rl = 0;        // not clamped; may be negative
  double s_rl_tilde = 0;  // gated by A_i
  int n_samples = 0;
  std::vector<SampleMetrics> rows;
};

MetricReport metric_suite(const std::vector<Ots>& pred, const std::vector<Ots>& target,
                          const std::vector<ConstVec>& pred_consts,
                          const std::vector<ConstVec>& target_consts,
                          const OperatorVocab& vocab);

}  // namespace optree
