#include "optree/metrics.hpp"

#include "optree/formula.hpp"

namespace optree {

MetricReport metric_suite(const std::vector<Ots>& pred, const std::vector<Ots>& target,
                          const std::vector<ConstVec>& pred_consts,
                          const std::vector<ConstVec>& target_consts,
                          const OperatorVocab& vocab) {
  const std::size_t n = pred.size();
  if (target.size() != n || pred_consts.size() != n || target_consts.size() != n)
    throw LengthMismatchError("metric_suite inputs differ in length");
  if (n == 0) throw LengthMismatchError("metric_suite on empty input");

  MetricReport rep;
  rep.n_samples = static_cast<int>(n);
  double acc = 0, srl = 0, srlt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    SampleMetrics row;
    auto p = pred[i].depadded();
    auto t = target[i].depadded();
    row.d_rl_tokens = levenshtein(p, t);
    row.target_token_len = static_cast<int>(t.size());
    srl += (row.target_token_len - row.d_rl_tokens) / static_cast<double>(row.target_token_len);

    auto rec = try_reconstruct(pred[i], pred_consts[i], vocab);
    row.reconstructed = rec.ok();
    if (rec.ok()) {
      acc += 1;
      auto pf = tree_to_formula(*rec.tree, pred_consts[i], vocab);
      auto tf = tree_to_formula(ots_to_tree(target[i], target_consts[i], vocab),
                                target_consts[i], vocab);
      row.d_rl_formula = levenshtein(pf, tf);
      row.target_formula_len = static_cast<int>(tf.size());
      srlt += (row.target_formula_len - row.d_rl_formula) /
              static_cast<double>(row.target_formula_len);
    }
    rep.rows.push_back(row);
  }
  rep.acc_r = acc / static_cast<double>(n);
  rep.s_rl = srl / static_cast<double>(n);
  rep.s_rl_tilde = srlt / static_cast<double>(n);
  return rep;
}

}  // namespace optree
