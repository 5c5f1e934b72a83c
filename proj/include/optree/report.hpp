#pragma once

#include <string>
#include <vector>

#include "optree/trainer.hpp"

namespace optree {

struct SimilaritySummary {
  double diag_mean = 0;
  double offdiag_mean = 0;
};

struct SimilarityReport {
  int n = 0;
  // row-major n x n, rows indexed by the first modality of each pair
  std::vector<double> img_ots, img_formula, ots_formula;
  SimilaritySummary sum_img_ots, sum_img_formula, sum_ots_formula;
};

SimilarityReport similarity_report(Model& model, const std::vector<Triple>& slice,
                                   const Teacher& teacher);

// One CSV per matrix (<prefix>_img_ots.csv, <prefix>_img_formula.csv,
// <prefix>_ots_formula.csv); each ends with a summary row holding the mean
// diagonal and mean off-diagonal values.
void write_similarity_csv(const SimilarityReport& rep, const std::string& prefix);

// Fraction of rows whose largest similarity sits on the diagonal.
double top1_retrieval(const std::vector<double>& matrix, int n);

}  // namespace optree
