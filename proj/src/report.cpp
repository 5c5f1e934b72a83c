#include "optree/report.hpp"

#include <fstream>

namespace optree {

namespace {

PooledFeature pool_value(const Model& model, const FeatureMatrix& h) {
  return model.config().pool_mean ? pool_mean(h) : pool_first_token(h);
}

std::vector<double> cross_matrix(const std::vector<PooledFeature>& a,
                                 const std::vector<PooledFeature>& b) {
  int n = static_cast<int>(a.size());
  std::vector<double> m(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m[static_cast<std::size_t>(i) * n + j] = cosine_sim(a[i], b[j]);
  return m;
}

SimilaritySummary summarize(const std::vector<double>& m, int n) {
  SimilaritySummary s;
  double diag = 0, off = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double v = m[static_cast<std::size_t>(i) * n + j];
      if (i == j)
        diag += v;
      else
        off += v;
    }
  s.diag_mean = diag / n;
  s.offdiag_mean = n > 1 ? off / (static_cast<double>(n) * n - n) : 0.0;
  return s;
}

void write_matrix(const std::vector<double>& m, int n, const SimilaritySummary& s,
                  const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) f << (j ? "," : "") << m[static_cast<std::size_t>(i) * n + j];
    f << "\n";
  }
  f << "summary,diag_mean," << s.diag_mean << ",offdiag_mean," << s.offdiag_mean << "\n";
}

}  // namespace

SimilarityReport similarity_report(Model& model, const std::vector<Triple>& slice,
                                   const Teacher& teacher) {
  if (slice.empty()) throw ConfigError("empty report slice");
  SimilarityReport rep;
  rep.n = static_cast<int>(slice.size());
  std::vector<PooledFeature> gi, go, gs;
  for (const auto& x : slice) {
    gi.push_back(pool_value(model, model.encode_funcimg(x.img)));
    go.push_back(
        pool_value(model, model.encode_ots(x.ots, ConstVec::fully_masked(x.consts.true_len))));
    gs.push_back(pool_value(model, model.teacher_embed(teacher.extract(x.formula))));
  }
  rep.img_ots = cross_matrix(gi, go);
  rep.img_formula = cross_matrix(gi, gs);
  rep.ots_formula = cross_matrix(go, gs);
  rep.sum_img_ots = summarize(rep.img_ots, rep.n);
  rep.sum_img_formula = summarize(rep.img_formula, rep.n);
  rep.sum_ots_formula = summarize(rep.ots_formula, rep.n);
  return rep;
}

void write_similarity_csv(const SimilarityReport& rep, const std::string& prefix) {
  write_matrix(rep.img_ots, rep.n, rep.sum_img_ots, prefix + "_img_ots.csv");
  write_matrix(rep.img_formula, rep.n, rep.sum_img_formula, prefix + "_img_formula.csv");
  write_matrix(rep.ots_formula, rep.n, rep.sum_ots_formula, prefix + "_ots_formula.csv");
}

double top1_retrieval(const std::vector<double>& matrix, int n) {
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (matrix[static_cast<std::size_t>(i) * n + j] >
          matrix[static_cast<std::size_t>(i) * n + best])
        best = j;
    if (best == i) ++hits;
  }
  return static_cast<double>(hits) / n;
}

}  // namespace optree
