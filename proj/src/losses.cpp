#include "optree/losses.hpp"

#include <algorithm>
#include <cmath>

#include "optree/rng.hpp"

namespace optree {

int MatchBatch::n_pos() const {
  return static_cast<int>(std::count(positive.begin(), positive.end(), true));
}
int MatchBatch::n_neg() const {
  return static_cast<int>(positive.size()) - n_pos();
}

std::uint64_t foc_neg_seed_i(std::uint64_t seed) { return mix64(seed, 0xF0C1ULL); }
std::uint64_t foc_neg_seed_o(std::uint64_t seed) { return mix64(seed, 0xF0C2ULL); }
std::uint64_t kd_neg_seed(std::uint64_t seed) { return mix64(seed, 0x6BD3ULL); }

double infonce_term(double pos_sim, const std::vector<double>& neg_sims, double tau_num,
                    double tau_den, bool positive_in_denominator) {
  std::vector<double> logits;
  logits.reserve(neg_sims.size() + 1);
  if (positive_in_denominator) logits.push_back(pos_sim / tau_den);
  for (double s : neg_sims) logits.push_back(s / tau_den);
  double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0;
  for (double l : logits) sum += std::exp(l - mx);
  double lse = mx + std::log(sum);
  return -(pos_sim / tau_num - lse);
}

namespace {

std::vector<double> sims_against(const PooledFeature& a, const std::vector<PooledFeature>& negs) {
  std::vector<double> s(negs.size());
  for (std::size_t k = 0; k < negs.size(); ++k) s[k] = cosine_sim(a, negs[k]);
  return s;
}

}  // namespace

double loss_foc(const std::vector<PooledFeature>& gi, const std::vector<PooledFeature>& go,
                const FeatureQueue& qi, const FeatureQueue& qo, const Temperatures& temps,
                int n_neg, std::uint64_t seed, bool positive_in_denominator) {
  if (gi.size() != go.size() || gi.empty()) throw ShapeError("loss_foc batch mismatch");
  auto neg_o = qo.sample(n_neg, foc_neg_seed_o(seed));
  auto neg_i = qi.sample(n_neg, foc_neg_seed_i(seed));
  double total = 0;
  for (std::size_t j = 0; j < gi.size(); ++j) {
    double pos = cosine_sim(gi[j], go[j]);
    total += infonce_term(pos, sims_against(gi[j], neg_o), temps.tau, temps.tau,
                          positive_in_denominator);
    total += infonce_term(pos, sims_against(go[j], neg_i), temps.tau, temps.tau,
                          positive_in_denominator);
  }
  return total / static_cast<double>(gi.size());
}

double loss_fom(const MatchBatch& batch) {
  if (batch.logits.empty()) throw ShapeError("loss_fom on empty batch");
  double total = 0;
  for (std::size_t j = 0; j < batch.logits.size(); ++j) {
    double z0 = batch.logits[j][0], z1 = batch.logits[j][1];
    double mx = std::max(z0, z1);
    double lse = mx + std::log(std::exp(z0 - mx) + std::exp(z1 - mx));
    total += -( (batch.positive[j] ? z0 : z1) - lse );
  }
  return total / static_cast<double>(batch.logits.size());
}

double loss_om(const std::vector<std::vector<double>>& logits, const std::vector<Ots>& targets,
               int k_max, int vocab_size) {
  if (logits.size() != targets.size() || logits.empty())
    throw ShapeError("loss_om batch mismatch");
  std::size_t expect = static_cast<std::size_t>(k_max - 1) * vocab_size;
  double total = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (logits[j].size() != expect) throw ShapeError("loss_om logits shape mismatch");
    const auto& o = targets[j];
    double sample = 0;
    for (int k = 0; k < o.true_len - 1; ++k) {
      const double* row = logits[j].data() + static_cast<std::size_t>(k) * vocab_size;
      double mx = row[0];
      for (int n = 1; n < vocab_size; ++n) mx = std::max(mx, row[n]);
      double sum = 0;
      for (int n = 0; n < vocab_size; ++n) sum += std::exp(row[n] - mx);
      int target = o.ids[k + 1];  // position k predicts token k+1
      sample += -(row[target - 1] - (mx + std::log(sum)));
    }
    total += sample;
  }
  return total / static_cast<double>(logits.size());
}

double loss_kd(const std::vector<PooledFeature>& gi, const std::vector<PooledFeature>& go,
               const std::vector<PooledFeature>& gs, const FeatureQueue& qs,
               const Temperatures& temps, int n_neg, std::uint64_t seed,
               bool positive_in_denominator) {
  if (gi.size() != go.size() || gi.size() != gs.size() || gi.empty())
    throw ShapeError("loss_kd batch mismatch");
  auto negs = qs.sample(n_neg, kd_neg_seed(seed));
  double total = 0;
  for (std::size_t j = 0; j < gi.size(); ++j) {
    total += infonce_term(cosine_sim(gi[j], gs[j]), sims_against(gi[j], negs), temps.tau,
                          temps.tau_prime, positive_in_denominator);
    total += infonce_term(cosine_sim(go[j], gs[j]), sims_against(go[j], negs), temps.tau,
                          temps.tau_prime, positive_in_denominator);
  }
  return total / static_cast<double>(gi.size());
}

double loss_som(const std::vector<std::vector<double>>& logits, const std::vector<Ots>& targets,
                int k_max, int vocab_size) {
  return loss_om(logits, targets, k_max, vocab_size);
}

double loss_total(const LossParts& parts, const LossWeights& w) {
  return w.foc * parts.foc + w.fom * parts.fom + w.om * parts.om + w.kd * parts.kd;
}

}  // namespace optree
