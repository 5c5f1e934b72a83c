#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "optree/feature.hpp"
#include "optree/tree.hpp"

namespace optree {

struct LossWeights {
  double foc = 1.0;
  double fom = 1.0;
  double om = 1.0;
  double kd = 1.0;
};

struct MatchBatch {
  std::vector<std::array<double, 2>> logits;
  std::vector<bool> positive;
  int n_pos() const;
  int n_neg() const;
};

// -(p/t - logsumexp over {p/t', negatives/t'}); the positive is included in
// the denominator (InfoNCE convention, toggleable).
double infonce_term(double pos_sim, const std::vector<double>& neg_sims, double tau_num,
                    double tau_den, bool positive_in_denominator = true);

// Symmetric image<->OTS InfoNCE over the batch with queue negatives.
double loss_foc(const std::vector<PooledFeature>& gi, const std::vector<PooledFeature>& go,
                const FeatureQueue& qi, const FeatureQueue& qo, const Temperatures& temps,
                int n_neg, std::uint64_t seed, bool positive_in_denominator = true);

double loss_fom(const MatchBatch& batch);

// Teacher-forced next-token cross-entropy over the vocabulary; logits are
// [batch][k_max-1][N_v] flattened per sample row-major; targets de-padded.
double loss_om(const std::vector<std::vector<double>>& logits, const std::vector<Ots>& targets,
               int k_max, int vocab_size);

// Both students pulled toward the teacher features, negatives from Qs.
double loss_kd(const std::vector<PooledFeature>& gi, const std::vector<PooledFeature>& go,
               const std::vector<PooledFeature>& gs, const FeatureQueue& qs,
               const Temperatures& temps, int n_neg, std::uint64_t seed,
               bool positive_in_denominator = true);

// Same kernel as loss_om; conditioning differs upstream.
double loss_som(const std::vector<std::vector<double>>& logits, const std::vector<Ots>& targets,
                int k_max, int vocab_size);

struct LossParts {
  double foc = 0, fom = 0, om = 0, kd = 0;
};

double loss_total(const LossParts& parts, const LossWeights& w);

// Seeds for the two independent negative draws of FOC; KD uses a third stream.
std::uint64_t foc_neg_seed_i(std::uint64_t seed);
std::uint64_t foc_neg_seed_o(std::uint64_t seed);
std::uint64_t kd_neg_seed(std::uint64_t seed);

}  // namespace optree
