#pragma once

#include <cstdint>
#include <vector>

#include "optree/errors.hpp"

namespace optree {

enum class Modality { image, ots, formula };

struct FeatureMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;  // row-major
  Modality tag = Modality::image;

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

struct PooledFeature {
  std::vector<double> v;  // unit L2 norm
};

// Row 0, L2-normalized; an all-zero row maps to the unit basis vector e_1.
PooledFeature pool_first_token(const FeatureMatrix& h);
PooledFeature pool_mean(const FeatureMatrix& h);
PooledFeature normalize(std::vector<double> v);

double cosine_sim(const PooledFeature& a, const PooledFeature& b);

struct Temperatures {
  double tau = 0.07;
  double tau_prime = 0.07;
};

// Fixed-capacity cyclic store of pooled features. Pre-filled at construction
// with normalized Gaussian vectors so it is never empty.
class FeatureQueue {
 public:
  FeatureQueue() = default;
  FeatureQueue(int capacity, int dim, std::uint64_t seed);

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int write_index() const { return write_index_; }

  void push(const std::vector<PooledFeature>& batch);
  std::vector<PooledFeature> sample(int n, std::uint64_t seed) const;
  PooledFeature slot(int i) const;

  // checkpoint access
  const std::vector<double>& buffer() const { return buf_; }
  void restore(std::vector<double> buf, int write_index);

 private:
  int capacity_ = 0;
  int dim_ = 0;
  int write_index_ = 0;
  std::vector<double> buf_;  // [capacity * dim]
};

}  // namespace optree
