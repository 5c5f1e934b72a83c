#include "optree/feature.hpp"

#include <cmath>

#include "optree/rng.hpp"

namespace optree {

PooledFeature normalize(std::vector<double> v) {
  double n2 = 0;
  for (double x : v) n2 += x * x;
  if (n2 < 1e-24) {
    std::fill(v.begin(), v.end(), 0.0);
    if (!v.empty()) v[0] = 1.0;
    return {std::move(v)};
  }
  double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return {std::move(v)};
}

PooledFeature pool_first_token(const FeatureMatrix& h) {
  if (h.rows < 1) throw ShapeError("pool_first_token on empty feature matrix");
  std::vector<double> row(h.v.begin(), h.v.begin() + h.cols);
  return normalize(std::move(row));
}

PooledFeature pool_mean(const FeatureMatrix& h) {
  if (h.rows < 1) throw ShapeError("pool_mean on empty feature matrix");
  std::vector<double> m(h.cols, 0.0);
  for (int r = 0; r < h.rows; ++r)
    for (int c = 0; c < h.cols; ++c) m[c] += h.at(r, c);
  for (double& x : m) x /= h.rows;
  return normalize(std::move(m));
}

double cosine_sim(const PooledFeature& a, const PooledFeature& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
  return s;
}

FeatureQueue::FeatureQueue(int capacity, int dim, std::uint64_t seed)
    : capacity_(capacity), dim_(dim), write_index_(0) {
  if (capacity < 1 || dim < 1) throw ConfigError("queue capacity and dim must be positive");
  buf_.resize(static_cast<std::size_t>(capacity) * dim);
  Rng rng(mix64(seed, 0x51554555ULL));
  for (int i = 0; i < capacity; ++i) {
    auto f = normalize(rng.normal_vec(dim));
    std::copy(f.v.begin(), f.v.end(), buf_.begin() + static_cast<std::size_t>(i) * dim);
  }
}

void FeatureQueue::push(const std::vector<PooledFeature>& batch) {
  for (const auto& f : batch) {
    if (static_cast<int>(f.v.size()) != dim_) throw ShapeError("queue push dim mismatch");
    std::copy(f.v.begin(), f.v.end(),
              buf_.begin() + static_cast<std::size_t>(write_index_) * dim_);
    write_index_ = (write_index_ + 1) % capacity_;
  }
}

PooledFeature FeatureQueue::slot(int i) const {
  PooledFeature f;
  f.v.assign(buf_.begin() + static_cast<std::size_t>(i) * dim_,
             buf_.begin() + static_cast<std::size_t>(i + 1) * dim_);
  return f;
}

std::vector<PooledFeature> FeatureQueue::sample(int n, std::uint64_t seed) const {
  if (n > capacity_) throw SampleError("sample size exceeds queue capacity");
  std::vector<int> idx(capacity_);
  for (int i = 0; i < capacity_; ++i) idx[i] = i;
  Rng rng(mix64(seed, 0x53414d50ULL));
  // partial Fisher-Yates, without replacement
  std::vector<PooledFeature> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    int j = i + static_cast<int>(rng.next_index(static_cast<std::uint64_t>(capacity_ - i)));
    std::swap(idx[i], idx[j]);
    out.push_back(slot(idx[i]));
  }
  return out;
}

void FeatureQueue::restore(std::vector<double> buf, int write_index) {
  if (buf.size() != buf_.size()) throw ShapeError("queue restore size mismatch");
  buf_ = std::move(buf);
  write_index_ = write_index;
}

}  // namespace optree
