#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "optree/errors.hpp"

namespace optree {

struct Mat {
  int r = 0, c = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int rows, int cols) : r(rows), c(cols), a(static_cast<std::size_t>(rows) * cols, 0.0) {}

  double& at(int i, int j) { return a[static_cast<std::size_t>(i) * c + j]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(i) * c + j]; }
  std::size_t size() const { return a.size(); }
};

struct ParamEntry {
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;
  bool trainable = true;
};

class Rng;

// Named tensors with Adam moments. Iteration order is creation order, which
// makes initialization and checkpoints deterministic.
class ParamStore {
 public:
  ParamEntry& add(const std::string& name, int r, int c, bool trainable = true);
  ParamEntry& add_gaussian(const std::string& name, int r, int c, double std, Rng& rng,
                           bool trainable = true);
  bool has(const std::string& name) const { return map_.count(name) > 0; }
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;
  const std::vector<std::string>& order() const { return order_; }

  void zero_grads();
  void adam_step(double lr, double beta1, double beta2, double eps, std::int64_t t);

  std::size_t trainable_count() const;

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, ParamEntry> map_;
};

// Reverse-mode tape over dense double matrices. Handles are creation-ordered,
// so reverse iteration is a valid topological backward order.
class Tape {
 public:
  int constant(Mat m);
  int param(ParamStore& ps, const std::string& name);

  const Mat& val(int h) const { return nodes_[h].val; }
  Mat& grad(int h) { return nodes_[h].grad; }
  bool requires_grad(int h) const { return nodes_[h].rg; }

  int matmul(int a, int b);
  int transpose(int a);
  int add(int a, int b);
  int sub(int a, int b);
  int add_rowvec(int a, int row);  // row is 1 x c, broadcast over rows
  int mul_elem(int a, int b);
  int scale(int a, double s);
  int tanh_op(int a);
  int softmax_rows(int a, const Mat* additive_mask = nullptr);
  int layernorm_rows(int x, int gain, int bias, double eps = 1e-5);
  int slice_rows(int a, int r0, int r1);
  int slice_cols(int a, int c0, int c1);
  int concat_rows(const std::vector<int>& parts);
  int concat_cols(const std::vector<int>& parts);
  int gather_rows(int table, std::vector<int> idx);
  int sum_all(int a);                   // 1x1
  int dot_all(int a, int b);            // 1x1
  int log_elem(int a);
  int exp_elem(int a);
  int reciprocal(int a);
  int logsumexp_row(int a);             // 1xn -> 1x1
  int scale_by(int a, int s);           // s is 1x1
  int l2_normalize_row(int a);          // 1xc
  // sum over rows [0, active) of -log softmax(row)[target[row]]
  int cross_entropy_rows(int logits, std::vector<int> targets, int active);

  void backward(int loss);
  void flush_param_grads(ParamStore& ps);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;
    bool rg = false;
    std::function<void(Tape&, int)> back;
    std::string param_name;
  };
  std::vector<Node> nodes_;

  int make(Mat val, bool rg, std::function<void(Tape&, int)> back);
  void ensure_grad(int h);
};

}  // namespace optree
