#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "optree/errors.hpp"
#include "optree/vocab.hpp"

namespace optree {

struct TreeNode {
  int token = 0;
  int const_slot = -1;  // pre-order slot index for const-placeholder leaves
  std::vector<TreeNode> kids;
};

struct OperationTree {
  TreeNode root;
  int n_nodes = 0;
  int n_consts = 0;
  std::vector<int> var_dims_used;  // sorted, 1-based

  bool structurally_equal(const OperationTree& other) const;
};

struct Ots {
  std::vector<int> ids;  // length = padded capacity, PAD beyond true_len
  int true_len = 0;      // includes BOS and EOS

  std::vector<int> depadded() const {
    return {ids.begin(), ids.begin() + true_len};
  }
};

struct ConstVec {
  std::vector<double> values;
  std::vector<bool> mask;  // true = visible
  int true_len = 0;

  static ConstVec visible(std::vector<double> vals) {
    ConstVec c;
    c.true_len = static_cast<int>(vals.size());
    c.values = std::move(vals);
    c.mask.assign(c.values.size(), true);
    return c;
  }
  static ConstVec fully_masked(int n) {
    ConstVec c;
    c.true_len = n;
    c.values.assign(n, 0.0);
    c.mask.assign(n, false);
    return c;
  }
  bool all_visible() const {
    for (int i = 0; i < true_len; ++i)
      if (!mask[i]) return false;
    return true;
  }
};

struct GenConfig {
  int node_min = 5;
  int node_max = 15;
  int var_count = 1;
  double p_const_leaf = 0.35;
  std::vector<double> op_weights;  // per token id (index id-1); empty = all 1
  int max_consts = 8;
  std::uint64_t seed = 0;
};

// Deterministic in (cfg, seed); guarantees at least one variable leaf.
OperationTree sample_tree(const OperatorVocab& vocab, const GenConfig& cfg, std::uint64_t seed);

// Pre-order serialization framed BOS..EOS, padded with PAD to k_max.
Ots tree_to_ots(const OperationTree& tree, const OperatorVocab& vocab, int k_max);

struct ReconstructResult {
  std::optional<OperationTree> tree;
  ReconstructReason reason = ReconstructReason::ok;
  bool ok() const { return tree.has_value(); }
};

// Accepts arbitrary (possibly model-generated) sequences.
ReconstructResult try_reconstruct(const Ots& ots, const ConstVec& consts, const OperatorVocab& vocab);

// Throwing wrapper around try_reconstruct.
OperationTree ots_to_tree(const Ots& ots, const ConstVec& consts, const OperatorVocab& vocab);

// Element-wise evaluation; non-finite results stay in-band as NaN.
// points is row-major [m x d].
std::vector<double> eval_tree(const OperationTree& tree, const ConstVec& consts,
                              const std::vector<double>& points, int dims,
                              const OperatorVocab& vocab);

struct ConstGrad {
  std::vector<double> value;             // [m]
  std::vector<std::vector<double>> jac;  // [m][n_consts]
  std::vector<bool> finite;              // rows with finite value and gradient
};

ConstGrad grad_consts(const OperationTree& tree, const ConstVec& consts,
                      const std::vector<double>& points, int dims,
                      const OperatorVocab& vocab);

}  // namespace optree
