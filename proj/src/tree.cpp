#include "optree/tree.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include "optree/rng.hpp"

namespace optree {

namespace {

bool nodes_equal(const TreeNode& a, const TreeNode& b) {
  if (a.token != b.token || a.const_slot != b.const_slot) return false;
  if (a.kids.size() != b.kids.size()) return false;
  for (std::size_t i = 0; i < a.kids.size(); ++i)
    if (!nodes_equal(a.kids[i], b.kids[i])) return false;
  return true;
}

void finalize_tree(OperationTree& t, const OperatorVocab& vocab) {
  t.n_nodes = 0;
  t.n_consts = 0;
  std::set<int> vars;
  // pre-order slot assignment
  std::vector<TreeNode*> stack{&t.root};
  while (!stack.empty()) {
    TreeNode* n = stack.back();
    stack.pop_back();
    ++t.n_nodes;
    const auto& ti = vocab.info(n->token);
    if (ti.kind == TokenKind::const_placeholder) n->const_slot = t.n_consts++;
    if (ti.kind == TokenKind::variable) vars.insert(ti.var_index);
    for (auto it = n->kids.rbegin(); it != n->kids.rend(); ++it) stack.push_back(&*it);
  }
  t.var_dims_used.assign(vars.begin(), vars.end());
}

struct Sampler {
  const OperatorVocab& vocab;
  const GenConfig& cfg;
  Rng& rng;
  int consts_used = 0;

  double weight(int id) const {
    if (cfg.op_weights.empty()) return 1.0;
    std::size_t i = static_cast<std::size_t>(id - 1);
    return i < cfg.op_weights.size() ? cfg.op_weights[i] : 1.0;
  }

  int weighted_pick(const std::vector<int>& ids) {
    double total = 0;
    for (int id : ids) total += weight(id);
    if (total <= 0) throw ConfigError("all candidate op weights are zero");
    double r = rng.next_unit() * total;
    for (int id : ids) {
      r -= weight(id);
      if (r <= 0) return id;
    }
    return ids.back();
  }

  TreeNode leaf() {
    TreeNode n;
    if (consts_used < cfg.max_consts && rng.next_unit() < cfg.p_const_leaf) {
      n.token = vocab.const_id();
      ++consts_used;
    } else {
      n.token = vocab.var_id(1 + static_cast<int>(rng.next_index(cfg.var_count)));
    }
    return n;
  }

  TreeNode build(int n) {
    if (n <= 1) return leaf();
    std::vector<int> unary, binary;
    for (int id = 1; id <= vocab.size(); ++id) {
      const auto& ti = vocab.info(id);
      if (ti.kind == TokenKind::unary_op) unary.push_back(id);
      if (ti.kind == TokenKind::binary_op) binary.push_back(id);
    }
    if (n == 2) {
      if (unary.empty()) throw ConfigError("node count 2 infeasible without unary ops");
      TreeNode node;
      node.token = weighted_pick(unary);
      node.kids.push_back(build(1));
      return node;
    }
    std::vector<int> candidates = binary;
    candidates.insert(candidates.end(), unary.begin(), unary.end());
    if (candidates.empty()) throw ConfigError("vocab has no operators");
    int id = weighted_pick(candidates);
    // pow exponents are restricted to constant leaves during generation
    if (vocab.info(id).name == "pow" && consts_used >= cfg.max_consts)
      id = weighted_pick(unary.empty() ? binary : unary);
    TreeNode node;
    node.token = id;
    const auto& ti = vocab.info(id);
    if (ti.arity == 1) {
      node.kids.push_back(build(n - 1));
    } else if (ti.name == "pow") {
      node.kids.push_back(build(n - 2));
      TreeNode exponent;
      exponent.token = vocab.const_id();
      ++consts_used;
      node.kids.push_back(exponent);
    } else {
      int left = 1 + static_cast<int>(rng.next_index(static_cast<std::uint64_t>(n - 2)));
      node.kids.push_back(build(left));
      node.kids.push_back(build(n - 1 - left));
    }
    return node;
  }
};

}  // namespace

bool OperationTree::structurally_equal(const OperationTree& other) const {
  return nodes_equal(root, other.root);
}

OperationTree sample_tree(const OperatorVocab& vocab, const GenConfig& cfg, std::uint64_t seed) {
  if (cfg.node_min < 1 || cfg.node_max < cfg.node_min)
    throw ConfigError("invalid node_range");
  if (cfg.p_const_leaf < 0 || cfg.p_const_leaf > 1)
    throw ConfigError("p_const_leaf outside [0,1]");
  if (cfg.var_count < 1 || cfg.var_count > vocab.var_count())
    throw ConfigError("var_count exceeds vocab variables");

  for (int attempt = 0; attempt < 1000; ++attempt) {
    Rng rng(mix64(cfg.seed, seed, static_cast<std::uint64_t>(attempt)));
    int n = cfg.node_min + static_cast<int>(rng.next_index(
                               static_cast<std::uint64_t>(cfg.node_max - cfg.node_min + 1)));
    Sampler s{vocab, cfg, rng};
    OperationTree t;
    t.root = s.build(n);
    finalize_tree(t, vocab);
    // degenerate trees (no variable leaf) are rejected and resampled
    if (t.var_dims_used.empty()) continue;
    if (t.n_consts > cfg.max_consts) continue;
    if (t.n_nodes != n) continue;  // should not happen
    return t;
  }
  throw ConfigError("tree sampling failed to produce a non-degenerate tree");
}

Ots tree_to_ots(const OperationTree& tree, const OperatorVocab& vocab, int k_max) {
  std::vector<int> pre;
  std::vector<const TreeNode*> stack{&tree.root};
  while (!stack.empty()) {
    const TreeNode* n = stack.back();
    stack.pop_back();
    pre.push_back(n->token);
    for (auto it = n->kids.rbegin(); it != n->kids.rend(); ++it) stack.push_back(&*it);
  }
  if (static_cast<int>(pre.size()) + 2 > k_max)
    throw LengthError("pre-order length " + std::to_string(pre.size()) +
                      " + framing exceeds k_max " + std::to_string(k_max));
  Ots o;
  o.ids.assign(k_max, vocab.pad());
  o.ids[0] = vocab.bos();
  std::copy(pre.begin(), pre.end(), o.ids.begin() + 1);
  o.ids[pre.size() + 1] = vocab.eos();
  o.true_len = static_cast<int>(pre.size()) + 2;
  return o;
}

ReconstructResult try_reconstruct(const Ots& ots, const ConstVec& consts,
                                  const OperatorVocab& vocab) {
  auto fail = [](ReconstructReason r) {
    ReconstructResult res;
    res.reason = r;
    return res;
  };
  const auto& ids = ots.ids;
  if (ids.empty() || ids[0] != vocab.bos()) return fail(ReconstructReason::missing_eos);
  int eos_pos = -1;
  for (std::size_t i = 1; i < ids.size(); ++i) {
    if (ids[i] == vocab.eos()) {
      eos_pos = static_cast<int>(i);
      break;
    }
  }
  if (eos_pos < 0) return fail(ReconstructReason::missing_eos);
  for (std::size_t i = eos_pos + 1; i < ids.size(); ++i)
    if (ids[i] != vocab.pad()) return fail(ReconstructReason::trailing_tokens);

  std::vector<int> payload(ids.begin() + 1, ids.begin() + eos_pos);
  if (payload.empty()) return fail(ReconstructReason::dangling_children);

  std::size_t pos = 0;
  int n_consts = 0;
  // recursive-descent over the pre-order payload
  std::function<std::optional<TreeNode>()> parse = [&]() -> std::optional<TreeNode> {
    if (pos >= payload.size()) return std::nullopt;
    int id = payload[pos++];
    if (!vocab.valid_id(id)) return std::nullopt;
    const auto& ti = vocab.info(id);
    if (ti.kind == TokenKind::special) return std::nullopt;
    TreeNode n;
    n.token = id;
    if (ti.kind == TokenKind::const_placeholder) n.const_slot = n_consts++;
    for (int k = 0; k < ti.arity; ++k) {
      auto kid = parse();
      if (!kid) return std::nullopt;
      n.kids.push_back(std::move(*kid));
    }
    return n;
  };

  // distinguish unknown-token from dangling-children
  for (int id : payload) {
    if (!vocab.valid_id(id)) return fail(ReconstructReason::unknown_token);
    auto kind = vocab.info(id).kind;
    if (kind == TokenKind::special) return fail(ReconstructReason::unknown_token);
  }

  auto root = parse();
  if (!root) return fail(ReconstructReason::dangling_children);
  if (pos != payload.size()) return fail(ReconstructReason::trailing_tokens);
  if (n_consts > consts.true_len) return fail(ReconstructReason::const_underflow);

  ReconstructResult res;
  OperationTree t;
  t.root = std::move(*root);
  finalize_tree(t, vocab);
  res.tree = std::move(t);
  return res;
}

OperationTree ots_to_tree(const Ots& ots, const ConstVec& consts, const OperatorVocab& vocab) {
  auto r = try_reconstruct(ots, consts, vocab);
  if (!r.ok()) throw ReconstructionError(r.reason);
  return std::move(*r.tree);
}

namespace {

void eval_node(const TreeNode& n, const ConstVec& consts, const std::vector<double>& points,
               int m, int dims, const OperatorVocab& vocab, std::vector<double>& out) {
  const auto& ti = vocab.info(n.token);
  out.resize(m);
  switch (ti.kind) {
    case TokenKind::variable: {
      int j = ti.var_index - 1;
      for (int i = 0; i < m; ++i) out[i] = points[i * dims + j];
      return;
    }
    case TokenKind::const_placeholder: {
      double v = n.const_slot < consts.true_len ? consts.values[n.const_slot] : 0.0;
      std::fill(out.begin(), out.end(), v);
      return;
    }
    default: break;
  }
  std::vector<double> a, b;
  eval_node(n.kids[0], consts, points, m, dims, vocab, a);
  if (ti.arity == 2) eval_node(n.kids[1], consts, points, m, dims, vocab, b);
  const std::string& name = ti.name;
  for (int i = 0; i < m; ++i) {
    double x = a[i], y = ti.arity == 2 ? b[i] : 0.0, r;
    if (name == "add") r = x + y;
    else if (name == "sub") r = x - y;
    else if (name == "mul") r = x * y;
    else if (name == "div") r = x / y;
    else if (name == "pow") r = std::pow(x, y);
    else if (name == "neg") r = -x;
    else if (name == "abs") r = std::fabs(x);
    else if (name == "sin") r = std::sin(x);
    else if (name == "cos") r = std::cos(x);
    else if (name == "tanh") r = std::tanh(x);
    else if (name == "exp") r = std::exp(x);
    else if (name == "log") r = std::log(x);
    else if (name == "sqrt") r = std::sqrt(x);
    else throw ConfigError("unexpected operator " + name);
    out[i] = r;
  }
}

}  // namespace

std::vector<double> eval_tree(const OperationTree& tree, const ConstVec& consts,
                              const std::vector<double>& points, int dims,
                              const OperatorVocab& vocab) {
  int m = dims > 0 ? static_cast<int>(points.size()) / dims : 0;
  std::vector<double> out;
  eval_node(tree.root, consts, points, m, dims, vocab, out);
  for (auto& v : out)
    if (!std::isfinite(v)) v = std::numeric_limits<double>::quiet_NaN();
  return out;
}

namespace {

struct FlatNode {
  int token;
  int const_slot;
  int kid0 = -1, kid1 = -1;
};

int flatten(const TreeNode& n, std::vector<FlatNode>& out) {
  FlatNode f;
  f.token = n.token;
  f.const_slot = n.const_slot;
  int idx = static_cast<int>(out.size());
  out.push_back(f);
  if (!n.kids.empty()) {
    int k0 = flatten(n.kids[0], out);
    out[idx].kid0 = k0;
    if (n.kids.size() > 1) {
      int k1 = flatten(n.kids[1], out);
      out[idx].kid1 = k1;
    }
  }
  return idx;
}

}  // namespace

ConstGrad grad_consts(const OperationTree& tree, const ConstVec& consts,
                      const std::vector<double>& points, int dims,
                      const OperatorVocab& vocab) {
  int m = dims > 0 ? static_cast<int>(points.size()) / dims : 0;
  std::vector<FlatNode> nodes;
  flatten(tree.root, nodes);
  int nn = static_cast<int>(nodes.size());

  ConstGrad g;
  g.value.assign(m, 0.0);
  g.jac.assign(m, std::vector<double>(tree.n_consts, 0.0));
  g.finite.assign(m, true);

  std::vector<double> val(nn), adj(nn);
  for (int i = 0; i < m; ++i) {
    // forward, reverse node order so children (larger index) come first? flatten is
    // pre-order: parents precede children, so evaluate back-to-front.
    for (int k = nn - 1; k >= 0; --k) {
      const auto& f = nodes[k];
      const auto& ti = vocab.info(f.token);
      if (ti.kind == TokenKind::variable) {
        val[k] = points[i * dims + (ti.var_index - 1)];
      } else if (ti.kind == TokenKind::const_placeholder) {
        val[k] = f.const_slot < consts.true_len ? consts.values[f.const_slot] : 0.0;
      } else {
        double x = val[f.kid0], y = f.kid1 >= 0 ? val[f.kid1] : 0.0;
        const std::string& name = ti.name;
        if (name == "add") val[k] = x + y;
        else if (name == "sub") val[k] = x - y;
        else if (name == "mul") val[k] = x * y;
        else if (name == "div") val[k] = x / y;
        else if (name == "pow") val[k] = std::pow(x, y);
        else if (name == "neg") val[k] = -x;
        else if (name == "abs") val[k] = std::fabs(x);
        else if (name == "sin") val[k] = std::sin(x);
        else if (name == "cos") val[k] = std::cos(x);
        else if (name == "tanh") val[k] = std::tanh(x);
        else if (name == "exp") val[k] = std::exp(x);
        else if (name == "log") val[k] = std::log(x);
        else if (name == "sqrt") val[k] = std::sqrt(x);
      }
    }
    g.value[i] = val[0];
    std::fill(adj.begin(), adj.end(), 0.0);
    adj[0] = 1.0;
    for (int k = 0; k < nn; ++k) {
      const auto& f = nodes[k];
      const auto& ti = vocab.info(f.token);
      double a = adj[k];
      if (ti.kind == TokenKind::const_placeholder) {
        if (f.const_slot < tree.n_consts) g.jac[i][f.const_slot] += a;
        continue;
      }
      if (ti.arity == 0) continue;
      double x = val[f.kid0], y = f.kid1 >= 0 ? val[f.kid1] : 0.0;
      const std::string& name = ti.name;
      if (name == "add") { adj[f.kid0] += a; adj[f.kid1] += a; }
      else if (name == "sub") { adj[f.kid0] += a; adj[f.kid1] -= a; }
      else if (name == "mul") { adj[f.kid0] += a * y; adj[f.kid1] += a * x; }
      else if (name == "div") { adj[f.kid0] += a / y; adj[f.kid1] += -a * x / (y * y); }
      else if (name == "pow") {
        adj[f.kid0] += a * y * std::pow(x, y - 1.0);
        adj[f.kid1] += a * std::pow(x, y) * std::log(x);
      }
      else if (name == "neg") adj[f.kid0] -= a;
      else if (name == "abs") adj[f.kid0] += a * (x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0));
      else if (name == "sin") adj[f.kid0] += a * std::cos(x);
      else if (name == "cos") adj[f.kid0] -= a * std::sin(x);
      else if (name == "tanh") { double t = std::tanh(x); adj[f.kid0] += a * (1.0 - t * t); }
      else if (name == "exp") adj[f.kid0] += a * std::exp(x);
      else if (name == "log") adj[f.kid0] += a / x;
      else if (name == "sqrt") adj[f.kid0] += a * 0.5 / std::sqrt(x);
    }
    if (!std::isfinite(g.value[i])) g.finite[i] = false;
    for (double d : g.jac[i])
      if (!std::isfinite(d)) g.finite[i] = false;
  }
  return g;
}

}  // namespace optree
