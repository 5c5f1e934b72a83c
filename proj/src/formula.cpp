#include "optree/formula.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <set>
#include <vector>

namespace optree {

namespace {

const char* binary_symbol(const std::string& name) {
  if (name == "add") return "+";
  if (name == "sub") return "-";
  if (name == "mul") return "*";
  if (name == "div") return "/";
  if (name == "pow") return "^";
  return nullptr;
}

std::string format_const(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void emit(const TreeNode& n, const ConstVec& consts, const OperatorVocab& vocab,
          std::string& out) {
  const auto& ti = vocab.info(n.token);
  switch (ti.kind) {
    case TokenKind::variable:
      out += ti.name;
      return;
    case TokenKind::const_placeholder:
      if (n.const_slot >= consts.true_len || !consts.mask[n.const_slot])
        throw MaskedConstError("constant slot " + std::to_string(n.const_slot) +
                               " is masked or absent");
      out += format_const(consts.values[n.const_slot]);
      return;
    case TokenKind::binary_op: {
      out += '(';
      emit(n.kids[0], consts, vocab, out);
      out += ' ';
      out += binary_symbol(ti.name);
      out += ' ';
      emit(n.kids[1], consts, vocab, out);
      out += ')';
      return;
    }
    case TokenKind::unary_op:
      out += ti.name;
      out += '(';
      emit(n.kids[0], consts, vocab, out);
      out += ')';
      return;
    default:
      throw ConfigError("special token in tree");
  }
}

struct Parser {
  const std::string& s;
  const OperatorVocab& vocab;
  std::size_t pos = 0;
  std::vector<double> const_values;  // in leaf creation order == source order

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  }

  [[noreturn]] void fail(const std::string& expected) { throw ParseError(pos, expected); }

  bool number_starts_at(std::size_t p) const {
    if (p >= s.size()) return false;
    char c = s[p];
    if (std::isdigit(static_cast<unsigned char>(c))) return true;
    if (c == '.' && p + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[p + 1])))
      return true;
    return false;
  }

  double parse_number() {
    const char* start = s.c_str() + pos;
    char* end = nullptr;
    double v = std::strtod(start, &end);
    if (end == start) fail("number");
    pos += static_cast<std::size_t>(end - start);
    return v;
  }

  TreeNode const_leaf(double v) {
    TreeNode n;
    n.token = vocab.const_id();
    const_values.push_back(v);
    return n;
  }

  TreeNode primary() {
    skip_ws();
    if (pos >= s.size()) fail("expression");
    char c = s[pos];
    if (c == '(') {
      ++pos;
      TreeNode n = expr(0);
      skip_ws();
      if (pos >= s.size() || s[pos] != ')') fail("')'");
      ++pos;
      return n;
    }
    if (c == '-') {
      // fold into a negative literal when a number follows; otherwise unary neg
      if (number_starts_at(pos + 1)) {
        ++pos;
        return const_leaf(-parse_number());
      }
      ++pos;
      TreeNode n;
      n.token = vocab.id_of("neg");
      if (n.token == 0) fail("operand (vocab has no neg)");
      n.kids.push_back(primary());
      return n;
    }
    if (number_starts_at(pos)) return const_leaf(parse_number());
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t start = pos;
      while (pos < s.size() && (std::isalnum(static_cast<unsigned char>(s[pos])))) ++pos;
      std::string name = s.substr(start, pos - start);
      skip_ws();
      if (pos < s.size() && s[pos] == '(') {
        int id = vocab.id_of(name);
        if (id == 0 || vocab.info(id).kind != TokenKind::unary_op) {
          pos = start;
          fail("unary function name");
        }
        ++pos;
        TreeNode n;
        n.token = id;
        n.kids.push_back(expr(0));
        skip_ws();
        if (pos >= s.size() || s[pos] != ')') fail("')'");
        ++pos;
        return n;
      }
      int id = vocab.id_of(name);
      if (id == 0 || vocab.info(id).kind != TokenKind::variable) {
        pos = start;
        fail("variable name");
      }
      TreeNode n;
      n.token = id;
      return n;
    }
    fail("expression");
  }

  // precedence climbing
  TreeNode expr(int min_bp) {
    TreeNode lhs = primary();
    for (;;) {
      skip_ws();
      if (pos >= s.size()) break;
      char c = s[pos];
      int bp;
      const char* opname;
      switch (c) {
        case '+': bp = 10; opname = "add"; break;
        case '-': bp = 10; opname = "sub"; break;
        case '*': bp = 20; opname = "mul"; break;
        case '/': bp = 20; opname = "div"; break;
        case '^': bp = 30; opname = "pow"; break;
        default: return lhs;
      }
      if (bp < min_bp) break;
      ++pos;
      // '^' is right-associative, the rest left-associative
      TreeNode rhs = expr(c == '^' ? bp : bp + 1);
      TreeNode n;
      n.token = vocab.id_of(opname);
      n.kids.push_back(std::move(lhs));
      n.kids.push_back(std::move(rhs));
      lhs = std::move(n);
    }
    return lhs;
  }
};

void assign_slots_preorder(TreeNode& n, const OperatorVocab& vocab, int& next) {
  if (vocab.info(n.token).kind == TokenKind::const_placeholder) n.const_slot = next++;
  for (auto& k : n.kids) assign_slots_preorder(k, vocab, next);
}

void gather_meta(const TreeNode& n, const OperatorVocab& vocab, int& n_nodes,
                 std::set<int>& vars) {
  ++n_nodes;
  const auto& ti = vocab.info(n.token);
  if (ti.kind == TokenKind::variable) vars.insert(ti.var_index);
  for (const auto& k : n.kids) gather_meta(k, vocab, n_nodes, vars);
}

}  // namespace

std::string tree_to_formula(const OperationTree& tree, const ConstVec& consts,
                            const OperatorVocab& vocab) {
  std::string out;
  emit(tree.root, consts, vocab, out);
  return out;
}

std::pair<OperationTree, ConstVec> parse_formula(const std::string& s,
                                                 const OperatorVocab& vocab) {
  Parser p{s, vocab};
  TreeNode root = p.expr(0);
  p.skip_ws();
  if (p.pos != s.size()) p.fail("end of input");

  OperationTree t;
  t.root = std::move(root);
  int next = 0;
  assign_slots_preorder(t.root, vocab, next);
  t.n_consts = next;
  t.n_nodes = 0;
  std::set<int> vars;
  gather_meta(t.root, vocab, t.n_nodes, vars);
  t.var_dims_used.assign(vars.begin(), vars.end());
  return {std::move(t), ConstVec::visible(std::move(p.const_values))};
}

}  // namespace optree
