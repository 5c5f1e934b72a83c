#include "optree/vocab.hpp"

#include <nlohmann/json.hpp>

namespace optree {

const char* to_string(ReconstructReason r) {
  switch (r) {
    case ReconstructReason::ok: return "ok";
    case ReconstructReason::dangling_children: return "dangling-children";
    case ReconstructReason::trailing_tokens: return "trailing-tokens";
    case ReconstructReason::unknown_token: return "unknown-token";
    case ReconstructReason::missing_eos: return "missing-EOS";
    case ReconstructReason::const_underflow: return "const-underflow";
  }
  return "?";
}

OperatorVocab OperatorVocab::standard(int var_count) {
  if (var_count < 1) throw ConfigError("var_count must be >= 1");
  OperatorVocab v;
  v.var_count_ = var_count;
  auto add = [&](const std::string& name, TokenKind kind, int arity, int vi = 0) {
    v.tokens_.push_back(TokenInfo{name, kind, arity, vi});
  };
  add("PAD", TokenKind::special, 0);
  add("BOS", TokenKind::special, 0);
  add("EOS", TokenKind::special, 0);
  add("MASK", TokenKind::special, 0);
  for (const char* n : {"add", "sub", "mul", "div", "pow"}) add(n, TokenKind::binary_op, 2);
  for (const char* n : {"neg", "abs", "sin", "cos", "tanh", "exp", "log", "sqrt"})
    add(n, TokenKind::unary_op, 1);
  for (int i = 1; i <= var_count; ++i)
    add("x" + std::to_string(i), TokenKind::variable, 0, i);
  add("C", TokenKind::const_placeholder, 0);
  v.rebuild_index();
  return v;
}

void OperatorVocab::rebuild_index() {
  pad_ = bos_ = eos_ = mask_ = const_id_ = 0;
  for (int i = 0; i < size(); ++i) {
    const auto& t = tokens_[i];
    int id = i + 1;
    if (t.name == "PAD") pad_ = id;
    if (t.name == "BOS") bos_ = id;
    if (t.name == "EOS") eos_ = id;
    if (t.name == "MASK") mask_ = id;
    if (t.kind == TokenKind::const_placeholder) const_id_ = id;
  }
  if (!pad_ || !bos_ || !eos_ || !mask_ || !const_id_)
    throw ConfigError("vocab missing required special or const-placeholder tokens");
}

const TokenInfo& OperatorVocab::info(int id) const {
  if (!valid_id(id)) throw ConfigError("token id out of range: " + std::to_string(id));
  return tokens_[id - 1];
}

int OperatorVocab::var_id(int var_index) const {
  for (int i = 0; i < size(); ++i)
    if (tokens_[i].kind == TokenKind::variable && tokens_[i].var_index == var_index) return i + 1;
  throw ConfigError("no variable with index " + std::to_string(var_index));
}

int OperatorVocab::id_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (tokens_[i].name == name) return i + 1;
  return 0;
}

std::string OperatorVocab::to_json() const {
  nlohmann::ordered_json j;
  for (int i = 0; i < size(); ++i) j[tokens_[i].name] = i + 1;
  return j.dump();
}

OperatorVocab OperatorVocab::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  std::vector<std::string> names(j.size());
  for (auto it = j.begin(); it != j.end(); ++it) {
    int id = it.value().get<int>();
    if (id < 1 || id > static_cast<int>(j.size()))
      throw ConfigError("vocab json ids are not dense 1..N_v");
    names[id - 1] = it.key();
  }
  OperatorVocab v;
  int var_count = 0;
  for (const auto& name : names) {
    TokenInfo t{name, TokenKind::special, 0, 0};
    if (name == "PAD" || name == "BOS" || name == "EOS" || name == "MASK") {
      t = {name, TokenKind::special, 0, 0};
    } else if (name == "add" || name == "sub" || name == "mul" || name == "div" || name == "pow") {
      t = {name, TokenKind::binary_op, 2, 0};
    } else if (name == "neg" || name == "abs" || name == "sin" || name == "cos" ||
               name == "tanh" || name == "exp" || name == "log" || name == "sqrt") {
      t = {name, TokenKind::unary_op, 1, 0};
    } else if (name == "C") {
      t = {name, TokenKind::const_placeholder, 0, 0};
    } else if (name.size() >= 2 && name[0] == 'x') {
      int vi = std::stoi(name.substr(1));
      t = {name, TokenKind::variable, 0, vi};
      var_count = std::max(var_count, vi);
    } else {
      throw ConfigError("unknown token name in vocab json: " + name);
    }
    v.tokens_.push_back(t);
  }
  v.var_count_ = var_count;
  v.rebuild_index();
  return v;
}

}  // namespace optree
