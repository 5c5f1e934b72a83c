#pragma once

#include <string>
#include <vector>

#include "optree/errors.hpp"

namespace optree {

enum class TokenKind { special, binary_op, unary_op, variable, const_placeholder };

struct TokenInfo {
  std::string name;
  TokenKind kind;
  int arity;      // 2 binary, 1 unary, 0 leaves and specials
  int var_index;  // 1-based for variables, 0 otherwise
};

// Token ids are dense in [1, size()] and stable for a given construction order.
class OperatorVocab {
 public:
  // Default inventory: specials {PAD,BOS,EOS,MASK}, binary {add,sub,mul,div,pow},
  // unary {neg,abs,sin,cos,tanh,exp,log,sqrt}, leaves {x1..xd, C}.
  static OperatorVocab standard(int var_count);

  int size() const { return static_cast<int>(tokens_.size()); }
  int var_count() const { return var_count_; }

  const TokenInfo& info(int id) const;
  bool valid_id(int id) const { return id >= 1 && id <= size(); }

  int pad() const { return pad_; }
  int bos() const { return bos_; }
  int eos() const { return eos_; }
  int mask() const { return mask_; }
  int const_id() const { return const_id_; }
  int var_id(int var_index) const;  // 1-based
  int id_of(const std::string& name) const;  // 0 if absent

  std::string to_json() const;  // token name -> id
  static OperatorVocab from_json(const std::string& text);

 private:
  std::vector<TokenInfo> tokens_;  // tokens_[i] has id i+1
  int var_count_ = 0;
  int pad_ = 0, bos_ = 0, eos_ = 0, mask_ = 0, const_id_ = 0;

  void rebuild_index();
};

}  // namespace optree
