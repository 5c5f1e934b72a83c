#pragma once

#include <string>
#include <utility>

#include "optree/tree.hpp"

namespace optree {

// Canonical infix emission: full parenthesization of binary ops, function-call
// syntax for unary ops, constants at 17 significant digits, variables x1..xd.
std::string tree_to_formula(const OperationTree& tree, const ConstVec& consts,
                            const OperatorVocab& vocab);

// Inverse of the canonical grammar; also accepts un-parenthesized input with
// the usual precedence (+,- < *,/ < ^, ^ right-associative).
std::pair<OperationTree, ConstVec> parse_formula(const std::string& s,
                                                 const OperatorVocab& vocab);

}  // namespace optree
