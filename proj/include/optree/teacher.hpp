#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "optree/errors.hpp"

namespace optree {

// Frozen feature extractor output; float32 so export/import round-trips
// bit-exactly.
struct TeacherHidden {
  int rows = 0;  // token count N_m
  int cols = 0;  // hidden width D_m'
  std::vector<float> v;
  std::string teacher_id;

  float at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
};

// Greedy longest-match over a fixed symbol table; detokenize(tokenize(s)) == s
// for every string the canonical formula grammar can emit.
std::vector<int> formula_tokenize(const std::string& s);
std::string formula_detokenize(const std::vector<int>& ids);
const std::vector<std::string>& formula_symbol_table();

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual TeacherHidden extract(const std::string& formula) const = 0;
  virtual std::string id() const = 0;
  virtual int hidden_width() const = 0;
};

// Deterministic stand-in for a frozen language model: per-token Gaussian
// embeddings keyed by (token, trigram context) hash, mixed across positions by
// a seeded orthogonal transform.
class HashTeacher : public Teacher {
 public:
  HashTeacher(int hidden_width, std::uint64_t seed);
  TeacherHidden extract(const std::string& formula) const override;
  std::string id() const override;
  int hidden_width() const override { return width_; }

 private:
  int width_;
  std::uint64_t seed_;
};

// Constant-output stub; negative control for distillation.
class ConstantTeacher : public Teacher {
 public:
  ConstantTeacher(int hidden_width, int rows, std::uint64_t seed);
  TeacherHidden extract(const std::string& formula) const override;
  std::string id() const override { return "constant-stub"; }
  int hidden_width() const override { return hidden_.cols; }

 private:
  TeacherHidden hidden_;
};

// Directory with index.jsonl (key, rows, cols, offset) plus one packed
// float32 blob; keyed by the exact formula string.
class TeacherStore : public Teacher {
 public:
  explicit TeacherStore(const std::string& dir);
  TeacherHidden extract(const std::string& formula) const override;
  std::string id() const override { return "import:" + dir_; }
  int hidden_width() const override { return cols_; }

  static void export_teacher(const Teacher& t, const std::vector<std::string>& formulas,
                             const std::string& dir);

 private:
  std::string dir_;
  int cols_ = 0;
  struct Entry {
    int rows;
    std::uint64_t offset;
  };
  std::unordered_map<std::string, Entry> index_;
};

}  // namespace optree
