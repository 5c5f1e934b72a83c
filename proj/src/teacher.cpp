#include "optree/teacher.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "optree/rng.hpp"

namespace optree {

const std::vector<std::string>& formula_symbol_table() {
  static const std::vector<std::string> table = [] {
    std::vector<std::string> t;
    for (const char* n : {"sqrt", "tanh", "sin", "cos", "exp", "log", "neg", "abs"})
      t.push_back(n);
    for (int v = 1; v <= 9; ++v) t.push_back("x" + std::to_string(v));
    t.push_back("x");
    for (char c = '0'; c <= '9'; ++c) t.push_back(std::string(1, c));
    for (const char* n : {"(", ")", "+", "-", "*", "/", "^", ".", " ", "e", "E"})
      t.push_back(n);
    return t;
  }();
  return table;
}

std::vector<int> formula_tokenize(const std::string& s) {
  if (s.empty()) throw TokenizeError("empty formula string");
  const auto& table = formula_symbol_table();
  std::vector<int> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    int best = -1;
    std::size_t best_len = 0;
    for (std::size_t i = 0; i < table.size(); ++i) {
      const auto& sym = table[i];
      if (sym.size() > best_len && s.compare(pos, sym.size(), sym) == 0) {
        best = static_cast<int>(i);
        best_len = sym.size();
      }
    }
    if (best < 0)
      throw TokenizeError("untokenizable byte at offset " + std::to_string(pos) + ": '" +
                          s.substr(pos, 1) + "'");
    out.push_back(best);
    pos += best_len;
  }
  return out;
}

std::string formula_detokenize(const std::vector<int>& ids) {
  const auto& table = formula_symbol_table();
  std::string s;
  for (int id : ids) s += table.at(id);
  return s;
}

HashTeacher::HashTeacher(int hidden_width, std::uint64_t seed)
    : width_(hidden_width), seed_(seed) {
  if (hidden_width < 1) throw ConfigError("teacher hidden width must be positive");
}

std::string HashTeacher::id() const {
  return "hash-v1:D=" + std::to_string(width_) + ":seed=" + std::to_string(seed_);
}

TeacherHidden HashTeacher::extract(const std::string& formula) const {
  auto toks = formula_tokenize(formula);
  int n = static_cast<int>(toks.size());
  // per-token embedding from (prev, tok, next) trigram hash
  std::vector<double> emb(static_cast<std::size_t>(n) * width_);
  for (int i = 0; i < n; ++i) {
    std::uint64_t prev = i > 0 ? static_cast<std::uint64_t>(toks[i - 1] + 1) : 0;
    std::uint64_t next = i + 1 < n ? static_cast<std::uint64_t>(toks[i + 1] + 1) : 0;
    Rng rng(mix64(seed_, prev, static_cast<std::uint64_t>(toks[i] + 1), next));
    for (int j = 0; j < width_; ++j) emb[static_cast<std::size_t>(i) * width_ + j] = rng.normal();
  }
  // fixed orthogonal mixing across positions (seeded QR via Gram-Schmidt)
  std::vector<double> q(static_cast<std::size_t>(n) * n);
  {
    Rng rng(mix64(seed_, 0x4f525448ULL, static_cast<std::uint64_t>(n)));
    for (auto& v : q) v = rng.normal();
    for (int i = 0; i < n; ++i) {
      double* qi = &q[static_cast<std::size_t>(i) * n];
      for (int k = 0; k < i; ++k) {
        const double* qk = &q[static_cast<std::size_t>(k) * n];
        double dot = 0;
        for (int j = 0; j < n; ++j) dot += qi[j] * qk[j];
        for (int j = 0; j < n; ++j) qi[j] -= dot * qk[j];
      }
      double norm = 0;
      for (int j = 0; j < n; ++j) norm += qi[j] * qi[j];
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        qi[i % n] = 1.0;  // extremely unlikely; keep deterministic
        norm = 1.0;
      }
      for (int j = 0; j < n; ++j) qi[j] /= norm;
    }
  }
  TeacherHidden h;
  h.rows = n;
  h.cols = width_;
  h.teacher_id = id();
  h.v.resize(static_cast<std::size_t>(n) * width_);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < width_; ++j) {
      double acc = 0;
      for (int k = 0; k < n; ++k)
        acc += q[static_cast<std::size_t>(i) * n + k] * emb[static_cast<std::size_t>(k) * width_ + j];
      h.v[static_cast<std::size_t>(i) * width_ + j] = static_cast<float>(acc);
    }
  return h;
}

ConstantTeacher::ConstantTeacher(int hidden_width, int rows, std::uint64_t seed) {
  hidden_.rows = rows;
  hidden_.cols = hidden_width;
  hidden_.teacher_id = "constant-stub";
  Rng rng(mix64(seed, 0x53545542ULL));
  hidden_.v.resize(static_cast<std::size_t>(rows) * hidden_width);
  for (auto& v : hidden_.v) v = static_cast<float>(rng.normal());
}

TeacherHidden ConstantTeacher::extract(const std::string& formula) const {
  formula_tokenize(formula);  // still rejects untokenizable input
  return hidden_;
}

TeacherStore::TeacherStore(const std::string& dir) : dir_(dir) {
  std::ifstream idx(dir + "/index.jsonl");
  if (!idx) throw IoError("cannot read teacher index in " + dir);
  std::string line;
  while (std::getline(idx, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    Entry e{j.at("rows").get<int>(), j.at("offset").get<std::uint64_t>()};
    int cols = j.at("cols").get<int>();
    if (cols_ == 0) cols_ = cols;
    if (cols != cols_) throw ShapeError("teacher store has mixed hidden widths");
    index_[j.at("key").get<std::string>()] = e;
  }
}

TeacherHidden TeacherStore::extract(const std::string& formula) const {
  auto it = index_.find(formula);
  if (it == index_.end()) throw MissingKeyError("formula not in teacher store: " + formula);
  std::ifstream blob(dir_ + "/features.f32", std::ios::binary);
  if (!blob) throw IoError("cannot read teacher blob in " + dir_);
  TeacherHidden h;
  h.rows = it->second.rows;
  h.cols = cols_;
  h.teacher_id = id();
  h.v.resize(static_cast<std::size_t>(h.rows) * h.cols);
  blob.seekg(static_cast<std::streamoff>(it->second.offset));
  blob.read(reinterpret_cast<char*>(h.v.data()),
            static_cast<std::streamsize>(h.v.size() * sizeof(float)));
  if (!blob) throw IoError("teacher blob truncated");
  return h;
}

void TeacherStore::export_teacher(const Teacher& t, const std::vector<std::string>& formulas,
                                  const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream idx(dir + "/index.jsonl");
  std::ofstream blob(dir + "/features.f32", std::ios::binary);
  if (!idx || !blob) throw IoError("cannot write teacher store in " + dir);
  std::uint64_t offset = 0;
  for (const auto& f : formulas) {
    auto h = t.extract(f);
    nlohmann::ordered_json j;
    j["key"] = f;
    j["rows"] = h.rows;
    j["cols"] = h.cols;
    j["offset"] = offset;
    idx << j.dump() << "\n";
    blob.write(reinterpret_cast<const char*>(h.v.data()),
               static_cast<std::streamsize>(h.v.size() * sizeof(float)));
    offset += h.v.size() * sizeof(float);
  }
}

}  // namespace optree
