#include "optree/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "optree/rng.hpp"

namespace optree {

ParamEntry& ParamStore::add(const std::string& name, int r, int c, bool trainable) {
  if (map_.count(name)) throw ConfigError("duplicate param " + name);
  ParamEntry e;
  e.value = Mat(r, c);
  e.grad = Mat(r, c);
  e.adam_m = Mat(r, c);
  e.adam_v = Mat(r, c);
  e.trainable = trainable;
  order_.push_back(name);
  return map_[name] = std::move(e);
}

ParamEntry& ParamStore::add_gaussian(const std::string& name, int r, int c, double std,
                                     Rng& rng, bool trainable) {
  auto& e = add(name, r, c, trainable);
  for (auto& v : e.value.a) v = std * rng.normal();
  return e;
}

ParamEntry& ParamStore::at(const std::string& name) {
  auto it = map_.find(name);
  if (it == map_.end()) throw ConfigError("unknown param " + name);
  return it->second;
}

const ParamEntry& ParamStore::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw ConfigError("unknown param " + name);
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& name : order_) {
    auto& g = map_[name].grad.a;
    std::fill(g.begin(), g.end(), 0.0);
  }
}

void ParamStore::adam_step(double lr, double beta1, double beta2, double eps, std::int64_t t) {
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (auto& name : order_) {
    auto& e = map_[name];
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.value.a.size(); ++i) {
      double g = e.grad.a[i];
      e.adam_m.a[i] = beta1 * e.adam_m.a[i] + (1 - beta1) * g;
      e.adam_v.a[i] = beta2 * e.adam_v.a[i] + (1 - beta2) * g * g;
      double mhat = e.adam_m.a[i] / bc1;
      double vhat = e.adam_v.a[i] / bc2;
      e.value.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& name : order_) {
    const auto& e = map_.at(name);
    if (e.trainable) n += e.value.size();
  }
  return n;
}

int Tape::make(Mat val, bool rg, std::function<void(Tape&, int)> back) {
  Node n;
  n.val = std::move(val);
  n.rg = rg;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::ensure_grad(int h) {
  auto& n = nodes_[h];
  if (n.grad.r != n.val.r || n.grad.c != n.val.c) n.grad = Mat(n.val.r, n.val.c);
}

int Tape::constant(Mat m) { return make(std::move(m), false, nullptr); }

int Tape::param(ParamStore& ps, const std::string& name) {
  auto& e = ps.at(name);
  int h = make(e.value, e.trainable, nullptr);
  nodes_[h].param_name = name;
  return h;
}

int Tape::matmul(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.c != B.r) throw ShapeError("matmul shape mismatch");
  Mat C(A.r, B.c);
  for (int i = 0; i < A.r; ++i)
    for (int k = 0; k < A.c; ++k) {
      double aik = A.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = &B.a[static_cast<std::size_t>(k) * B.c];
      double* crow = &C.a[static_cast<std::size_t>(i) * C.c];
      for (int j = 0; j < B.c; ++j) crow[j] += aik * brow[j];
    }
  bool rg = requires_grad(a) || requires_grad(b);
  return make(std::move(C), rg, [a, b](Tape& t, int out) {
    const Mat& G = t.grad(out);
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    if (t.requires_grad(a)) {
      Mat& dA = t.grad(a);
      for (int i = 0; i < A.r; ++i)
        for (int j = 0; j < B.c; ++j) {
          double g = G.at(i, j);
          if (g == 0.0) continue;
          for (int k = 0; k < A.c; ++k) dA.at(i, k) += g * B.at(k, j);
        }
    }
    if (t.requires_grad(b)) {
      Mat& dB = t.grad(b);
      for (int i = 0; i < A.r; ++i)
        for (int k = 0; k < A.c; ++k) {
          double aik = A.at(i, k);
          if (aik == 0.0) continue;
          const double* grow = &G.a[static_cast<std::size_t>(i) * G.c];
          double* brow = &dB.a[static_cast<std::size_t>(k) * dB.c];
          for (int j = 0; j < G.c; ++j) brow[j] += aik * grow[j];
        }
    }
  });
}

int Tape::transpose(int a) {
  const Mat& A = val(a);
  Mat C(A.c, A.r);
  for (int i = 0; i < A.r; ++i)
    for (int j = 0; j < A.c; ++j) C.at(j, i) = A.at(i, j);
  return make(std::move(C), requires_grad(a), [a](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    const Mat& G = t.grad(out);
    Mat& dA = t.grad(a);
    for (int i = 0; i < G.r; ++i)
      for (int j = 0; j < G.c; ++j) dA.at(j, i) += G.at(i, j);
  });
}

int Tape::add(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.r != B.r || A.c != B.c) throw ShapeError("add shape mismatch");
  Mat C = A;
  for (std::size_t i = 0; i < C.a.size(); ++i) C.a[i] += B.a[i];
  return make(std::move(C), requires_grad(a) || requires_grad(b), [a, b](Tape& t, int out) {
    const Mat& G = t.grad(out);
    if (t.requires_grad(a)) {
      Mat& dA = t.grad(a);
      for (std::size_t i = 0; i < G.a.size(); ++i) dA.a[i] += G.a[i];
    }
    if (t.requires_grad(b)) {
      Mat& dB = t.grad(b);
      for (std::size_t i = 0; i < G.a.size(); ++i) dB.a[i] += G.a[i];
    }
  });
}

int Tape::sub(int a, int b) { return add(a, scale(b, -1.0)); }

int Tape::add_rowvec(int a, int row) {
  const Mat& A = val(a);
  const Mat& R = val(row);
  if (R.r != 1 || R.c != A.c) throw ShapeError("add_rowvec shape mismatch");
  Mat C = A;
  for (int i = 0; i < A.r; ++i)
    for (int j = 0; j < A.c; ++j) C.at(i, j) += R.at(0, j);
  return make(std::move(C), requires_grad(a) || requires_grad(row), [a, row](Tape& t, int out) {
    const Mat& G = t.grad(out);
    if (t.requires_grad(a)) {
      Mat& dA = t.grad(a);
      for (std::size_t i = 0; i < G.a.size(); ++i) dA.a[i] += G.a[i];
    }
    if (t.requires_grad(row)) {
      Mat& dR = t.grad(row);
      for (int i = 0; i < G.r; ++i)
        for (int j = 0; j < G.c; ++j) dR.at(0, j) += G.at(i, j);
    }
  });
}

int Tape::mul_elem(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.r != B.r || A.c != B.c) throw ShapeError("mul_elem shape mismatch");
  Mat C = A;
  for (std::size_t i = 0; i < C.a.size(); ++i) C.a[i] *= B.a[i];
  return make(std::move(C), requires_grad(a) || requires_grad(b), [a, b](Tape& t, int out) {
    const Mat& G = t.grad(out);
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    if (t.requires_grad(a)) {
      Mat& dA = t.grad(a);
      for (std::size_t i = 0; i < G.a.size(); ++i) dA.a[i] += G.a[i] * B.a[i];
    }
    if (t.requires_grad(b)) {
      Mat& dB = t.grad(b);
      for (std::size_t i = 0; i < G.a.size(); ++i) dB.a[i] += G.a[i] * A.a[i];
    }
  });
}

int Tape::scale(int a, double s) {
  Mat C = val(a);
  for (auto& v : C.a) v *= s;
  return make(std::move(C), requires_grad(a), [a, s](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    const Mat& G = t.grad(out);
    Mat& dA = t.grad(a);
    for (std::size_t i = 0; i < G.a.size(); ++i) dA.a[i] += s * G.a[i];
  });
}

int Tape::tanh_op(int a) {
  Mat C = val(a);
  for (auto& v : C.a) v = std::tanh(v);
  return make(std::move(C), requires_grad(a), [a](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    const Mat& G = t.grad(out);
    const Mat& Y = t.val(out);
    Mat& dA = t.grad(a);
    for (std::size_t i = 0; i < G.a.size(); ++i) dA.a[i] += G.a[i] * (1.0 - Y.a[i] * Y.a[i]);
  });
}

int Tape::softmax_rows(int a, const Mat* additive_mask) {
  const Mat& A = val(a);
  Mat C(A.r, A.c);
  for (int i = 0; i < A.r; ++i) {
    double mx = -1e300;
    for (int j = 0; j < A.c; ++j) {
      double z = A.at(i, j) + (additive_mask ? additive_mask->at(i, j) : 0.0);
      C.at(i, j) = z;
      mx = std::max(mx, z);
    }
    double sum = 0;
    for (int j = 0; j < A.c; ++j) {
      C.at(i, j) = std::exp(C.at(i, j) - mx);
      sum += C.at(i, j);
    }
    for (int j = 0; j < A.c; ++j) C.at(i, j) /= sum;
  }
  return make(std::move(C), requires_grad(a), [a](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    const Mat& G = t.grad(out);
    const Mat& Y = t.val(out);
    Mat& dA = t.grad(a);
    for (int i = 0; i < G.r; ++i) {
      double dot = 0;
      for (int j = 0; j < G.c; ++j) dot += G.at(i, j) * Y.at(i, j);
      for (int j = 0; j < G.c; ++j) dA.at(i, j) += Y.at(i, j) * (G.at(i, j) - dot);
    }
  });
}

int Tape::layernorm_rows(int x, int gain, int bias, double eps) {
  const Mat& X = val(x);
  const Mat& Gn = val(gain);
  const Mat& B = val(bias);
  if (Gn.r != 1 || Gn.c != X.c || B.r != 1 || B.c != X.c)
    throw ShapeError("layernorm gain/bias shape mismatch");
  Mat C(X.r, X.c);
  for (int i = 0; i < X.r; ++i) {
    double mean = 0;
    for (int j = 0; j < X.c; ++j) mean += X.at(i, j);
    mean /= X.c;
    double var = 0;
    for (int j = 0; j < X.c; ++j) {
      double d = X.at(i, j) - mean;
      var += d * d;
    }
    var /= X.c;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < X.c; ++j)
      C.at(i, j) = (X.at(i, j) - mean) * inv * Gn.at(0, j) + B.at(0, j);
  }
  bool rg = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
  return make(std::move(C), rg, [x, gain, bias, eps](Tape& t, int out) {
    const Mat& G = t.grad(out);
    const Mat& X = t.val(x);
    const Mat& Gn = t.val(gain);
    int n = X.c;
    for (int i = 0; i < X.r; ++i) {
      double mean = 0;
      for (int j = 0; j < n; ++j) mean += X.at(i, j);
      mean /= n;
      double var = 0;
      for (int j = 0; j < n; ++j) {
        double d = X.at(i, j) - mean;
        var += d * d;
      }
      var /= n;
      double inv = 1.0 / std::sqrt(var + eps);
      if (t.requires_grad(gain) || t.requires_grad(bias)) {
        for (int j = 0; j < n; ++j) {
          double xhat = (X.at(i, j) - mean) * inv;
          if (t.requires_grad(gain)) t.grad(gain).at(0, j) += G.at(i, j) * xhat;
          if (t.requires_grad(bias)) t.grad(bias).at(0, j) += G.at(i, j);
        }
      }
      if (t.requires_grad(x)) {
        double sum_gy = 0, sum_gyx = 0;
        for (int j = 0; j < n; ++j) {
          double gy = G.at(i, j) * Gn.at(0, j);
          double xhat = (X.at(i, j) - mean) * inv;
          sum_gy += gy;
          sum_gyx += gy * xhat;
        }
        Mat& dX = t.grad(x);
        for (int j = 0; j < n; ++j) {
          double gy = G.at(i, j) * Gn.at(0, j);
          double xhat = (X.at(i, j) - mean) * inv;
          dX.at(i, j) += inv * (gy - sum_gy / n - xhat * sum_gyx / n);
        }
      }
    }
  });
}

int Tape::slice_rows(int a, int r0, int r1) {
  const Mat& A = val(a);
  if (r0 < 0 || r1 > A.r || r0 >= r1) throw ShapeError("slice_rows out of range");
  Mat C(r1 - r0, A.c);
  std::copy(A.a.begin() + static_cast<std::size_t>(r0) * A.c,
            A.a.begin() + static_cast<std::size_t>(r1) * A.c, C.a.begin());
  return make(std::move(C), requires_grad(a), [a, r0](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    const Mat& G = t.grad(out);
    Mat& dA = t.grad(a);
    for (int i = 0; i < G.r; ++i)
      for (int j = 0; j < G.c; ++j) dA.at(r0 + i, j) += G.at(i, j);
  });
}

int Tape::slice_cols(int a, int c0, int c1) {
  const Mat& A = val(a);
  if (c0 < 0 || c1 > A.c || c0 >= c1) throw ShapeError("slice_cols out of range");
  Mat C(A.r, c1 - c0);
  for (int i = 0; i < A.r; ++i)
    for (int j = c0; j < c1; ++j) C.at(i, j - c0) = A.at(i, j);
  return make(std::move(C), requires_grad(a), [a, c0](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    const Mat& G = t.grad(out);
    Mat& dA = t.grad(a);
    for (int i = 0; i < G.r; ++i)
      for (int j = 0; j < G.c; ++j) dA.at(i, c0 + j) += G.at(i, j);
  });
}

int Tape::concat_rows(const std::vector<int>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows on empty list");
  int cols = val(parts[0]).c, rows = 0;
  bool rg = false;
  for (int p : parts) {
    if (val(p).c != cols) throw ShapeError("concat_rows col mismatch");
    rows += val(p).r;
    rg = rg || requires_grad(p);
  }
  Mat C(rows, cols);
  int off = 0;
  for (int p : parts) {
    const Mat& A = val(p);
    std::copy(A.a.begin(), A.a.end(), C.a.begin() + static_cast<std::size_t>(off) * cols);
    off += A.r;
  }
  auto parts_copy = parts;
  return make(std::move(C), rg, [parts_copy](Tape& t, int out) {
    const Mat& G = t.grad(out);
    int off = 0;
    for (int p : parts_copy) {
      const Mat& A = t.val(p);
      if (t.requires_grad(p)) {
        Mat& dA = t.grad(p);
        for (int i = 0; i < A.r; ++i)
          for (int j = 0; j < A.c; ++j) dA.at(i, j) += G.at(off + i, j);
      }
      off += A.r;
    }
  });
}

int Tape::concat_cols(const std::vector<int>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols on empty list");
  int rows = val(parts[0]).r, cols = 0;
  bool rg = false;
  for (int p : parts) {
    if (val(p).r != rows) throw ShapeError("concat_cols row mismatch");
    cols += val(p).c;
    rg = rg || requires_grad(p);
  }
  Mat C(rows, cols);
  int off = 0;
  for (int p : parts) {
    const Mat& A = val(p);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < A.c; ++j) C.at(i, off + j) = A.at(i, j);
    off += A.c;
  }
  auto parts_copy = parts;
  return make(std::move(C), rg, [parts_copy](Tape& t, int out) {
    const Mat& G = t.grad(out);
    int off = 0;
    for (int p : parts_copy) {
      const Mat& A = t.val(p);
      if (t.requires_grad(p)) {
        Mat& dA = t.grad(p);
        for (int i = 0; i < A.r; ++i)
          for (int j = 0; j < A.c; ++j) dA.at(i, j) += G.at(i, off + j);
      }
      off += A.c;
    }
  });
}

int Tape::gather_rows(int table, std::vector<int> idx) {
  const Mat& T = val(table);
  Mat C(static_cast<int>(idx.size()), T.c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= T.r) throw ShapeError("gather_rows index out of range");
    for (int j = 0; j < T.c; ++j) C.at(static_cast<int>(i), j) = T.at(idx[i], j);
  }
  return make(std::move(C), requires_grad(table), [table, idx = std::move(idx)](Tape& t, int out) {
    if (!t.requires_grad(table)) return;
    const Mat& G = t.grad(out);
    Mat& dT = t.grad(table);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < G.c; ++j) dT.at(idx[i], j) += G.at(static_cast<int>(i), j);
  });
}

int Tape::sum_all(int a) {
  const Mat& A = val(a);
  Mat C(1, 1);
  for (double v : A.a) C.a[0] += v;
  return make(std::move(C), requires_grad(a), [a](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    double g = t.grad(out).a[0];
    Mat& dA = t.grad(a);
    for (auto& v : dA.a) v += g;
  });
}

int Tape::dot_all(int a, int b) {
  const Mat& A = val(a);
  const Mat& B = val(b);
  if (A.r != B.r || A.c != B.c) throw ShapeError("dot_all shape mismatch");
  Mat C(1, 1);
  for (std::size_t i = 0; i < A.a.size(); ++i) C.a[0] += A.a[i] * B.a[i];
  return make(std::move(C), requires_grad(a) || requires_grad(b), [a, b](Tape& t, int out) {
    double g = t.grad(out).a[0];
    const Mat& A = t.val(a);
    const Mat& B = t.val(b);
    if (t.requires_grad(a)) {
      Mat& dA = t.grad(a);
      for (std::size_t i = 0; i < A.a.size(); ++i) dA.a[i] += g * B.a[i];
    }
    if (t.requires_grad(b)) {
      Mat& dB = t.grad(b);
      for (std::size_t i = 0; i < A.a.size(); ++i) dB.a[i] += g * A.a[i];
    }
  });
}

int Tape::log_elem(int a) {
  Mat C = val(a);
  for (auto& v : C.a) v = std::log(v);
  return make(std::move(C), requires_grad(a), [a](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    const Mat& G = t.grad(out);
    const Mat& A = t.val(a);
    Mat& dA = t.grad(a);
    for (std::size_t i = 0; i < G.a.size(); ++i) dA.a[i] += G.a[i] / A.a[i];
  });
}

int Tape::exp_elem(int a) {
  Mat C = val(a);
  for (auto& v : C.a) v = std::exp(v);
  return make(std::move(C), requires_grad(a), [a](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    const Mat& G = t.grad(out);
    const Mat& Y = t.val(out);
    Mat& dA = t.grad(a);
    for (std::size_t i = 0; i < G.a.size(); ++i) dA.a[i] += G.a[i] * Y.a[i];
  });
}

int Tape::reciprocal(int a) {
  Mat C = val(a);
  for (auto& v : C.a) v = 1.0 / v;
  return make(std::move(C), requires_grad(a), [a](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    const Mat& G = t.grad(out);
    const Mat& Y = t.val(out);
    Mat& dA = t.grad(a);
    for (std::size_t i = 0; i < G.a.size(); ++i) dA.a[i] -= G.a[i] * Y.a[i] * Y.a[i];
  });
}

int Tape::logsumexp_row(int a) {
  const Mat& A = val(a);
  if (A.r != 1) throw ShapeError("logsumexp_row expects 1 x n");
  double mx = *std::max_element(A.a.begin(), A.a.end());
  double sum = 0;
  for (double v : A.a) sum += std::exp(v - mx);
  Mat C(1, 1);
  C.a[0] = mx + std::log(sum);
  return make(std::move(C), requires_grad(a), [a](Tape& t, int out) {
    if (!t.requires_grad(a)) return;
    double g = t.grad(out).a[0];
    double lse = t.val(out).a[0];
    const Mat& A = t.val(a);
    Mat& dA = t.grad(a);
    for (std::size_t i = 0; i < A.a.size(); ++i) dA.a[i] += g * std::exp(A.a[i] - lse);
  });
}

int Tape::scale_by(int a, int s) {
  const Mat& A = val(a);
  const Mat& S = val(s);
  if (S.r != 1 || S.c != 1) throw ShapeError("scale_by expects 1x1 scalar node");
  Mat C = A;
  for (auto& v : C.a) v *= S.a[0];
  return make(std::move(C), requires_grad(a) || requires_grad(s), [a, s](Tape& t, int out) {
    const Mat& G = t.grad(out);
    const Mat& A = t.val(a);
    double sv = t.val(s).a[0];
    if (t.requires_grad(a)) {
      Mat& dA = t.grad(a);
      for (std::size_t i = 0; i < G.a.size(); ++i) dA.a[i] += G.a[i] * sv;
    }
    if (t.requires_grad(s)) {
      double acc = 0;
      for (std::size_t i = 0; i < G.a.size(); ++i) acc += G.a[i] * A.a[i];
      t.grad(s).a[0] += acc;
    }
  });
}

int Tape::l2_normalize_row(int a) {
  const Mat& A = val(a);
  if (A.r != 1) throw ShapeError("l2_normalize_row expects 1 x n");
  double n2 = 0;
  for (double v : A.a) n2 += v * v;
  Mat C = A;
  bool degenerate = n2 < 1e-24;
  if (degenerate) {
    std::fill(C.a.begin(), C.a.end(), 0.0);
    if (!C.a.empty()) C.a[0] = 1.0;
  } else {
    double inv = 1.0 / std::sqrt(n2);
    for (auto& v : C.a) v *= inv;
  }
  return make(std::move(C), requires_grad(a), [a, degenerate](Tape& t, int out) {
    if (!t.requires_grad(a) || degenerate) return;
    const Mat& G = t.grad(out);
    const Mat& Y = t.val(out);
    const Mat& A = t.val(a);
    double norm = 0;
    for (double v : A.a) norm += v * v;
    norm = std::sqrt(norm);
    double dot = 0;
    for (std::size_t i = 0; i < G.a.size(); ++i) dot += G.a[i] * Y.a[i];
    Mat& dA = t.grad(a);
    for (std::size_t i = 0; i < G.a.size(); ++i)
      dA.a[i] += (G.a[i] - Y.a[i] * dot) / norm;
  });
}

int Tape::cross_entropy_rows(int logits, std::vector<int> targets, int active) {
  const Mat& L = val(logits);
  if (active > L.r || static_cast<int>(targets.size()) < active)
    throw ShapeError("cross_entropy_rows row count mismatch");
  Mat C(1, 1);
  for (int i = 0; i < active; ++i) {
    const double* row = &L.a[static_cast<std::size_t>(i) * L.c];
    double mx = row[0];
    for (int j = 1; j < L.c; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (int j = 0; j < L.c; ++j) sum += std::exp(row[j] - mx);
    C.a[0] += -(row[targets[i]] - mx - std::log(sum));
  }
  return make(std::move(C), requires_grad(logits),
              [logits, targets = std::move(targets), active](Tape& t, int out) {
                if (!t.requires_grad(logits)) return;
                double g = t.grad(out).a[0];
                const Mat& L = t.val(logits);
                Mat& dL = t.grad(logits);
                for (int i = 0; i < active; ++i) {
                  const double* row = &L.a[static_cast<std::size_t>(i) * L.c];
                  double mx = row[0];
                  for (int j = 1; j < L.c; ++j) mx = std::max(mx, row[j]);
                  double sum = 0;
                  for (int j = 0; j < L.c; ++j) sum += std::exp(row[j] - mx);
                  for (int j = 0; j < L.c; ++j) {
                    double p = std::exp(row[j] - mx) / sum;
                    dL.at(i, j) += g * (p - (j == targets[i] ? 1.0 : 0.0));
                  }
                }
              });
}

void Tape::backward(int loss) {
  const Mat& L = val(loss);
  if (L.r != 1 || L.c != 1) throw ShapeError("backward expects a scalar loss");
  for (auto& n : nodes_)
    if (n.rg) {
      n.grad = Mat(n.val.r, n.val.c);
    }
  if (!nodes_[loss].rg) return;  // nothing trainable upstream
  nodes_[loss].grad.a[0] = 1.0;
  for (int h = loss; h >= 0; --h) {
    auto& n = nodes_[h];
    if (n.rg && n.back) n.back(*this, h);
  }
}

void Tape::flush_param_grads(ParamStore& ps) {
  for (auto& n : nodes_) {
    if (n.param_name.empty() || !n.rg) continue;
    auto& e = ps.at(n.param_name);
    for (std::size_t i = 0; i < e.grad.a.size(); ++i) e.grad.a[i] += n.grad.a[i];
  }
}

}  // namespace optree
