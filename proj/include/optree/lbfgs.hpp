#pragma once

#include <cstdint>

#include "optree/funcimg.hpp"
#include "optree/tree.hpp"

namespace optree {

struct FitOptions {
  int max_iters = 200;
  int history = 10;
  int restarts = 4;  // first start is the supplied init
  double grad_tol = 1e-10;
  double c1 = 1e-4;  // strong Wolfe sufficient decrease
  double c2 = 0.9;   // strong Wolfe curvature
  std::uint64_t seed = 0;
};

struct FitResult {
  ConstVec consts;
  double mse = 0;
  int iters = 0;
  int restarts_used = 0;
};

// Fits the constants of a reconstructed skeleton to a target image by MSE
// over the finite-mask entries, comparing against a raw (non-standardized)
// rendering on the same grid.
FitResult fit_constants_lbfgs(const Ots& skeleton, const FuncImage& img, const MeshGrid& grid,
                              const ConstVec& init, const OperatorVocab& vocab,
                              const FitOptions& opts = {});

}  // namespace optree
