#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "optree/tree.hpp"

namespace optree {

struct MeshGrid {
  std::vector<double> scales;  // half-widths, one per channel
  int dims = 1;
  int points_per_dim = 64;
  // coordinates[s][j] is the per-axis grid for channel s, axis j
  std::vector<std::vector<std::vector<double>>> coordinates;

  int n_channels() const { return static_cast<int>(scales.size()); }
  int entries_per_channel() const {
    int n = 1;
    for (int j = 0; j < dims; ++j) n *= points_per_dim;
    return n;
  }
  // row-major [entries x dims] cartesian product for one channel
  std::vector<double> channel_points(int s) const;
};

MeshGrid build_meshgrid(const std::vector<double>& scales, int dims, int points_per_dim);

struct FuncImage {
  int n_channels = 0;
  int entries = 0;  // per channel
  std::vector<double> values;        // [n_channels * entries]
  std::vector<std::uint8_t> finite_mask;
  double noise_sigma = 0.0;
  bool standardized = true;

  double at(int s, int e) const { return values[s * entries + e]; }
};

struct RenderOptions {
  bool standardize = true;
  double min_finite_frac = 0.5;
};

// Evaluates the tree on each channel's cartesian grid, adds Gaussian noise to
// finite entries, zero-fills non-finite entries (mask cleared), then applies
// per-channel standardization over finite entries.
FuncImage render_image(const OperationTree& tree, const ConstVec& consts, const MeshGrid& grid,
                       double noise_sigma, std::uint64_t seed, const OperatorVocab& vocab,
                       const RenderOptions& opts = {});

// float32 blob + JSON sidecar (shape, scales, sigma, seed, mask RLE)
void save_image(const FuncImage& img, const MeshGrid& grid, std::uint64_t seed,
                const std::string& path_prefix);
FuncImage load_image(const std::string& path_prefix);

}  // namespace optree
