#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "optree/funcimg.hpp"
#include "optree/trainer.hpp"
#include "optree/tree.hpp"

namespace optree {

struct DatasetManifest {
  int n_skeletons = 0;
  int images_per_skeleton = 0;
  int n_records = 0;
  int k_max = 24;
  double noise_sigma = 0.001;
  std::uint64_t content_hash = 0;
  GenConfig gen;
  MeshGrid grid;
};

// Writes index.jsonl + images.f32 + manifest.json under out_dir. Every record
// is re-derivable from (ots, consts, seeds); skeletons whose rendering fails
// the finite-coverage gate are resampled.
DatasetManifest dataset_generate(const GenConfig& cfg, const MeshGrid& grid, int n_skeletons,
                                 int images_per_skeleton, double noise_sigma, int k_max,
                                 const std::string& out_dir);

DatasetManifest load_manifest(const std::string& dir);
std::vector<Triple> load_dataset(const std::string& dir);

}  // namespace optree
