#include "optree/funcimg.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "optree/rng.hpp"

namespace optree {

std::vector<double> MeshGrid::channel_points(int s) const {
  int n = entries_per_channel();
  std::vector<double> pts(static_cast<std::size_t>(n) * dims);
  for (int e = 0; e < n; ++e) {
    int rem = e;
    // last axis varies fastest
    for (int j = dims - 1; j >= 0; --j) {
      int idx = rem % points_per_dim;
      rem /= points_per_dim;
      pts[static_cast<std::size_t>(e) * dims + j] = coordinates[s][j][idx];
    }
  }
  return pts;
}

MeshGrid build_meshgrid(const std::vector<double>& scales, int dims, int points_per_dim) {
  if (scales.empty()) throw ConfigError("scales must be nonempty");
  for (double s : scales)
    if (!(s > 0)) throw ConfigError("scales must be positive");
  if (dims < 1) throw ConfigError("dims must be >= 1");
  if (points_per_dim < 2) throw ConfigError("points_per_dim must be >= 2");
  MeshGrid g;
  g.scales = scales;
  g.dims = dims;
  g.points_per_dim = points_per_dim;
  g.coordinates.resize(scales.size());
  for (std::size_t s = 0; s < scales.size(); ++s) {
    g.coordinates[s].resize(dims);
    for (int j = 0; j < dims; ++j) {
      auto& axis = g.coordinates[s][j];
      axis.resize(points_per_dim);
      for (int p = 0; p < points_per_dim; ++p)
        axis[p] = -scales[s] + 2.0 * scales[s] * p / (points_per_dim - 1);
    }
  }
  return g;
}

FuncImage render_image(const OperationTree& tree, const ConstVec& consts, const MeshGrid& grid,
                       double noise_sigma, std::uint64_t seed, const OperatorVocab& vocab,
                       const RenderOptions& opts) {
  if (!consts.all_visible()) throw MaskedConstError("render requires fully visible constants");
  FuncImage img;
  img.n_channels = grid.n_channels();
  img.entries = grid.entries_per_channel();
  img.noise_sigma = noise_sigma;
  img.standardized = opts.standardize;
  img.values.assign(static_cast<std::size_t>(img.n_channels) * img.entries, 0.0);
  img.finite_mask.assign(img.values.size(), 0);

  Rng rng(mix64(seed, 0x46494d47ULL));
  std::size_t finite_count = 0;
  for (int s = 0; s < img.n_channels; ++s) {
    auto pts = grid.channel_points(s);
    auto vals = eval_tree(tree, consts, pts, grid.dims, vocab);
    for (int e = 0; e < img.entries; ++e) {
      double noise = noise_sigma > 0 ? noise_sigma * rng.normal() : 0.0;
      double v = vals[e];
      std::size_t idx = static_cast<std::size_t>(s) * img.entries + e;
      if (std::isfinite(v)) {
        img.values[idx] = v + noise;
        img.finite_mask[idx] = 1;
        ++finite_count;
      }
    }
  }
  if (finite_count < opts.min_finite_frac * img.values.size())
    throw DegenerateImageError("finite coverage below threshold");

  if (opts.standardize) {
    for (int s = 0; s < img.n_channels; ++s) {
      double sum = 0, sum2 = 0;
      int n = 0;
      for (int e = 0; e < img.entries; ++e) {
        std::size_t idx = static_cast<std::size_t>(s) * img.entries + e;
        if (!img.finite_mask[idx]) continue;
        sum += img.values[idx];
        sum2 += img.values[idx] * img.values[idx];
        ++n;
      }
      if (n == 0) continue;
      double mean = sum / n;
      double var = sum2 / n - mean * mean;
      double sd = var > 1e-24 ? std::sqrt(var) : 1.0;
      for (int e = 0; e < img.entries; ++e) {
        std::size_t idx = static_cast<std::size_t>(s) * img.entries + e;
        if (img.finite_mask[idx]) img.values[idx] = (img.values[idx] - mean) / sd;
      }
    }
  }
  return img;
}

namespace {

nlohmann::json mask_rle(const std::vector<std::uint8_t>& mask) {
  // alternating run lengths, starting with the length of the initial "finite" run
  nlohmann::json runs = nlohmann::json::array();
  std::uint8_t cur = 1;
  std::size_t len = 0;
  for (std::uint8_t b : mask) {
    if (b == cur) {
      ++len;
    } else {
      runs.push_back(len);
      cur = b;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

std::vector<std::uint8_t> mask_from_rle(const nlohmann::json& runs, std::size_t total) {
  std::vector<std::uint8_t> mask;
  mask.reserve(total);
  std::uint8_t cur = 1;
  for (const auto& r : runs) {
    mask.insert(mask.end(), r.get<std::size_t>(), cur);
    cur = cur ? 0 : 1;
  }
  if (mask.size() != total) throw IoError("mask RLE does not cover image");
  return mask;
}

}  // namespace

void save_image(const FuncImage& img, const MeshGrid& grid, std::uint64_t seed,
                const std::string& path_prefix) {
  std::ofstream blob(path_prefix + ".f32", std::ios::binary);
  if (!blob) throw IoError("cannot write " + path_prefix + ".f32");
  for (double v : img.values) {
    float f = static_cast<float>(v);
    blob.write(reinterpret_cast<const char*>(&f), sizeof(f));
  }
  nlohmann::ordered_json j;
  j["shape"] = {img.n_channels, img.entries};
  j["scales"] = grid.scales;
  j["sigma"] = img.noise_sigma;
  j["seed"] = seed;
  j["standardized"] = img.standardized;
  j["mask_rle"] = mask_rle(img.finite_mask);
  std::ofstream side(path_prefix + ".json");
  if (!side) throw IoError("cannot write " + path_prefix + ".json");
  side << j.dump(2) << "\n";
}

FuncImage load_image(const std::string& path_prefix) {
  std::ifstream side(path_prefix + ".json");
  if (!side) throw IoError("cannot read " + path_prefix + ".json");
  nlohmann::json j;
  side >> j;
  FuncImage img;
  img.n_channels = j["shape"][0].get<int>();
  img.entries = j["shape"][1].get<int>();
  img.noise_sigma = j["sigma"].get<double>();
  img.standardized = j.value("standardized", true);
  std::size_t total = static_cast<std::size_t>(img.n_channels) * img.entries;
  img.finite_mask = mask_from_rle(j["mask_rle"], total);
  std::ifstream blob(path_prefix + ".f32", std::ios::binary);
  if (!blob) throw IoError("cannot read " + path_prefix + ".f32");
  img.values.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    float f;
    blob.read(reinterpret_cast<char*>(&f), sizeof(f));
    img.values[i] = f;
  }
  if (!blob) throw IoError("image blob truncated: " + path_prefix);
  return img;
}

}  // namespace optree
