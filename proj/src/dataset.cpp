#include "optree/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "optree/formula.hpp"
#include "optree/rng.hpp"

namespace optree {

namespace {

nlohmann::json mask_rle(const std::vector<std::uint8_t>& mask) {
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

std::uint64_t file_hash(const std::string& path, std::uint64_t h0) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot hash " + path);
  std::uint64_t h = h0;
  char buf[4096];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i)
      h = (h ^ static_cast<unsigned char>(buf[i])) * 0x100000001b3ULL;
  }
  return h;
}

nlohmann::ordered_json grid_json(const MeshGrid& g) {
  nlohmann::ordered_json j;
  j["scales"] = g.scales;
  j["dims"] = g.dims;
  j["points_per_dim"] = g.points_per_dim;
  return j;
}

MeshGrid grid_from_json(const nlohmann::json& j) {
  return build_meshgrid(j.at("scales").get<std::vector<double>>(), j.at("dims").get<int>(),
                        j.at("points_per_dim").get<int>());
}

}  // namespace

DatasetManifest dataset_generate(const GenConfig& cfg, const MeshGrid& grid, int n_skeletons,
                                 int images_per_skeleton, double noise_sigma, int k_max,
                                 const std::string& out_dir) {
  if (n_skeletons < 1 || images_per_skeleton < 1)
    throw ConfigError("dataset counts must be positive");
  auto vocab = OperatorVocab::standard(cfg.var_count);
  std::filesystem::create_directories(out_dir);
  std::ofstream idx(out_dir + "/index.jsonl");
  std::ofstream blob(out_dir + "/images.f32", std::ios::binary);
  if (!idx || !blob) throw IoError("cannot write dataset in " + out_dir);
  idx.precision(17);

  std::uint64_t offset = 0;
  int written = 0;
  for (int s = 0; s < n_skeletons; ++s) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 1000) throw SampleError("could not find a renderable skeleton");
      std::uint64_t skel_seed = mix64(cfg.seed, 0x5EEDULL, static_cast<std::uint64_t>(s),
                                      static_cast<std::uint64_t>(attempt));
      OperationTree tree;
      try {
        tree = sample_tree(vocab, cfg, skel_seed);
      } catch (const SampleError&) {
        continue;
      }
      Ots ots = tree_to_ots(tree, vocab, k_max);

      struct Rendered {
        ConstVec consts;
        FuncImage img;
        std::string formula;
        std::uint64_t render_seed;
        std::uint64_t const_seed;
      };
      std::vector<Rendered> batch;
      bool ok = true;
      for (int i = 0; i < images_per_skeleton; ++i) {
        std::uint64_t const_seed = mix64(cfg.seed, 0xC0ULL, static_cast<std::uint64_t>(s),
                                         static_cast<std::uint64_t>(attempt),
                                         static_cast<std::uint64_t>(i));
        Rng rng(const_seed);
        std::vector<double> vals(tree.n_consts);
        for (auto& v : vals) v = rng.uniform(-2.0, 2.0);
        ConstVec consts = ConstVec::visible(vals);
        std::uint64_t render_seed = mix64(cfg.seed, 0x1731ULL, static_cast<std::uint64_t>(s),
                                          static_cast<std::uint64_t>(attempt),
                                          static_cast<std::uint64_t>(i));
        try {
          FuncImage img = render_image(tree, consts, grid, noise_sigma, render_seed, vocab);
          batch.push_back({consts, std::move(img), tree_to_formula(tree, consts, vocab),
                           render_seed, const_seed});
        } catch (const DegenerateImageError&) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;

      for (const auto& r : batch) {
        nlohmann::ordered_json j;
        j["skeleton"] = s;
        j["ots"] = ots.depadded();
        j["consts"] = r.consts.values;
        j["formula"] = r.formula;
        j["node_count"] = tree.n_nodes;
        j["seed"] = r.render_seed;
        j["const_seed"] = r.const_seed;
        j["image"] = {{"offset", offset},
                      {"sigma", r.img.noise_sigma},
                      {"standardized", r.img.standardized},
                      {"mask_rle", mask_rle(r.img.finite_mask)}};
        idx << j.dump() << "\n";
        for (double v : r.img.values) {
          float f = static_cast<float>(v);
          blob.write(reinterpret_cast<const char*>(&f), sizeof(f));
        }
        offset += r.img.values.size() * sizeof(float);
        ++written;
      }
      break;
    }
  }
  idx.close();
  blob.close();

  DatasetManifest m;
  m.n_skeletons = n_skeletons;
  m.images_per_skeleton = images_per_skeleton;
  m.n_records = written;
  m.k_max = k_max;
  m.noise_sigma = noise_sigma;
  m.gen = cfg;
  m.grid = grid;
  m.content_hash =
      file_hash(out_dir + "/images.f32", file_hash(out_dir + "/index.jsonl", 0xcbf29ce484222325ULL));

  nlohmann::ordered_json j;
  j["n_skeletons"] = m.n_skeletons;
  j["images_per_skeleton"] = m.images_per_skeleton;
  j["n_records"] = m.n_records;
  j["k_max"] = m.k_max;
  j["noise_sigma"] = m.noise_sigma;
  j["content_hash"] = m.content_hash;
  j["gen"] = {{"node_min", cfg.node_min},     {"node_max", cfg.node_max},
              {"var_count", cfg.var_count},   {"p_const_leaf", cfg.p_const_leaf},
              {"max_consts", cfg.max_consts}, {"seed", cfg.seed}};
  j["grid"] = grid_json(grid);
  std::ofstream mf(out_dir + "/manifest.json");
  if (!mf) throw IoError("cannot write manifest in " + out_dir);
  mf << j.dump(2) << "\n";
  return m;
}

DatasetManifest load_manifest(const std::string& dir) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw IoError("cannot read manifest in " + dir);
  nlohmann::json j;
  mf >> j;
  DatasetManifest m;
  m.n_skeletons = j.at("n_skeletons");
  m.images_per_skeleton = j.at("images_per_skeleton");
  m.n_records = j.at("n_records");
  m.k_max = j.at("k_max");
  m.noise_sigma = j.at("noise_sigma");
  m.content_hash = j.at("content_hash");
  m.gen.node_min = j["gen"].at("node_min");
  m.gen.node_max = j["gen"].at("node_max");
  m.gen.var_count = j["gen"].at("var_count");
  m.gen.p_const_leaf = j["gen"].at("p_const_leaf");
  m.gen.max_consts = j["gen"].at("max_consts");
  m.gen.seed = j["gen"].at("seed");
  m.grid = grid_from_json(j.at("grid"));
  return m;
}

std::vector<Triple> load_dataset(const std::string& dir) {
  auto m = load_manifest(dir);
  std::ifstream idx(dir + "/index.jsonl");
  std::ifstream blob(dir + "/images.f32", std::ios::binary);
  if (!idx || !blob) throw IoError("cannot read dataset in " + dir);
  int n_channels = m.grid.n_channels();
  int entries = m.grid.entries_per_channel();
  std::size_t total = static_cast<std::size_t>(n_channels) * entries;

  std::vector<Triple> data;
  std::string line;
  while (std::getline(idx, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    Triple x;
    auto ids = j.at("ots").get<std::vector<int>>();
    x.ots.true_len = static_cast<int>(ids.size());
    x.ots.ids.assign(static_cast<std::size_t>(m.k_max), 1);
    for (std::size_t i = 0; i < ids.size(); ++i) x.ots.ids[i] = ids[i];
    x.consts = ConstVec::visible(j.at("consts").get<std::vector<double>>());
    x.formula = j.at("formula").get<std::string>();
    x.img.n_channels = n_channels;
    x.img.entries = entries;
    x.img.noise_sigma = j["image"].at("sigma");
    x.img.standardized = j["image"].at("standardized");
    x.img.finite_mask = mask_from_rle(j["image"].at("mask_rle"), total);
    x.img.values.resize(total);
    blob.seekg(static_cast<std::streamoff>(j["image"].at("offset").get<std::uint64_t>()));
    for (std::size_t i = 0; i < total; ++i) {
      float f;
      blob.read(reinterpret_cast<char*>(&f), sizeof(f));
      x.img.values[i] = f;
    }
    if (!blob) throw IoError("dataset blob truncated");
    data.push_back(std::move(x));
  }
  if (static_cast<int>(data.size()) != m.n_records)
    throw IoError("dataset record count does not match manifest");
  return data;
}

}  // namespace optree
