#include "optree/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace optree {

namespace {

constexpr char kMagic[4] = {'O', 'P', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError("checkpoint truncated");
  return v;
}

void put_str(std::ostream& f, const std::string& s) {
  put(f, static_cast<std::uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& f) {
  auto n = get<std::uint32_t>(f);
  std::string s(n, '\0');
  f.read(s.data(), n);
  if (!f) throw IoError("checkpoint truncated");
  return s;
}

void put_vec(std::ostream& f, const std::vector<double>& v) {
  put(f, static_cast<std::uint64_t>(v.size()));
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_vec(std::istream& f) {
  auto n = get<std::uint64_t>(f);
  std::vector<double> v(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw IoError("checkpoint truncated");
  return v;
}

void put_queue(std::ostream& f, const FeatureQueue& q) {
  put(f, static_cast<std::int32_t>(q.capacity()));
  put(f, static_cast<std::int32_t>(q.dim()));
  put(f, static_cast<std::int32_t>(q.write_index()));
  put_vec(f, q.buffer());
}

FeatureQueue get_queue(std::istream& f, std::uint64_t seed) {
  auto cap = get<std::int32_t>(f);
  auto dim = get<std::int32_t>(f);
  auto wi = get<std::int32_t>(f);
  FeatureQueue q(cap, dim, seed);
  q.restore(get_vec(f), wi);
  return q;
}

}  // namespace

void save_checkpoint(const Model& model, const TrainState& state, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(kMagic, 4);
  put(f, kVersion);
  put_str(f, model.config().to_json());
  put(f, model.config().hash());
  put(f, static_cast<std::int64_t>(state.step));
  const auto& ps = model.params();
  put(f, static_cast<std::uint32_t>(ps.order().size()));
  for (const auto& name : ps.order()) {
    const auto& e = ps.at(name);
    put_str(f, name);
    put(f, static_cast<std::int32_t>(e.value.r));
    put(f, static_cast<std::int32_t>(e.value.c));
    put(f, static_cast<std::uint8_t>(e.trainable ? 1 : 0));
    put_vec(f, e.value.a);
    put_vec(f, e.adam_m.a);
    put_vec(f, e.adam_v.a);
  }
  put_queue(f, state.qi);
  put_queue(f, state.qo);
  put_queue(f, state.qs);
}

NetConfig checkpoint_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw VersionError("not a checkpoint file");
  if (get<std::uint32_t>(f) != kVersion) throw VersionError("unsupported checkpoint version");
  return NetConfig::from_json(get_str(f));
}

void load_checkpoint(Model& model, TrainState& state, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw VersionError("not a checkpoint file");
  if (get<std::uint32_t>(f) != kVersion) throw VersionError("unsupported checkpoint version");
  get_str(f);  // config json, identified by its hash below
  auto hash = get<std::uint64_t>(f);
  if (hash != model.config().hash())
    throw VersionError("checkpoint was written with a different NetConfig");
  state.step = get<std::int64_t>(f);
  auto n = get<std::uint32_t>(f);
  auto& ps = model.params();
  if (n != ps.order().size()) throw VersionError("checkpoint tensor count mismatch");
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = get_str(f);
    if (!ps.has(name)) throw VersionError("unknown tensor in checkpoint: " + name);
    auto& e = ps.at(name);
    auto r = get<std::int32_t>(f);
    auto c = get<std::int32_t>(f);
    if (r != e.value.r || c != e.value.c)
      throw VersionError("tensor shape mismatch for " + name);
    e.trainable = get<std::uint8_t>(f) != 0;
    e.value.a = get_vec(f);
    e.adam_m.a = get_vec(f);
    e.adam_v.a = get_vec(f);
  }
  state.qi = get_queue(f, 0);
  state.qo = get_queue(f, 0);
  state.qs = get_queue(f, 0);
}

}  // namespace optree
