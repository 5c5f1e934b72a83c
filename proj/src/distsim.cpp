#include "optree/distsim.hpp"

#include "optree/rng.hpp"

namespace optree {

void WorkerTopology::validate() const {
  if (n_model_workers < 1) throw TopologyError("need at least one model worker");
  if (teacher_worker < 0) throw TopologyError("topology has no teacher worker");
  if (teacher_worker < n_model_workers)
    throw TopologyError("teacher worker id collides with a model worker");
}

DistResult dist_sim_run(WorkerTopology& topology, const std::vector<Triple>& batch,
                        Model& model, const TrainState& state, const Teacher& teacher,
                        const TrainConfig& cfg) {
  topology.validate();
  if (batch.empty()) throw ConfigError("empty batch");
  const int K = topology.n_model_workers;
  const int N = static_cast<int>(batch.size());
  if (K > N) throw TopologyError("more model workers than batch samples");
  const std::uint64_t step_seed = mix64(cfg.seed, static_cast<std::uint64_t>(state.step));
  auto shard_begin = [&](int w) { return (w * N) / K; };

  DistResult res;
  // gather formula strings to the teacher worker
  for (int w = 0; w < K; ++w) {
    std::uint64_t bytes = 0;
    for (int j = shard_begin(w); j < shard_begin(w + 1); ++j) bytes += batch[j].formula.size();
    topology.log.push_back({w, topology.teacher_worker, "strings", bytes});
    res.transfer_bytes_up += bytes;
  }

  // teacher runs once over the full gathered batch, then features go back
  std::vector<TeacherHidden> hidden;
  hidden.reserve(batch.size());
  for (const auto& x : batch) hidden.push_back(teacher.extract(x.formula));
  for (int w = 0; w < K; ++w) {
    std::uint64_t bytes = 0;
    for (int j = shard_begin(w); j < shard_begin(w + 1); ++j)
      bytes += static_cast<std::uint64_t>(hidden[j].rows) * hidden[j].cols * sizeof(float);
    topology.log.push_back({topology.teacher_worker, w, "features", bytes});
    res.transfer_bytes_down += bytes;
  }

  // cross-shard FOM pairing: each worker hands its first sample's OTS to the
  // previous worker so the global rotation pairing survives sharding
  if (K > 1)
    for (int w = 0; w < K; ++w) {
      std::uint64_t bytes =
          static_cast<std::uint64_t>(model.config().k_max) * sizeof(std::int32_t);
      topology.log.push_back({w, (w + K - 1) % K, "boundary-ots", bytes});
      res.transfer_bytes_total += bytes;
    }

  std::vector<ShardSums> shards;
  for (int w = 0; w < K; ++w) {
    shards.push_back(pretrain_shard_sums(model, batch, shard_begin(w), shard_begin(w + 1),
                                         state, teacher, cfg, step_seed));
    if (w != 0) {
      topology.log.push_back({w, 0, "losses", 4 * sizeof(double)});
      res.transfer_bytes_total += 4 * sizeof(double);
    }
  }
  res.losses = reduce_shards(shards);
  res.transfer_bytes_total += res.transfer_bytes_up + res.transfer_bytes_down;
  return res;
}

}  // namespace optree
