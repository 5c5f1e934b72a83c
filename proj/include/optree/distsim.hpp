#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "optree/trainer.hpp"

namespace optree {

struct Message {
  int from = 0;
  int to = 0;
  std::string kind;  // "strings", "features", "boundary-ots", "losses"
  std::uint64_t bytes = 0;
};

struct WorkerTopology {
  int n_model_workers = 1;
  int teacher_worker = -1;  // id outside [0, n_model_workers)
  std::vector<Message> log;

  void validate() const;
};

struct DistResult {
  LossParts losses;
  std::uint64_t transfer_bytes_up = 0;    // formula strings to the teacher worker
  std::uint64_t transfer_bytes_down = 0;  // teacher features back to shards
  std::uint64_t transfer_bytes_total = 0;
};

// Simulated gather/broadcast step: batch shards live on model workers,
// formula strings are gathered to the teacher worker, features come back,
// losses are computed shard-wise and mean-reduced. In-process FIFO messages
// only; no parameters are updated.
DistResult dist_sim_run(WorkerTopology& topology, const std::vector<Triple>& batch,
                        Model& model, const TrainState& state, const Teacher& teacher,
                        const TrainConfig& cfg);

}  // namespace optree
