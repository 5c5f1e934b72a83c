#pragma once

#include <string>

#include "optree/trainer.hpp"

namespace optree {

// Versioned binary with the NetConfig JSON and its hash embedded; restores
// every tensor, Adam moment, queue buffer, and the step counter bit-exactly.
void save_checkpoint(const Model& model, const TrainState& state, const std::string& path);
void load_checkpoint(Model& model, TrainState& state, const std::string& path);

// Reads only the embedded NetConfig, for constructing a matching model.
NetConfig checkpoint_config(const std::string& path);

}  // namespace optree
