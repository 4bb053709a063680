#pragma once

#include <string>

#include "segdetail/network.hpp"

namespace segdetail {

/// Writes `dir/manifest.txt` (key/value NetworkConfig plus the parameter
/// list) and one little-endian float32 blob per parameter tensor, named by
/// its layer path (e.g. `encoder0.weight.bin`).
void save_checkpoint(const std::string& dir, MiniPsp<float>& model);

/// Rebuilds the network from the manifest and loads all parameter blobs.
MiniPsp<float> load_checkpoint(const std::string& dir);

/// Reads just the NetworkConfig from a checkpoint manifest.
NetworkConfig load_checkpoint_config(const std::string& dir);

}  // namespace segdetail
