#pragma once

// Binary parameter archive:
//   "PHOTONCK" u32 version
//   u32 config length, config text (key=value lines)
//   u32 tensor count, then per tensor:
//     u32 name length, name, u32 rank, u64 extents[rank], f64 data[numel]
// All integers and floats little-endian.

#include <string>
#include <utility>
#include <vector>

#include "photon/params.h"

namespace photon {

struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const std::string& config_text, const ParamStore& store);
Checkpoint load_checkpoint(const std::string& path);
// Copies every tensor into the matching parameter; names and shapes must
// match the store exactly.
void restore_params(const Checkpoint& ck, ParamStore& store);

}  // namespace photon
