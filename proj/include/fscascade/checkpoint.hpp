#pragma once

#include <string>

#include "fscascade/tensor.hpp"

// Checkpoint container. Binary layout, little-endian:
//   magic "FSCKPT01"
//   int64 parameter count
//   per parameter, in creation order:
//     int64 name length, name bytes
//     int64 rank, rank int64 dims
//     numel doubles (values), numel doubles (momentum buffer)
// Doubles are written raw, so load(save(m)) is bit-exact.

namespace fscascade {

void save_checkpoint(const std::string& path, const ParamStore& params);

// The store must already have the same parameters (names and shapes) the
// file carries, i.e. be built from the same model config; mismatches throw
// naming the offending parameter.
void load_checkpoint(const std::string& path, ParamStore& params);

}  // namespace fscascade
