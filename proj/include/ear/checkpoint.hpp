#pragma once

#include <cstdint>
#include <string>

#include "ear/model.hpp"

namespace ear {

struct CheckpointMeta {
    std::uint64_t init_seed{0};
    std::string world_hash;
};

// Binary format, little-endian throughout:
//   "EARCKPT1" | version byte (1) | u32 tensor count
//   per tensor: u32 name length | name | u32 rank | u32 dims[rank] | f64 data
//   u32 metadata length | metadata JSON (seed, world hash, model config)
// Tensors are written in key order, so identical parameters produce
// byte-identical files. Loading rejects unknown magic or version.
void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta,
                     const std::string& path);

struct Checkpoint {
    ModelParams params;
    CheckpointMeta meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ear
