#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "marecg/core/params.hpp"

namespace marecg::train {

// Checkpoint container: magic MARECG01, a length-prefixed JSON manifest, then
// one blob per tensor as (u32 name length, name, u32 rank, u64 extents...,
// f32 payload). Everything little-endian; payload bytes are the exact f32
// bit patterns, so save/load round-trips bitwise.
inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'R', 'E', 'C', 'G', '0', '1'};

struct CheckpointManifest {
    int format_version = 1;
    std::string ablation;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::string config_dump;
    std::uint64_t epoch = 0;
    std::uint64_t step = 0;
    std::string ledger_tail;  // last ledger row, informational
};

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    CheckpointManifest manifest;
    std::vector<NamedTensor> tensors;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_from_store(const num::ParamStore<float>& ps, CheckpointManifest manifest);
// Copies tensors into an existing store; names and shapes must match exactly.
void load_into_store(const Checkpoint& c, num::ParamStore<float>& ps);

}  // namespace marecg::train
