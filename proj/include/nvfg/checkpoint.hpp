#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "nvfg/dual_trainer.hpp"

namespace nvfg {

inline constexpr char kCheckpointMagic[4] = {'N', 'V', 'F', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    DualBranchModel model;
    TrainingConfig config;
    std::size_t epoch = 0;
    nlohmann::json metrics = nlohmann::json::object();
};

/// Little-endian layout: magic, u32 version, u64-prefixed JSON metadata, then
/// one record per parameter (u32 name length, name, u32 rank, u64 dims, f64 data).
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nvfg
