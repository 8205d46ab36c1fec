#pragma once

// Checkpoint container, format "vecformer-ckpt/1": a one-line JSON manifest
// (format, stage, config snapshot, rng state, tensor directory) followed by
// the concatenated little-endian float64 payloads in manifest order.
// Round-trips are bit-exact.

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>

#include "vecformer/params.hpp"

namespace vecformer {

struct Checkpoint {
    static constexpr const char* kFormat = "vecformer-ckpt/1";

    int stage = 0;  // 1 after codebook training, 2 after finetuning
    nlohmann::json config;
    std::array<std::uint64_t, 4> rng_state{};
    ParamStore params;

    void save(const std::filesystem::path& file) const;
    static Checkpoint load(const std::filesystem::path& file);
};

}  // namespace vecformer
