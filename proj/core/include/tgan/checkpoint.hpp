/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tgan/nn.hpp"

namespace tgan {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorGroup {
    std::string name;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

struct OptimizerState {
    std::string name;
    std::int64_t steps = 0;
    std::vector<nn::Adam::Slot> slots;
};

/// Versioned binary container: config echo, iteration counter, network
/// parameters, optimizer moments and the identity of the frozen feature network.
/// Values are stored as raw float64, so save -> load -> save is byte-stable.
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string config_json;
    std::int64_t iteration = 0;
    std::vector<TensorGroup> groups;
    std::vector<OptimizerState> optimizers;
    std::string feature_descriptor;
    std::uint64_t feature_digest = 0;

    [[nodiscard]] std::vector<std::uint8_t> encode() const;
    /// Throws CheckpointError on a bad magic, version mismatch or truncation.
    static Checkpoint decode(std::span<const std::uint8_t> bytes);

    /// Writes to a sibling temporary file, then renames.
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    [[nodiscard]] const TensorGroup& group(std::string_view name) const;
    [[nodiscard]] const OptimizerState* optimizer(std::string_view name) const;
};

TensorGroup export_params(std::string name, const nn::ParamList& params);
/// Copies values by name; names and shapes must match exactly.
void import_params(const TensorGroup& group, const nn::ParamList& params);

OptimizerState export_optimizer(std::string name, const nn::Adam& opt);
void import_optimizer(const OptimizerState& state, nn::Adam& opt);

}  // namespace tgan
