#pragma once

// Binary layout (little-endian):
//   "LBSCKPT1" | u32 version | u64 metadata length | metadata JSON |
//   float32 payload | u32 CRC32 of everything before it

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbs/data.hpp"
#include "lbs/model.hpp"
#include "lbs/training.hpp"

namespace lbs::checkpoint {

inline constexpr char kMagic[8] = {'L', 'B', 'S', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct Loaded {
    nlohmann::json meta;
    std::vector<NamedTensor> tensors;
};

/// `meta` is stored as given, with a "tensors" index (name, shape, offset) added.
std::string encode(const ParamRegistry& registry, nlohmann::json meta);
Loaded decode(const std::string& bytes);

void save_checkpoint(const std::string& path, const ParamRegistry& registry, nlohmann::json meta);
Loaded load_checkpoint(const std::string& path);

/// Copies loaded tensors into a registry declared from the same config.
/// Missing, extra or misshapen tensors are errors naming the tensor.
void apply(const Loaded& loaded, ParamRegistry& registry);

/// Everything needed to run a trained model.
struct TrainedModel {
    training::TrainConfig config;
    data::NormStats norm;
    ParamRegistry params;
    LbsModel model;
    nlohmann::json meta;
};

nlohmann::json make_meta(const training::TrainConfig& config, const data::NormStats& norm, int epoch,
                         double best_val, const std::string& run_config = {});
TrainedModel load_trained(const std::string& path);

}  // namespace lbs::checkpoint
