#pragma once

// Glue shared by the command-line tool, the Python module and the tests.

#include <optional>
#include <string>
#include <vector>

#include "lbs/checkpoint.hpp"
#include "lbs/data.hpp"
#include "lbs/evalharness.hpp"
#include "lbs/training.hpp"

namespace lbs {

struct PreparedData {
    std::vector<data::Observation> observations;
    data::SplitSizes sizes;
    data::NormStats norm;
    /// The whole series, normalized; text kept unless unimodal.
    std::vector<StepInput> inputs;

    std::span<const StepInput> train() const { return {inputs.data(), sizes.train}; }
    std::span<const StepInput> val() const { return {inputs.data() + sizes.train, sizes.val}; }
    std::span<const StepInput> test() const { return {inputs.data() + sizes.train + sizes.val, sizes.test}; }
    std::size_t test_begin() const { return sizes.train + sizes.val; }
};

/// Splits 8-1-1 and normalizes with train statistics (or the given ones).
PreparedData prepare(std::vector<data::Observation> observations, bool with_text,
                     std::optional<data::NormStats> norm = std::nullopt);

/// Declares, initializes and fits a model; params hold the best snapshot.
checkpoint::TrainedModel train_model(const PreparedData& data, const training::TrainConfig& config,
                                     training::FitResult* fit = nullptr,
                                     const training::Trainer::EpochCallback& on_epoch = {});

/// Filtered posterior-mean trajectory as plain vectors.
std::vector<std::vector<double>> latent_trajectory(const checkpoint::TrainedModel& m,
                                                   std::span<const StepInput> inputs);

}  // namespace lbs
