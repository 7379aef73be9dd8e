#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbs/data.hpp"
#include "lbs/model.hpp"

namespace lbs::forecast {

/// Per-horizon Monte-Carlo summary. Index h-1 holds horizon h.
struct ForecastResult {
    int horizon = 0;
    int n_samples = 0;
    std::vector<double> mean;
    std::vector<double> variance;
    std::vector<std::vector<double>> samples;  // [horizon][sample]
    std::vector<std::vector<Tensor>> latents;  // [horizon][sample], only when requested
};

/// Filtered state after consuming `history` (zero state when empty).
StatePair filter(const LbsModel& model, const ParamRegistry& params, std::span<const StepInput> history,
                 bool use_text);

/// State after each step: element t is the state after consuming history[t].
std::vector<StatePair> filter_trajectory(const LbsModel& model, const ParamRegistry& params,
                                         std::span<const StepInput> history, bool use_text);

/// Open-loop prior sampling on the normalized scale. Noise for (sample, step)
/// comes from its own stream, so a longer horizon extends a shorter one.
ForecastResult rollout(const LbsModel& model, const ParamRegistry& params, const StatePair& start, int horizon,
                       int n_samples, std::uint64_t seed, bool keep_latents = false);

/// Maps means and samples back to the data scale; variance scales by std^2.
ForecastResult denormalize(const ForecastResult& r, const data::NormStats& stats);

/// Text generated from a latent state after the forced "DATE=<date> " prefix.
std::string forecast_text(const LbsModel& model, const ParamRegistry& params, const Tensor& state_sample,
                          const std::string& date, int max_len, float temperature, std::uint64_t seed);

void write_csv(std::ostream& out, const ForecastResult& r);
nlohmann::json to_json(const ForecastResult& r);

}  // namespace lbs::forecast
