#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lbs/model.hpp"

namespace lbs::data {

/// One aligned multimodal record.
struct Observation {
    long t = 0;
    std::string date;
    double value = 0;
    std::optional<std::string> text;
    std::optional<std::string> series;

    friend bool operator==(const Observation&, const Observation&) = default;
};

struct NormStats {
    double mean = 0;
    double std = 1;
    /// Set when the train split was constant and std was forced to 1.
    bool degenerate = false;
};

NormStats compute_norm_stats(std::span<const Observation> train);
double normalize(double value, const NormStats& stats);
double denormalize(double z, const NormStats& stats);
std::vector<double> normalize(std::span<const double> values, const NormStats& stats);
std::vector<double> denormalize(std::span<const double> values, const NormStats& stats);

std::vector<Observation> parse_jsonl(std::istream& in);
std::vector<Observation> load_jsonl(const std::string& path);
void write_jsonl(std::ostream& out, std::span<const Observation> obs);
void write_jsonl(const std::string& path, std::span<const Observation> obs);

struct Split {
    std::vector<Observation> train;
    std::vector<Observation> val;
    std::vector<Observation> test;
};

struct SplitSizes {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

/// floor(0.8 T) / floor(0.1 T) / remainder.
SplitSizes split_sizes(std::size_t length);
Split split_811(std::span<const Observation> series);

/// Normalized values plus tokenized text, as the model consumes them.
std::vector<StepInput> to_step_inputs(std::span<const Observation> obs, const NormStats& stats, bool with_text);

// ---------------------------------------------------------------------------
// Synthetic multimodal generator

struct SynthConfig {
    int steps = 2000;
    double period = 40;
    double amplitude = 2.0;
    double slope = 0.0;
    double noise_lo = 0.25;
    double noise_hi = 0.75;
    double event_rate = 0.05;
    double event_shift = 0.75;
    int event_lead = 3;
    std::uint64_t seed = 1;
    std::string start_date = "2014-01-01";

    void validate() const;
};

/// Ground truth for evaluation only; never fed to the model.
struct SynthLabels {
    std::vector<int> regime;        // 0 low-noise half-period, 1 high-noise half-period
    std::vector<int> event_fired;   // event announced at t
    std::vector<int> shift_active;  // some event shifts the value at t
};

struct SynthDataset {
    std::vector<Observation> observations;
    SynthLabels labels;
};

/// value_t = A sin(2 pi t / P) + slope t + shift_t + noise_t. Noise is
/// N(0, noise_lo) in the first half of each period and N(0, noise_hi) in the
/// second. An event at t adds event_shift to t+1..t+event_lead and is
/// announced only in the text at t.
SynthDataset synth_generate(const SynthConfig& cfg);

/// Seasonal phase signal sin(2 pi t / P) used to check latent seasonality.
double seasonal_phase(const SynthConfig& cfg, long t);

void write_labels_csv(const std::string& path, const SynthLabels& labels);

/// ISO-8601 date `days` after `start` (YYYY-MM-DD).
std::string add_days(const std::string& start, long days);

}  // namespace lbs::data
