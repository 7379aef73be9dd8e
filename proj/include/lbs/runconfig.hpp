#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "lbs/data.hpp"
#include "lbs/training.hpp"

namespace lbs {

/// Flat key=value experiment configuration. Lines starting with '#' and blank
/// lines are ignored; unknown keys are rejected.
struct RunConfig {
    training::TrainConfig train;
    data::SynthConfig synth;
    std::string data_path;
    std::string out_path;

    /// Sets one key from its text value.
    void set(const std::string& key, const std::string& value);
    /// Parses "key=value".
    void set_assignment(const std::string& assignment);

    void parse(std::istream& in);
    void load(const std::string& path);

    /// Every key with its effective value, one "key=value" per line, in a fixed order.
    std::string to_text() const;
    std::string get(const std::string& key) const;

    static std::vector<std::string> keys();
};

}  // namespace lbs
