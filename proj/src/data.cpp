#include "lbs/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lbs/error.hpp"
#include "lbs/rng.hpp"
#include "lbs/textcodec.hpp"

namespace lbs::data {

using nlohmann::json;

NormStats compute_norm_stats(std::span<const Observation> train) {
    if (train.empty()) throw DataError("data", "cannot compute normalization stats on an empty split");
    double mean = 0;
    for (const auto& o : train) mean += o.value;
    mean /= static_cast<double>(train.size());
    double var = 0;
    for (const auto& o : train) var += (o.value - mean) * (o.value - mean);
    var /= static_cast<double>(train.size());
    NormStats s{mean, std::sqrt(var), false};
    if (!(s.std > 1e-12)) {
        s.std = 1.0;
        s.degenerate = true;
    }
    return s;
}

double normalize(double value, const NormStats& stats) { return (value - stats.mean) / stats.std; }
double denormalize(double z, const NormStats& stats) { return z * stats.std + stats.mean; }

std::vector<double> normalize(std::span<const double> values, const NormStats& stats) {
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(normalize(v, stats));
    return out;
}

std::vector<double> denormalize(std::span<const double> values, const NormStats& stats) {
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values) out.push_back(denormalize(v, stats));
    return out;
}

namespace {

bool blank(const std::string& line) {
    return line.find_first_not_of(" \t\r\n") == std::string::npos;
}

}  // namespace

std::vector<Observation> parse_jsonl(std::istream& in) {
    std::vector<Observation> out;
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank(line)) continue;
        const std::string where = "line " + std::to_string(lineno) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError("data", where + "malformed JSON (" + e.what() + ")");
        }
        if (!j.is_object()) throw FormatError("data", where + "expected a JSON object");
        Observation o;
        if (!j.contains("t") || !j["t"].is_number_integer())
            throw FormatError("data", where + "missing or non-integer field 't'");
        if (!j.contains("value") || !j["value"].is_number())
            throw FormatError("data", where + "missing or non-numeric field 'value'");
        o.t = j["t"].get<long>();
        o.value = j["value"].get<double>();
        if (!std::isfinite(o.value)) throw FormatError("data", where + "non-finite 'value'");
        if (j.contains("date")) {
            if (!j["date"].is_string()) throw FormatError("data", where + "field 'date' must be a string");
            o.date = j["date"].get<std::string>();
        }
        if (j.contains("text") && !j["text"].is_null()) {
            if (!j["text"].is_string()) throw FormatError("data", where + "field 'text' must be a string or null");
            o.text = j["text"].get<std::string>();
        }
        if (j.contains("series") && !j["series"].is_null()) o.series = j["series"].dump();
        if (!out.empty() && out.back().series == o.series && o.t <= out.back().t)
            throw DataError("data", where + "t=" + std::to_string(o.t) + " does not increase (previous t=" +
                                        std::to_string(out.back().t) + ")");
        out.push_back(std::move(o));
    }
    return out;
}

std::vector<Observation> load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("data", "cannot open '" + path + "'");
    return parse_jsonl(in);
}

void write_jsonl(std::ostream& out, std::span<const Observation> obs) {
    for (const auto& o : obs) {
        json j{{"t", o.t}, {"date", o.date}, {"value", o.value}};
        j["text"] = o.text ? json(*o.text) : json(nullptr);
        if (o.series) j["series"] = json::parse(*o.series);
        out << j.dump() << '\n';
    }
}

void write_jsonl(const std::string& path, std::span<const Observation> obs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("data", "cannot write '" + path + "'");
    write_jsonl(out, obs);
}

SplitSizes split_sizes(std::size_t length) {
    if (length < 10) throw DataError("data", "series of length " + std::to_string(length) + " is too short to split (need >= 10)");
    SplitSizes s;
    s.train = length * 8 / 10;
    s.val = length / 10;
    s.test = length - s.train - s.val;
    return s;
}

Split split_811(std::span<const Observation> series) {
    const auto sz = split_sizes(series.size());
    Split out;
    out.train.assign(series.begin(), series.begin() + static_cast<std::ptrdiff_t>(sz.train));
    out.val.assign(series.begin() + static_cast<std::ptrdiff_t>(sz.train),
                   series.begin() + static_cast<std::ptrdiff_t>(sz.train + sz.val));
    out.test.assign(series.begin() + static_cast<std::ptrdiff_t>(sz.train + sz.val), series.end());
    return out;
}

std::vector<StepInput> to_step_inputs(std::span<const Observation> obs, const NormStats& stats, bool with_text) {
    std::vector<StepInput> out;
    out.reserve(obs.size());
    for (const auto& o : obs) {
        StepInput in;
        in.y = static_cast<float>(normalize(o.value, stats));
        if (with_text && o.text) in.tokens = text::tokenize(*o.text);
        out.push_back(std::move(in));
    }
    return out;
}

// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (steps < 1) throw UsageError("data", "synthetic steps must be >= 1");
    if (!(period >= 2)) throw UsageError("data", "synthetic period must be >= 2");
    if (!(event_rate >= 0 && event_rate <= 1)) throw UsageError("data", "event rate must lie in [0, 1]");
    if (event_lead < 0) throw UsageError("data", "event lead must be >= 0");
    if (!finite(amplitude) || !finite(slope) || !finite(event_shift) || !(noise_lo >= 0) || !(noise_hi >= 0) ||
        !finite(noise_lo) || !finite(noise_hi))
        throw UsageError("data", "synthetic parameters must be finite and noise levels >= 0");
}

namespace {

// Howard Hinnant's days_from_civil / civil_from_days.
long days_from_civil(long y, unsigned m, unsigned d) {
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

void civil_from_days(long z, long& y, unsigned& m, unsigned& d) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp < 10 ? mp + 3 : mp - 9;
    y += m <= 2;
}

const char* level_word(double s) {
    if (s > 0.5) return "high";
    if (s < -0.5) return "low";
    return "moderate";
}

}  // namespace

std::string add_days(const std::string& start, long days) {
    long y = 0;
    unsigned m = 0, d = 0;
    if (std::sscanf(start.c_str(), "%ld-%u-%u", &y, &m, &d) != 3 || m < 1 || m > 12 || d < 1 || d > 31)
        throw FormatError("data", "invalid ISO date '" + start + "'");
    civil_from_days(days_from_civil(y, m, d) + days, y, m, d);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04ld-%02u-%02u", y, m, d);
    return buf;
}

double seasonal_phase(const SynthConfig& cfg, long t) {
    return std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / cfg.period);
}

SynthDataset synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(stream_seed(cfg.seed, 0x73796e7468));
    SynthDataset ds;
    const auto T = static_cast<std::size_t>(cfg.steps);
    ds.labels.regime.resize(T);
    ds.labels.event_fired.resize(T);
    ds.labels.shift_active.resize(T);
    std::vector<double> shift(T + static_cast<std::size_t>(cfg.event_lead) + 1, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const double phase = std::fmod(static_cast<double>(t), cfg.period) / cfg.period;
        const int regime = phase < 0.5 ? 0 : 1;
        const bool event = rng.bernoulli(cfg.event_rate);
        const double noise = rng.normal() * (regime == 0 ? cfg.noise_lo : cfg.noise_hi);
        if (event)
            for (int k = 1; k <= cfg.event_lead; ++k) shift[t + static_cast<std::size_t>(k)] += cfg.event_shift;

        const double s = seasonal_phase(cfg, static_cast<long>(t));
        const double c = std::cos(2.0 * std::numbers::pi * static_cast<double>(t) / cfg.period);
        Observation o;
        o.t = static_cast<long>(t);
        o.date = add_days(cfg.start_date, static_cast<long>(t));
        o.value = cfg.amplitude * s + cfg.slope * static_cast<double>(t) + shift[t] + noise;
        std::string text = "DATE=" + o.date + " levels " + level_word(s) + " and " + (c >= 0 ? "rising" : "falling") +
                           ", conditions " + (regime == 0 ? "calm" : "volatile") + ".";
        if (event) text += " alert: a surge is expected in the coming days.";
        o.text = std::move(text);

        ds.labels.regime[t] = regime;
        ds.labels.event_fired[t] = event ? 1 : 0;
        ds.labels.shift_active[t] = shift[t] != 0.0 ? 1 : 0;
        ds.observations.push_back(std::move(o));
    }
    return ds;
}

void write_labels_csv(const std::string& path, const SynthLabels& labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("data", "cannot write '" + path + "'");
    out << "t,regime,event_fired,shift_active\n";
    for (std::size_t t = 0; t < labels.regime.size(); ++t)
        out << t << ',' << labels.regime[t] << ',' << labels.event_fired[t] << ',' << labels.shift_active[t] << '\n';
}

}  // namespace lbs::data
