#include "lbs/forecast.hpp"

#include <ostream>

#include "lbs/error.hpp"
#include "lbs/rng.hpp"

namespace lbs::forecast {

StatePair filter(const LbsModel& model, const ParamRegistry& params, std::span<const StepInput> history,
                 bool use_text) {
    StatePair state = model.initial_state();
    if (history.empty()) return state;
    Filter f(model, params, use_text);
    for (const auto& in : history) state = f.step(state, in);
    return state;
}

std::vector<StatePair> filter_trajectory(const LbsModel& model, const ParamRegistry& params,
                                         std::span<const StepInput> history, bool use_text) {
    std::vector<StatePair> out;
    if (history.empty()) return out;
    out.reserve(history.size());
    Filter f(model, params, use_text);
    StatePair state = model.initial_state();
    for (const auto& in : history) {
        state = f.step(state, in);
        out.push_back(state);
    }
    return out;
}

ForecastResult rollout(const LbsModel& model, const ParamRegistry& params, const StatePair& start, int horizon,
                       int n_samples, std::uint64_t seed, bool keep_latents) {
    if (horizon < 1) throw UsageError("forecast", "horizon must be >= 1");
    if (n_samples < 1) throw UsageError("forecast", "n_samples must be >= 1");
    const auto H = static_cast<std::size_t>(horizon);
    const auto n = static_cast<std::size_t>(n_samples);
    const auto N = static_cast<std::size_t>(model.config.latent_dim);

    ForecastResult r;
    r.horizon = horizon;
    r.n_samples = n_samples;
    r.samples.assign(H, std::vector<double>(n));
    if (keep_latents) r.latents.assign(H, std::vector<Tensor>(n));
    for (std::size_t s = 0; s < n; ++s) {
        StatePair state = start;
        for (std::size_t k = 0; k < H; ++k) {
            diff::Tape tape(params);
            auto prior = model.ssm.prior_step(tape, state);
            Rng rng(stream_seed(seed, s, k));
            Tensor eps({static_cast<int>(N)}, rng.normal_vector(N));
            auto x = ssm::reparam_sample(tape, prior.prior, eps);
            r.samples[k][s] = model.ssm.emit(tape, x).value().item();
            state = {x.value(), prior.h.value()};
            if (keep_latents) r.latents[k][s] = x.value();
        }
    }
    r.mean.resize(H);
    r.variance.resize(H);
    for (std::size_t k = 0; k < H; ++k) {
        double m = 0;
        for (double v : r.samples[k]) m += v;
        m /= static_cast<double>(n);
        double var = 0;
        for (double v : r.samples[k]) var += (v - m) * (v - m);
        r.mean[k] = m;
        r.variance[k] = var / static_cast<double>(n);
    }
    return r;
}

ForecastResult denormalize(const ForecastResult& r, const data::NormStats& stats) {
    ForecastResult out = r;
    for (std::size_t k = 0; k < out.mean.size(); ++k) {
        out.mean[k] = data::denormalize(r.mean[k], stats);
        out.variance[k] = r.variance[k] * stats.std * stats.std;
        for (auto& v : out.samples[k]) v = data::denormalize(v, stats);
    }
    return out;
}

std::string forecast_text(const LbsModel& model, const ParamRegistry& params, const Tensor& state_sample,
                          const std::string& date, int max_len, float temperature, std::uint64_t seed) {
    const std::string prefix = "DATE=" + date + " ";
    std::vector<int> forced(prefix.begin(), prefix.end());
    for (auto& id : forced) id = static_cast<unsigned char>(id);
    return model.text.generate(params, state_sample, max_len, temperature, seed, forced);
}

void write_csv(std::ostream& out, const ForecastResult& r) {
    out << "horizon,mean,variance";
    for (int s = 0; s < r.n_samples; ++s) out << ",sample_" << s;
    out << '\n';
    const auto old = out.precision(17);
    for (int h = 0; h < r.horizon; ++h) {
        const auto k = static_cast<std::size_t>(h);
        out << h + 1 << ',' << r.mean[k] << ',' << r.variance[k];
        for (double v : r.samples[k]) out << ',' << v;
        out << '\n';
    }
    out.precision(old);
}

nlohmann::json to_json(const ForecastResult& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (int h = 0; h < r.horizon; ++h) {
        const auto k = static_cast<std::size_t>(h);
        rows.push_back({{"horizon", h + 1}, {"mean", r.mean[k]}, {"variance", r.variance[k]}, {"samples", r.samples[k]}});
    }
    return {{"horizon", r.horizon}, {"n_samples", r.n_samples}, {"forecasts", rows}};
}

}  // namespace lbs::forecast
