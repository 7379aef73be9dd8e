#pragma once

// Hand-built models with known forecasts.

#include <string>
#include <vector>

#include "lbs/checkpoint.hpp"
#include "lbs/data.hpp"
#include "lbs/nn.hpp"

namespace fixtures {

inline lbs::training::TrainConfig small_linear_config() {
    lbs::training::TrainConfig c;
    c.model.latent_dim = 1;
    c.model.hidden_dim = 1;
    c.model.mlp_layers = 1;
    c.model.mlp_hidden = 4;
    c.model.d_model = 8;
    c.model.n_layers = 1;
    c.model.n_heads = 1;
    c.model.ff_dim = 8;
    c.model.summary_tokens = 1;
    c.model.prefix_tokens = 1;
    c.model.summary_hidden = 4;
    c.model.max_seq_len = 64;
    return c;
}

inline void zero(lbs::ParamRegistry& reg) {
    for (std::size_t i = 0; i < reg.size(); ++i) reg.value(i).fill(0.0f);
}

inline float& at(lbs::ParamRegistry& reg, const std::string& name, std::size_t k = 0) {
    return reg.value(*reg.find(name))[k];
}

/// Constant series; every observation carries text.
inline std::vector<lbs::data::Observation> constant_series(int n, double value) {
    std::vector<lbs::data::Observation> out;
    for (int t = 0; t < n; ++t)
        out.push_back({t, lbs::data::add_days("2020-01-01", t), value, "levels moderate and rising, conditions calm.", {}});
    return out;
}

/// Forecasts the normalized mean exactly: zero emission. On a constant
/// series (normalized to zeros) every sample equals the target.
inline lbs::checkpoint::TrainedModel constant_model(double mean) {
    lbs::checkpoint::TrainedModel m;
    m.config = small_linear_config();
    m.norm = {mean, 1.0, true};
    m.model = lbs::LbsModel::declare(m.params, m.config.model);
    lbs::nn::init_params(m.params, 1);
    for (std::size_t i = 0; i < m.params.size(); ++i)
        if (m.params.name(i).rfind("ssm.", 0) == 0) m.params.value(i).fill(0.0f);
    m.meta = lbs::checkpoint::make_meta(m.config, m.norm, 0, 0.0);
    return m;
}

/// Identity emission, prior pinned at mean `z` with the smallest variance.
inline lbs::checkpoint::TrainedModel pinned_prior_model(float z, lbs::data::NormStats norm) {
    lbs::checkpoint::TrainedModel m;
    m.config = small_linear_config();
    m.norm = norm;
    m.model = lbs::LbsModel::declare(m.params, m.config.model);
    lbs::nn::init_params(m.params, 1);
    for (std::size_t i = 0; i < m.params.size(); ++i)
        if (m.params.name(i).rfind("ssm.", 0) == 0) m.params.value(i).fill(0.0f);
    at(m.params, "ssm.emission.0.weight") = 1.0f;
    at(m.params, "ssm.prior_mean.bias") = z;
    at(m.params, "ssm.prior_log_var.bias") = -10.0f;
    m.meta = lbs::checkpoint::make_meta(m.config, m.norm, 0, 0.0);
    return m;
}

}  // namespace fixtures
