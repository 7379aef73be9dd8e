#include "lbs/pipeline.hpp"

#include "lbs/forecast.hpp"
#include "lbs/nn.hpp"

namespace lbs {

PreparedData prepare(std::vector<data::Observation> observations, bool with_text,
                     std::optional<data::NormStats> norm) {
    PreparedData d;
    d.sizes = data::split_sizes(observations.size());
    d.norm = norm ? *norm
                  : data::compute_norm_stats(std::span<const data::Observation>(observations.data(), d.sizes.train));
    d.inputs = data::to_step_inputs(observations, d.norm, with_text);
    d.observations = std::move(observations);
    return d;
}

checkpoint::TrainedModel train_model(const PreparedData& data, const training::TrainConfig& config,
                                     training::FitResult* fit, const training::Trainer::EpochCallback& on_epoch) {
    config.validate();
    checkpoint::TrainedModel m;
    m.config = config;
    m.norm = data.norm;
    m.model = LbsModel::declare(m.params, config.model);
    nn::init_params(m.params, config.seed);
    training::Trainer trainer(m.model, m.params, config);
    auto result = trainer.fit(data.train(), data.val(), on_epoch);
    m.meta = checkpoint::make_meta(config, data.norm, result.best_epoch, result.best_val);
    if (fit) *fit = std::move(result);
    return m;
}

std::vector<std::vector<double>> latent_trajectory(const checkpoint::TrainedModel& m,
                                                   std::span<const StepInput> inputs) {
    const auto traj = forecast::filter_trajectory(m.model, m.params, inputs, !m.config.unimodal);
    std::vector<std::vector<double>> out;
    out.reserve(traj.size());
    for (const auto& s : traj) out.emplace_back(s.x_hat.values().begin(), s.x_hat.values().end());
    return out;
}

}  // namespace lbs
