#include "lbs/model.hpp"

namespace lbs {

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"latent_dim", c.latent_dim},   {"hidden_dim", c.hidden_dim},
                       {"value_dim", c.value_dim},     {"mlp_hidden", c.mlp_hidden},
                       {"mlp_layers", c.mlp_layers},   {"d_model", c.d_model},
                       {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
                       {"ff_dim", c.ff_dim},           {"summary_tokens", c.summary_tokens},
                       {"prefix_tokens", c.prefix_tokens}, {"summary_hidden", c.summary_hidden},
                       {"max_seq_len", c.max_seq_len}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.latent_dim = j.at("latent_dim");
    c.hidden_dim = j.at("hidden_dim");
    c.value_dim = j.at("value_dim");
    c.mlp_hidden = j.at("mlp_hidden");
    c.mlp_layers = j.at("mlp_layers");
    c.d_model = j.at("d_model");
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.ff_dim = j.at("ff_dim");
    c.summary_tokens = j.at("summary_tokens");
    c.prefix_tokens = j.at("prefix_tokens");
    c.summary_hidden = j.at("summary_hidden");
    c.max_seq_len = j.at("max_seq_len");
}

LbsModel LbsModel::declare(ParamRegistry& registry, const ModelConfig& config) {
    LbsModel m;
    m.config = config;
    m.ssm = ssm::StateSpaceModel::declare(registry, config.ssm());
    m.text = text::TextModel::declare(registry, config.text());
    return m;
}

Filter::Filter(const LbsModel& model, const ParamRegistry& params, bool use_text)
    : model_(model), params_(params), use_text_(use_text) {
    diff::Tape tape(params_);
    null_summary_ = model_.text.null_summary(tape).value();
}

StatePair Filter::step(const StatePair& prev, const StepInput& input) const {
    return step(prev, input, nullptr, nullptr);
}

StatePair Filter::step(const StatePair& prev, const StepInput& input, ssm::DiagGaussian* prior,
                       ssm::DiagGaussian* posterior) const {
    diff::Tape tape(params_);
    auto g = infer_step(tape, model_, prev, input, use_text_, &null_summary_);
    if (prior) *prior = g.prior.value();
    if (posterior) *posterior = g.posterior.value();
    return {g.posterior.mean.value(), g.h.value()};
}

}  // namespace lbs
