#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbs/diffcore.hpp"
#include "lbs/ssm.hpp"
#include "lbs/textcodec.hpp"

namespace lbs {

using diff::ParamRegistry;
using diff::Tensor;
using ssm::StatePair;

struct ModelConfig {
    int latent_dim = 16;
    int hidden_dim = 16;
    int value_dim = 1;
    int mlp_hidden = 64;
    int mlp_layers = 2;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int ff_dim = 128;
    int summary_tokens = 8;
    int prefix_tokens = 8;
    int summary_hidden = 64;
    int max_seq_len = 256;

    ssm::SsmConfig ssm() const { return {latent_dim, hidden_dim, value_dim, mlp_hidden, mlp_layers}; }
    text::TextConfig text() const {
        return {latent_dim, d_model, n_layers, n_heads, ff_dim, summary_tokens, prefix_tokens, summary_hidden,
                max_seq_len};
    }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// State-space model and text model declared in one registry.
struct LbsModel {
    ModelConfig config;
    ssm::StateSpaceModel ssm;
    text::TextModel text;

    static LbsModel declare(ParamRegistry& registry, const ModelConfig& config);

    StatePair initial_state() const { return StatePair::zeros(config.latent_dim, config.hidden_dim); }
};

/// One aligned record as the model consumes it: normalized value and
/// optional pre-tokenized text.
struct StepInput {
    float y = 0;
    std::optional<std::vector<int>> tokens;
};

struct StepOptions {
    double free_nats = 0;
    double alpha_val = 1.0;
    double alpha_text = 0.1;
    double alpha_kl = 1.0;
    /// false forces the null summary and skips the text loss.
    bool use_text = true;
};

template <class T>
struct StepGraph {
    ssm::GaussianVar<T> prior;
    ssm::GaussianVar<T> posterior;
    diff::BasicVar<T> h;
    diff::BasicVar<T> summary;
    diff::BasicVar<T> x_hat;
    diff::BasicVar<T> l_val;
    std::optional<diff::BasicVar<T>> l_text;
    diff::BasicVar<T> kl_raw;
    diff::BasicVar<T> kl_clamped;
    diff::BasicVar<T> total;

    ssm::StepLosses losses() const {
        ssm::StepLosses out;
        out.l_val = l_val.value().item();
        out.l_text = l_text ? l_text->value().item() : 0.0;
        out.l_kl_raw = kl_raw.value().item();
        out.l_kl_clamped = kl_clamped.value().item();
        out.total = total.value().item();
        return out;
    }

    StatePair next_state() const {
        return {x_hat.value().template cast<float>(), h.value().template cast<float>()};
    }
};

template <class T>
struct InferenceGraph {
    ssm::GaussianVar<T> prior;
    ssm::GaussianVar<T> posterior;
    diff::BasicVar<T> h;
    diff::BasicVar<T> summary;
};

/// Prior, text summary and posterior for one step (no sampling, no losses).
/// A precomputed null summary may be passed for read-only use.
template <class T>
InferenceGraph<T> infer_step(diff::BasicTape<T>& tape, const LbsModel& model, const StatePair& prev,
                             const StepInput& input, bool use_text, const Tensor* null_summary = nullptr) {
    InferenceGraph<T> g;
    auto prior = model.ssm.prior_step(tape, prev);
    g.prior = prior.prior;
    g.h = prior.h;
    const bool has_text = use_text && input.tokens.has_value();
    if (has_text)
        g.summary = model.text.encode_summary(tape, std::span<const int>(*input.tokens));
    else if (null_summary)
        g.summary = tape.constant(null_summary->template cast<T>());
    else
        g.summary = model.text.null_summary(tape);
    diff::BasicTensor<T> y(diff::Shape{model.config.value_dim}, T(input.y));
    g.posterior = model.ssm.posterior_infer(tape, g.h, y, g.summary);
    return g;
}

/// The forward pass of one stateful step, in order: prior, text summary,
/// posterior, reparameterized sample, value loss, text loss, KL with free
/// nats, weighted total.
template <class T>
StepGraph<T> build_step(diff::BasicTape<T>& tape, const LbsModel& model, const StatePair& prev,
                        const StepInput& input, const diff::BasicTensor<T>& eps, const StepOptions& opt,
                        const Tensor* null_summary = nullptr) {
    StepGraph<T> g;
    auto inf = infer_step(tape, model, prev, input, opt.use_text, null_summary);
    g.prior = inf.prior;
    g.h = inf.h;
    g.summary = inf.summary;
    g.posterior = inf.posterior;
    const bool has_text = opt.use_text && input.tokens.has_value();
    diff::BasicTensor<T> y(diff::Shape{model.config.value_dim}, T(input.y));
    g.x_hat = ssm::reparam_sample(tape, g.posterior, eps);
    g.l_val = ssm::value_loss(tape, model.ssm, g.x_hat, y);
    if (has_text && opt.alpha_text != 0.0)
        g.l_text = model.text.text_loss(tape, g.x_hat, std::span<const int>(*input.tokens));
    g.kl_raw = ssm::kl_diag_gaussian(g.posterior, g.prior);
    g.kl_clamped = ssm::apply_free_nats(g.kl_raw, T(opt.free_nats));
    auto total = diff::scale(g.l_val, T(opt.alpha_val));
    if (g.l_text) total = diff::add(total, diff::scale(*g.l_text, T(opt.alpha_text)));
    g.total = diff::add(total, diff::scale(g.kl_clamped, T(opt.alpha_kl)));
    return g;
}

/// Deterministic filtering without updates: the posterior mean becomes x_hat.
class Filter {
public:
    Filter(const LbsModel& model, const ParamRegistry& params, bool use_text);

    StatePair step(const StatePair& prev, const StepInput& input) const;
    /// Also returns the step's prior and posterior.
    StatePair step(const StatePair& prev, const StepInput& input, ssm::DiagGaussian* prior,
                   ssm::DiagGaussian* posterior) const;
    const Tensor& null_summary() const { return null_summary_; }

private:
    const LbsModel& model_;
    const ParamRegistry& params_;
    bool use_text_;
    Tensor null_summary_;
};

}  // namespace lbs
