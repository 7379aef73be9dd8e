#include "lbs/training.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "lbs/error.hpp"

namespace lbs::training {

void TrainConfig::validate() const {
    auto positive = [](double v) { return std::isfinite(v) && v > 0; };
    if (!positive(lr_start) || !positive(lr_end) || lr_end > lr_start)
        throw UsageError("training", "learning rates must be positive with lr_end <= lr_start");
    if (max_epochs < 1) throw UsageError("training", "max_epochs must be >= 1");
    if (patience < 1) throw UsageError("training", "patience must be >= 1");
    if (!(free_nats_start >= 0)) throw UsageError("training", "free_nats_start must be >= 0");
    if (!(alpha_val >= 0) || !(alpha_kl >= 0) || !(alpha_text >= 0))
        throw UsageError("training", "loss weights must be >= 0");
    if (mc_samples_eval < 1) throw UsageError("training", "mc_samples_eval must be >= 1");
    if (!(weight_decay >= 0)) throw UsageError("training", "weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1) || !positive(adam_eps))
        throw UsageError("training", "invalid Adam hyperparameters");
    if (!positive(grad_clip)) throw UsageError("training", "grad_clip must be positive");
    if (max_steps < 0) throw UsageError("training", "max_steps must be >= 0");
    if (model.latent_dim < 1 || model.hidden_dim < 1 || model.value_dim != 1 || model.mlp_layers < 1)
        throw UsageError("training", "invalid model dimensions");
    if (model.mlp_hidden < 1 || model.d_model < 1 || model.n_layers < 1 || model.n_heads < 1 || model.ff_dim < 1 ||
        model.summary_hidden < 1 || model.summary_tokens < 1 || model.prefix_tokens < 1 || model.max_seq_len < 2)
        throw UsageError("training", "invalid text model dimensions");
    if (model.d_model % model.n_heads != 0) throw UsageError("training", "d_model must be divisible by n_heads");
}

StepOptions TrainConfig::step_options(double free_nats) const {
    StepOptions o;
    o.free_nats = free_nats;
    o.alpha_val = alpha_val;
    o.alpha_kl = alpha_kl;
    o.alpha_text = unimodal ? 0.0 : alpha_text;
    o.use_text = !unimodal;
    return o;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"model", c.model},
                       {"lr_start", c.lr_start},
                       {"lr_end", c.lr_end},
                       {"max_epochs", c.max_epochs},
                       {"patience", c.patience},
                       {"free_nats_start", c.free_nats_start},
                       {"alpha_val", c.alpha_val},
                       {"alpha_kl", c.alpha_kl},
                       {"alpha_text", c.alpha_text},
                       {"mc_samples_eval", c.mc_samples_eval},
                       {"seed", c.seed},
                       {"weight_decay", c.weight_decay},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"adam_eps", c.adam_eps},
                       {"grad_clip", c.grad_clip},
                       {"unimodal", c.unimodal},
                       {"max_steps", c.max_steps}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c.model = j.at("model").get<ModelConfig>();
    c.lr_start = j.at("lr_start");
    c.lr_end = j.at("lr_end");
    c.max_epochs = j.at("max_epochs");
    c.patience = j.at("patience");
    c.free_nats_start = j.at("free_nats_start");
    c.alpha_val = j.at("alpha_val");
    c.alpha_kl = j.at("alpha_kl");
    c.alpha_text = j.at("alpha_text");
    c.mc_samples_eval = j.at("mc_samples_eval");
    c.seed = j.at("seed");
    c.weight_decay = j.at("weight_decay");
    c.beta1 = j.at("beta1");
    c.beta2 = j.at("beta2");
    c.adam_eps = j.at("adam_eps");
    c.grad_clip = j.at("grad_clip");
    c.unimodal = j.at("unimodal");
    c.max_steps = j.at("max_steps");
}

OptimizerState OptimizerState::init(const ParamRegistry& registry) {
    OptimizerState s;
    for (std::size_t i = 0; i < registry.size(); ++i) {
        s.m.emplace_back(registry.value(i).shape());
        s.v.emplace_back(registry.value(i).shape());
    }
    return s;
}

void adamw_update(ParamRegistry& registry, OptimizerState& opt, double lr, const AdamHyper& hp) {
    if (opt.m.size() != registry.size() || opt.v.size() != registry.size())
        throw ContractError("training", "optimizer state does not match the parameter registry");
    ++opt.step;
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < registry.size(); ++i) {
        auto& w = registry.value(i);
        const auto& g = registry.grad(i);
        auto& m = opt.m[i];
        auto& v = opt.v[i];
        if (m.shape() != w.shape() || v.shape() != w.shape())
            throw ContractError("training", "moment shape mismatch for '" + registry.name(i) + "'");
        const bool decay = registry.kind(i) == diff::ParamKind::Weight && hp.weight_decay != 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            double wk = w[k];
            if (decay) wk -= lr * hp.weight_decay * wk;
            const double gk = g[k];
            const double mk = hp.beta1 * m[k] + (1.0 - hp.beta1) * gk;
            const double vk = hp.beta2 * v[k] + (1.0 - hp.beta2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            wk -= lr * (mk / bc1) / (std::sqrt(vk / bc2) + hp.eps);
            w[k] = static_cast<float>(wk);
        }
    }
}

double clip_grad_norm(ParamRegistry& registry, double max_norm) {
    double sq = 0;
    for (std::size_t i = 0; i < registry.size(); ++i)
        for (float g : registry.grad(i).values()) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("training", "gradient norm is not finite");
    if (norm > max_norm) {
        const auto f = static_cast<float>(max_norm / norm);
        for (std::size_t i = 0; i < registry.size(); ++i)
            for (auto& g : registry.grad(i).values()) g *= f;
    }
    return norm;
}

double cosine_lr(long step, long total_steps, double lr_start, double lr_end) {
    if (step < 0 || step > total_steps) throw ContractError("training", "cosine_lr: step outside [0, total_steps]");
    if (total_steps == 0) return lr_start;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * frac));
}

double free_nats_schedule(int epoch, int max_epochs, double free_nats_start) {
    if (epoch < 0 || epoch >= max_epochs) throw ContractError("training", "free_nats_schedule: epoch out of range");
    if (max_epochs == 1) return free_nats_start;
    return free_nats_start * (1.0 - static_cast<double>(epoch) / static_cast<double>(max_epochs - 1));
}

bool EarlyStopping::update(int epoch, double loss) {
    improved_ = std::isfinite(loss) && loss < best_;
    if (improved_) {
        best_ = loss;
        best_epoch_ = epoch;
        bad_epochs_ = 0;
    } else {
        ++bad_epochs_;
    }
    return bad_epochs_ >= patience_;
}

Trainer::Trainer(const LbsModel& model, ParamRegistry& params, TrainConfig config)
    : model_(model),
      params_(params),
      config_(std::move(config)),
      opt_(OptimizerState::init(params)),
      rng_(stream_seed(config_.seed, 0x747261696e)) {
    config_.validate();
}

std::pair<StatePair, ssm::StepLosses> Trainer::train_step(const StatePair& prev, const StepInput& input, double lr,
                                                          double free_nats) {
    params_.zero_grads();
    diff::Tape tape(params_);
    const auto n = static_cast<std::size_t>(model_.config.latent_dim);
    Tensor eps({static_cast<int>(n)}, rng_.normal_vector(n));
    auto g = build_step(tape, model_, prev, input, eps, config_.step_options(free_nats));
    auto losses = g.losses();
    auto check = [](double v, const char* term) {
        if (!std::isfinite(v)) throw NumericError("training", std::string("non-finite ") + term + " loss");
    };
    check(losses.l_val, "value");
    check(losses.l_text, "text");
    check(losses.l_kl_raw, "KL");
    check(losses.total, "total");
    tape.backward(g.total);
    clip_grad_norm(params_, config_.grad_clip);
    adamw_update(params_, opt_, lr, {config_.weight_decay, config_.beta1, config_.beta2, config_.adam_eps});
    return {g.next_state(), losses};
}

double Trainer::validation_loss(std::span<const StepInput> warmup, std::span<const StepInput> val) const {
    if (val.empty()) throw UsageError("training", "validation split is empty");
    const ParamRegistry& params = params_;
    const auto opt = config_.step_options(0.0);
    Filter filter(model_, params, opt.use_text);
    StatePair state = model_.initial_state();
    for (const auto& in : warmup) state = filter.step(state, in);
    const Tensor eps({model_.config.latent_dim});
    double total = 0;
    for (const auto& in : val) {
        diff::Tape tape(params);
        auto g = build_step(tape, model_, state, in, eps, opt, &filter.null_summary());
        total += g.total.value().item();
        state = {g.posterior.mean.value(), g.h.value()};
    }
    return total / static_cast<double>(val.size());
}

FitResult Trainer::fit(std::span<const StepInput> train, std::span<const StepInput> val, const EpochCallback& on_epoch) {
    if (train.empty()) throw UsageError("training", "training split is empty");
    if (val.empty()) throw UsageError("training", "validation split is empty");
    long total_steps = static_cast<long>(config_.max_epochs) * static_cast<long>(train.size());
    if (config_.max_steps > 0) total_steps = std::min(total_steps, config_.max_steps);

    FitResult result;
    EarlyStopping stopper(config_.patience);
    for (int epoch = 0; epoch < config_.max_epochs && result.steps < total_steps; ++epoch) {
        EpochLog log;
        log.epoch = epoch;
        log.free_nats = free_nats_schedule(epoch, config_.max_epochs, config_.free_nats_start);
        StatePair state = model_.initial_state();
        long n = 0;
        for (const auto& in : train) {
            if (result.steps >= total_steps) break;
            const double lr = cosine_lr(result.steps, total_steps, config_.lr_start, config_.lr_end);
            auto [next, losses] = train_step(state, in, lr, log.free_nats);
            state = std::move(next);
            log.lr = lr;
            log.train_loss += losses.total;
            log.train_l_val += losses.l_val;
            log.train_l_text += losses.l_text;
            log.train_l_kl += losses.l_kl_raw;
            ++n;
            ++result.steps;
        }
        log.train_loss /= static_cast<double>(n);
        log.train_l_val /= static_cast<double>(n);
        log.train_l_text /= static_cast<double>(n);
        log.train_l_kl /= static_cast<double>(n);
        log.val_loss = validation_loss(train, val);
        const bool stop = stopper.update(epoch, log.val_loss);
        if (stopper.improved()) {
            result.best_params = params_.snapshot();
            result.best_epoch = epoch;
            result.best_val = log.val_loss;
        }
        result.history.push_back(log);
        if (on_epoch) on_epoch(log);
        if (stop) break;
    }
    if (result.best_epoch < 0) throw NumericError("training", "validation loss was never finite");
    params_.restore(result.best_params);
    return result;
}

}  // namespace lbs::training
