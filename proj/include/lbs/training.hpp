#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "lbs/model.hpp"
#include "lbs/rng.hpp"

namespace lbs::training {

struct TrainConfig {
    ModelConfig model;
    double lr_start = 5e-4;
    double lr_end = 5e-5;
    int max_epochs = 20;
    int patience = 5;
    double free_nats_start = 2.5;
    double alpha_val = 1.0;
    double alpha_kl = 1.0;
    double alpha_text = 0.1;
    int mc_samples_eval = 10;
    std::uint64_t seed = 0;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 10.0;
    /// Ignore text everywhere: null summary, no text loss.
    bool unimodal = false;
    /// Upper bound on optimizer steps across all epochs (0 = no bound).
    long max_steps = 0;

    void validate() const;
    StepOptions step_options(double free_nats) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct OptimizerState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    long step = 0;

    static OptimizerState init(const ParamRegistry& registry);
};

struct AdamHyper {
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Decoupled decay (weights only), then bias-corrected Adam.
void adamw_update(ParamRegistry& registry, OptimizerState& opt, double lr, const AdamHyper& hp);

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(ParamRegistry& registry, double max_norm);

double cosine_lr(long step, long total_steps, double lr_start, double lr_end);
double free_nats_schedule(int epoch, int max_epochs, double free_nats_start);

class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}

    /// Records the loss of `epoch`; returns true when training should stop.
    bool update(int epoch, double loss);
    bool improved() const { return improved_; }
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_; }

private:
    int patience_;
    int bad_epochs_ = 0;
    int best_epoch_ = -1;
    double best_ = std::numeric_limits<double>::infinity();
    bool improved_ = false;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0;
    double train_l_val = 0;
    double train_l_text = 0;
    double train_l_kl = 0;
    double val_loss = 0;
    double lr = 0;
    double free_nats = 0;
};

struct FitResult {
    std::vector<Tensor> best_params;
    int best_epoch = -1;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<EpochLog> history;
    long steps = 0;
};

class Trainer {
public:
    Trainer(const LbsModel& model, ParamRegistry& params, TrainConfig config);

    /// One stateful step: forward, backward, clip, AdamW. The returned state
    /// is detached.
    std::pair<StatePair, ssm::StepLosses> train_step(const StatePair& prev, const StepInput& input, double lr,
                                                     double free_nats);

    /// Mean per-step weighted negative ELBO over `val` (eps = 0, raw KL), after
    /// filtering through `warmup` without updates.
    double validation_loss(std::span<const StepInput> warmup, std::span<const StepInput> val) const;

    using EpochCallback = std::function<void(const EpochLog&)>;
    FitResult fit(std::span<const StepInput> train, std::span<const StepInput> val, const EpochCallback& on_epoch = {});

    const TrainConfig& config() const { return config_; }
    OptimizerState& optimizer() { return opt_; }

private:
    const LbsModel& model_;
    ParamRegistry& params_;
    TrainConfig config_;
    OptimizerState opt_;
    Rng rng_;
};

}  // namespace lbs::training
