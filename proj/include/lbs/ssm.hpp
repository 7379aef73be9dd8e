#pragma once

// Latent dynamical model: GRU prior transition, numeric emission,
// neural-Kalman posterior, reparameterized sampling and the KL regularizer.

#include <string>
#include <vector>

#include "lbs/diffcore.hpp"
#include "lbs/nn.hpp"

namespace lbs::ssm {

using diff::BasicTape;
using diff::BasicTensor;
using diff::BasicVar;
using diff::ParamRegistry;
using diff::Tensor;

inline constexpr float kLogVarMin = -10.0f;
inline constexpr float kLogVarMax = 10.0f;

/// Diagonal Gaussian by mean and log-variance.
struct DiagGaussian {
    Tensor mean;
    Tensor log_var;
};

template <class T>
struct GaussianVar {
    BasicVar<T> mean;
    BasicVar<T> log_var;

    DiagGaussian value() const {
        return {mean.value().template cast<float>(), log_var.value().template cast<float>()};
    }
};

/// Sampled latent state and deterministic GRU hidden carried between steps.
/// Plain tensors: a StatePair never references a tape.
struct StatePair {
    Tensor x_hat;
    Tensor h;

    static StatePair zeros(int latent_dim, int hidden_dim) {
        return {Tensor({latent_dim}), Tensor({hidden_dim})};
    }
};

struct StepLosses {
    double l_val = 0;
    double l_text = 0;
    double l_kl_raw = 0;
    double l_kl_clamped = 0;
    double total = 0;
};

struct SsmConfig {
    int latent_dim = 16;
    int hidden_dim = 16;
    int value_dim = 1;
    int mlp_hidden = 64;
    /// 1 gives linear posterior / emission heads.
    int mlp_layers = 2;
};

template <class T>
struct PriorOut {
    GaussianVar<T> prior;
    BasicVar<T> h;
};

struct StateSpaceModel {
    SsmConfig config;
    nn::GruCell gru;
    nn::Linear prior_mean;
    nn::Linear prior_log_var;
    nn::Mlp posterior;  // concat(h, y, s) -> [mean, log_var]
    nn::Mlp emission;   // x -> y

    static StateSpaceModel declare(ParamRegistry& reg, const SsmConfig& cfg);

    /// h_t = GRU(x_{t-1}, h_{t-1}); prior heads are linear in h_t.
    /// `prev` enters as constants, so nothing flows back into earlier steps.
    template <class T>
    PriorOut<T> prior_step(BasicTape<T>& tape, const StatePair& prev) const {
        check_state(prev);
        auto x = tape.constant(prev.x_hat.template cast<T>());
        auto h = tape.constant(prev.h.template cast<T>());
        auto h_new = gru.forward(tape, x, h);
        GaussianVar<T> prior{prior_mean.forward(tape, h_new),
                             diff::clamp(prior_log_var.forward(tape, h_new), T(kLogVarMin), T(kLogVarMax))};
        return {prior, h_new};
    }

    template <class T>
    GaussianVar<T> posterior_infer(BasicTape<T>& tape, BasicVar<T> h, const BasicTensor<T>& y,
                                   BasicVar<T> s) const {
        if (static_cast<int>(y.size()) != config.value_dim || s.value().cols() != config.latent_dim ||
            h.value().cols() != config.hidden_dim)
            throw ContractError("ssm", "posterior_infer: expected h[" + std::to_string(config.hidden_dim) + "], y[" +
                                           std::to_string(config.value_dim) + "], s[" +
                                           std::to_string(config.latent_dim) + "]");
        auto in = diff::concat<T>({h, tape.constant(y), s});
        auto out = posterior.forward(tape, in);
        const int n = config.latent_dim;
        return {diff::slice(out, 0, n), diff::clamp(diff::slice(out, n, n), T(kLogVarMin), T(kLogVarMax))};
    }

    template <class T>
    BasicVar<T> emit(BasicTape<T>& tape, BasicVar<T> x_hat) const {
        return emission.forward(tape, x_hat);
    }

    void check_state(const StatePair& s) const {
        if (static_cast<int>(s.x_hat.size()) != config.latent_dim || static_cast<int>(s.h.size()) != config.hidden_dim)
            throw ContractError("ssm", "state pair has shapes " + diff::shape_str(s.x_hat.shape()) + " / " +
                                           diff::shape_str(s.h.shape()));
        if (!s.x_hat.all_finite() || !s.h.all_finite()) throw NumericError("ssm", "state pair is not finite");
    }
};

/// x = mean + exp(0.5 log_var) * eps
template <class T>
BasicVar<T> reparam_sample(BasicTape<T>& tape, const GaussianVar<T>& g, const BasicTensor<T>& eps) {
    if (eps.size() != g.mean.value().size()) throw ContractError("ssm", "reparam_sample: eps dimension mismatch");
    auto std_dev = diff::exp(diff::scale(g.log_var, T(0.5)));
    return diff::add(g.mean, diff::mul(std_dev, tape.constant(eps)));
}

/// KL(q || p) for diagonal Gaussians, summed over dimensions.
template <class T>
BasicVar<T> kl_diag_gaussian(const GaussianVar<T>& q, const GaussianVar<T>& p) {
    if (q.mean.value().shape() != p.mean.value().shape())
        throw ContractError("ssm", "kl_diag_gaussian: dimension mismatch " + diff::shape_str(q.mean.shape()) +
                                       " vs " + diff::shape_str(p.mean.shape()));
    auto diff2 = diff::square(diff::sub(q.mean, p.mean));
    auto num = diff::add(diff::exp(q.log_var), diff2);
    auto ratio = diff::div(num, diff::exp(p.log_var));
    auto terms = diff::add(diff::add_scalar(ratio, T(-1)), diff::sub(p.log_var, q.log_var));
    return diff::scale(diff::sum(terms), T(0.5));
}

/// max(kl, free_nats): no gradient reaches kl while it sits below the floor.
template <class T>
BasicVar<T> apply_free_nats(BasicVar<T> kl_raw, T free_nats) {
    if (free_nats <= T(0)) return kl_raw;
    return diff::maximum(kl_raw, free_nats);
}

/// ||y - MLP_val(x_hat)||^2
template <class T>
BasicVar<T> value_loss(BasicTape<T>& tape, const StateSpaceModel& model, BasicVar<T> x_hat,
                       const BasicTensor<T>& y) {
    auto y_pred = model.emit(tape, x_hat);
    if (y_pred.value().size() != y.size()) throw ContractError("ssm", "value_loss: target dimension mismatch");
    return diff::sum(diff::square(diff::sub(y_pred, tape.constant(y))));
}

/// Closed-form KL on plain tensors (64-bit accumulation).
double kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p);

}  // namespace lbs::ssm
