#include "lbs/ssm.hpp"

#include <cmath>

namespace lbs::ssm {

StateSpaceModel StateSpaceModel::declare(ParamRegistry& reg, const SsmConfig& cfg) {
    if (cfg.latent_dim <= 0 || cfg.hidden_dim <= 0 || cfg.value_dim <= 0 || cfg.mlp_layers < 1)
        throw ContractError("ssm", "invalid state-space configuration");
    StateSpaceModel m;
    m.config = cfg;
    m.gru = nn::GruCell::declare(reg, "ssm.gru", cfg.latent_dim, cfg.hidden_dim);
    m.prior_mean = nn::Linear::declare(reg, "ssm.prior_mean", cfg.hidden_dim, cfg.latent_dim);
    m.prior_log_var = nn::Linear::declare(reg, "ssm.prior_log_var", cfg.hidden_dim, cfg.latent_dim);

    auto dims = [&](int in, int out) {
        std::vector<int> d{in};
        for (int i = 1; i < cfg.mlp_layers; ++i) d.push_back(cfg.mlp_hidden);
        d.push_back(out);
        return d;
    };
    m.posterior = nn::Mlp::declare(reg, "ssm.posterior",
                                   dims(cfg.hidden_dim + cfg.value_dim + cfg.latent_dim, 2 * cfg.latent_dim));
    m.emission = nn::Mlp::declare(reg, "ssm.emission", dims(cfg.latent_dim, cfg.value_dim));
    return m;
}

double kl_diag_gaussian(const DiagGaussian& q, const DiagGaussian& p) {
    if (q.mean.size() != p.mean.size() || q.log_var.size() != q.mean.size() || p.log_var.size() != p.mean.size())
        throw ContractError("ssm", "kl_diag_gaussian: dimension mismatch");
    double kl = 0;
    for (std::size_t i = 0; i < q.mean.size(); ++i) {
        const double lq = q.log_var[i], lp = p.log_var[i];
        const double d = static_cast<double>(q.mean[i]) - p.mean[i];
        kl += (std::exp(lq) + d * d) / std::exp(lp) - 1.0 + lp - lq;
    }
    return 0.5 * kl;
}

}  // namespace lbs::ssm
