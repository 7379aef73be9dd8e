#include "lbs/nn.hpp"

#include <cmath>

#include "lbs/rng.hpp"

namespace lbs::nn {

double xavier_bound(int fan_in, int fan_out) { return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)); }

void init_params(ParamRegistry& registry, std::uint64_t seed) {
    for (std::size_t i = 0; i < registry.size(); ++i) {
        auto& value = registry.value(i);
        Rng rng(stream_seed(seed, i, 0x696e6974));
        switch (registry.kind(i)) {
            case ParamKind::Weight: {
                const int fan_out = value.shape().front();
                const int fan_in = static_cast<int>(value.size()) / fan_out;
                const float a = static_cast<float>(xavier_bound(fan_in, fan_out));
                for (auto& w : value.values()) {
                    w = static_cast<float>(rng.uniform(-a, a));
                    w = std::clamp(w, -a, a);
                }
                break;
            }
            case ParamKind::Bias: value.fill(0.0f); break;
            case ParamKind::Gain: value.fill(1.0f); break;
            case ParamKind::Embedding:
                for (auto& w : value.values()) w = static_cast<float>(0.02 * rng.normal());
                break;
        }
    }
}

}  // namespace lbs::nn
