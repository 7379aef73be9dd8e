#include "lbs/textcodec.hpp"

#include <algorithm>
#include <limits>

#include "lbs/rng.hpp"

namespace lbs::text {

std::vector<int> tokenize(std::string_view text) {
    std::vector<int> ids;
    ids.reserve(text.size() + 2);
    ids.push_back(Vocab::kBos);
    for (unsigned char c : text) ids.push_back(c);
    ids.push_back(Vocab::kEos);
    return ids;
}

std::string detokenize(std::span<const int> ids) {
    std::string out;
    for (int id : ids)
        if (Vocab::is_byte(id)) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    return out;
}

TextModel TextModel::declare(ParamRegistry& reg, const TextConfig& cfg) {
    if (cfg.d_model % cfg.n_heads != 0) throw ContractError("textcodec", "d_model must be divisible by n_heads");
    if (cfg.summary_tokens < 1 || cfg.prefix_tokens < 1 || cfg.max_seq_len < 2)
        throw ContractError("textcodec", "invalid text model configuration");
    TextModel m;
    m.config_ = cfg;
    m.vocab_ = Vocab(cfg.summary_tokens);
    m.token_embeddings_ = nn::EmbeddingTable::declare(reg, "text.tokens", m.vocab_.size(), cfg.d_model);
    m.positions_ = nn::EmbeddingTable::declare(reg, "text.positions", cfg.max_positions(), cfg.d_model);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "text.block" + std::to_string(l);
        Block b;
        b.ln1_gain = reg.declare(p + ".ln1.gain", {cfg.d_model}, diff::ParamKind::Gain);
        b.ln1_bias = reg.declare(p + ".ln1.bias", {cfg.d_model}, diff::ParamKind::Bias);
        b.qkv = nn::Linear::declare(reg, p + ".qkv", cfg.d_model, 3 * cfg.d_model);
        b.proj = nn::Linear::declare(reg, p + ".proj", cfg.d_model, cfg.d_model);
        b.ln2_gain = reg.declare(p + ".ln2.gain", {cfg.d_model}, diff::ParamKind::Gain);
        b.ln2_bias = reg.declare(p + ".ln2.bias", {cfg.d_model}, diff::ParamKind::Bias);
        b.ff_in = nn::Linear::declare(reg, p + ".ff_in", cfg.d_model, cfg.ff_dim);
        b.ff_out = nn::Linear::declare(reg, p + ".ff_out", cfg.ff_dim, cfg.d_model);
        m.blocks_.push_back(b);
    }
    m.lnf_gain_ = reg.declare("text.lnf.gain", {cfg.d_model}, diff::ParamKind::Gain);
    m.lnf_bias_ = reg.declare("text.lnf.bias", {cfg.d_model}, diff::ParamKind::Bias);
    m.prefix_ = nn::Linear::declare(reg, "text.prefix", cfg.latent_dim, cfg.prefix_tokens * cfg.d_model);
    m.summary_ = nn::Mlp::declare(reg, "text.summary",
                                  {cfg.summary_tokens * cfg.d_model, cfg.summary_hidden, cfg.latent_dim});
    return m;
}

std::vector<int> TextModel::clip_tokens(std::span<const int> tokens) const {
    if (tokens.empty()) return {Vocab::kBos, Vocab::kEos};
    const std::size_t keep = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(config_.max_seq_len));
    return {tokens.end() - static_cast<std::ptrdiff_t>(keep), tokens.end()};
}

std::string TextModel::generate(const ParamRegistry& params, const Tensor& x_hat, int max_len, float temperature,
                                std::uint64_t seed, std::span<const int> forced) const {
    if (max_len < 1) throw ContractError("textcodec", "generate: max_len must be >= 1");
    if (temperature < 0) throw ContractError("textcodec", "generate: temperature must be >= 0");
    Rng rng(seed);
    std::vector<int> seq{Vocab::kBos};
    seq.insert(seq.end(), forced.begin(), forced.end());
    const int room = config_.max_seq_len - static_cast<int>(seq.size());
    const int budget = std::min(max_len, room);
    int produced = 0;
    while (produced < budget) {
        diff::Tape tape(params);
        auto x = tape.constant(x_hat);
        auto input = diff::concat_rows<float>({prefix(tape, x), token_embeddings_.forward(tape, std::span<const int>(seq))});
        auto hs = hidden_states(tape, input);
        auto last = diff::slice_rows(hs, hs.value().rows() - 1, 1);
        const auto& logits = diff::matmul_nt(last, tape.param(token_embeddings_.rows)).value();

        // Only bytes and EOS are emitted.
        auto allowed = [](int id) { return Vocab::is_byte(id) || id == Vocab::kEos; };
        int next = -1;
        if (temperature == 0.0f) {
            float best = -std::numeric_limits<float>::infinity();
            for (int id = 0; id < static_cast<int>(logits.size()); ++id)
                if (allowed(id) && logits[id] > best) best = logits[id], next = id;
        } else {
            float mx = -std::numeric_limits<float>::infinity();
            for (int id = 0; id < static_cast<int>(logits.size()); ++id)
                if (allowed(id)) mx = std::max(mx, logits[id]);
            std::vector<double> w(logits.size(), 0.0);
            double total = 0;
            for (int id = 0; id < static_cast<int>(logits.size()); ++id)
                if (allowed(id)) total += (w[id] = std::exp((logits[id] - mx) / temperature));
            double u = rng.uniform() * total;
            for (int id = 0; id < static_cast<int>(w.size()); ++id) {
                if (w[id] == 0.0) continue;
                next = id;
                if ((u -= w[id]) <= 0) break;
            }
        }
        if (next == Vocab::kEos) break;
        seq.push_back(next);
        ++produced;
    }
    return detokenize(seq);
}

}  // namespace lbs::text
