#pragma once

// Byte-level causal text model. One parameter set serves both directions:
// compressing text into a latent-sized summary vector (via appended summary
// tokens) and scoring / generating text conditioned on a latent state
// (via projected prefix embeddings).

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lbs/diffcore.hpp"
#include "lbs/nn.hpp"

namespace lbs::text {

using diff::BasicTape;
using diff::BasicVar;
using diff::ParamId;
using diff::ParamRegistry;
using diff::Tensor;

/// Token ids: 0..255 raw bytes, then BOS, EOS, PAD, NULLTEXT, SUM_1..SUM_K.
class Vocab {
public:
    static constexpr int kByteTokens = 256;
    static constexpr int kBos = 256;
    static constexpr int kEos = 257;
    static constexpr int kPad = 258;
    static constexpr int kNullText = 259;
    static constexpr int kFirstSummary = 260;

    explicit Vocab(int summary_tokens = 8) : summary_tokens_(summary_tokens) {}

    int summary(int k) const { return kFirstSummary + k; }
    int summary_tokens() const { return summary_tokens_; }
    int size() const { return kFirstSummary + summary_tokens_; }
    static bool is_byte(int id) { return id >= 0 && id < kByteTokens; }

private:
    int summary_tokens_;
};

/// Bytes of `text` wrapped in BOS/EOS.
std::vector<int> tokenize(std::string_view text);
/// Inverse of tokenize; non-byte tokens are dropped.
std::string detokenize(std::span<const int> ids);

struct TextConfig {
    int latent_dim = 16;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 2;
    int ff_dim = 128;
    int summary_tokens = 8;
    int prefix_tokens = 8;
    int summary_hidden = 64;
    int max_seq_len = 256;

    int max_positions() const { return max_seq_len + std::max(summary_tokens, prefix_tokens); }
};

struct Block {
    ParamId ln1_gain, ln1_bias;
    nn::Linear qkv;
    nn::Linear proj;
    ParamId ln2_gain, ln2_bias;
    nn::Linear ff_in;
    nn::Linear ff_out;
};

class TextModel {
public:
    static TextModel declare(ParamRegistry& reg, const TextConfig& cfg);

    const TextConfig& config() const { return config_; }
    const Vocab& vocab() const { return vocab_; }

    /// Causal transformer over input embeddings [L, d] (positions added here);
    /// returns final-layer-normed hidden states [L, d].
    template <class T>
    BasicVar<T> hidden_states(BasicTape<T>& tape, BasicVar<T> x) const {
        const int L = x.value().rows();
        if (x.value().rank() != 2 || x.value().cols() != config_.d_model || L > config_.max_positions())
            throw ContractError("textcodec", "hidden_states: bad input shape " + diff::shape_str(x.shape()));
        std::vector<int> pos(L);
        for (int i = 0; i < L; ++i) pos[i] = i;
        x = diff::add(x, positions_.forward(tape, std::span<const int>(pos)));
        const int dh = config_.d_model / config_.n_heads;
        const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
        for (const auto& b : blocks_) {
            auto a = diff::layer_norm(x, tape.param(b.ln1_gain), tape.param(b.ln1_bias));
            auto qkv = b.qkv.forward(tape, a);
            std::vector<BasicVar<T>> heads;
            for (int h = 0; h < config_.n_heads; ++h) {
                auto q = diff::slice_cols(qkv, h * dh, dh);
                auto k = diff::slice_cols(qkv, config_.d_model + h * dh, dh);
                auto v = diff::slice_cols(qkv, 2 * config_.d_model + h * dh, dh);
                auto scores = diff::causal_mask(diff::scale(diff::matmul_nt(q, k), inv_sqrt));
                heads.push_back(diff::matmul(diff::softmax(scores), v));
            }
            auto att = heads.size() == 1 ? heads.front() : diff::concat_cols(heads);
            x = diff::add(x, b.proj.forward(tape, att));
            auto f = diff::layer_norm(x, tape.param(b.ln2_gain), tape.param(b.ln2_bias));
            x = diff::add(x, b.ff_out.forward(tape, diff::gelu(b.ff_in.forward(tape, f))));
        }
        return diff::layer_norm(x, tape.param(lnf_gain_), tape.param(lnf_bias_));
    }

    /// Compress a token sequence into s in R^N via the summary tokens.
    template <class T>
    BasicVar<T> encode_summary(BasicTape<T>& tape, std::span<const int> tokens) const {
        std::vector<int> seq = clip_tokens(tokens);
        const int K = config_.summary_tokens;
        for (int k = 0; k < K; ++k) seq.push_back(vocab_.summary(k));
        auto hs = hidden_states(tape, token_embeddings_.forward(tape, std::span<const int>(seq)));
        auto tail = diff::slice_rows(hs, static_cast<int>(seq.size()) - K, K);
        auto flat = diff::reshape(tail, {K * config_.d_model});
        return summary_.forward(tape, flat);
    }

    /// Summary of the missing-text marker [BOS, NULLTEXT, EOS].
    template <class T>
    BasicVar<T> null_summary(BasicTape<T>& tape) const {
        const int ids[] = {Vocab::kBos, Vocab::kNullText, Vocab::kEos};
        return encode_summary(tape, std::span<const int>(ids));
    }

    /// Prefix embeddings [P, d] projected from a latent state.
    template <class T>
    BasicVar<T> prefix(BasicTape<T>& tape, BasicVar<T> x_hat) const {
        return diff::reshape(prefix_.forward(tape, x_hat), {config_.prefix_tokens, config_.d_model});
    }

    /// Log-probabilities [L-1, V] of tokens[1..] given the prefix and tokens[..i].
    template <class T>
    BasicVar<T> next_token_logprobs(BasicTape<T>& tape, BasicVar<T> x_hat, std::span<const int> tokens) const {
        if (tokens.size() < 2) throw ContractError("textcodec", "text_loss needs at least two tokens");
        const int P = config_.prefix_tokens;
        const int L = static_cast<int>(tokens.size());
        auto seq = diff::concat_rows<T>({prefix(tape, x_hat), token_embeddings_.forward(tape, tokens)});
        auto hs = hidden_states(tape, seq);
        auto pred = diff::slice_rows(hs, P, L - 1);
        auto logits = diff::matmul_nt(pred, tape.param(token_embeddings_.rows));
        return diff::log_softmax(logits);
    }

    /// Per-token negative log-likelihood [L-1] under teacher forcing.
    template <class T>
    BasicVar<T> token_nll(BasicTape<T>& tape, BasicVar<T> x_hat, std::span<const int> tokens) const {
        std::vector<int> seq = clip_tokens(tokens);
        auto lp = next_token_logprobs(tape, x_hat, std::span<const int>(seq));
        std::vector<int> targets(seq.begin() + 1, seq.end());
        return diff::scale(diff::pick(lp, std::span<const int>(targets)), T(-1));
    }

    /// Mean per-token NLL of `tokens` conditioned on x_hat.
    template <class T>
    BasicVar<T> text_loss(BasicTape<T>& tape, BasicVar<T> x_hat, std::span<const int> tokens) const {
        return diff::mean(token_nll(tape, x_hat, tokens));
    }

    /// Autoregressive sampling after [prefix, BOS, forced...]. Temperature 0
    /// is greedy argmax with first-index ties. Returns the text after BOS,
    /// including the forced tokens, up to EOS or max_len generated tokens.
    std::string generate(const ParamRegistry& params, const Tensor& x_hat, int max_len, float temperature,
                         std::uint64_t seed, std::span<const int> forced = {}) const;

    /// Front-truncate to max_seq_len (keeping the most recent tokens);
    /// empty input becomes [BOS, EOS].
    std::vector<int> clip_tokens(std::span<const int> tokens) const;

    const nn::Linear& prefix_projection() const { return prefix_; }
    const nn::EmbeddingTable& token_embeddings() const { return token_embeddings_; }

private:
    TextConfig config_;
    Vocab vocab_;
    nn::EmbeddingTable token_embeddings_;
    nn::EmbeddingTable positions_;
    std::vector<Block> blocks_;
    ParamId lnf_gain_, lnf_bias_;
    nn::Linear prefix_;
    nn::Mlp summary_;
};

}  // namespace lbs::text
