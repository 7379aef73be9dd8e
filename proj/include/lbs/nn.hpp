#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lbs/diffcore.hpp"

namespace lbs::nn {

using diff::BasicTape;
using diff::BasicVar;
using diff::ParamId;
using diff::ParamKind;
using diff::ParamRegistry;

enum class Activation { Tanh, Gelu };

/// y = W x + b with W stored [out, in]. Accepts [in] or [rows, in].
struct Linear {
    ParamId weight;
    ParamId bias;
    int in = 0;
    int out = 0;

    static Linear declare(ParamRegistry& reg, const std::string& name, int in, int out) {
        Linear l;
        l.in = in;
        l.out = out;
        l.weight = reg.declare(name + ".weight", {out, in}, ParamKind::Weight);
        l.bias = reg.declare(name + ".bias", {out}, ParamKind::Bias);
        return l;
    }

    template <class T>
    BasicVar<T> forward(BasicTape<T>& tape, BasicVar<T> x) const {
        if (x.value().cols() != in)
            throw ContractError("nn", "linear: input width " + std::to_string(x.value().cols()) + " != " +
                                          std::to_string(in));
        return diff::add(diff::matmul_nt(x, tape.param(weight)), tape.param(bias));
    }
};

template <class T>
BasicVar<T> activate(Activation act, BasicVar<T> x) {
    return act == Activation::Tanh ? diff::tanh(x) : diff::gelu(x);
}

/// Stack of linear layers with an activation between layers (none after the last).
struct Mlp {
    std::vector<Linear> layers;
    Activation activation = Activation::Tanh;

    /// dims = {in, hidden..., out}
    static Mlp declare(ParamRegistry& reg, const std::string& name, const std::vector<int>& dims,
                       Activation act = Activation::Tanh) {
        if (dims.size() < 2) throw ContractError("nn", "mlp needs at least input and output widths");
        Mlp m;
        m.activation = act;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i)
            m.layers.push_back(Linear::declare(reg, name + "." + std::to_string(i), dims[i], dims[i + 1]));
        return m;
    }

    int in() const { return layers.front().in; }
    int out() const { return layers.back().out; }

    template <class T>
    BasicVar<T> forward(BasicTape<T>& tape, BasicVar<T> x) const {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            x = layers[i].forward(tape, x);
            if (i + 1 < layers.size()) x = activate(activation, x);
        }
        return x;
    }
};

/// Single-layer GRU cell (gate order: reset, update, candidate).
///
///   r  = sigmoid(Wir x + bir + Whr h + bhr)
///   z  = sigmoid(Wiz x + biz + Whz h + bhz)
///   n  = tanh(Win x + bin + r * (Whn h + bhn))
///   h' = (1 - z) * n + z * h
struct GruCell {
    Linear input;   // [3H, in]
    Linear hidden;  // [3H, H]
    int in = 0;
    int hidden_dim = 0;

    static GruCell declare(ParamRegistry& reg, const std::string& name, int in, int hidden_dim) {
        GruCell g;
        g.in = in;
        g.hidden_dim = hidden_dim;
        g.input = Linear::declare(reg, name + ".input", in, 3 * hidden_dim);
        g.hidden = Linear::declare(reg, name + ".hidden", hidden_dim, 3 * hidden_dim);
        return g;
    }

    template <class T>
    BasicVar<T> forward(BasicTape<T>& tape, BasicVar<T> x, BasicVar<T> h) const {
        if (x.value().rank() != 1 || h.value().rank() != 1 || h.value().cols() != hidden_dim)
            throw ContractError("nn", "gru_step: expected h of width " + std::to_string(hidden_dim) + ", got " +
                                          diff::shape_str(h.shape()));
        const int H = hidden_dim;
        auto gi = input.forward(tape, x);
        auto gh = hidden.forward(tape, h);
        auto r = diff::sigmoid(diff::add(diff::slice(gi, 0, H), diff::slice(gh, 0, H)));
        auto z = diff::sigmoid(diff::add(diff::slice(gi, H, H), diff::slice(gh, H, H)));
        auto n = diff::tanh(diff::add(diff::slice(gi, 2 * H, H), diff::mul(r, diff::slice(gh, 2 * H, H))));
        return diff::add(n, diff::mul(z, diff::sub(h, n)));
    }
};

struct EmbeddingTable {
    ParamId rows;
    int vocab = 0;
    int dim = 0;

    static EmbeddingTable declare(ParamRegistry& reg, const std::string& name, int vocab, int dim) {
        EmbeddingTable e;
        e.vocab = vocab;
        e.dim = dim;
        e.rows = reg.declare(name, {vocab, dim}, ParamKind::Embedding);
        return e;
    }

    template <class T>
    BasicVar<T> forward(BasicTape<T>& tape, std::span<const int> ids) const {
        return diff::embedding(tape.param(rows), ids);
    }
};

/// Xavier-uniform weights, zero biases, N(0, 0.02) embeddings, unit gains.
/// Each tensor draws from its own stream keyed by (seed, index).
void init_params(ParamRegistry& registry, std::uint64_t seed);

/// Bound used by init_params for a [rows, cols] weight.
double xavier_bound(int fan_in, int fan_out);

}  // namespace lbs::nn
