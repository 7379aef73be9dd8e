#include <cmath>
#include <filesystem>
#include <fstream>

#include "../common/cases.hpp"
#include "doctest.h"
#include "lbs/checkpoint.hpp"
#include "lbs/evalharness.hpp"
#include "lbs/forecast.hpp"
#include "lbs/pipeline.hpp"
#include "lbs/training.hpp"

using namespace lbs;
using namespace lbs::training;
using diff::Tape;
using diff::Tensor;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "lbs_unit";
    fs::create_directories(dir);
    return dir / name;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

TrainConfig tiny_train(int epochs = 2) {
    TrainConfig c;
    c.model = cases::tiny_config();
    c.max_epochs = epochs;
    c.seed = 3;
    return c;
}

std::vector<StepInput> small_series(int n, bool text) {
    data::SynthConfig sc;
    sc.steps = n;
    const auto ds = data::synth_generate(sc);
    return data::to_step_inputs(ds.observations, data::compute_norm_stats(ds.observations), text);
}

}  // namespace

TEST_CASE("weighted step loss") {
    ParamRegistry reg;
    const auto cfg = cases::tiny_config();
    auto m = LbsModel::declare(reg, cfg);
    nn::init_params(reg, 2);
    Rng rng(1);
    SUBCASE("no text and alpha_text = 0: value loss plus clamped KL") {
        StepOptions opt;
        opt.alpha_text = 0;
        opt.free_nats = 2.5;
        Tape tape(reg);
        auto g = build_step(tape, m, m.initial_state(), StepInput{0.4f, std::nullopt},
                            Tensor({cfg.latent_dim}, rng.normal_vector(3)), opt);
        const auto l = g.losses();
        CHECK_FALSE(g.l_text.has_value());
        CHECK(l.total == doctest::Approx(l.l_val + l.l_kl_clamped).epsilon(1e-6));
        CHECK(l.l_kl_clamped == doctest::Approx(std::max(l.l_kl_raw, 2.5)));
    }
    SUBCASE("decomposition with every term") {
        for (int i = 0; i < 20; ++i) {
            StepOptions opt;
            opt.alpha_val = rng.uniform(0.1, 2);
            opt.alpha_text = rng.uniform(0.1, 2);
            opt.alpha_kl = rng.uniform(0.1, 2);
            opt.free_nats = rng.uniform(0, 3);
            Tape tape(reg);
            auto g = build_step(tape, m, m.initial_state(), StepInput{0.4f, text::tokenize("levels high")},
                                Tensor({cfg.latent_dim}, rng.normal_vector(3)), opt);
            const auto l = g.losses();
            const double expect = opt.alpha_val * l.l_val + opt.alpha_text * l.l_text + opt.alpha_kl * l.l_kl_clamped;
            CHECK(std::abs(l.total - expect) <= 1e-6 * std::max(1.0, std::abs(expect)));
            CHECK(l.l_val >= 0);
            CHECK(l.l_kl_raw >= 0);
            CHECK(l.l_kl_clamped >= l.l_kl_raw - opt.free_nats);
        }
    }
    SUBCASE("unimodal options skip text") {
        TrainConfig c = tiny_train();
        c.unimodal = true;
        const auto opt = c.step_options(0);
        CHECK(opt.alpha_text == 0);
        CHECK_FALSE(opt.use_text);
    }
}

TEST_CASE("training on a constant series lowers the value loss") {
    ParamRegistry reg;
    TrainConfig c;
    c.seed = 1;
    auto m = LbsModel::declare(reg, c.model);
    nn::init_params(reg, c.seed);
    Trainer trainer(m, reg, c);
    StatePair s = m.initial_state();
    double first = 0, last = 0;
    for (int i = 1; i <= 200; ++i) {
        auto [next, l] = trainer.train_step(s, StepInput{0.0f, std::nullopt}, c.lr_start, 0.0);
        s = next;
        if (i == 1) first = l.l_val;
        if (i == 200) last = l.l_val;
    }
    CHECK(last < first);
}

TEST_CASE("adamw") {
    SUBCASE("zero gradient and no decay leaves parameters alone") {
        ParamRegistry reg;
        auto id = reg.declare("w", {3}, diff::ParamKind::Weight);
        reg.value(id) = Tensor::vector({1, -2, 3});
        auto opt = OptimizerState::init(reg);
        for (int i = 0; i < 5; ++i) adamw_update(reg, opt, 1e-2, {0.0, 0.9, 0.999, 1e-8});
        CHECK(reg.value(id) == Tensor::vector({1, -2, 3}));
    }
    SUBCASE("first step with unit gradient moves by about lr") {
        ParamRegistry reg;
        auto id = reg.declare("w", {1}, diff::ParamKind::Weight);
        reg.value(id) = Tensor::vector({0.5f});
        reg.grad(id) = Tensor::vector({1});
        auto opt = OptimizerState::init(reg);
        adamw_update(reg, opt, 1e-3, {0.0, 0.9, 0.999, 1e-8});
        CHECK(reg.value(id)[0] - 0.5 == doctest::Approx(-1e-3).epsilon(1e-4));
    }
    SUBCASE("decay touches weights only") {
        ParamRegistry reg;
        auto w = reg.declare("w", {1}, diff::ParamKind::Weight);
        auto b = reg.declare("b", {1}, diff::ParamKind::Bias);
        auto e = reg.declare("e", {1, 1}, diff::ParamKind::Embedding);
        for (auto id : {w, b, e}) reg.value(id).fill(1);
        auto opt = OptimizerState::init(reg);
        adamw_update(reg, opt, 0.1, {0.5, 0.9, 0.999, 1e-8});
        CHECK(reg.value(w)[0] == doctest::Approx(0.95));
        CHECK(reg.value(b)[0] == 1.0f);
        CHECK(reg.value(e)[0] == 1.0f);
    }
    SUBCASE("matches a 64-bit reference over 100 steps") {
        Rng rng(5);
        ParamRegistry reg;
        auto w = reg.declare("w", {4, 3}, diff::ParamKind::Weight);
        auto b = reg.declare("b", {3}, diff::ParamKind::Bias);
        std::vector<std::vector<double>> ref(2), m(2), v(2);
        for (auto [k, id] : {std::pair{0, w}, std::pair{1, b}}) {
            for (auto& x : reg.value(id).values()) {
                x = static_cast<float>((rng.uniform() < 0.5 ? -1 : 1) * rng.uniform(0.2, 1.0));
                ref[k].push_back(x);
            }
            m[k].assign(ref[k].size(), 0);
            v[k].assign(ref[k].size(), 0);
        }
        const AdamHyper hp{0.01, 0.9, 0.999, 1e-8};
        auto opt = OptimizerState::init(reg);
        for (int step = 1; step <= 100; ++step) {
            const double lr = 1e-3 * (1 + 0.5 * std::sin(step));
            for (auto [k, id] : {std::pair{0, w}, std::pair{1, b}}) {
                for (std::size_t i = 0; i < ref[k].size(); ++i) {
                    const float g = static_cast<float>(rng.normal());
                    reg.grad(id)[i] = g;
                    // Reference: decoupled decay on weights, then bias-corrected Adam.
                    double p = ref[k][i];
                    if (k == 0) p *= 1 - lr * hp.weight_decay;
                    m[k][i] = hp.beta1 * m[k][i] + (1 - hp.beta1) * g;
                    v[k][i] = hp.beta2 * v[k][i] + (1 - hp.beta2) * double(g) * g;
                    const double mh = m[k][i] / (1 - std::pow(hp.beta1, step));
                    const double vh = v[k][i] / (1 - std::pow(hp.beta2, step));
                    ref[k][i] = p - lr * mh / (std::sqrt(vh) + hp.eps);
                }
            }
            adamw_update(reg, opt, lr, hp);
        }
        for (auto [k, id] : {std::pair{0, w}, std::pair{1, b}})
            for (std::size_t i = 0; i < ref[k].size(); ++i)
                CHECK(std::abs(reg.value(id)[i] - ref[k][i]) <= 1e-5 * std::abs(ref[k][i]));
    }
}

TEST_CASE("gradient clipping") {
    ParamRegistry reg;
    auto id = reg.declare("w", {2}, diff::ParamKind::Weight);
    reg.grad(id) = Tensor::vector({30, 40});
    CHECK(clip_grad_norm(reg, 10) == doctest::Approx(50));
    CHECK(reg.grad(id)[0] == doctest::Approx(6));
    CHECK(reg.grad(id)[1] == doctest::Approx(8));
    reg.grad(id) = Tensor::vector({3, 4});
    clip_grad_norm(reg, 10);
    CHECK(reg.grad(id) == Tensor::vector({3, 4}));
    reg.grad(id)[0] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(clip_grad_norm(reg, 10), NumericError);
}

TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0, 1000, 5e-4, 5e-5) == doctest::Approx(5e-4).epsilon(1e-12));
    CHECK(cosine_lr(1000, 1000, 5e-4, 5e-5) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(cosine_lr(500, 1000, 5e-4, 5e-5) == doctest::Approx(2.75e-4).epsilon(1e-12));
    double prev = 1;
    for (long s = 0; s <= 100; ++s) {
        const double lr = cosine_lr(s, 100, 5e-4, 5e-5);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK_THROWS_AS(cosine_lr(101, 100, 5e-4, 5e-5), ContractError);
}

TEST_CASE("free-nats schedule") {
    CHECK(free_nats_schedule(0, 20, 2.5) == 2.5);
    CHECK(free_nats_schedule(19, 20, 2.5) == 0.0);
    CHECK(free_nats_schedule(9, 20, 2.5) == doctest::Approx(2.5 * 10 / 19));
    CHECK(free_nats_schedule(9, 20, 2.5) == doctest::Approx(1.316).epsilon(1e-3));
    CHECK(free_nats_schedule(0, 1, 2.5) == 2.5);
    CHECK_THROWS_AS(free_nats_schedule(20, 20, 2.5), ContractError);
}

TEST_CASE("early stopping") {
    EarlyStopping es(5);
    const double losses[] = {5, 4, 4.1, 4.2, 4.3, 4.4, 4.5};
    int stopped_after = -1;
    for (int e = 0; e < 7; ++e)
        if (es.update(e, losses[e])) {
            stopped_after = e + 1;
            break;
        }
    CHECK(stopped_after == 7);
    CHECK(es.best_epoch() + 1 == 2);
    CHECK(es.best_loss() == 4.0);
    EarlyStopping nan_guard(2);
    nan_guard.update(0, std::nan(""));
    CHECK_FALSE(nan_guard.improved());
}

TEST_CASE("configuration validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.lr_end = 1e-3;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = {};
    c.max_epochs = 0;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = {};
    c.free_nats_start = -1;
    CHECK_THROWS_AS(c.validate(), UsageError);
    c = {};
    c.model.d_model = 63;
    CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("fit") {
    const auto series = small_series(60, true);
    const std::span<const StepInput> all(series);
    auto run = [&](TrainConfig c) {
        ParamRegistry reg;
        auto m = LbsModel::declare(reg, c.model);
        nn::init_params(reg, c.seed);
        Trainer t(m, reg, c);
        return t.fit(all.subspan(0, 48), all.subspan(48, 6));
    };
    SUBCASE("same seed, bitwise identical losses") {
        const auto a = run(tiny_train(3)), b = run(tiny_train(3));
        REQUIRE(a.history.size() == b.history.size());
        for (std::size_t i = 0; i < a.history.size(); ++i) {
            CHECK(a.history[i].train_loss == b.history[i].train_loss);
            CHECK(a.history[i].val_loss == b.history[i].val_loss);
        }
        for (std::size_t i = 0; i < a.best_params.size(); ++i) CHECK(a.best_params[i] == b.best_params[i]);
    }
    SUBCASE("best snapshot is never worse than an earlier epoch") {
        const auto r = run(tiny_train(4));
        double mn = std::numeric_limits<double>::infinity();
        for (const auto& h : r.history) mn = std::min(mn, h.val_loss);
        CHECK(r.best_val == mn);
        CHECK(r.history.size() <= 4);
        CHECK(r.steps == static_cast<long>(r.history.size()) * 48);
    }
    SUBCASE("max_steps bounds the run") {
        auto c = tiny_train(5);
        c.max_steps = 70;
        const auto r = run(c);
        CHECK(r.steps == 70);
        CHECK(r.history.size() == 2);
    }
    SUBCASE("unimodal reports zero text loss") {
        auto c = tiny_train(2);
        c.unimodal = true;
        for (const auto& h : run(c).history) CHECK(h.train_l_text == 0.0);
    }
    SUBCASE("empty splits are configuration errors") {
        ParamRegistry reg;
        auto m = LbsModel::declare(reg, cases::tiny_config());
        Trainer t(m, reg, tiny_train());
        CHECK_THROWS_AS(t.fit({}, all.subspan(0, 5)), UsageError);
        CHECK_THROWS_AS(t.fit(all.subspan(0, 5), {}), UsageError);
    }
}

TEST_CASE("one-step training error beats the climatological mean on seasonal data") {
    data::SynthConfig sc;  // generator defaults
    const auto ds = data::synth_generate(sc);
    const auto prepared = prepare(ds.observations, true);
    auto c = tiny_train(3);
    c.model.latent_dim = 4;
    c.model.hidden_dim = 8;
    c.model.mlp_hidden = 16;
    c.lr_start = 3e-3;
    c.lr_end = 3e-4;
    const auto trained = train_model(prepared, c);

    eval::EvalOptions opt;
    opt.horizons = {1};
    opt.n_samples = 10;
    const auto report = eval::evaluate(trained.model, trained.params, prepared.train(), 0, prepared.norm, opt);
    // The climatological-mean predictor's RMSE on the train split is its standard deviation.
    const double baseline = prepared.norm.std;
    MESSAGE("train RMSE(1) ", report.rmse[0], " vs mean predictor ", baseline);
    CHECK(report.rmse[0] < baseline);
}

TEST_CASE("checkpoint") {
    const auto cfg = tiny_train();
    checkpoint::TrainedModel m;
    m.config = cfg;
    m.norm = {1.5, 2.5, false};
    m.model = LbsModel::declare(m.params, cfg.model);
    nn::init_params(m.params, 11);
    const auto path = scratch("roundtrip.ckpt");
    checkpoint::save_checkpoint(path.string(), m.params, checkpoint::make_meta(cfg, m.norm, 4, 1.25, "seed=3\n"));

    SUBCASE("roundtrip is bitwise, forward outputs identical") {
        const auto back = checkpoint::load_trained(path.string());
        REQUIRE(back.params.size() == m.params.size());
        for (std::size_t i = 0; i < m.params.size(); ++i) {
            CHECK(back.params.name(i) == m.params.name(i));
            CHECK(back.params.value(i) == m.params.value(i));
        }
        CHECK(back.norm.mean == 1.5);
        CHECK(back.norm.std == 2.5);
        CHECK(back.meta["epoch"] == 4);
        CHECK(back.meta["best_val"] == 1.25);
        CHECK(back.meta["run_config"] == "seed=3\n");
        const auto series = small_series(20, true);
        const auto a = forecast::filter(m.model, m.params, series, true);
        const auto b = forecast::filter(back.model, back.params, series, true);
        CHECK(a.x_hat == b.x_hat);
        CHECK(a.h == b.h);
        const auto ra = forecast::rollout(m.model, m.params, a, 3, 4, 9);
        const auto rb = forecast::rollout(back.model, back.params, b, 3, 4, 9);
        CHECK(ra.samples == rb.samples);
    }
    SUBCASE("saving is deterministic") {
        const auto again = scratch("again.ckpt");
        checkpoint::save_checkpoint(again.string(), m.params, checkpoint::make_meta(cfg, m.norm, 4, 1.25, "seed=3\n"));
        CHECK(read_file(again) == read_file(path));
    }
    SUBCASE("one corrupted payload byte fails the checksum") {
        auto bytes = read_file(path);
        bytes[bytes.size() - 100] ^= 0x01;
        const auto bad = scratch("corrupt.ckpt");
        write_file(bad, bytes);
        CHECK_THROWS_WITH_AS(checkpoint::load_checkpoint(bad.string()), doctest::Contains("checksum"), FormatError);
    }
    SUBCASE("bad magic, version and truncation report a byte offset") {
        auto bytes = read_file(path);
        auto magic = bytes;
        magic[0] = 'X';
        CHECK_THROWS_WITH_AS(checkpoint::decode(magic), doctest::Contains("byte offset 0"), FormatError);
        auto version = bytes;
        version[8] = 9;
        CHECK_THROWS_WITH_AS(checkpoint::decode(version), doctest::Contains("byte offset 8"), FormatError);
        CHECK_THROWS_WITH_AS(checkpoint::decode(bytes.substr(0, bytes.size() / 2)), doctest::Contains("byte offset"),
                             FormatError);
        CHECK_THROWS_AS(checkpoint::decode(bytes.substr(0, 5)), FormatError);
    }
    SUBCASE("mismatched configuration names the tensor") {
        auto other = cfg.model;
        other.latent_dim = 5;
        ParamRegistry reg;
        LbsModel::declare(reg, other);
        const auto loaded = checkpoint::load_checkpoint(path.string());
        CHECK_THROWS_WITH_AS(checkpoint::apply(loaded, reg), doctest::Contains("ssm.gru.input.weight"), ContractError);
    }
}
