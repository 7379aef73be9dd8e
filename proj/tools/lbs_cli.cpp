#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lbs/checkpoint.hpp"
#include "lbs/error.hpp"
#include "lbs/evalharness.hpp"
#include "lbs/forecast.hpp"
#include "lbs/pipeline.hpp"
#include "lbs/runconfig.hpp"

namespace {

using namespace lbs;

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cli", "cannot write '" + path + "'");
    return out;
}

void warn(const std::string& module, const std::string& msg) { std::cerr << "warning: " << module << ": " << msg << '\n'; }

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    std::string labels;
    data::SynthConfig cfg;
};

void run_synth(const SynthArgs& a) {
    const auto ds = data::synth_generate(a.cfg);
    data::write_jsonl(a.out, ds.observations);
    const std::string labels = a.labels.empty() ? a.out + ".labels.csv" : a.labels;
    data::write_labels_csv(labels, ds.labels);
    long events = 0, boundaries = 0;
    for (std::size_t t = 0; t < ds.labels.regime.size(); ++t) {
        events += ds.labels.event_fired[t];
        if (t > 0 && ds.labels.regime[t] != ds.labels.regime[t - 1]) ++boundaries;
    }
    std::cout << "steps\t" << a.cfg.steps << "\nevents\t" << events << "\nregime_boundaries\t" << boundaries
              << "\nfirst_high_noise_t\t";
    long first = -1;
    for (std::size_t t = 0; t < ds.labels.regime.size(); ++t)
        if (ds.labels.regime[t] == 1) {
            first = static_cast<long>(t);
            break;
        }
    std::cout << first << "\ndata\t" << a.out << "\nlabels\t" << labels << '\n';
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string data;
    std::string config;
    std::string out;
    bool unimodal = false;
    std::vector<std::string> sets;
    long seed = -1;
    int epochs = 0;
};

void run_train(const TrainArgs& a) {
    RunConfig rc;
    if (!a.config.empty()) rc.load(a.config);
    for (const auto& s : a.sets) rc.set_assignment(s);
    if (!a.data.empty()) rc.data_path = a.data;
    if (!a.out.empty()) rc.out_path = a.out;
    if (a.unimodal) rc.train.unimodal = true;
    if (a.seed >= 0) rc.train.seed = static_cast<std::uint64_t>(a.seed);
    if (a.epochs > 0) rc.train.max_epochs = a.epochs;
    if (rc.data_path.empty()) throw UsageError("cli", "train: no data path (--data or data=)");
    if (rc.out_path.empty()) throw UsageError("cli", "train: no output path (--out or out=)");
    rc.train.validate();
    const std::string effective = rc.to_text();
    std::istringstream lines(effective);
    for (std::string l; std::getline(lines, l);) std::cerr << "# " << l << '\n';

    auto prepared = prepare(data::load_jsonl(rc.data_path), !rc.train.unimodal);
    if (prepared.norm.degenerate) warn("data", "train split is constant; std forced to 1");
    std::cout << "epoch\ttrain_loss\tval_loss\tl_val\tl_text\tl_kl\tlr\tfree_nats\n";
    auto on_epoch = [](const training::EpochLog& e) {
        std::cout << e.epoch << '\t' << e.train_loss << '\t' << e.val_loss << '\t' << e.train_l_val << '\t'
                  << e.train_l_text << '\t' << e.train_l_kl << '\t' << e.lr << '\t' << e.free_nats << std::endl;
    };
    training::FitResult fit;
    auto m = train_model(prepared, rc.train, &fit, on_epoch);
    checkpoint::save_checkpoint(rc.out_path, m.params,
                                checkpoint::make_meta(rc.train, prepared.norm, fit.best_epoch, fit.best_val, effective));
}

// ---------------------------------------------------------------------------

struct ForecastArgs {
    std::string ckpt;
    std::string data;
    std::string out;
    int horizon = 7;
    int samples = 10;
    bool with_text = false;
    float temperature = 0.0f;
    long seed = 0;
    std::string emit = "csv";
    int max_len = 96;
};

void run_forecast(const ForecastArgs& a) {
    if (a.horizon < 1) throw UsageError("cli", "forecast: --horizon must be >= 1");
    if (a.samples < 1) throw UsageError("cli", "forecast: --samples must be >= 1");
    auto m = checkpoint::load_trained(a.ckpt);
    const auto obs = data::load_jsonl(a.data);
    const bool use_text = !m.config.unimodal;
    const auto inputs = data::to_step_inputs(obs, m.norm, use_text);
    const auto state = forecast::filter(m.model, m.params, inputs, use_text);
    const auto seed = static_cast<std::uint64_t>(a.seed);
    auto raw = forecast::rollout(m.model, m.params, state, a.horizon, a.samples, seed, a.with_text);
    auto result = forecast::denormalize(raw, m.norm);

    std::ostringstream body;
    if (a.emit == "csv")
        forecast::write_csv(body, result);
    else
        body << forecast::to_json(result).dump(2) << '\n';
    if (a.out.empty()) {
        std::cout << body.str();
    } else {
        auto f = open_out(a.out);
        f << body.str();
    }

    if (a.with_text) {
        std::ostringstream text;
        const std::string last_date = obs.empty() ? std::string() : obs.back().date;
        for (int h = 1; h <= a.horizon; ++h) {
            std::string date;
            if (!last_date.empty()) {
                try {
                    date = data::add_days(last_date, h);
                } catch (const FormatError&) {
                    date = last_date + "+" + std::to_string(h);
                }
            }
            const auto& x = raw.latents[static_cast<std::size_t>(h - 1)][0];
            const std::string s = forecast::forecast_text(m.model, m.params, x, date, a.max_len, a.temperature,
                                                          stream_seed(seed, 0x74657874, static_cast<std::uint64_t>(h)));
            text << nlohmann::json{{"horizon", h}, {"date", date}, {"text", s}}.dump() << '\n';
        }
        if (a.out.empty()) {
            std::cout << text.str();
        } else {
            auto f = open_out(a.out + ".text.jsonl");
            f << text.str();
        }
    }
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string ckpt;
    std::string data;
    std::string horizons = "1..7";
    int samples = 10;
    long seed = 0;
    std::string report;
};

void run_eval(const EvalArgs& a) {
    auto m = checkpoint::load_trained(a.ckpt);
    const bool use_text = !m.config.unimodal;
    auto prepared = prepare(data::load_jsonl(a.data), use_text, m.norm);
    eval::EvalOptions opt;
    opt.horizons = eval::parse_horizons(a.horizons);
    opt.n_samples = a.samples;
    opt.seed = static_cast<std::uint64_t>(a.seed);
    opt.use_text = use_text;
    if (a.samples < 1) throw UsageError("cli", "eval: --samples must be >= 1");
    auto report = eval::evaluate(m.model, m.params, prepared.inputs, prepared.test_begin(), m.norm, opt);
    if (report.truncated) warn("eval", "horizons beyond the test segment were dropped");
    if (a.samples < 4) warn("eval", "fewer than 4 samples; coverage not computed");
    std::cout << "horizon\trmse\tcount\n";
    for (std::size_t i = 0; i < report.horizons.size(); ++i)
        std::cout << report.horizons[i] << '\t' << report.rmse[i] << '\t' << report.counts[i] << '\n';
    std::cout << "coverage80\t" << report.coverage80 << "\ncoverage95\t" << report.coverage95 << "\nmean_pred_loglik\t"
              << report.mean_pred_loglik << '\n';
    if (!a.report.empty()) {
        auto csv = open_out(a.report + ".csv");
        report.write_csv(csv);
        auto js = open_out(a.report + ".json");
        js << report.to_json().dump(2) << '\n';
    }
}

// ---------------------------------------------------------------------------

struct LatentArgs {
    std::string ckpt;
    std::string data;
    std::string out;
    int components = 3;
};

void run_export_latents(const LatentArgs& a) {
    auto m = checkpoint::load_trained(a.ckpt);
    const auto obs = data::load_jsonl(a.data);
    const auto inputs = data::to_step_inputs(obs, m.norm, !m.config.unimodal);
    const auto pca = eval::pca_latents(latent_trajectory(m, inputs), a.components);
    if (pca.degenerate) warn("eval", "latent trajectory is rank deficient; missing components are zero");
    std::vector<long> t;
    for (const auto& o : obs) t.push_back(o.t);
    auto out = open_out(a.out);
    eval::write_latents_csv(out, pca, t);
}

// ---------------------------------------------------------------------------

struct OracleArgs {
    std::string params;
    std::string data;
    std::string out;
};

void run_oracle(const OracleArgs& a) {
    const auto p = eval::load_lgssm(a.params);
    if (p.obs_dim() != 1) throw UsageError("cli", "oracle: only scalar observations are supported by the data format");
    const auto obs = data::load_jsonl(a.data);
    std::vector<Eigen::VectorXd> y;
    for (const auto& o : obs) y.push_back(Eigen::VectorXd::Constant(1, o.value));
    const auto k = eval::kalman_filter_oracle(p, y);
    auto out = open_out(a.out);
    out.precision(17);
    out << 't';
    for (int i = 0; i < p.state_dim(); ++i) out << ",mean_" << i;
    for (int i = 0; i < p.state_dim(); ++i) out << ",var_" << i;
    out << ",loglik\n";
    for (std::size_t t = 0; t < y.size(); ++t) {
        out << obs[t].t;
        for (int i = 0; i < p.state_dim(); ++i) out << ',' << k.filt_means[t](i);
        for (int i = 0; i < p.state_dim(); ++i) out << ',' << k.filt_covs[t](i, i);
        out << ',' << k.step_loglik[t] << '\n';
    }
    std::cout.precision(17);
    std::cout << "loglik\t" << k.loglik << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Latent state-space forecaster with aligned text"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic multimodal dataset");
    s->add_option("--out", synth.out, "Output JSONL path")->required();
    s->add_option("--labels", synth.labels, "Labels CSV path (default <out>.labels.csv)");
    s->add_option("--steps", synth.cfg.steps, "Series length");
    s->add_option("--seed", synth.cfg.seed, "Random seed");
    s->add_option("--period", synth.cfg.period, "Seasonal period");
    s->add_option("--amplitude", synth.cfg.amplitude, "Seasonal amplitude");
    s->add_option("--slope", synth.cfg.slope, "Linear trend per step");
    s->add_option("--event-rate", synth.cfg.event_rate, "Event probability per step");
    s->add_option("--event-shift", synth.cfg.event_shift, "Value shift after an event");
    s->add_option("--event-lead", synth.cfg.event_lead, "Steps shifted after an event");
    s->add_option("--noise-lo", synth.cfg.noise_lo, "Noise std in the calm half-period");
    s->add_option("--noise-hi", synth.cfg.noise_hi, "Noise std in the volatile half-period");
    s->add_option("--start-date", synth.cfg.start_date, "Date of t = 0");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Fit a model and write a checkpoint");
    t->add_option("--data", train.data, "Dataset JSONL");
    t->add_option("--config", train.config, "key=value config file");
    t->add_option("--out", train.out, "Checkpoint path");
    t->add_flag("--unimodal", train.unimodal, "Ignore text");
    t->add_option("--set", train.sets, "Override a config key (key=value)");
    t->add_option("--seed", train.seed, "Override the seed");
    t->add_option("--epochs", train.epochs, "Override max_epochs");

    ForecastArgs fc;
    auto* f = app.add_subcommand("forecast", "Filter a history and forecast ahead");
    f->add_option("--ckpt", fc.ckpt, "Checkpoint")->required();
    f->add_option("--data", fc.data, "History JSONL")->required();
    f->add_option("--horizon", fc.horizon, "Forecast horizon");
    f->add_option("--samples", fc.samples, "Monte-Carlo samples");
    f->add_flag("--with-text", fc.with_text, "Also generate text per horizon");
    f->add_option("--temperature", fc.temperature, "Text sampling temperature (0 = greedy)");
    f->add_option("--max-len", fc.max_len, "Maximum generated bytes");
    f->add_option("--seed", fc.seed, "Random seed");
    f->add_option("--emit", fc.emit, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    f->add_option("--out", fc.out, "Output path (default stdout)");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Rolling-origin evaluation on the test split");
    e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
    e->add_option("--data", ev.data, "Full dataset JSONL")->required();
    e->add_option("--horizons", ev.horizons, "e.g. 1..7 or 1,3,7");
    e->add_option("--samples", ev.samples, "Monte-Carlo samples");
    e->add_option("--seed", ev.seed, "Random seed");
    e->add_option("--report", ev.report, "Report path prefix (.csv and .json)");

    LatentArgs la;
    auto* l = app.add_subcommand("export-latents", "PCA of the filtered latent trajectory");
    l->add_option("--ckpt", la.ckpt, "Checkpoint")->required();
    l->add_option("--data", la.data, "Dataset JSONL")->required();
    l->add_option("--out", la.out, "Output CSV")->required();
    l->add_option("--components", la.components, "Number of components");

    OracleArgs orc;
    auto* o = app.add_subcommand("oracle", "Exact Kalman filter for a linear-Gaussian model");
    o->add_option("--params", orc.params, "LGSSM parameters JSON")->required();
    o->add_option("--data", orc.data, "Dataset JSONL")->required();
    o->add_option("--out", orc.out, "Posterior CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        std::cerr << "error: cli: " << err.what() << '\n';
        return 1;
    }

    try {
        if (*s) run_synth(synth);
        if (*t) run_train(train);
        if (*f) run_forecast(fc);
        if (*e) run_eval(ev);
        if (*l) run_export_latents(la);
        if (*o) run_oracle(orc);
    } catch (const Error& err) {
        std::cerr << "error: " << err.module() << ": " << err.message() << '\n';
        return exit_code(err.kind());
    } catch (const nlohmann::json::exception& err) {
        std::cerr << "error: cli: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: cli: " << err.what() << '\n';
        return 2;
    }
    return 0;
}
