#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lbs/checkpoint.hpp"
#include "lbs/error.hpp"
#include "lbs/evalharness.hpp"
#include "lbs/forecast.hpp"
#include "lbs/pipeline.hpp"
#include "lbs/runconfig.hpp"

namespace py = pybind11;
using namespace lbs;

namespace {

py::array_t<double> matrix(const std::vector<std::vector<double>>& rows, std::size_t cols) {
    py::array_t<double> out({rows.size(), cols});
    auto m = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) m(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(j)) = rows[i][j];
    return out;
}

RunConfig run_config(const std::map<std::string, std::string>& settings) {
    RunConfig rc;
    for (const auto& [k, v] : settings) rc.set(k, v);
    return rc;
}

py::dict synth(const std::map<std::string, std::string>& settings, const std::string& out) {
    const auto rc = run_config(settings);
    const auto ds = data::synth_generate(rc.synth);
    if (!out.empty()) {
        data::write_jsonl(out, ds.observations);
        data::write_labels_csv(out + ".labels.csv", ds.labels);
    }
    std::vector<double> values;
    std::vector<std::string> text, dates;
    for (const auto& o : ds.observations) {
        values.push_back(o.value);
        dates.push_back(o.date);
        text.push_back(o.text.value_or(""));
    }
    py::dict d;
    d["value"] = py::array_t<double>(static_cast<py::ssize_t>(values.size()), values.data());
    d["date"] = dates;
    d["text"] = text;
    d["regime"] = ds.labels.regime;
    d["event_fired"] = ds.labels.event_fired;
    d["shift_active"] = ds.labels.shift_active;
    return d;
}

py::list train(const std::string& data_path, const std::string& out, const std::map<std::string, std::string>& settings,
               bool unimodal) {
    auto rc = run_config(settings);
    if (unimodal) rc.train.unimodal = true;
    rc.train.validate();
    const auto prepared = prepare(data::load_jsonl(data_path), !rc.train.unimodal);
    py::list epochs;
    training::FitResult fit;
    {
        py::gil_scoped_release release;
        auto m = train_model(prepared, rc.train, &fit);
        checkpoint::save_checkpoint(out, m.params,
                                    checkpoint::make_meta(rc.train, prepared.norm, fit.best_epoch, fit.best_val,
                                                          rc.to_text()));
    }
    for (const auto& e : fit.history) {
        py::dict d;
        d["epoch"] = e.epoch;
        d["train_loss"] = e.train_loss;
        d["val_loss"] = e.val_loss;
        d["l_val"] = e.train_l_val;
        d["l_text"] = e.train_l_text;
        d["l_kl"] = e.train_l_kl;
        d["lr"] = e.lr;
        d["free_nats"] = e.free_nats;
        epochs.append(d);
    }
    return epochs;
}

class Model {
public:
    explicit Model(const std::string& path) : m_(checkpoint::load_trained(path)) {}

    bool unimodal() const { return m_.config.unimodal; }
    int latent_dim() const { return m_.config.model.latent_dim; }
    py::dict meta() const { return py::module_::import("json").attr("loads")(m_.meta.dump()); }

    py::array_t<double> latents(const std::string& data_path) const {
        const auto inputs = data::to_step_inputs(data::load_jsonl(data_path), m_.norm, !unimodal());
        return matrix(latent_trajectory(m_, inputs), static_cast<std::size_t>(latent_dim()));
    }

    py::dict forecast(const std::string& data_path, int horizon, int samples, std::uint64_t seed) const {
        const auto inputs = data::to_step_inputs(data::load_jsonl(data_path), m_.norm, !unimodal());
        const auto state = forecast::filter(m_.model, m_.params, inputs, !unimodal());
        const auto r = forecast::denormalize(forecast::rollout(m_.model, m_.params, state, horizon, samples, seed), m_.norm);
        py::dict d;
        d["mean"] = r.mean;
        d["variance"] = r.variance;
        d["samples"] = matrix(r.samples, static_cast<std::size_t>(samples));
        return d;
    }

    py::dict evaluate(const std::string& data_path, const std::string& horizons, int samples, std::uint64_t seed) const {
        const auto prepared = prepare(data::load_jsonl(data_path), !unimodal(), m_.norm);
        eval::EvalOptions opt;
        opt.horizons = eval::parse_horizons(horizons);
        opt.n_samples = samples;
        opt.seed = seed;
        opt.use_text = !unimodal();
        const auto rep = eval::evaluate(m_.model, m_.params, prepared.inputs, prepared.test_begin(), m_.norm, opt);
        return py::module_::import("json").attr("loads")(rep.to_json().dump());
    }

private:
    checkpoint::TrainedModel m_;
};

py::dict kalman(const std::string& params_json, const std::vector<double>& y) {
    const auto p = eval::lgssm_from_json(nlohmann::json::parse(params_json));
    if (p.obs_dim() != 1) throw UsageError("python", "kalman: only scalar observations are supported");
    std::vector<Eigen::VectorXd> ys;
    for (double v : y) ys.push_back(Eigen::VectorXd::Constant(1, v));
    const auto k = eval::kalman_filter_oracle(p, ys);
    std::vector<std::vector<double>> means, vars;
    for (std::size_t t = 0; t < ys.size(); ++t) {
        means.emplace_back(k.filt_means[t].data(), k.filt_means[t].data() + p.state_dim());
        vars.emplace_back();
        for (int i = 0; i < p.state_dim(); ++i) vars.back().push_back(k.filt_covs[t](i, i));
    }
    py::dict d;
    d["mean"] = matrix(means, static_cast<std::size_t>(p.state_dim()));
    d["variance"] = matrix(vars, static_cast<std::size_t>(p.state_dim()));
    d["loglik"] = k.loglik;
    d["dense_loglik"] = eval::dense_loglik(p, ys);
    return d;
}

py::dict pca(py::array_t<double, py::array::c_style | py::array::forcecast> x, int components) {
    if (x.ndim() != 2) throw UsageError("python", "pca: expected a 2-d array");
    auto v = x.unchecked<2>();
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(v.shape(0)));
    for (py::ssize_t i = 0; i < v.shape(0); ++i)
        for (py::ssize_t j = 0; j < v.shape(1); ++j) rows[static_cast<std::size_t>(i)].push_back(v(i, j));
    const auto r = eval::pca_latents(rows, components);
    std::vector<std::vector<double>> proj(static_cast<std::size_t>(r.projections.rows()));
    for (Eigen::Index i = 0; i < r.projections.rows(); ++i)
        for (Eigen::Index j = 0; j < r.projections.cols(); ++j) proj[static_cast<std::size_t>(i)].push_back(r.projections(i, j));
    py::dict d;
    d["projections"] = matrix(proj, static_cast<std::size_t>(components));
    d["explained"] = std::vector<double>(r.explained.data(), r.explained.data() + r.explained.size());
    d["degenerate"] = r.degenerate;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Latent state-space forecaster with aligned text";

    static py::exception<Error> error(m, "Error");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const UsageError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const Error& e) {
            py::set_error(error, e.what());
        }
    });

    m.def("config_keys", &RunConfig::keys, "Keys accepted by the key=value config format.");
    m.def("default_config", [] { return RunConfig().to_text(); }, "Defaults as key=value text.");
    m.def("synth", &synth, py::arg("settings") = std::map<std::string, std::string>{}, py::arg("out") = "",
          "Generate the synthetic dataset; optionally write JSONL and labels.");
    m.def("train", &train, py::arg("data"), py::arg("out"), py::arg("settings") = std::map<std::string, std::string>{},
          py::arg("unimodal") = false, "Train on a JSONL dataset and write a checkpoint. Returns per-epoch logs.");
    m.def("kalman", &kalman, py::arg("params_json"), py::arg("y"), "Exact Kalman filter of scalar observations.");
    m.def("pca", &pca, py::arg("x"), py::arg("components") = 3);

    py::class_<Model>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("checkpoint"))
        .def_property_readonly("unimodal", &Model::unimodal)
        .def_property_readonly("latent_dim", &Model::latent_dim)
        .def_property_readonly("meta", &Model::meta)
        .def("latents", &Model::latents, py::arg("data"), "Filtered posterior means, one row per step.")
        .def("forecast", &Model::forecast, py::arg("data"), py::arg("horizon") = 7, py::arg("samples") = 10,
             py::arg("seed") = 0)
        .def("evaluate", &Model::evaluate, py::arg("data"), py::arg("horizons") = "1..7", py::arg("samples") = 10,
             py::arg("seed") = 0);
}
