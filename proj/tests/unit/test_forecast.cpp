#include <cmath>
#include <sstream>

#include "../common/cases.hpp"
#include "../common/fixtures.hpp"
#include "doctest.h"
#include "lbs/forecast.hpp"

using namespace lbs;
using diff::Tensor;

namespace {

struct Fixture {
    ModelConfig cfg = cases::tiny_config();
    ParamRegistry reg;
    LbsModel model;
    std::vector<StepInput> series;

    Fixture() {
        model = LbsModel::declare(reg, cfg);
        nn::init_params(reg, 5);
        data::SynthConfig sc;
        sc.steps = 30;
        const auto ds = data::synth_generate(sc);
        series = data::to_step_inputs(ds.observations, data::compute_norm_stats(ds.observations), true);
    }
    const ParamRegistry& params() const { return reg; }
};

}  // namespace

TEST_CASE("filtering") {
    Fixture f;
    SUBCASE("empty history gives the zero state") {
        const auto s = forecast::filter(f.model, f.params(), {}, true);
        CHECK(s.x_hat == Tensor({f.cfg.latent_dim}));
        CHECK(s.h == Tensor({f.cfg.hidden_dim}));
        CHECK(forecast::filter_trajectory(f.model, f.params(), {}, true).empty());
    }
    SUBCASE("deterministic, and the trajectory ends at the filtered state") {
        const auto a = forecast::filter(f.model, f.params(), f.series, true);
        const auto b = forecast::filter(f.model, f.params(), f.series, true);
        CHECK(a.x_hat == b.x_hat);
        CHECK(a.h == b.h);
        const auto traj = forecast::filter_trajectory(f.model, f.params(), f.series, true);
        REQUIRE(traj.size() == f.series.size());
        CHECK(traj.back().x_hat == a.x_hat);
    }
    SUBCASE("the filtered state is the posterior mean") {
        Filter filt(f.model, f.params(), true);
        ssm::DiagGaussian post;
        const auto s = filt.step(f.model.initial_state(), f.series[0], nullptr, &post);
        CHECK(s.x_hat == post.mean);
    }
    SUBCASE("text changes the filtered state unless ignored") {
        const auto with = forecast::filter(f.model, f.params(), f.series, true);
        const auto without = forecast::filter(f.model, f.params(), f.series, false);
        CHECK_FALSE(with.x_hat == without.x_hat);
        auto stripped = f.series;
        for (auto& s : stripped) s.tokens.reset();
        CHECK(forecast::filter(f.model, f.params(), stripped, true).x_hat == without.x_hat);
    }
}

TEST_CASE("rollout") {
    Fixture f;
    const auto start = forecast::filter(f.model, f.params(), f.series, true);
    SUBCASE("one sample has zero variance") {
        const auto r = forecast::rollout(f.model, f.params(), start, 5, 1, 3);
        for (double v : r.variance) CHECK(v == 0.0);
    }
    SUBCASE("same seed, same result; other seed, other samples") {
        const auto a = forecast::rollout(f.model, f.params(), start, 4, 6, 3);
        const auto b = forecast::rollout(f.model, f.params(), start, 4, 6, 3);
        CHECK(a.samples == b.samples);
        CHECK(a.mean == b.mean);
        CHECK(a.variance == b.variance);
        CHECK_FALSE(forecast::rollout(f.model, f.params(), start, 4, 6, 4).samples == a.samples);
    }
    SUBCASE("a shorter horizon is a prefix of a longer one") {
        const auto longer = forecast::rollout(f.model, f.params(), start, 7, 5, 11);
        for (int h = 1; h <= 7; ++h) {
            const auto shorter = forecast::rollout(f.model, f.params(), start, h, 5, 11);
            for (int k = 0; k < h; ++k) {
                CHECK(shorter.samples[static_cast<std::size_t>(k)] == longer.samples[static_cast<std::size_t>(k)]);
                CHECK(shorter.mean[static_cast<std::size_t>(k)] == longer.mean[static_cast<std::size_t>(k)]);
            }
        }
    }
    SUBCASE("mean and variance summarize the samples") {
        const auto r = forecast::rollout(f.model, f.params(), start, 3, 8, 2);
        for (std::size_t k = 0; k < 3; ++k) {
            double m = 0, v = 0;
            for (double s : r.samples[k]) m += s;
            m /= 8;
            for (double s : r.samples[k]) v += (s - m) * (s - m);
            CHECK(r.mean[k] == doctest::Approx(m));
            CHECK(r.variance[k] == doctest::Approx(v / 8));
            CHECK(r.variance[k] >= 0);
        }
    }
    SUBCASE("latents are kept on request") {
        const auto r = forecast::rollout(f.model, f.params(), start, 2, 3, 2, true);
        REQUIRE(r.latents.size() == 2);
        CHECK(r.latents[1][2].size() == static_cast<std::size_t>(f.cfg.latent_dim));
    }
    SUBCASE("invalid arguments") {
        CHECK_THROWS_AS(forecast::rollout(f.model, f.params(), start, 0, 3, 1), UsageError);
        CHECK_THROWS_AS(forecast::rollout(f.model, f.params(), start, 3, 0, 1), UsageError);
    }
}

TEST_CASE("denormalized rollout of an identity emission recovers the pinned mean") {
    const data::NormStats norm{10.0, 4.0, false};
    const float z = 0.75f;
    const auto m = fixtures::pinned_prior_model(z, norm);
    const auto r = forecast::denormalize(
        forecast::rollout(m.model, m.params, m.model.initial_state(), 4, 2000, 1), norm);
    // Prior std is exp(-5); the Monte-Carlo mean error is far below 1e-3 of the scale.
    for (int k = 0; k < 4; ++k) {
        CHECK(std::abs(r.mean[static_cast<std::size_t>(k)] - data::denormalize(z, norm)) <= 1e-3 * norm.std);
        CHECK(r.variance[static_cast<std::size_t>(k)] == doctest::Approx(std::exp(-10.0) * 16).epsilon(0.1));
    }
}

TEST_CASE("denormalize") {
    forecast::ForecastResult r;
    r.horizon = 1;
    r.n_samples = 2;
    r.mean = {0.5};
    r.variance = {0.25};
    r.samples = {{0.0, 1.0}};
    const auto d = forecast::denormalize(r, {3, 2, false});
    CHECK(d.mean[0] == 4.0);
    CHECK(d.variance[0] == 1.0);
    CHECK(d.samples[0] == std::vector<double>{3.0, 5.0});
}

TEST_CASE("text forecasts") {
    Fixture f;
    const auto start = forecast::filter(f.model, f.params(), f.series, true);
    const auto a = forecast::forecast_text(f.model, f.params(), start.x_hat, "2014-02-01", 12, 0.0f, 1);
    CHECK(a == forecast::forecast_text(f.model, f.params(), start.x_hat, "2014-02-01", 12, 0.0f, 2));
    CHECK(a.rfind("DATE=2014-02-01 ", 0) == 0);
    CHECK(a.size() <= std::string("DATE=2014-02-01 ").size() + 12);
    const auto b = forecast::forecast_text(f.model, f.params(), start.x_hat, "2014-02-01", 3, 0.9f, 7);
    CHECK(b.size() <= std::string("DATE=2014-02-01 ").size() + 3);
}

TEST_CASE("output formats") {
    forecast::ForecastResult r;
    r.horizon = 2;
    r.n_samples = 3;
    r.mean = {1, 2};
    r.variance = {0, 0.5};
    r.samples = {{1, 1, 1}, {1.5, 2, 2.5}};
    std::ostringstream out;
    forecast::write_csv(out, r);
    std::istringstream in(out.str());
    std::string header, row;
    std::getline(in, header);
    CHECK(header == "horizon,mean,variance,sample_0,sample_1,sample_2");
    std::getline(in, row);
    CHECK(row.rfind("1,1,0,1,1,1", 0) == 0);
    const auto j = forecast::to_json(r);
    CHECK(j["horizon"] == 2);
    CHECK(j["forecasts"][1]["samples"][2] == 2.5);
}
