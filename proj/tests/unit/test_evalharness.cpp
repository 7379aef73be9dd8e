#include <cmath>
#include <numbers>

#include "../common/fixtures.hpp"
#include "doctest.h"
#include "lbs/evalharness.hpp"
#include "lbs/rng.hpp"

using namespace lbs;
using namespace lbs::eval;

namespace {

std::vector<VectorXd> scalars(const std::vector<double>& v) {
    std::vector<VectorXd> out;
    for (double x : v) out.push_back(VectorXd::Constant(1, x));
    return out;
}

double normal_logpdf(double x, double m, double v) {
    return -0.5 * std::log(2 * std::numbers::pi * v) - (x - m) * (x - m) / (2 * v);
}

}  // namespace

TEST_CASE("Kalman filter") {
    SUBCASE("noiseless observations are reproduced") {
        const auto p = LgssmParams::scalar(1, 1, 1e-6, 1e-14, 0, 1);
        const auto y = scalars({0.3, -1.2, 2.5, 0.0, 7.25});
        const auto k = kalman_filter_oracle(p, y);
        for (std::size_t t = 0; t < y.size(); ++t) CHECK(k.filt_means[t](0) == doctest::Approx(y[t](0)).epsilon(1e-6));
    }
    SUBCASE("A = 0 has a closed form") {
        const double C = 2, Q = 0.5, R = 0.3;
        const auto p = LgssmParams::scalar(0, C, Q, R, 0.4, 1.7);
        const auto y = scalars({1.0, -0.5, 2.0, 0.1});
        const auto k = kalman_filter_oracle(p, y);
        const double S = C * C * Q + R;
        double ll = 0;
        for (std::size_t t = 0; t < y.size(); ++t) {
            const double yt = y[t](0);
            CHECK(std::abs(k.obs_means[t](0)) <= 1e-12);
            CHECK(std::abs(k.obs_covs[t](0, 0) - S) <= 1e-9);
            CHECK(std::abs(k.filt_means[t](0) - C * Q / S * yt) <= 1e-9);
            CHECK(std::abs(k.filt_covs[t](0, 0) - (Q - C * C * Q * Q / S)) <= 1e-9);
            ll += normal_logpdf(yt, 0, S);
        }
        CHECK(std::abs(k.loglik - ll) <= 1e-9);
    }
    SUBCASE("log-likelihood matches the dense joint Gaussian") {
        auto p = LgssmParams::scalar(0.9, 1.3, 0.2, 0.5, 0.1, 1.0);
        const auto s = simulate_lgssm(p, 20, 3);
        CHECK(std::abs(kalman_filter_oracle(p, s.observations).loglik - dense_loglik(p, s.observations)) <= 1e-6);

        LgssmParams q;
        q.A = (MatrixXd(2, 2) << 0.8, 0.1, -0.2, 0.7).finished();
        q.C = (MatrixXd(3, 2) << 1, 0, 0.5, 1, -1, 2).finished();
        q.q_diag = VectorXd::Constant(2, 0.3);
        q.r_diag = (VectorXd(3) << 0.2, 0.4, 0.6).finished();
        q.init_mean = VectorXd::Zero(2);
        q.init_cov = MatrixXd::Identity(2, 2);
        const auto s2 = simulate_lgssm(q, 20, 4);
        CHECK(std::abs(kalman_filter_oracle(q, s2.observations).loglik - dense_loglik(q, s2.observations)) <= 1e-6);
    }
    SUBCASE("smoother ends at the filter") {
        const auto p = LgssmParams::scalar(0.9, 1, 0.2, 0.5, 0, 1);
        const auto s = simulate_lgssm(p, 30, 8);
        const auto k = kalman_filter_oracle(p, s.observations);
        const auto sm = rts_smoother(p, k);
        CHECK(sm.means.back()(0) == doctest::Approx(k.filt_means.back()(0)));
        for (std::size_t t = 0; t < sm.covs.size(); ++t) CHECK(sm.covs[t](0, 0) <= k.filt_covs[t](0, 0) + 1e-12);
    }
    SUBCASE("invalid parameters") {
        auto p = LgssmParams::scalar(1, 1, -1, 1, 0, 1);
        CHECK_THROWS(p.validate());
        CHECK_THROWS(kalman_filter_oracle(p, scalars({1.0})));
    }
    SUBCASE("json roundtrip") {
        const auto p = LgssmParams::scalar(0.5, 2, 0.1, 0.2, 0.3, 0.4);
        const auto q = lgssm_from_json(to_json(p));
        CHECK(q.A == p.A);
        CHECK(q.C == p.C);
        CHECK(q.q_diag == p.q_diag);
        CHECK(q.init_cov == p.init_cov);
    }
}

TEST_CASE("interval coverage") {
    const std::vector<std::vector<double>> samples = {{1, 2, 3, 4, 5}, {0, 1, 2, 3, 4}};
    SUBCASE("medians are always covered") {
        const std::vector<double> t{3, 2};
        CHECK(interval_coverage(samples, t, 0.8) == 1.0);
        CHECK(interval_coverage(samples, t, 0.95) == 1.0);
    }
    SUBCASE("far targets are never covered") {
        const std::vector<double> t{100, -100};
        CHECK(interval_coverage(samples, t, 0.95) == 0.0);
    }
    SUBCASE("too few samples") {
        const std::vector<std::vector<double>> few = {{1, 2, 3}};
        const std::vector<double> t{2};
        CHECK_THROWS_AS(interval_coverage(few, t, 0.8), ContractError);
    }
    SUBCASE("oracle sampling is calibrated") {
        // Samples from the true predictive of a stationary AR(1); 95% coverage
        // over 500 steps has a binomial SE of about 1%.
        const auto p = LgssmParams::scalar(0.8, 1, 0.36, 0.25, 0, 1);
        const auto s = simulate_lgssm(p, 501, 12);
        const auto k = kalman_filter_oracle(p, s.observations);
        Rng rng(99);
        std::vector<std::vector<double>> smp;
        std::vector<double> tgt;
        for (std::size_t t = 0; t + 1 < s.observations.size(); ++t) {
            const double m = p.A(0, 0) * k.filt_means[t](0);
            const double v = p.A(0, 0) * p.A(0, 0) * k.filt_covs[t](0, 0) + p.q_diag(0) + p.r_diag(0);
            std::vector<double> row(200);
            for (auto& x : row) x = m + std::sqrt(v) * rng.normal();
            smp.push_back(std::move(row));
            tgt.push_back(s.observations[t + 1](0));
        }
        const double c95 = interval_coverage(smp, tgt, 0.95);
        CHECK(c95 >= 0.90);
        CHECK(c95 <= 0.99);
    }
    CHECK(empirical_quantile({1, 2, 3, 4, 5}, 0.5) == 3.0);
    CHECK(empirical_quantile({0, 10}, 0.25) == 2.5);
}

TEST_CASE("PCA of latent trajectories") {
    Rng rng(4);
    SUBCASE("points on a line are explained by one component") {
        std::vector<std::vector<double>> traj;
        for (int t = 0; t < 100; ++t) {
            const double s = rng.normal();
            traj.push_back({s, 2 * s + 1e-4 * rng.normal(), -s});
        }
        const auto r = pca_latents(traj, 3);
        CHECK(r.explained(0) >= 0.999);
    }
    SUBCASE("full-rank reconstruction and ordering") {
        std::vector<std::vector<double>> traj;
        for (int t = 0; t < 50; ++t) traj.push_back({3 * rng.normal(), rng.normal(), 0.3 * rng.normal()});
        const auto r = pca_latents(traj, 3);
        CHECK_FALSE(r.degenerate);
        CHECK(r.eigenvalues(0) >= r.eigenvalues(1));
        CHECK(r.eigenvalues(1) >= r.eigenvalues(2));
        CHECK(r.explained.sum() == doctest::Approx(1.0));
        for (std::size_t t = 0; t < traj.size(); ++t) {
            const VectorXd back = r.mean + r.components.transpose() * r.projections.row(static_cast<Eigen::Index>(t)).transpose();
            for (int j = 0; j < 3; ++j) CHECK(std::abs(back(j) - traj[t][static_cast<std::size_t>(j)]) <= 1e-5);
        }
    }
    SUBCASE("rank deficiency is flagged") {
        std::vector<std::vector<double>> traj;
        for (int t = 0; t < 20; ++t) traj.push_back({static_cast<double>(t), 0.0});
        CHECK(pca_latents(traj, 2).degenerate);
        CHECK_THROWS_AS(pca_latents(traj, 30), ContractError);
    }
    const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1};
    CHECK(pearson(a, b) == doctest::Approx(1.0));
    CHECK(pearson(a, c) == doctest::Approx(-1.0));
}

TEST_CASE("rolling-origin evaluation") {
    SUBCASE("the constant-series fixture forecasts without error") {
        const auto m = fixtures::constant_model(3.25);
        const auto obs = fixtures::constant_series(40, 3.25);
        const auto series = data::to_step_inputs(obs, m.norm, true);
        EvalOptions opt;
        opt.horizons = {1, 3, 7};
        const auto rep = evaluate(m.model, m.params, series, 20, m.norm, opt);
        for (double r : rep.rmse) CHECK(r == 0.0);
        CHECK(rep.counts[0] == 19);
        CHECK(rep.counts[2] == 13);
    }
    SUBCASE("a zero predictor on standardized noise has unit error") {
        auto m = fixtures::constant_model(0.0);
        Rng rng(1);
        std::vector<StepInput> series(4000);
        for (auto& s : series) s.y = static_cast<float>(rng.normal());
        EvalOptions opt;
        opt.horizons = {1};
        opt.n_samples = 4;
        opt.use_text = false;
        const auto rep = evaluate(m.model, m.params, series, 0, m.norm, opt);
        CHECK(rep.rmse[0] == doctest::Approx(1.0).epsilon(0.05));
    }
    SUBCASE("empty test segment") {
        const auto m = fixtures::constant_model(0.0);
        std::vector<StepInput> series(5);
        CHECK_THROWS_AS(evaluate(m.model, m.params, series, 5, m.norm, {}), DataError);
    }
}

TEST_CASE("horizon lists") {
    CHECK(parse_horizons("1..3") == std::vector<int>{1, 2, 3});
    CHECK(parse_horizons("1,3,7") == std::vector<int>{1, 3, 7});
    CHECK(parse_horizons("5") == std::vector<int>{5});
    CHECK_THROWS_AS(parse_horizons("0..2"), UsageError);
    CHECK_THROWS_AS(parse_horizons("a"), UsageError);
}
