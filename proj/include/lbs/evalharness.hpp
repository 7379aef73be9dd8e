#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "lbs/data.hpp"
#include "lbs/model.hpp"

namespace lbs::eval {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Linear-Gaussian oracle. Convention: x_0 ~ N(init_mean, init_cov),
// x_t = A x_{t-1} + w_t, y_t = C x_t + v_t for t = 1..T.

struct LgssmParams {
    MatrixXd A;
    MatrixXd C;
    VectorXd q_diag;
    VectorXd r_diag;
    VectorXd init_mean;
    MatrixXd init_cov;

    int state_dim() const { return static_cast<int>(A.rows()); }
    int obs_dim() const { return static_cast<int>(C.rows()); }
    void validate() const;

    /// Scalar model convenience.
    static LgssmParams scalar(double a, double c, double q, double r, double m0, double p0);
};

nlohmann::json to_json(const LgssmParams& p);
LgssmParams lgssm_from_json(const nlohmann::json& j);
LgssmParams load_lgssm(const std::string& path);

struct KalmanResult {
    std::vector<VectorXd> pred_means;  // x_t | y_{1:t-1}
    std::vector<MatrixXd> pred_covs;
    std::vector<VectorXd> filt_means;  // x_t | y_{1:t}
    std::vector<MatrixXd> filt_covs;
    std::vector<VectorXd> obs_means;   // y_t | y_{1:t-1}
    std::vector<MatrixXd> obs_covs;
    std::vector<double> step_loglik;
    double loglik = 0;
};

KalmanResult kalman_filter_oracle(const LgssmParams& p, const std::vector<VectorXd>& y);

struct SmootherResult {
    std::vector<VectorXd> means;  // x_t | y_{1:T}
    std::vector<MatrixXd> covs;
    /// cross[t] = Cov(x_{t-1}, x_t | y_{1:T}) for t >= 1 (0-based); cross[0] is zero.
    std::vector<MatrixXd> cross;
};

SmootherResult rts_smoother(const LgssmParams& p, const KalmanResult& k);

struct LgssmSample {
    std::vector<VectorXd> states;
    std::vector<VectorXd> observations;
};

LgssmSample simulate_lgssm(const LgssmParams& p, int steps, std::uint64_t seed);

/// log p(y_{1:T}) from the joint Gaussian over all T*M observations.
double dense_loglik(const LgssmParams& p, const std::vector<VectorXd>& y);

/// log N(x; mean, cov) via Cholesky; throws NumericError if cov is not PD.
double gaussian_logpdf(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov);

// ---------------------------------------------------------------------------
// Forecast metrics

/// Inclusive empirical quantile (linear interpolation between order statistics).
double empirical_quantile(std::vector<double> samples, double p);

/// Fraction of targets inside the central `nominal` interval of their sample set.
double interval_coverage(std::span<const std::vector<double>> samples, std::span<const double> targets,
                         double nominal);

/// Fixed emission variance on the normalized scale.
inline constexpr double kEmissionVariance = 1.0;

struct ForecastRecord {
    long origin = 0;  // index of the last observation consumed
    int horizon = 0;
    double target = 0;
    double mean = 0;
    double variance = 0;
    std::vector<double> samples;
};

struct EvalReport {
    std::vector<int> horizons;
    std::vector<double> rmse;
    std::vector<long> counts;
    double coverage80 = 0;
    double coverage95 = 0;
    double mean_pred_loglik = 0;
    bool truncated = false;
    std::vector<ForecastRecord> records;

    nlohmann::json to_json() const;
    void write_csv(std::ostream& out) const;
};

struct EvalOptions {
    std::vector<int> horizons{1, 2, 3, 4, 5, 6, 7};
    int n_samples = 10;
    std::uint64_t seed = 0;
    bool use_text = true;
};

/// Rolling-origin evaluation. `series` is the full normalized series; origins
/// are every t >= test_begin whose target t+h is still inside the series.
/// Errors are measured on the denormalized scale.
EvalReport evaluate(const LbsModel& model, const ParamRegistry& params, std::span<const StepInput> series,
                    std::size_t test_begin, const data::NormStats& norm, const EvalOptions& opt);

/// Per-horizon RMSE of precomputed records.
std::vector<double> rmse_per_horizon(std::span<const ForecastRecord> records, std::span<const int> horizons);

/// "1..3" -> {1,2,3}; "1,3,7" -> {1,3,7}.
std::vector<int> parse_horizons(const std::string& spec);

// ---------------------------------------------------------------------------
// Latent trajectory analysis

struct PcaResult {
    MatrixXd components;  // [k, N], rows sorted by descending eigenvalue
    VectorXd eigenvalues;
    VectorXd explained;   // fraction of total variance
    VectorXd mean;
    MatrixXd projections; // [T, k]
    bool degenerate = false;
};

PcaResult pca_latents(const std::vector<std::vector<double>>& trajectory, int n_components = 3);

double pearson(std::span<const double> a, std::span<const double> b);

void write_latents_csv(std::ostream& out, const PcaResult& pca, std::span<const long> t);

}  // namespace lbs::eval
