#include "lbs/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>

#include "lbs/error.hpp"
#include "lbs/forecast.hpp"
#include "lbs/rng.hpp"

namespace lbs::eval {

using nlohmann::json;

void LgssmParams::validate() const {
    const auto n = A.rows();
    if (n < 1 || A.cols() != n) throw ContractError("eval", "A must be square and non-empty");
    if (C.cols() != n || C.rows() < 1) throw ContractError("eval", "C must have one column per state dimension");
    if (q_diag.size() != n || r_diag.size() != C.rows()) throw ContractError("eval", "noise diagonals have wrong length");
    if (init_mean.size() != n || init_cov.rows() != n || init_cov.cols() != n)
        throw ContractError("eval", "initial mean/cov have wrong shape");
    if ((q_diag.array() <= 0).any() || (r_diag.array() <= 0).any())
        throw ContractError("eval", "noise variances must be > 0");
    if (!A.allFinite() || !C.allFinite() || !init_mean.allFinite() || !init_cov.allFinite())
        throw ContractError("eval", "LGSSM parameters must be finite");
}

LgssmParams LgssmParams::scalar(double a, double c, double q, double r, double m0, double p0) {
    LgssmParams p;
    p.A = MatrixXd::Constant(1, 1, a);
    p.C = MatrixXd::Constant(1, 1, c);
    p.q_diag = VectorXd::Constant(1, q);
    p.r_diag = VectorXd::Constant(1, r);
    p.init_mean = VectorXd::Constant(1, m0);
    p.init_cov = MatrixXd::Constant(1, 1, p0);
    return p;
}

namespace {

json matrix_json(const MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

json vector_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

MatrixXd matrix_from(const json& j, const char* key) {
    const auto rows = j.at(key).get<std::vector<std::vector<double>>>();
    if (rows.empty()) throw FormatError("eval", std::string("'") + key + "' is empty");
    MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size()) throw FormatError("eval", std::string("'") + key + "' is ragged");
        for (std::size_t k = 0; k < rows[i].size(); ++k)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    return m;
}

VectorXd vector_from(const json& j, const char* key) {
    const auto v = j.at(key).get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

json to_json(const LgssmParams& p) {
    return {{"A", matrix_json(p.A)},           {"C", matrix_json(p.C)},
            {"Q_diag", vector_json(p.q_diag)}, {"R_diag", vector_json(p.r_diag)},
            {"init_mean", vector_json(p.init_mean)}, {"init_cov", matrix_json(p.init_cov)}};
}

LgssmParams lgssm_from_json(const json& j) {
    LgssmParams p;
    try {
        p.A = matrix_from(j, "A");
        p.C = matrix_from(j, "C");
        p.q_diag = vector_from(j, "Q_diag");
        p.r_diag = vector_from(j, "R_diag");
        p.init_mean = vector_from(j, "init_mean");
        p.init_cov = matrix_from(j, "init_cov");
    } catch (const json::exception& e) {
        throw FormatError("eval", std::string("invalid LGSSM parameters (") + e.what() + ")");
    }
    p.validate();
    return p;
}

LgssmParams load_lgssm(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("eval", "cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError("eval", "malformed JSON in '" + path + "' (" + e.what() + ")");
    }
    return lgssm_from_json(j);
}

double gaussian_logpdf(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov) {
    Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericError("eval", "covariance is not positive definite");
    const VectorXd d = x - mean;
    const VectorXd z = llt.matrixL().solve(d);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + logdet + z.squaredNorm());
}

KalmanResult kalman_filter_oracle(const LgssmParams& p, const std::vector<VectorXd>& y) {
    p.validate();
    const MatrixXd Q = p.q_diag.asDiagonal();
    const MatrixXd R = p.r_diag.asDiagonal();
    KalmanResult k;
    VectorXd m = p.init_mean;
    MatrixXd P = p.init_cov;
    for (std::size_t t = 0; t < y.size(); ++t) {
        if (y[t].size() != p.obs_dim()) throw ContractError("eval", "observation " + std::to_string(t) + " has wrong dimension");
        const VectorXd mp = p.A * m;
        const MatrixXd Pp = p.A * P * p.A.transpose() + Q;
        const VectorXd ym = p.C * mp;
        const MatrixXd S = p.C * Pp * p.C.transpose() + R;
        Eigen::LLT<MatrixXd> llt(S);
        if (llt.info() != Eigen::Success)
            throw NumericError("eval", "innovation covariance not positive definite at step " + std::to_string(t));
        const MatrixXd K = llt.solve(p.C * Pp).transpose();
        m = mp + K * (y[t] - ym);
        const MatrixXd IKC = MatrixXd::Identity(p.state_dim(), p.state_dim()) - K * p.C;
        P = IKC * Pp * IKC.transpose() + K * R * K.transpose();  // Joseph form
        const double ll = gaussian_logpdf(y[t], ym, S);
        k.pred_means.push_back(mp);
        k.pred_covs.push_back(Pp);
        k.filt_means.push_back(m);
        k.filt_covs.push_back(P);
        k.obs_means.push_back(ym);
        k.obs_covs.push_back(S);
        k.step_loglik.push_back(ll);
        k.loglik += ll;
    }
    return k;
}

SmootherResult rts_smoother(const LgssmParams& p, const KalmanResult& k) {
    const std::size_t T = k.filt_means.size();
    SmootherResult s;
    s.means = k.filt_means;
    s.covs = k.filt_covs;
    s.cross.assign(T, MatrixXd::Zero(p.state_dim(), p.state_dim()));
    for (std::size_t t = T; t-- > 1;) {
        const MatrixXd J = k.filt_covs[t - 1] * p.A.transpose() * k.pred_covs[t].inverse();
        s.means[t - 1] = k.filt_means[t - 1] + J * (s.means[t] - k.pred_means[t]);
        s.covs[t - 1] = k.filt_covs[t - 1] + J * (s.covs[t] - k.pred_covs[t]) * J.transpose();
        s.cross[t] = J * s.covs[t];
    }
    return s;
}

LgssmSample simulate_lgssm(const LgssmParams& p, int steps, std::uint64_t seed) {
    p.validate();
    if (steps < 0) throw ContractError("eval", "steps must be >= 0");
    Rng rng(stream_seed(seed, 0x6c6773736d));
    auto draw = [&](Eigen::Index n) {
        VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
        return v;
    };
    Eigen::LLT<MatrixXd> llt0(p.init_cov);
    LgssmSample out;
    VectorXd x = p.init_mean;
    if (llt0.info() == Eigen::Success) x += MatrixXd(llt0.matrixL()) * draw(p.state_dim());
    for (int t = 0; t < steps; ++t) {
        x = p.A * x + (p.q_diag.array().sqrt() * draw(p.state_dim()).array()).matrix();
        const VectorXd y = p.C * x + (p.r_diag.array().sqrt() * draw(p.obs_dim()).array()).matrix();
        out.states.push_back(x);
        out.observations.push_back(y);
    }
    return out;
}

double dense_loglik(const LgssmParams& p, const std::vector<VectorXd>& y) {
    p.validate();
    const auto T = static_cast<Eigen::Index>(y.size());
    const Eigen::Index M = p.obs_dim();
    const MatrixXd Q = p.q_diag.asDiagonal();
    // State means and covariances: Cov(x_t, x_s) = A^{t-s} Cov(x_s, x_s) for t >= s.
    std::vector<VectorXd> mean(static_cast<std::size_t>(T));
    std::vector<MatrixXd> var(static_cast<std::size_t>(T));
    VectorXd m = p.init_mean;
    MatrixXd P = p.init_cov;
    for (Eigen::Index t = 0; t < T; ++t) {
        m = p.A * m;
        P = p.A * P * p.A.transpose() + Q;
        mean[static_cast<std::size_t>(t)] = m;
        var[static_cast<std::size_t>(t)] = P;
    }
    MatrixXd cov = MatrixXd::Zero(T * M, T * M);
    VectorXd mu(T * M), obs(T * M);
    for (Eigen::Index s = 0; s < T; ++s) {
        MatrixXd cross = var[static_cast<std::size_t>(s)];  // Cov(x_t, x_s), starting at t = s
        for (Eigen::Index t = s; t < T; ++t) {
            if (t > s) cross = p.A * cross;
            const MatrixXd block = p.C * cross * p.C.transpose();
            cov.block(t * M, s * M, M, M) = block;
            cov.block(s * M, t * M, M, M) = block.transpose();
        }
        mu.segment(s * M, M) = p.C * mean[static_cast<std::size_t>(s)];
        obs.segment(s * M, M) = y[static_cast<std::size_t>(s)];
        cov.block(s * M, s * M, M, M) += MatrixXd(p.r_diag.asDiagonal());
    }
    return gaussian_logpdf(obs, mu, cov);
}

// ---------------------------------------------------------------------------

double empirical_quantile(std::vector<double> samples, double p) {
    if (samples.empty()) throw ContractError("eval", "quantile of an empty sample");
    if (!(p >= 0 && p <= 1)) throw ContractError("eval", "quantile level must lie in [0, 1]");
    std::sort(samples.begin(), samples.end());
    const double h = p * static_cast<double>(samples.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, samples.size() - 1);
    return samples[lo] + (h - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
}

double interval_coverage(std::span<const std::vector<double>> samples, std::span<const double> targets,
                         double nominal) {
    if (samples.size() != targets.size()) throw ContractError("eval", "coverage: samples and targets differ in length");
    if (samples.empty()) throw ContractError("eval", "coverage: no targets");
    if (!(nominal > 0 && nominal < 1)) throw ContractError("eval", "coverage: nominal level must lie in (0, 1)");
    const double lo_p = (1.0 - nominal) / 2.0;
    std::size_t inside = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].size() < 4)
            throw ContractError("eval", "coverage needs at least 4 samples per target (got " +
                                            std::to_string(samples[i].size()) + ")");
        const double lo = empirical_quantile(samples[i], lo_p);
        const double hi = empirical_quantile(samples[i], 1.0 - lo_p);
        if (targets[i] >= lo && targets[i] <= hi) ++inside;
    }
    return static_cast<double>(inside) / static_cast<double>(samples.size());
}

std::vector<double> rmse_per_horizon(std::span<const ForecastRecord> records, std::span<const int> horizons) {
    std::vector<double> out;
    for (int h : horizons) {
        double sq = 0;
        long n = 0;
        for (const auto& r : records)
            if (r.horizon == h) sq += (r.mean - r.target) * (r.mean - r.target), ++n;
        out.push_back(n ? std::sqrt(sq / static_cast<double>(n)) : std::numeric_limits<double>::quiet_NaN());
    }
    return out;
}

EvalReport evaluate(const LbsModel& model, const ParamRegistry& params, std::span<const StepInput> series,
                    std::size_t test_begin, const data::NormStats& norm, const EvalOptions& opt) {
    if (opt.horizons.empty()) throw UsageError("eval", "no horizons requested");
    if (test_begin >= series.size()) throw DataError("eval", "test segment is empty");
    std::set<int> hs(opt.horizons.begin(), opt.horizons.end());
    if (*hs.begin() < 1) throw UsageError("eval", "horizons must be >= 1");

    EvalReport report;
    const long T = static_cast<long>(series.size());
    const long test_len = T - static_cast<long>(test_begin);
    for (int h : hs) {
        if (h < test_len)
            report.horizons.push_back(h);
        else
            report.truncated = true;
    }
    if (report.horizons.empty()) throw DataError("eval", "every requested horizon exceeds the test segment");
    const int h_max = report.horizons.back();

    const auto traj = forecast::filter_trajectory(model, params, series, opt.use_text);
    for (long t = static_cast<long>(test_begin); t + 1 < T; ++t) {
        const int reach = static_cast<int>(std::min<long>(h_max, T - 1 - t));
        auto r = forecast::denormalize(
            forecast::rollout(model, params, traj[static_cast<std::size_t>(t)], reach, opt.n_samples,
                              stream_seed(opt.seed, static_cast<std::uint64_t>(t))),
            norm);
        for (int h : report.horizons) {
            if (h > reach) break;
            const auto k = static_cast<std::size_t>(h - 1);
            ForecastRecord rec;
            rec.origin = t;
            rec.horizon = h;
            rec.target = data::denormalize(series[static_cast<std::size_t>(t + h)].y, norm);
            rec.mean = r.mean[k];
            rec.variance = r.variance[k];
            rec.samples = r.samples[k];
            report.records.push_back(std::move(rec));
        }
    }
    report.rmse = rmse_per_horizon(report.records, report.horizons);
    for (int h : report.horizons) {
        long n = 0;
        for (const auto& r : report.records) n += r.horizon == h;
        report.counts.push_back(n);
    }

    std::vector<std::vector<double>> samples;
    std::vector<double> targets;
    double ll = 0;
    const double emission = kEmissionVariance * norm.std * norm.std;
    for (const auto& r : report.records) {
        samples.push_back(r.samples);
        targets.push_back(r.target);
        const double v = r.variance + emission;
        ll += -0.5 * (std::log(2.0 * std::numbers::pi * v) + (r.target - r.mean) * (r.target - r.mean) / v);
    }
    report.mean_pred_loglik = ll / static_cast<double>(report.records.size());
    if (opt.n_samples >= 4) {
        report.coverage80 = interval_coverage(samples, targets, 0.8);
        report.coverage95 = interval_coverage(samples, targets, 0.95);
    } else {
        report.coverage80 = report.coverage95 = std::numeric_limits<double>::quiet_NaN();
    }
    return report;
}

json EvalReport::to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    json per = json::array();
    for (std::size_t i = 0; i < horizons.size(); ++i)
        per.push_back({{"horizon", horizons[i]}, {"rmse", num(rmse[i])}, {"count", counts[i]}});
    return {{"per_horizon", per},
            {"coverage80", num(coverage80)},
            {"coverage95", num(coverage95)},
            {"mean_pred_loglik", num(mean_pred_loglik)},
            {"truncated", truncated}};
}

void EvalReport::write_csv(std::ostream& out) const {
    const auto old = out.precision(17);
    out << "horizon,rmse,count\n";
    for (std::size_t i = 0; i < horizons.size(); ++i) out << horizons[i] << ',' << rmse[i] << ',' << counts[i] << '\n';
    out.precision(old);
}

std::vector<int> parse_horizons(const std::string& spec) {
    auto parse_int = [&](const std::string& s) {
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != s.size() || v < 1) throw UsageError("eval", "invalid horizon list '" + spec + "'");
        return v;
    };
    std::vector<int> out;
    const auto dots = spec.find("..");
    if (dots != std::string::npos) {
        const int lo = parse_int(spec.substr(0, dots));
        const int hi = parse_int(spec.substr(dots + 2));
        if (hi < lo) throw UsageError("eval", "invalid horizon range '" + spec + "'");
        for (int h = lo; h <= hi; ++h) out.push_back(h);
        return out;
    }
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(item));
    if (out.empty()) throw UsageError("eval", "empty horizon list");
    return out;
}

// ---------------------------------------------------------------------------

PcaResult pca_latents(const std::vector<std::vector<double>>& trajectory, int n_components) {
    if (n_components < 1) throw ContractError("eval", "n_components must be >= 1");
    if (trajectory.size() < static_cast<std::size_t>(n_components))
        throw ContractError("eval", "trajectory shorter than the number of components");
    const auto T = static_cast<Eigen::Index>(trajectory.size());
    const auto N = static_cast<Eigen::Index>(trajectory.front().size());
    if (N < 1) throw ContractError("eval", "empty latent vectors");
    MatrixXd X(T, N);
    for (Eigen::Index t = 0; t < T; ++t) {
        const auto& row = trajectory[static_cast<std::size_t>(t)];
        if (static_cast<Eigen::Index>(row.size()) != N) throw ContractError("eval", "ragged latent trajectory");
        for (Eigen::Index j = 0; j < N; ++j) X(t, j) = row[static_cast<std::size_t>(j)];
    }
    PcaResult r;
    r.mean = X.colwise().mean().transpose();
    X.rowwise() -= r.mean.transpose();
    const MatrixXd cov = X.transpose() * X / static_cast<double>(std::max<Eigen::Index>(T - 1, 1));
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw NumericError("eval", "eigendecomposition failed");

    const Eigen::Index k = n_components;
    r.components = MatrixXd::Zero(k, N);
    r.eigenvalues = VectorXd::Zero(k);
    const double total = std::max(cov.trace(), 0.0);
    const double tol = 1e-12 * std::max(total, 1e-300);
    for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index src = N - 1 - i;  // eigenvalues ascend
        if (src < 0 || es.eigenvalues()(src) <= tol) {
            r.degenerate = true;
            continue;
        }
        VectorXd v = es.eigenvectors().col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        r.components.row(i) = v.transpose();
        r.eigenvalues(i) = es.eigenvalues()(src);
    }
    r.explained = total > 0 ? VectorXd(r.eigenvalues / total) : VectorXd::Zero(k);
    r.projections = X * r.components.transpose();
    return r;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw ContractError("eval", "pearson needs two equal-length series (n >= 2)");
    const auto n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0 || sbb <= 0) throw DataError("eval", "pearson undefined for a constant series");
    return sab / std::sqrt(saa * sbb);
}

void write_latents_csv(std::ostream& out, const PcaResult& pca, std::span<const long> t) {
    if (static_cast<Eigen::Index>(t.size()) != pca.projections.rows())
        throw ContractError("eval", "time index length does not match projections");
    const auto old = out.precision(17);
    out << 't';
    for (Eigen::Index j = 0; j < pca.projections.cols(); ++j) out << ",c" << j + 1;
    out << '\n';
    for (Eigen::Index i = 0; i < pca.projections.rows(); ++i) {
        out << t[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < pca.projections.cols(); ++j) out << ',' << pca.projections(i, j);
        out << '\n';
    }
    out.precision(old);
}

}  // namespace lbs::eval
