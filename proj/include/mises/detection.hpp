#pragma once
// Power of the one-sided Gaussian mean-shift test on aggregate metrics, and
// of the same test on per-agent observations carrying extra noise.
//
// H0: X_i ~ N(mu, Sigma),  H1: X_i ~ N(mu - delta, Sigma), i = 1..n.
// With m agents per period the per-agent grand mean has covariance
// (Sigma + Sigma_xi / m) / n instead of Sigma / n. The test statistic is the
// projection of (mu - mean) on Cov^-1 delta, which is the likelihood-ratio
// direction for a pure mean shift with known covariance.
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "rng.hpp"

namespace mises {

struct DetectionModel {
    Eigen::VectorXd mu;
    Eigen::MatrixXd Sigma;
    Eigen::VectorXd delta;
    Eigen::MatrixXd Sigma_xi;

    Eigen::Index dim() const { return mu.size(); }

    void validate() const {
        const auto r = dim();
        if (r < 1) throw model_error("detection model: dimension must be >= 1");
        if (Sigma.rows() != r || Sigma.cols() != r || delta.size() != r || Sigma_xi.rows() != r ||
            Sigma_xi.cols() != r)
            throw dimension_error("detection model: inconsistent dimensions");
        if (!Sigma.isApprox(Sigma.transpose(), 1e-12) || !Sigma_xi.isApprox(Sigma_xi.transpose(), 1e-12))
            throw model_error("detection model: covariances must be symmetric");
        Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
        if (llt.info() != Eigen::Success) throw model_error("detection model: Sigma must be positive definite");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Sigma_xi, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
            throw model_error("detection model: Sigma_xi must be positive semi-definite");
    }

    // One-dimensional model.
    static DetectionModel scalar(double delta, double sigma2, double sigma2_xi, double mu = 0.0) {
        DetectionModel m;
        m.mu = Eigen::VectorXd::Constant(1, mu);
        m.Sigma = Eigen::MatrixXd::Constant(1, 1, sigma2);
        m.delta = Eigen::VectorXd::Constant(1, delta);
        m.Sigma_xi = Eigen::MatrixXd::Constant(1, 1, sigma2_xi);
        return m;
    }
};

enum class PowerMethod { closed_form, monte_carlo };

struct PowerResult {
    double power = 0.0;
    double noncentrality = 0.0;
    PowerMethod method = PowerMethod::closed_form;
    double se = 0.0;
    std::int64_t trials = 0;
};

// Per-period covariance of the statistic's input: Sigma, plus Sigma_xi/agents
// for the per-agent test.
inline Eigen::MatrixXd effective_covariance(const DetectionModel& m, std::optional<std::int64_t> agents) {
    if (!agents) return m.Sigma;
    if (*agents < 1) throw domain_error("detection: agents must be >= 1");
    return m.Sigma + m.Sigma_xi / static_cast<double>(*agents);
}

// lambda = n delta^T (Sigma [+ Sigma_xi/agents])^-1 delta
inline double noncentrality(const DetectionModel& m, std::int64_t n, std::optional<std::int64_t> agents = std::nullopt) {
    if (n < 1) throw domain_error("noncentrality: n must be >= 1");
    const Eigen::MatrixXd cov = effective_covariance(m, agents);
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw model_error("noncentrality: singular effective covariance");
    const Eigen::VectorXd w = llt.solve(m.delta);
    return static_cast<double>(n) * m.delta.dot(w);
}

inline void check_alpha0(double alpha0) {
    if (!(alpha0 > 0.0 && alpha0 < 1.0)) throw domain_error("alpha0 must lie in (0, 1)");
}

// beta = Phi(sqrt(lambda) - z_{1-alpha0})
inline double power_from_noncentrality(double lambda, double alpha0) {
    check_alpha0(alpha0);
    return normal_cdf(std::sqrt(lambda) - normal_quantile(1.0 - alpha0));
}

inline PowerResult power_closed_form(const DetectionModel& m, std::int64_t n, std::optional<std::int64_t> agents,
                                     double alpha0) {
    check_alpha0(alpha0);
    PowerResult r;
    r.noncentrality = noncentrality(m, n, agents);
    r.power = power_from_noncentrality(r.noncentrality, alpha0);
    r.method = PowerMethod::closed_form;
    return r;
}

// Simulates n periods under H1 per trial. Per-agent noise enters through the
// per-period agent mean, which is exactly N(0, Sigma_xi / agents); each trial
// draws from its own stream derived from (seed, trial).
inline PowerResult power_monte_carlo(const DetectionModel& m, std::int64_t n, std::optional<std::int64_t> agents,
                                     double alpha0, std::int64_t trials, std::uint64_t seed) {
    check_alpha0(alpha0);
    if (trials < 100) throw domain_error("power_monte_carlo: trials must be >= 100");
    if (n < 1) throw domain_error("power_monte_carlo: n must be >= 1");
    const auto r = m.dim();
    const Eigen::MatrixXd cov = effective_covariance(m, agents);
    Eigen::LLT<Eigen::MatrixXd> cov_llt(cov);
    if (cov_llt.info() != Eigen::Success) throw model_error("power_monte_carlo: singular effective covariance");
    // With delta = 0 every direction gives a size-alpha0 test; use the first axis.
    Eigen::VectorXd direction = m.delta;
    if (direction.isZero(0.0)) direction = Eigen::VectorXd::Unit(r, 0);
    const Eigen::VectorXd w = cov_llt.solve(direction);
    const double sd0 = std::sqrt(direction.dot(w) / static_cast<double>(n));  // sd of w^T(mu - mean) under H0
    const double z = normal_quantile(1.0 - alpha0);

    const Eigen::MatrixXd L_sigma = Eigen::LLT<Eigen::MatrixXd>(m.Sigma).matrixL();
    Eigen::MatrixXd L_xi = Eigen::MatrixXd::Zero(r, r);
    if (agents) {
        // Cholesky of a PSD matrix via its eigendecomposition.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.Sigma_xi / static_cast<double>(*agents));
        L_xi = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }

    std::int64_t rejections = 0;
    Eigen::VectorXd e(r), e2(r), acc(r), x(r);
    const Eigen::VectorXd h1_mean = m.mu - m.delta;
    for (std::int64_t trial = 0; trial < trials; ++trial) {
        Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(trial)}));
        acc.setZero();
        for (std::int64_t i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < r; ++j) e(j) = rng.normal();
            x.noalias() = L_sigma * e;
            x += h1_mean;
            if (agents) {
                for (Eigen::Index j = 0; j < r; ++j) e2(j) = rng.normal();
                x.noalias() += L_xi * e2;
            }
            acc += x;
        }
        const double stat = (w.dot(m.mu) - w.dot(acc) / static_cast<double>(n)) / sd0;
        if (stat > z) ++rejections;
    }
    PowerResult res;
    res.power = static_cast<double>(rejections) / static_cast<double>(trials);
    res.noncentrality = noncentrality(m, n, agents);
    res.method = PowerMethod::monte_carlo;
    res.trials = trials;
    res.se = std::sqrt(res.power * (1.0 - res.power) / static_cast<double>(trials));
    return res;
}

struct GapPoint {
    std::int64_t agents = 0;
    double gap = 0.0;  // power_agg - power_flow(agents)
    double power_agg = 0.0;
    double power_flow = 0.0;
};

struct GapCurve {
    std::vector<GapPoint> points;
    // Least-squares slope of log gap on log m over the largest half of the
    // agent list; empty when a tail gap is not strictly positive.
    std::optional<double> tail_slope;
};

inline GapCurve power_gap_curve(const DetectionModel& m, std::int64_t n, double alpha0,
                                const std::vector<std::int64_t>& m_list) {
    if (m_list.empty()) throw domain_error("power_gap_curve: empty agent list");
    for (std::size_t i = 1; i < m_list.size(); ++i)
        if (m_list[i] <= m_list[i - 1]) throw domain_error("power_gap_curve: agent list must be increasing");
    GapCurve c;
    const double agg = power_closed_form(m, n, std::nullopt, alpha0).power;
    for (auto a : m_list) {
        const double flow = power_closed_form(m, n, a, alpha0).power;
        c.points.push_back({a, agg - flow, agg, flow});
    }
    const std::size_t start = m_list.size() / 2;
    std::vector<double> lx, ly;
    bool ok = m_list.size() - start >= 2;
    for (std::size_t i = start; i < c.points.size() && ok; ++i) {
        if (!(c.points[i].gap > 0.0)) ok = false;
        lx.push_back(std::log(static_cast<double>(c.points[i].agents)));
        ly.push_back(std::log(c.points[i].gap));
    }
    if (ok) c.tail_slope = ols_slope(lx, ly);
    return c;
}

}  // namespace mises
