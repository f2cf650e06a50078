#include <gtest/gtest.h>

#include <cmath>

#include "mises/detection.hpp"

using namespace mises;

namespace {

DetectionModel random_model(Eigen::Index r, std::uint64_t seed) {
    Rng rng(seed);
    auto rand_spd = [&](double ridge) {
        Eigen::MatrixXd A(r, r);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < r; ++j) A(i, j) = rng.normal();
        return Eigen::MatrixXd(A * A.transpose() / static_cast<double>(r) +
                               ridge * Eigen::MatrixXd::Identity(r, r));
    };
    DetectionModel m;
    m.mu = Eigen::VectorXd::Zero(r);
    m.delta = Eigen::VectorXd(r);
    for (Eigen::Index i = 0; i < r; ++i) m.delta(i) = rng.normal(0.0, 0.5);
    m.Sigma = rand_spd(0.1);
    m.Sigma_xi = rand_spd(0.0);
    return m;
}

}  // namespace

TEST(Noncentrality, SpecExamples) {
    const auto m = DetectionModel::scalar(1.0, 1.0, 1.0);
    EXPECT_DOUBLE_EQ(noncentrality(m, 4), 4.0);
    EXPECT_DOUBLE_EQ(noncentrality(m, 4, 1), 2.0);
    EXPECT_NEAR(noncentrality(m, 4, 1'000'000'000), 4.0, 1e-7);
    EXPECT_THROW(noncentrality(m, 0), domain_error);
    EXPECT_THROW(noncentrality(m, 4, 0), domain_error);
}

TEST(Noncentrality, OrderedByAddedNoise) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto m = random_model(3, s);
        double prev = noncentrality(m, 10, 1);
        for (std::int64_t a : {2, 5, 10, 100, 1000}) {
            const double l = noncentrality(m, 10, a);
            EXPECT_GE(l, prev - 1e-12);
            prev = l;
        }
        EXPECT_GE(noncentrality(m, 10), prev - 1e-12);
        // Matrix comparison: Cov_flow - Cov_agg is PSD.
        const Eigen::MatrixXd diff = effective_covariance(m, 3) - effective_covariance(m, std::nullopt);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(diff);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    }
}

TEST(Power, ClosedFormSpecValues) {
    const auto m = DetectionModel::scalar(1.0, 1.0, 1.0);
    const auto agg = power_closed_form(m, 4, std::nullopt, 0.05);
    EXPECT_NEAR(agg.power, 0.6387, 1e-3);
    EXPECT_EQ(agg.method, PowerMethod::closed_form);
    EXPECT_EQ(agg.se, 0.0);
    const auto flow = power_closed_form(m, 4, 1, 0.05);
    EXPECT_NEAR(flow.power, 0.4088, 1e-3);
    const auto zero = power_closed_form(DetectionModel::scalar(0.0, 1.0, 1.0), 4, std::nullopt, 0.05);
    EXPECT_NEAR(zero.power, 0.05, 1e-12);
    EXPECT_THROW(power_closed_form(m, 4, std::nullopt, 0.0), domain_error);
    EXPECT_THROW(power_closed_form(m, 4, std::nullopt, 1.0), domain_error);
}

TEST(Power, MonotoneInSamplesAndShift) {
    double prev = 0.0;
    for (std::int64_t n = 1; n <= 64; n *= 2) {
        const double p = power_closed_form(DetectionModel::scalar(0.3, 1.0, 1.0), n, std::nullopt, 0.05).power;
        EXPECT_GT(p, prev);
        prev = p;
    }
    prev = 0.0;
    for (double d : {0.1, 0.2, 0.4, 0.8}) {
        const double p = power_closed_form(DetectionModel::scalar(d, 1.0, 1.0), 5, 3, 0.05).power;
        EXPECT_GT(p, prev);
        prev = p;
    }
}

TEST(Power, DominanceOnGrid) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto m = random_model(1 + static_cast<Eigen::Index>(s % 4), 100 + s);
        for (double a : {0.01, 0.05, 0.1, 0.2})
            for (std::int64_t n : {1, 5, 20, 100})
                for (std::int64_t ag : {1, 10, 100})
                    EXPECT_GE(power_closed_form(m, n, std::nullopt, a).power, power_closed_form(m, n, ag, a).power);
    }
}

TEST(Power, MonteCarloAgreesWithClosedForm) {
    const auto m = DetectionModel::scalar(1.0, 1.0, 1.0);
    const auto mc = power_monte_carlo(m, 4, std::nullopt, 0.05, 100'000, 2);
    EXPECT_EQ(mc.method, PowerMethod::monte_carlo);
    EXPECT_EQ(mc.trials, 100'000);
    EXPECT_NEAR(mc.se, std::sqrt(mc.power * (1 - mc.power) / 100'000), 1e-15);
    EXPECT_LE(std::fabs(mc.power - 0.63876), 3 * mc.se);
    const auto size = power_monte_carlo(DetectionModel::scalar(0.0, 1.0, 1.0), 4, std::nullopt, 0.05, 100'000, 3);
    EXPECT_LE(std::fabs(size.power - 0.05), 3 * size.se);
    // Very many agents behave like the aggregate test.
    const auto many = power_monte_carlo(m, 4, 1'000'000, 0.05, 20'000, 3);
    const auto agg = power_monte_carlo(m, 4, std::nullopt, 0.05, 20'000, 4);
    EXPECT_LE(std::fabs(many.power - agg.power), 3 * std::hypot(many.se, agg.se));
    EXPECT_THROW(power_monte_carlo(m, 4, std::nullopt, 0.05, 99, 1), domain_error);
}

TEST(Power, MonteCarloMultivariate) {
    const auto m = random_model(3, 7);
    const auto cf = power_closed_form(m, 3, 2, 0.1);
    const auto mc = power_monte_carlo(m, 3, 2, 0.1, 40'000, 9);
    EXPECT_LE(std::fabs(mc.power - cf.power), 3 * mc.se);
}

TEST(Power, MonteCarloDeterministic) {
    const auto m = DetectionModel::scalar(0.5, 1.0, 2.0);
    EXPECT_EQ(power_monte_carlo(m, 3, 5, 0.05, 1000, 42).power, power_monte_carlo(m, 3, 5, 0.05, 1000, 42).power);
}

TEST(GapCurve, Properties) {
    const auto m = DetectionModel::scalar(1.0, 1.0, 1.0);
    const std::vector<std::int64_t> ms{8, 16, 32, 64, 128, 256, 512, 1024};
    const auto c = power_gap_curve(m, 4, 0.05, ms);
    ASSERT_EQ(c.points.size(), ms.size());
    for (const auto& p : c.points) EXPECT_GE(p.gap, 0.0);
    ASSERT_TRUE(c.tail_slope.has_value());
    EXPECT_NEAR(*c.tail_slope, -1.0, 0.15);
    const auto flat = power_gap_curve(DetectionModel::scalar(1.0, 1.0, 0.0), 4, 0.05, ms);
    for (const auto& p : flat.points) EXPECT_EQ(p.gap, 0.0);
    EXPECT_FALSE(flat.tail_slope.has_value());
    EXPECT_THROW(power_gap_curve(m, 4, 0.05, {}), domain_error);
    EXPECT_THROW(power_gap_curve(m, 4, 0.05, {4, 2}), domain_error);
}

TEST(DetectionModel, Validation) {
    auto m = DetectionModel::scalar(1.0, 1.0, 1.0);
    EXPECT_NO_THROW(m.validate());
    m.Sigma(0, 0) = -1.0;
    EXPECT_THROW(m.validate(), model_error);
    m = random_model(2, 1);
    m.delta = Eigen::VectorXd::Zero(3);
    EXPECT_THROW(m.validate(), dimension_error);
}
