#pragma once
// Category-count feasibility band. The welfare side needs the K-level
// quantiser distortion of phi*(t) below 2 W* eps* / alpha; the detection
// side needs aggregate power Phi(sqrt(n delta^2 / (s_T^2 + s_I^2 K / M)) - z)
// at least 1 - beta*.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "partition.hpp"

namespace mises {

struct BudgetTargets {
    double eps_star = 0.0;   // target relative welfare gap
    double beta_star = 0.0;  // target missed-detection probability

    void validate() const {
        if (!(eps_star > 0.0)) throw config_error("budget: eps_star must be > 0");
        if (!(beta_star > 0.0 && beta_star < 1.0)) throw config_error("budget: beta_star must lie in (0, 1)");
    }
};

struct ScalarGaussianSystem {
    double sigma2_temporal = 0.0;
    double sigma2_indiv = 0.0;
    std::int64_t M = 0;  // population size
    double delta = 0.0;
    std::int64_t n = 0;  // periods
    double alpha0 = 0.05;
    double alpha_curv = 2.0;  // strong concavity of U
    double W_star = 1.0;

    void validate() const {
        if (!(sigma2_temporal >= 0.0)) throw config_error("budget: sigma2_temporal must be >= 0");
        if (!(sigma2_indiv > 0.0)) throw config_error("budget: sigma2_indiv must be > 0");
        if (M < 1) throw config_error("budget: M must be >= 1");
        if (n < 1) throw config_error("budget: n must be >= 1");
        if (!(alpha0 > 0.0 && alpha0 < 1.0)) throw config_error("budget: alpha0 must lie in (0, 1)");
        if (!(alpha_curv > 0.0)) throw config_error("budget: alpha_curv must be > 0");
        if (!(W_star > 0.0)) throw config_error("budget: W_star must be > 0");
    }
};

struct FeasibilityBand {
    int K_min = 0;
    std::int64_t K_max = 0;  // 0 when even K = 1 misses the power target
    bool feasible = false;
    double H_lb_bits = 0.0;  // log2(K_min)
    bool k_min_capped = false;
};

// ---------------------------------------------------------------------------
// Sources for the quantiser distortion
// ---------------------------------------------------------------------------

struct UniformSource {
    double lo = 0.0, hi = 1.0;
};

struct GaussianSource {
    double mean = 0.0, sd = 1.0;
};

// Empirical phi* samples; distortion from warm-start-nested k-means.
struct SampledSource {
    PointSet points;
    KMeansConfig kmeans;
};

using QuantizerSource = std::variant<UniformSource, GaussianSource, SampledSource>;

namespace detail {

struct CellMoments {
    double mass = 0.0, first = 0.0, second = 0.0;  // integrals of f, x f, x^2 f over the cell
};

inline CellMoments cell_moments(const UniformSource& s, double a, double b) {
    a = std::max(a, s.lo);
    b = std::min(b, s.hi);
    if (b <= a) return {};
    const double w = s.hi - s.lo;
    return {(b - a) / w, (b * b - a * a) / (2.0 * w), (b * b * b - a * a * a) / (3.0 * w)};
}

inline CellMoments cell_moments(const GaussianSource& s, double a, double b) {
    const double za = (a - s.mean) / s.sd, zb = (b - s.mean) / s.sd;
    const double pa = std::isinf(za) ? 0.0 : normal_pdf(za);
    const double pb = std::isinf(zb) ? 0.0 : normal_pdf(zb);
    const double zpa = std::isinf(za) ? 0.0 : za * pa;
    const double zpb = std::isinf(zb) ? 0.0 : zb * pb;
    // Mass on the tail nearer to zero for accuracy.
    const double mass = (za > 0.0) ? normal_cdf(-za) - normal_cdf(-zb) : normal_cdf(zb) - normal_cdf(za);
    const double m = s.mean, sd = s.sd;
    CellMoments c;
    c.mass = mass;
    c.first = m * mass + sd * (pa - pb);
    c.second = (m * m + sd * sd) * mass + 2.0 * m * sd * (pa - pb) + sd * sd * (zpa - zpb);
    return c;
}

template <class Source>
double lloyd_max_distortion(const Source& src, int K, std::vector<double>* levels_out = nullptr) {
    const auto Ku = static_cast<std::size_t>(K);
    std::vector<double> edges(Ku + 1);
    double lo, hi, scale;
    if constexpr (std::is_same_v<Source, UniformSource>) {
        lo = src.lo;
        hi = src.hi;
        scale = hi - lo;
        for (std::size_t k = 0; k <= Ku; ++k) edges[k] = lo + (hi - lo) * static_cast<double>(k) / K;
    } else {
        lo = -std::numeric_limits<double>::infinity();
        hi = std::numeric_limits<double>::infinity();
        scale = src.sd;
        edges[0] = lo;
        edges[Ku] = hi;
        for (std::size_t k = 1; k < Ku; ++k)
            edges[k] = src.mean + src.sd * normal_quantile(static_cast<double>(k) / K);
    }
    std::vector<double> levels(Ku);
    for (int it = 0; it < 100000; ++it) {
        for (std::size_t k = 0; k < Ku; ++k) {
            const auto c = cell_moments(src, edges[k], edges[k + 1]);
            levels[k] = c.mass > 0.0 ? c.first / c.mass : 0.5 * (edges[k] + edges[k + 1]);
        }
        double shift = 0.0;
        for (std::size_t k = 1; k < Ku; ++k) {
            const double e = 0.5 * (levels[k - 1] + levels[k]);
            shift = std::max(shift, std::fabs(e - edges[k]));
            edges[k] = e;
        }
        if (shift <= 1e-14 * scale) break;
    }
    CompensatedSum d;
    for (std::size_t k = 0; k < Ku; ++k) {
        const auto c = cell_moments(src, edges[k], edges[k + 1]);
        levels[k] = c.mass > 0.0 ? c.first / c.mass : levels[k];
        d.add(c.second - 2.0 * levels[k] * c.first + levels[k] * levels[k] * c.mass);
    }
    if (levels_out) *levels_out = levels;
    return std::max(0.0, d.value());
}

}  // namespace detail

// Nested sequence of k-means partitions K = 1, 2, ... over fixed samples.
class NestedQuantizer {
public:
    explicit NestedQuantizer(const SampledSource& src) : src_(&src) {}

    // eps(K); extends the nested chain as needed.
    double epsilon(int K) {
        if (K < 1) throw infeasible_error("epsilon_of_K: K must be >= 1");
        if (static_cast<std::size_t>(K) > src_->points.n)
            throw infeasible_error("epsilon_of_K: K exceeds sample count");
        while (static_cast<int>(chain_.size()) < K) {
            const int next = static_cast<int>(chain_.size()) + 1;
            if (chain_.empty() || src_->kmeans.init != KMeansInit::warm_start)
                chain_.push_back(kmeans_partition(src_->points, next, src_->kmeans));
            else
                chain_.push_back(kmeans_partition_nested(src_->points, next, src_->kmeans, chain_.back()));
        }
        return chain_[static_cast<std::size_t>(K - 1)].eps;
    }

    std::size_t max_K() const { return src_->points.n; }

private:
    const SampledSource* src_;
    std::vector<CategoryPartition> chain_;
};

inline double epsilon_of_K(const QuantizerSource& source, int K) {
    if (K < 1) throw infeasible_error("epsilon_of_K: K must be >= 1");
    return std::visit(
        [K](const auto& s) -> double {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, SampledSource>) {
                NestedQuantizer q(s);
                return q.epsilon(K);
            } else {
                if constexpr (std::is_same_v<S, UniformSource>) {
                    if (!(s.hi > s.lo)) throw config_error("uniform source: need hi > lo");
                } else {
                    if (!(s.sd > 0.0)) throw config_error("gaussian source: sd must be > 0");
                }
                return detail::lloyd_max_distortion(s, K);
            }
        },
        source);
}

inline double welfare_threshold(const BudgetTargets& t, const ScalarGaussianSystem& sys) {
    return 2.0 * sys.W_star * t.eps_star / sys.alpha_curv;
}

struct KMinResult {
    int K = 0;  // valid unless capped
    bool capped = false;
};

// Smallest K with eps(K) <= 2 W* eps* / alpha. eps(K) is non-increasing, so the
// first crossing is the answer; analytic sources use doubling then bisection.
inline KMinResult k_min(const BudgetTargets& t, const ScalarGaussianSystem& sys, const QuantizerSource& source,
                        int cap = 4096) {
    t.validate();
    if (cap < 1) throw config_error("k_min: cap must be >= 1");
    const double thr = welfare_threshold(t, sys);
    if (const auto* s = std::get_if<SampledSource>(&source)) {
        NestedQuantizer q(*s);
        const int limit = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cap), q.max_K()));
        for (int K = 1; K <= limit; ++K)
            if (q.epsilon(K) <= thr) return {K, false};
        return {cap + 1, true};
    }
    auto ok = [&](int K) { return epsilon_of_K(source, K) <= thr; };
    if (ok(1)) return {1, false};
    int lo = 1, hi = 2;  // ok(lo) false
    while (hi <= cap && !ok(hi)) {
        lo = hi;
        hi *= 2;
    }
    if (hi > cap) {
        if (!ok(cap)) return {cap + 1, true};
        hi = cap;
    }
    while (hi - lo > 1) {
        const int mid = lo + (hi - lo) / 2;
        (ok(mid) ? hi : lo) = mid;
    }
    return {hi, false};
}

// Aggregate detection power with K categories over M agents.
inline double category_power(const ScalarGaussianSystem& sys, std::int64_t K) {
    const double var = sys.sigma2_temporal + sys.sigma2_indiv * static_cast<double>(K) / static_cast<double>(sys.M);
    const double lambda = static_cast<double>(sys.n) * sys.delta * sys.delta / var;
    return normal_cdf(std::sqrt(lambda) - normal_quantile(1.0 - sys.alpha0));
}

// Largest K in [1, M] with power >= 1 - beta*; 0 if K = 1 already fails.
inline std::int64_t k_max(const BudgetTargets& t, const ScalarGaussianSystem& sys) {
    t.validate();
    sys.validate();
    const double target = 1.0 - t.beta_star;
    auto ok = [&](std::int64_t K) { return category_power(sys, K) >= target; };
    if (!ok(1)) return 0;
    if (ok(sys.M)) return sys.M;
    std::int64_t lo = 1, hi = sys.M;  // ok(lo), !ok(hi)
    while (hi - lo > 1) {
        const std::int64_t mid = lo + (hi - lo) / 2;
        (ok(mid) ? lo : hi) = mid;
    }
    return lo;
}

inline FeasibilityBand feasibility_band(const BudgetTargets& t, const ScalarGaussianSystem& sys,
                                        const QuantizerSource& source, int cap = 4096) {
    t.validate();
    sys.validate();
    FeasibilityBand b;
    const auto km = k_min(t, sys, source, cap);
    b.K_min = km.K;
    b.k_min_capped = km.capped;
    b.K_max = k_max(t, sys);
    b.feasible = !km.capped && b.K_max >= 1 && static_cast<std::int64_t>(b.K_min) <= b.K_max;
    b.H_lb_bits = std::log2(static_cast<double>(b.K_min));
    return b;
}

}  // namespace mises
