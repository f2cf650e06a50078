#pragma once
// Welfare gap, misreporting gain and label leakage of a category mechanism
// on a finite population.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "demand.hpp"
#include "error.hpp"
#include "information.hpp"
#include "numeric.hpp"
#include "partition.hpp"

namespace mises {

struct EvalOptions {
    int bootstrap_resamples = 200;
    std::uint64_t seed = 0;
};

struct WelfareReport {
    double W_star = 0.0;
    double W_cat = 0.0;
    double delta = 0.0;
    double eps = 0.0;
    double lower_bound = 0.0;  // alpha eps / 2W*
    double upper_bound = 0.0;  // beta eps / 2W*
    double delta_se = 0.0;     // bootstrap
};

inline WelfareReport welfare_gap(const UtilityModel& u, const CategoryPartition& p, const Population& pop,
                                 const EvalOptions& opt = {}) {
    if (pop.size() == 0) throw domain_error("welfare_gap: empty population");
    const auto cats = assign_population(p, u, pop);
    std::vector<double> loss(pop.size());
    CompensatedSum w_star, w_cat;
    for (std::size_t i = 0; i < pop.size(); ++i) {
        const auto& t = pop.demands[i];
        const double best = utility_eval(u, t, fi_allocation(u, t));
        const double got = utility_eval(u, t, p.profiles[static_cast<std::size_t>(cats[i])]);
        w_star.add(best);
        w_cat.add(got);
        loss[i] = best - got;
    }
    const double n = static_cast<double>(pop.size());
    WelfareReport r;
    r.W_star = w_star.value() / n;
    if (!(r.W_star > 0.0)) throw model_error("welfare_gap: W* must be > 0");
    r.W_cat = w_cat.value() / n;
    r.delta = sum(loss) / n / r.W_star;
    r.eps = within_variance(p, u, pop).eps;
    r.lower_bound = u.alpha() * r.eps / (2.0 * r.W_star);
    r.upper_bound = u.beta() * r.eps / (2.0 * r.W_star);
    // U(t, phi*(t)) = d u_max for every agent, so W* has no sampling noise.
    r.delta_se = bootstrap_se_of_mean(loss, opt.bootstrap_resamples, derive_seed(opt.seed, {1})) / r.W_star;
    return r;
}

struct GainReport {
    double mean_raw = 0.0;      // E[max_{c' != c} U(t, phi(c')) - U(t, phi(c))]
    double mean_clamped = 0.0;  // E[max(0, .)]
    double max_raw = 0.0;
    double ic_bound = 0.0;       // beta eps / 2
    double welfare_bound = 0.0;  // W* Delta
    double mean_raw_se = 0.0;
    double mean_clamped_se = 0.0;
};

// Best misreport gain per agent; categories without members are not offered.
inline std::vector<double> misreport_gains(const UtilityModel& u, const CategoryPartition& p, const Population& pop) {
    if (p.K < 2) throw infeasible_error("misreport_gain: K = 1 leaves no alternative category");
    std::vector<std::size_t> live;
    for (std::size_t k = 0; k < static_cast<std::size_t>(p.K); ++k)
        if (p.member_counts.empty() || p.member_counts[k] > 0) live.push_back(k);
    if (live.size() < 2) throw infeasible_error("misreport_gain: fewer than two non-empty categories");
    const auto cats = assign_population(p, u, pop);
    std::vector<double> gains(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) {
        const auto& t = pop.demands[i];
        const auto own_k = static_cast<std::size_t>(cats[i]);
        const double own = utility_eval(u, t, p.profiles[own_k]);
        double best = -std::numeric_limits<double>::infinity();
        for (auto k : live) {
            if (k == own_k) continue;
            best = std::max(best, utility_eval(u, t, p.profiles[k]) - own);
        }
        gains[i] = best;
    }
    return gains;
}

inline GainReport misreport_gain(const UtilityModel& u, const CategoryPartition& p, const Population& pop,
                                 const EvalOptions& opt = {}) {
    const auto gains = misreport_gains(u, p, pop);
    std::vector<double> clamped(gains.size());
    for (std::size_t i = 0; i < gains.size(); ++i) clamped[i] = std::max(0.0, gains[i]);
    GainReport g;
    g.mean_raw = mean(gains);
    g.mean_clamped = mean(clamped);
    g.max_raw = *std::max_element(gains.begin(), gains.end());
    const auto w = welfare_gap(u, p, pop, EvalOptions{0, opt.seed});
    g.ic_bound = u.beta() * w.eps / 2.0;
    g.welfare_bound = w.W_star * w.delta;
    g.mean_raw_se = bootstrap_se_of_mean(gains, opt.bootstrap_resamples, derive_seed(opt.seed, {2}));
    g.mean_clamped_se = bootstrap_se_of_mean(clamped, opt.bootstrap_resamples, derive_seed(opt.seed, {3}));
    return g;
}

enum class NmiNormalization { geometric, arithmetic, max };

inline NmiNormalization nmi_normalization_from_string(const std::string& s) {
    if (s == "geometric") return NmiNormalization::geometric;
    if (s == "arithmetic") return NmiNormalization::arithmetic;
    if (s == "max") return NmiNormalization::max;
    throw config_error("unknown NMI normalization '" + s + "'");
}

struct LeakageReport {
    double nmi = 0.0;
    double I_TC = 0.0;  // bits
    double I_TR = 0.0;
    double H_C = 0.0;
    double H_T = 0.0;
    double log2K = 0.0;
};

// Information about the traffic-type label T carried by the category C and
// by the delivered profile R = phi(C). R merges categories whose profiles
// coincide exactly.
inline LeakageReport nmi_leakage(const CategoryPartition& p, const UtilityModel& u, const Population& pop,
                                 NmiNormalization norm = NmiNormalization::geometric) {
    if (pop.num_labels < 1) throw infeasible_error("nmi_leakage: population is unlabelled");
    const auto cats = assign_population(p, u, pop);
    const auto L = static_cast<std::size_t>(pop.num_labels);
    const auto K = static_cast<std::size_t>(p.K);

    ContingencyTable tc(L, K);
    for (std::size_t i = 0; i < pop.size(); ++i)
        tc.add(static_cast<std::size_t>(pop.labels[i]), static_cast<std::size_t>(cats[i]));
    const auto cm = tc.col_margins();

    // Profile index: the first live category carrying the same profile.
    std::vector<std::size_t> profile_index(K);
    bool merged = false;
    std::map<std::vector<double>, std::size_t> seen;
    std::size_t distinct = 0;
    for (std::size_t k = 0; k < K; ++k) {
        if (cm[k] == 0) {
            profile_index[k] = distinct++;
            continue;
        }
        auto [it, inserted] = seen.try_emplace(p.profiles[k].coords, distinct);
        if (inserted)
            ++distinct;
        else
            merged = true;
        profile_index[k] = it->second;
    }

    LeakageReport r;
    r.log2K = std::log2(static_cast<double>(K));
    // The plug-in entropy of K cells cannot exceed log2 K; guard the last ulp.
    r.H_C = std::min(entropy_bits(cm), r.log2K);
    r.H_T = entropy_bits(tc.row_margins());
    r.I_TC = std::min(mutual_information_bits(tc), r.H_C);

    if (!merged) {
        r.I_TR = r.I_TC;
    } else {
        ContingencyTable tr(L, distinct);
        for (std::size_t i = 0; i < pop.size(); ++i)
            tr.add(static_cast<std::size_t>(pop.labels[i]), profile_index[static_cast<std::size_t>(cats[i])]);
        // R is a function of C; rounding must not reverse the data-processing order.
        r.I_TR = std::min(mutual_information_bits(tr), r.I_TC);
    }

    double denom = 0.0;
    switch (norm) {
        case NmiNormalization::geometric: denom = std::sqrt(r.H_T * r.H_C); break;
        case NmiNormalization::arithmetic: denom = 0.5 * (r.H_T + r.H_C); break;
        case NmiNormalization::max: denom = std::max(r.H_T, r.H_C); break;
    }
    r.nmi = (r.H_T > 0.0 && r.H_C > 0.0 && denom > 0.0) ? std::clamp(r.I_TC / denom, 0.0, 1.0) : 0.0;
    return r;
}

}  // namespace mises
