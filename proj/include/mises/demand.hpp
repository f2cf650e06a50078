#pragma once
// Demand populations, separable utility models and the full-information
// benchmark.
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "rng.hpp"

namespace mises {

template <class Tag>
struct Coordinates {
    std::vector<double> coords;

    Coordinates() = default;
    explicit Coordinates(std::vector<double> c) : coords(std::move(c)) {}
    Coordinates(std::initializer_list<double> c) : coords(c) {}

    std::size_t dim() const { return coords.size(); }
    double operator[](std::size_t i) const { return coords[i]; }
    double& operator[](std::size_t i) { return coords[i]; }
    bool operator==(const Coordinates&) const = default;
};

struct DemandTag {};
struct ResourceTag {};
using DemandVector = Coordinates<DemandTag>;      // type t, resource-requirement units
using ResourceVector = Coordinates<ResourceTag>;  // allocation r

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

struct Population {
    std::vector<DemandVector> demands;
    std::vector<int> labels;  // traffic-type id per demand, in [0, num_labels)
    int num_labels = 0;
    std::uint64_t seed = 0;

    std::size_t size() const { return demands.size(); }
    std::size_t dim() const { return demands.empty() ? 0 : demands.front().dim(); }

    void validate() const {
        if (labels.size() != demands.size()) throw dimension_error("population: labels/demands length mismatch");
        const std::size_t d = dim();
        for (std::size_t i = 0; i < demands.size(); ++i) {
            if (demands[i].dim() != d) throw dimension_error("population: inconsistent demand dimension");
            if (labels[i] < 0 || labels[i] >= num_labels) throw dimension_error("population: label out of range");
            for (double x : demands[i].coords)
                if (!std::isfinite(x)) throw domain_error("population: non-finite demand entry");
        }
    }
};

// ---------------------------------------------------------------------------
// Gaussian mixture over demand types
// ---------------------------------------------------------------------------

struct MixtureConfig {
    int components = 0;  // L
    int dim = 0;         // d
    std::size_t samples = 0;  // N
    std::vector<std::vector<double>> means;  // L x d
    std::vector<std::vector<double>> stds;   // L x d, diagonal
    std::vector<double> weights;             // L

    void validate() const {
        if (components < 1) throw config_error("mixture: components must be >= 1");
        if (dim < 1) throw config_error("mixture: dim must be >= 1");
        const auto L = static_cast<std::size_t>(components);
        const auto d = static_cast<std::size_t>(dim);
        if (means.size() != L || stds.size() != L || weights.size() != L)
            throw config_error("mixture: means/stds/weights must have one entry per component");
        for (std::size_t l = 0; l < L; ++l) {
            if (means[l].size() != d || stds[l].size() != d)
                throw config_error("mixture: component " + std::to_string(l) + " has wrong dimension");
            for (double s : stds[l])
                if (!(s > 0.0)) throw config_error("mixture: stds must be > 0");
            for (double m : means[l])
                if (!std::isfinite(m)) throw config_error("mixture: non-finite mean");
            if (!(weights[l] >= 0.0)) throw config_error("mixture: weights must be >= 0");
        }
        if (std::fabs(sum(weights) - 1.0) > 1e-12) throw config_error("mixture: weights must sum to 1");
    }

    // Five traffic types in four dimensions: the four corners of a simplex
    // around 0.5 plus its centre, with increasing spread per type.
    static MixtureConfig phase1_default(std::size_t n = 50'000) {
        MixtureConfig cfg;
        cfg.components = 5;
        cfg.dim = 4;
        cfg.samples = n;
        const double spread[] = {0.05, 0.075, 0.10, 0.125, 0.15};
        for (int l = 0; l < 5; ++l) {
            std::vector<double> m(4, 0.2);
            if (l < 4)
                m[static_cast<std::size_t>(l)] = 0.8;
            else
                m.assign(4, 0.5);
            cfg.means.push_back(m);
            cfg.stds.emplace_back(4, spread[l]);
            cfg.weights.push_back(0.2);
        }
        return cfg;
    }
};

inline Population sample_population(const MixtureConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Population pop;
    pop.num_labels = cfg.components;
    pop.seed = seed;
    pop.demands.reserve(cfg.samples);
    pop.labels.reserve(cfg.samples);

    std::vector<double> cumulative(cfg.weights.size());
    double acc = 0.0;
    for (std::size_t l = 0; l < cfg.weights.size(); ++l) cumulative[l] = (acc += cfg.weights[l]);

    Rng rng(seed);
    const auto d = static_cast<std::size_t>(cfg.dim);
    for (std::size_t i = 0; i < cfg.samples; ++i) {
        const std::size_t l = rng.categorical(cumulative);
        DemandVector t{std::vector<double>(d)};
        for (std::size_t j = 0; j < d; ++j) t[j] = rng.normal(cfg.means[l][j], cfg.stds[l][j]);
        pop.demands.push_back(std::move(t));
        pop.labels.push_back(static_cast<int>(l));
    }
    return pop;
}

// Unlabelled (single label) population uniform on [lo, hi]^d.
inline Population sample_uniform_population(std::size_t n, std::size_t d, double lo, double hi,
                                            std::uint64_t seed) {
    Population pop;
    pop.num_labels = 1;
    pop.seed = seed;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        DemandVector t{std::vector<double>(d)};
        for (std::size_t j = 0; j < d; ++j) t[j] = rng.uniform(lo, hi);
        pop.demands.push_back(std::move(t));
        pop.labels.push_back(0);
    }
    return pop;
}

// CSV header: label,t_0,...,t_{d-1}
inline void write_population_csv(std::ostream& os, const Population& pop) {
    os << "label";
    for (std::size_t j = 0; j < pop.dim(); ++j) os << ",t_" << j;
    os << '\n';
    char buf[32];
    for (std::size_t i = 0; i < pop.size(); ++i) {
        os << pop.labels[i];
        for (double x : pop.demands[i].coords) {
            std::snprintf(buf, sizeof buf, "%.17g", x);
            os << ',' << buf;
        }
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Utility models
// ---------------------------------------------------------------------------

enum class UtilityKind { quadratic_offset, quartic_perturbed };

inline std::string to_string(UtilityKind k) {
    return k == UtilityKind::quadratic_offset ? "quadratic-offset" : "quartic-perturbed";
}

inline UtilityKind utility_kind_from_string(const std::string& s) {
    if (s == "quadratic-offset") return UtilityKind::quadratic_offset;
    if (s == "quartic-perturbed") return UtilityKind::quartic_perturbed;
    throw config_error("unknown utility kind '" + s + "'");
}

// Separable utility U(t, r) = sum_i (u_max - x_i^2 - kappa x_i^4), x = r - t.
// The quartic term is only admitted on |x_i| <= domain_bound, where the
// curvature of -U lies in [2, 2 + 12 kappa D^2].
struct UtilityModel {
    UtilityKind kind = UtilityKind::quadratic_offset;
    double u_max = 1.0;
    double kappa = 0.0;
    double domain_bound = 0.0;  // D; quartic-perturbed only

    static UtilityModel quadratic_offset(double u_max) {
        if (!(u_max > 0.0)) throw model_error("utility: u_max must be > 0");
        return {UtilityKind::quadratic_offset, u_max, 0.0, 0.0};
    }
    static UtilityModel quartic_perturbed(double u_max, double kappa, double domain_bound) {
        if (!(u_max > 0.0)) throw model_error("utility: u_max must be > 0");
        if (!(kappa >= 0.0) || !(domain_bound > 0.0)) throw model_error("utility: need kappa >= 0 and D > 0");
        return {UtilityKind::quartic_perturbed, u_max, kappa, domain_bound};
    }

    double alpha() const { return 2.0; }
    double beta() const {
        return kind == UtilityKind::quadratic_offset ? 2.0 : 2.0 + 12.0 * kappa * domain_bound * domain_bound;
    }
};

// Both kinds penalise an even function of r - t, so the argmax is r = t.
inline ResourceVector fi_allocation(const UtilityModel&, const DemandVector& t) {
    return ResourceVector(t.coords);
}

inline double utility_eval(const UtilityModel& u, const DemandVector& t, std::span<const double> r) {
    if (t.dim() != r.size()) throw dimension_error("utility_eval: dim(t) != dim(r)");
    double total = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double x = r[i] - t[i];
        double v = u.u_max - x * x;
        if (u.kind == UtilityKind::quartic_perturbed) {
            if (std::fabs(x) > u.domain_bound)
                throw domain_error("utility_eval: |r_i - t_i| exceeds the quartic domain bound");
            v -= u.kappa * x * x * x * x;
        }
        total += v;
    }
    return total;
}

inline double utility_eval(const UtilityModel& u, const DemandVector& t, const ResourceVector& r) {
    return utility_eval(u, t, std::span<const double>(r.coords));
}

// W* as the sample mean of U(t, phi*(t)).
inline double fi_welfare(const UtilityModel& u, const Population& pop) {
    if (pop.size() == 0) throw domain_error("fi_welfare: empty population");
    CompensatedSum s;
    for (const auto& t : pop.demands) s.add(utility_eval(u, t, fi_allocation(u, t)));
    return s.value() / static_cast<double>(pop.size());
}

}  // namespace mises
