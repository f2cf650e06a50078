#pragma once
// Category partitions over FI allocations: Lloyd k-means with k-means++
// seeding and warm-start nesting, label-based (semantic) partitions, and
// within-category variance statistics.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "demand.hpp"
#include "error.hpp"
#include "numeric.hpp"
#include "rng.hpp"

namespace mises {

// Row-major n x d matrix of points.
struct PointSet {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> data;

    PointSet() = default;
    PointSet(std::size_t rows, std::size_t cols) : n(rows), d(cols), data(rows * cols, 0.0) {}

    std::span<const double> row(std::size_t i) const { return {data.data() + i * d, d}; }
    std::span<double> row(std::size_t i) { return {data.data() + i * d, d}; }

    void push_back(std::span<const double> p) {
        if (n == 0 && d == 0) d = p.size();
        if (p.size() != d) throw dimension_error("PointSet: row dimension mismatch");
        data.insert(data.end(), p.begin(), p.end());
        ++n;
    }
};

inline PointSet fi_points(const UtilityModel& u, const Population& pop) {
    PointSet ps;
    ps.d = pop.dim();
    ps.data.reserve(pop.size() * ps.d);
    for (const auto& t : pop.demands) ps.push_back(fi_allocation(u, t).coords);
    return ps;
}

inline PointSet to_point_set(std::span<const ResourceVector> points) {
    PointSet ps;
    if (!points.empty()) ps.d = points.front().dim();
    for (const auto& p : points) ps.push_back(p.coords);
    return ps;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

enum class KMeansInit { kmeanspp, warm_start };

struct KMeansConfig {
    int restarts = 10;
    int max_iters = 100;
    double tol = 1e-8;  // centroid shift relative to the data scale
    KMeansInit init = KMeansInit::warm_start;
    std::uint64_t seed = 0;

    void validate() const {
        if (restarts < 1) throw config_error("kmeans: restarts must be >= 1");
        if (max_iters < 1) throw config_error("kmeans: max_iters must be >= 1");
        if (!(tol > 0.0)) throw config_error("kmeans: tol must be > 0");
    }
};

struct KMeansResult {
    PointSet centroids;           // K x d, the centres used by the final assignment
    std::vector<int> assignment;  // nearest centroid per point
    double sse = 0.0;             // about the member means of the final assignment
    int iterations = 0;
    std::vector<double> sse_trace;  // SSE about the current centroids, one per assignment step
};

namespace detail {

inline int nearest(const PointSet& centroids, std::span<const double> p, double* dist2 = nullptr) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < centroids.n; ++k) {
        const double dd = squared_distance(p, centroids.row(k));
        if (dd < best_d) {
            best_d = dd;
            best = static_cast<int>(k);
        }
    }
    if (dist2) *dist2 = best_d;
    return best;
}

// Assign every point, reseeding empty clusters at the farthest points.
// Returns SSE about the (possibly reseeded) centroids.
inline double assign_step(const PointSet& pts, PointSet& centroids, std::vector<int>& assignment,
                          std::vector<double>& dist2) {
    const std::size_t K = centroids.n;
    for (;;) {
        std::vector<std::size_t> counts(K, 0);
        for (std::size_t i = 0; i < pts.n; ++i) {
            assignment[i] = nearest(centroids, pts.row(i), &dist2[i]);
            ++counts[static_cast<std::size_t>(assignment[i])];
        }
        bool reseeded = false;
        std::vector<char> taken(pts.n, 0);
        for (std::size_t k = 0; k < K; ++k) {
            if (counts[k] != 0) continue;
            std::size_t far = pts.n;
            double far_d = -1.0;
            for (std::size_t i = 0; i < pts.n; ++i) {
                if (taken[i] || counts[static_cast<std::size_t>(assignment[i])] < 2) continue;
                if (dist2[i] > far_d) {
                    far_d = dist2[i];
                    far = i;
                }
            }
            // All remaining points coincide with their centroids; nothing to move.
            if (far == pts.n || far_d <= 0.0) continue;
            taken[far] = 1;
            std::copy(pts.row(far).begin(), pts.row(far).end(), centroids.row(k).begin());
            reseeded = true;
        }
        if (!reseeded) break;
    }
    CompensatedSum s;
    for (double v : dist2) s.add(v);
    return s.value();
}

inline PointSet member_means(const PointSet& pts, const std::vector<int>& assignment, const PointSet& fallback) {
    PointSet means(fallback.n, pts.d);
    std::vector<std::size_t> counts(fallback.n, 0);
    for (std::size_t i = 0; i < pts.n; ++i) {
        const auto k = static_cast<std::size_t>(assignment[i]);
        ++counts[k];
        auto r = means.row(k);
        const auto p = pts.row(i);
        for (std::size_t j = 0; j < pts.d; ++j) r[j] += p[j];
    }
    for (std::size_t k = 0; k < fallback.n; ++k) {
        auto r = means.row(k);
        if (counts[k] == 0) {
            std::copy(fallback.row(k).begin(), fallback.row(k).end(), r.begin());
        } else {
            for (double& x : r) x /= static_cast<double>(counts[k]);
        }
    }
    return means;
}

inline double sse_about(const PointSet& pts, const std::vector<int>& assignment, const PointSet& centres) {
    CompensatedSum s;
    for (std::size_t i = 0; i < pts.n; ++i)
        s.add(squared_distance(pts.row(i), centres.row(static_cast<std::size_t>(assignment[i]))));
    return s.value();
}

inline double data_scale(const PointSet& pts) {
    CompensatedSum s;
    for (double x : pts.data) s.add(x * x);
    const double rms = std::sqrt(s.value() / static_cast<double>(std::max<std::size_t>(pts.n, 1)));
    return rms > 0.0 ? rms : 1.0;
}

}  // namespace detail

inline PointSet kmeanspp_init(const PointSet& pts, std::size_t K, std::uint64_t seed) {
    Rng rng(seed);
    PointSet c(0, pts.d);
    c.d = pts.d;
    c.push_back(pts.row(rng.index(pts.n)));
    std::vector<double> d2(pts.n);
    for (std::size_t i = 0; i < pts.n; ++i) d2[i] = squared_distance(pts.row(i), c.row(0));
    while (c.n < K) {
        std::vector<double> cumulative(pts.n);
        double acc = 0.0;
        for (std::size_t i = 0; i < pts.n; ++i) cumulative[i] = (acc += d2[i]);
        std::size_t pick;
        if (acc <= 0.0) {
            pick = rng.index(pts.n);
        } else {
            const double x = rng.uniform() * acc;
            pick = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), x) -
                                            cumulative.begin());
            if (pick >= pts.n) pick = pts.n - 1;
        }
        c.push_back(pts.row(pick));
        const auto newest = c.row(c.n - 1);
        for (std::size_t i = 0; i < pts.n; ++i) d2[i] = std::min(d2[i], squared_distance(pts.row(i), newest));
    }
    return c;
}

// Extend `base` to K centres by repeatedly adding the point farthest from its
// nearest current centre (smallest index on ties).
inline PointSet farthest_point_extend(const PointSet& pts, PointSet base, std::size_t K) {
    std::vector<double> d2(pts.n, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < pts.n; ++i)
        for (std::size_t k = 0; k < base.n; ++k) d2[i] = std::min(d2[i], squared_distance(pts.row(i), base.row(k)));
    while (base.n < K) {
        std::size_t far = 0;
        for (std::size_t i = 1; i < pts.n; ++i)
            if (d2[i] > d2[far]) far = i;
        base.push_back(pts.row(far));
        const auto newest = base.row(base.n - 1);
        for (std::size_t i = 0; i < pts.n; ++i) d2[i] = std::min(d2[i], squared_distance(pts.row(i), newest));
    }
    return base;
}

// One Lloyd run from the given initial centres.
inline KMeansResult lloyd(const PointSet& pts, PointSet centroids, int max_iters, double tol) {
    KMeansResult res;
    res.assignment.assign(pts.n, 0);
    std::vector<double> dist2(pts.n, 0.0);
    const double threshold = tol * detail::data_scale(pts);
    int it = 0;
    for (; it < max_iters; ++it) {
        res.sse_trace.push_back(detail::assign_step(pts, centroids, res.assignment, dist2));
        PointSet updated = detail::member_means(pts, res.assignment, centroids);
        double shift = 0.0;
        for (std::size_t k = 0; k < centroids.n; ++k)
            shift = std::max(shift, std::sqrt(squared_distance(updated.row(k), centroids.row(k))));
        centroids = std::move(updated);
        if (shift <= threshold) {
            ++it;
            break;
        }
    }
    res.sse_trace.push_back(detail::assign_step(pts, centroids, res.assignment, dist2));
    res.iterations = it;
    const PointSet means = detail::member_means(pts, res.assignment, centroids);
    res.sse = detail::sse_about(pts, res.assignment, means);
    res.centroids = std::move(centroids);
    return res;
}

// Best-SSE k-means over restarts. `warm` (if given) is tried first as
// candidate 0; fresh k-means++ restarts follow. Ties keep the earlier candidate.
inline KMeansResult kmeans(const PointSet& pts, std::size_t K, const KMeansConfig& cfg,
                           const std::optional<PointSet>& warm = std::nullopt) {
    cfg.validate();
    if (K < 1) throw infeasible_error("kmeans: K must be >= 1");
    if (K > pts.n) throw infeasible_error("kmeans: K=" + std::to_string(K) + " exceeds point count " +
                                          std::to_string(pts.n));
    std::optional<KMeansResult> best;
    auto consider = [&](KMeansResult r) {
        if (!best || r.sse < best->sse) best = std::move(r);
    };
    if (warm) {
        if (warm->n != K || warm->d != pts.d) throw dimension_error("kmeans: warm start has wrong shape");
        consider(lloyd(pts, *warm, cfg.max_iters, cfg.tol));
    }
    for (int r = 0; r < cfg.restarts; ++r) {
        const auto seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(K), static_cast<std::uint64_t>(r)});
        consider(lloyd(pts, kmeanspp_init(pts, K, seed), cfg.max_iters, cfg.tol));
    }
    return std::move(*best);
}

// ---------------------------------------------------------------------------
// Category partitions
// ---------------------------------------------------------------------------

enum class AssignmentRule { nearest_centroid, by_label, explicit_table };

inline std::string to_string(AssignmentRule r) {
    switch (r) {
        case AssignmentRule::nearest_centroid: return "nearest-centroid";
        case AssignmentRule::by_label: return "by-label";
        case AssignmentRule::explicit_table: return "explicit";
    }
    return "?";
}

struct CategoryPartition {
    int K = 0;
    std::vector<ResourceVector> centroids;  // nearest-centroid rule only
    std::vector<ResourceVector> profiles;   // phi(k), conditional mean of phi* in category k
    AssignmentRule rule = AssignmentRule::nearest_centroid;
    std::vector<std::size_t> member_counts;
    std::vector<double> eps_k;
    double eps = 0.0;
    std::vector<double> probs;
    std::vector<int> table;  // category per population index, explicit_table rule only

    std::size_t dim() const { return profiles.empty() ? 0 : profiles.front().dim(); }
};

// Profiles, counts, probabilities and variances for a fixed assignment.
// Empty categories keep `fallback_profiles[k]` (or zeros) with eps_k = 0.
inline CategoryPartition partition_from_assignment(const PointSet& pts, const std::vector<int>& assignment, int K,
                                                   AssignmentRule rule,
                                                   const std::vector<ResourceVector>* fallback_profiles = nullptr) {
    if (assignment.size() != pts.n) throw dimension_error("partition: assignment length mismatch");
    if (K < 1) throw infeasible_error("partition: K must be >= 1");
    const auto Ku = static_cast<std::size_t>(K);
    CategoryPartition p;
    p.K = K;
    p.rule = rule;
    p.member_counts.assign(Ku, 0);
    std::vector<std::vector<CompensatedSum>> sums(Ku, std::vector<CompensatedSum>(pts.d));
    for (std::size_t i = 0; i < pts.n; ++i) {
        const int k = assignment[i];
        if (k < 0 || k >= K) throw dimension_error("partition: category id out of range");
        const auto ku = static_cast<std::size_t>(k);
        ++p.member_counts[ku];
        const auto row = pts.row(i);
        for (std::size_t j = 0; j < pts.d; ++j) sums[ku][j].add(row[j]);
    }
    p.profiles.resize(Ku);
    for (std::size_t k = 0; k < Ku; ++k) {
        std::vector<double> prof(pts.d, 0.0);
        if (p.member_counts[k] > 0) {
            for (std::size_t j = 0; j < pts.d; ++j)
                prof[j] = sums[k][j].value() / static_cast<double>(p.member_counts[k]);
        } else if (fallback_profiles && k < fallback_profiles->size()) {
            prof = (*fallback_profiles)[k].coords;
        }
        p.profiles[k] = ResourceVector(std::move(prof));
    }
    std::vector<CompensatedSum> sq(Ku);
    for (std::size_t i = 0; i < pts.n; ++i) {
        const auto k = static_cast<std::size_t>(assignment[i]);
        sq[k].add(squared_distance(pts.row(i), p.profiles[k].coords));
    }
    p.eps_k.assign(Ku, 0.0);
    p.probs.assign(Ku, 0.0);
    CompensatedSum total;
    const double n = static_cast<double>(pts.n);
    for (std::size_t k = 0; k < Ku; ++k) {
        if (p.member_counts[k] == 0) continue;
        p.eps_k[k] = sq[k].value() / static_cast<double>(p.member_counts[k]);
        p.probs[k] = static_cast<double>(p.member_counts[k]) / n;
        total.add(p.probs[k] * p.eps_k[k]);
    }
    p.eps = total.value();
    if (rule == AssignmentRule::explicit_table) p.table = assignment;
    return p;
}

inline CategoryPartition partition_from_kmeans(const PointSet& pts, const KMeansResult& km) {
    std::vector<ResourceVector> cents;
    for (std::size_t k = 0; k < km.centroids.n; ++k)
        cents.emplace_back(std::vector<double>(km.centroids.row(k).begin(), km.centroids.row(k).end()));
    auto p = partition_from_assignment(pts, km.assignment, static_cast<int>(km.centroids.n),
                                       AssignmentRule::nearest_centroid, &cents);
    p.centroids = std::move(cents);
    return p;
}

inline PointSet centres_of(const std::vector<ResourceVector>& vs, std::size_t d) {
    PointSet ps(0, d);
    ps.d = d;
    for (const auto& v : vs) ps.push_back(v.coords);
    return ps;
}

inline CategoryPartition kmeans_partition(const PointSet& pts, int K, const KMeansConfig& cfg) {
    if (K < 1) throw infeasible_error("kmeans_partition: K must be >= 1");
    return partition_from_kmeans(pts, kmeans(pts, static_cast<std::size_t>(K), cfg));
}

inline CategoryPartition kmeans_partition(std::span<const ResourceVector> points, int K, const KMeansConfig& cfg) {
    return kmeans_partition(to_point_set(points), K, cfg);
}

// Warm-start continuation from a partition with fewer categories: its
// profiles plus farthest points seed one candidate; fresh restarts compete.
inline CategoryPartition kmeans_partition_nested(const PointSet& pts, int K, const KMeansConfig& cfg,
                                                 const CategoryPartition& coarser) {
    if (coarser.K > K) throw infeasible_error("nested k-means: coarser partition has more categories");
    if (static_cast<std::size_t>(K) > pts.n) throw infeasible_error("kmeans: K exceeds point count");
    auto warm = farthest_point_extend(pts, centres_of(coarser.profiles, pts.d), static_cast<std::size_t>(K));
    return partition_from_kmeans(pts, kmeans(pts, static_cast<std::size_t>(K), cfg, warm));
}

// Partitions for an increasing list of K. With warm-start init each K is
// nested in its predecessor, so eps is non-increasing along the list.
inline std::vector<CategoryPartition> kmeans_sweep(const PointSet& pts, std::vector<int> Ks, const KMeansConfig& cfg) {
    if (Ks.empty()) throw config_error("kmeans_sweep: empty K list");
    if (!std::is_sorted(Ks.begin(), Ks.end()) || std::adjacent_find(Ks.begin(), Ks.end()) != Ks.end())
        throw config_error("kmeans_sweep: K list must be strictly increasing");
    std::vector<CategoryPartition> out;
    for (int K : Ks) {
        if (cfg.init == KMeansInit::warm_start && !out.empty())
            out.push_back(kmeans_partition_nested(pts, K, cfg, out.back()));
        else
            out.push_back(kmeans_partition(pts, K, cfg));
    }
    return out;
}

inline CategoryPartition semantic_partition(const Population& pop, const UtilityModel& u) {
    if (pop.num_labels < 1) throw infeasible_error("semantic_partition: population has no labels");
    return partition_from_assignment(fi_points(u, pop), pop.labels, pop.num_labels, AssignmentRule::by_label);
}

// Every agent placed in a uniformly random category.
inline CategoryPartition random_partition(const Population& pop, const UtilityModel& u, int K, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> a(pop.size());
    for (auto& k : a) k = static_cast<int>(rng.index(static_cast<std::size_t>(K)));
    return partition_from_assignment(fi_points(u, pop), a, K, AssignmentRule::explicit_table);
}

// Truthful declaration for a nearest-centroid partition.
inline int assign(const CategoryPartition& p, const UtilityModel& u, const DemandVector& t) {
    if (p.K == 1) return 0;
    if (p.rule != AssignmentRule::nearest_centroid)
        throw error("assign: partition rule '" + to_string(p.rule) + "' needs the agent's label or index");
    const auto r = fi_allocation(u, t);
    if (r.dim() != p.dim()) throw dimension_error("assign: dimension mismatch");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < p.centroids.size(); ++k) {
        const double dd = squared_distance(r.coords, p.centroids[k].coords);
        if (dd < best_d) {
            best_d = dd;
            best = static_cast<int>(k);
        }
    }
    return best;
}

// Declaration of agent `i` of `pop` under any rule.
inline int assign(const CategoryPartition& p, const UtilityModel& u, const Population& pop, std::size_t i) {
    switch (p.rule) {
        case AssignmentRule::nearest_centroid: return assign(p, u, pop.demands[i]);
        case AssignmentRule::by_label:
            if (pop.labels[i] >= p.K) throw dimension_error("assign: label outside partition");
            return pop.labels[i];
        case AssignmentRule::explicit_table:
            if (i >= p.table.size()) throw dimension_error("assign: agent index outside assignment table");
            return p.table[i];
    }
    return 0;
}

inline std::vector<int> assign_population(const CategoryPartition& p, const UtilityModel& u, const Population& pop) {
    std::vector<int> out(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) out[i] = assign(p, u, pop, i);
    return out;
}

struct WithinVariance {
    double eps = 0.0;
    std::vector<double> eps_k;
};

inline WithinVariance within_variance(const CategoryPartition& p, const UtilityModel& u, const Population& pop) {
    if (pop.size() > 0 && pop.dim() != p.dim()) throw dimension_error("within_variance: dimension mismatch");
    const auto Ku = static_cast<std::size_t>(p.K);
    std::vector<CompensatedSum> sq(Ku);
    std::vector<std::size_t> counts(Ku, 0);
    for (std::size_t i = 0; i < pop.size(); ++i) {
        const auto k = static_cast<std::size_t>(assign(p, u, pop, i));
        ++counts[k];
        sq[k].add(squared_distance(fi_allocation(u, pop.demands[i]).coords, p.profiles[k].coords));
    }
    WithinVariance w;
    w.eps_k.assign(Ku, 0.0);
    CompensatedSum total;
    for (std::size_t k = 0; k < Ku; ++k) {
        if (counts[k] == 0) continue;
        w.eps_k[k] = sq[k].value() / static_cast<double>(counts[k]);
        total.add(static_cast<double>(counts[k]) / static_cast<double>(pop.size()) * w.eps_k[k]);
    }
    w.eps = total.value();
    return w;
}

// CSV: k,prob,eps_k,profile_0..profile_{d-1}
inline void write_partition_csv(std::ostream& os, const CategoryPartition& p) {
    os << "k,prob,eps_k";
    for (std::size_t j = 0; j < p.dim(); ++j) os << ",profile_" << j;
    os << '\n';
    char buf[32];
    auto num = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return std::string(buf);
    };
    for (std::size_t k = 0; k < static_cast<std::size_t>(p.K); ++k) {
        os << k << ',' << num(p.probs[k]) << ',' << num(p.eps_k[k]);
        for (double x : p.profiles[k].coords) os << ',' << num(x);
        os << '\n';
    }
}

}  // namespace mises
