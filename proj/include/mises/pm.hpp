#pragma once
// Mismatch detection on per-cell, per-hour PM telemetry.
//
// Pipeline: temporal split -> z-score on training rows -> k-means on per-cell
// training means -> per-cluster distance threshold at the (1 - alpha0)
// nearest-rank quantile of validation distances -> replace a fraction rho of
// test rows with draws from another cluster's training reservoir -> flag rows
// whose distance to their cell's centroid strictly exceeds the threshold.
#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"
#include "partition.hpp"
#include "rng.hpp"

namespace mises::pm {

struct PMRow {
    std::string network_id;
    std::string cell_id;
    std::int64_t hour = 0;
    std::vector<double> features;
};

using CellKey = std::pair<std::string, std::string>;  // (network_id, cell_id)

inline CellKey key_of(const PMRow& r) { return {r.network_id, r.cell_id}; }

struct PMDataset {
    std::vector<PMRow> rows;
    std::size_t F = 11;

    std::vector<std::int64_t> distinct_hours() const {
        std::set<std::int64_t> h;
        for (const auto& r : rows) h.insert(r.hour);
        return {h.begin(), h.end()};
    }

    std::vector<CellKey> cells() const {
        std::set<CellKey> c;
        for (const auto& r : rows) c.insert(key_of(r));
        return {c.begin(), c.end()};
    }

    void validate() const {
        std::set<std::tuple<std::string, std::string, std::int64_t>> seen;
        for (const auto& r : rows) {
            if (r.features.size() != F) throw schema_error("pm dataset: feature vector length != " + std::to_string(F));
            for (double x : r.features)
                if (!std::isfinite(x)) throw schema_error("pm dataset: non-finite feature value");
            if (!seen.emplace(r.network_id, r.cell_id, r.hour).second)
                throw schema_error("pm dataset: duplicate (cell, hour) = (" + r.cell_id + ", " +
                                   std::to_string(r.hour) + ")");
        }
    }
};

inline std::string feature_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "f%02zu", i);
    return buf;
}

inline std::string csv_header(std::size_t F) {
    std::string h = "network_id,cell_id,hour";
    for (std::size_t i = 0; i < F; ++i) h += "," + feature_name(i);
    return h;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline std::string fmt17(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace detail

// Reads the CSV schema network_id,cell_id,hour,f00,...; `expected_F` pins the
// feature count, otherwise it is taken from the header.
inline PMDataset read_pm_csv(std::istream& in, std::optional<std::size_t> expected_F = std::nullopt) {
    std::string line;
    if (!std::getline(in, line)) throw schema_error("pm csv: missing header");
    const auto head = detail::split_csv_line(line);
    if (head.size() < 4) throw schema_error("pm csv: header has no feature columns");
    const std::size_t F = head.size() - 3;
    if (expected_F && *expected_F != F)
        throw schema_error("pm csv: header has " + std::to_string(F) + " features, expected " +
                           std::to_string(*expected_F));
    if (line.back() == '\r') line.pop_back();
    if (line != csv_header(F)) throw schema_error("pm csv: header mismatch, expected '" + csv_header(F) + "'");

    PMDataset ds;
    ds.F = F;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cols = detail::split_csv_line(line);
        const std::string where = "pm csv line " + std::to_string(lineno) + ": ";
        if (cols.size() != F + 3)
            throw schema_error(where + "expected " + std::to_string(F + 3) + " columns, got " +
                               std::to_string(cols.size()));
        PMRow r;
        r.network_id = cols[0];
        r.cell_id = cols[1];
        {
            const auto& s = cols[2];
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), r.hour);
            if (ec != std::errc() || p != s.data() + s.size()) throw schema_error(where + "non-integer hour '" + s + "'");
        }
        r.features.resize(F);
        for (std::size_t i = 0; i < F; ++i) {
            const auto& s = cols[3 + i];
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), r.features[i]);
            if (ec != std::errc() || p != s.data() + s.size() || s.empty())
                throw schema_error(where + "non-numeric feature '" + s + "' in " + feature_name(i));
        }
        ds.rows.push_back(std::move(r));
    }
    ds.validate();
    return ds;
}

inline PMDataset ingest_pm_csv(const std::string& path, std::optional<std::size_t> expected_F = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw schema_error("pm csv: cannot open '" + path + "'");
    return read_pm_csv(in, expected_F);
}

inline void write_pm_csv(std::ostream& os, const PMDataset& ds) {
    os << csv_header(ds.F) << '\n';
    for (const auto& r : ds.rows) {
        os << r.network_id << ',' << r.cell_id << ',' << r.hour;
        for (double x : r.features) os << ',' << detail::fmt17(x);
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Synthetic telemetry
// ---------------------------------------------------------------------------

struct SyntheticPMConfig {
    std::string network_id = "synth";
    int clusters = 2;
    int cells = 200;
    int hours = 840;
    std::size_t F = 11;
    std::vector<std::vector<double>> means;  // clusters x F
    std::vector<std::vector<double>> stds;   // clusters x F
    double diurnal_amplitude = 0.5;          // in units of the feature std
    double cell_offset_sd = 0.0;             // per-cell persistent offset, in units of the feature std

    void validate() const {
        if (clusters < 1 || cells < 1 || hours < 1 || F < 1) throw config_error("synth-pm: sizes must be >= 1");
        if (cells < clusters) throw config_error("synth-pm: need at least one cell per cluster");
        const auto C = static_cast<std::size_t>(clusters);
        if (means.size() != C || stds.size() != C) throw config_error("synth-pm: one mean/std profile per cluster");
        for (std::size_t c = 0; c < C; ++c) {
            if (means[c].size() != F || stds[c].size() != F) throw config_error("synth-pm: profile length != F");
            for (double s : stds[c])
                if (!(s > 0.0)) throw config_error("synth-pm: stds must be > 0");
        }
    }

    // Cluster means at Gaussian-random directions scaled to `separation`
    // feature stds from the origin; unit stds.
    static SyntheticPMConfig separated(int clusters, int cells, int hours, double separation, std::uint64_t seed,
                                       std::size_t F = 11) {
        SyntheticPMConfig cfg;
        cfg.clusters = clusters;
        cfg.cells = cells;
        cfg.hours = hours;
        cfg.F = F;
        Rng rng(derive_seed(seed, {0x5EED}));
        for (int c = 0; c < clusters; ++c) {
            std::vector<double> dir(F);
            double norm = 0.0;
            for (auto& x : dir) {
                x = rng.normal();
                norm += x * x;
            }
            norm = std::sqrt(norm);
            for (auto& x : dir) x *= separation / norm;
            cfg.means.push_back(dir);
            cfg.stds.emplace_back(F, 1.0);
        }
        return cfg;
    }

    // Five regimes on orthogonal feature axes, `separation` stds from the
    // origin, with persistent per-cell offsets. Within a regime the offsets
    // form a continuum, so coarse partitions carry wide thresholds and finer
    // ones keep tightening.
    static SyntheticPMConfig five_regime(int cells = 200, int hours = 840, std::size_t F = 11,
                                         double separation = 6.0, double cell_offset_sd = 2.0) {
        SyntheticPMConfig cfg;
        cfg.clusters = 5;
        cfg.cells = cells;
        cfg.hours = hours;
        cfg.F = F;
        for (std::size_t c = 0; c < 5; ++c) {
            std::vector<double> v(F, 0.0);
            v[c % F] += separation;
            cfg.means.push_back(v);
        }
        cfg.stds.assign(5, std::vector<double>(F, 1.0));
        cfg.cell_offset_sd = cell_offset_sd;
        return cfg;
    }
};

struct SyntheticPM {
    PMDataset dataset;
    std::map<CellKey, int> truth;  // generating cluster per cell
};

inline std::string cell_name(int i) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "cell%05d", i);
    return buf;
}

// Row value: mean + cell offset + diurnal sinusoid + Gaussian noise, all in
// units of the cluster's per-feature std; hours are 0..hours-1.
inline SyntheticPM generate_synthetic_pm(const SyntheticPMConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    SyntheticPM out;
    out.dataset.F = cfg.F;

    // Balanced cluster labels in random order.
    std::vector<int> cluster_of(static_cast<std::size_t>(cfg.cells));
    for (int i = 0; i < cfg.cells; ++i) cluster_of[static_cast<std::size_t>(i)] = i % cfg.clusters;
    for (std::size_t i = cluster_of.size(); i > 1; --i) std::swap(cluster_of[i - 1], cluster_of[rng.index(i)]);

    std::vector<std::vector<double>> offsets(static_cast<std::size_t>(cfg.cells), std::vector<double>(cfg.F, 0.0));
    std::vector<double> phase(static_cast<std::size_t>(cfg.cells));
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        for (auto& o : offsets[i]) o = cfg.cell_offset_sd * rng.normal();
        phase[i] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }

    out.dataset.rows.reserve(static_cast<std::size_t>(cfg.cells) * static_cast<std::size_t>(cfg.hours));
    for (int h = 0; h < cfg.hours; ++h) {
        for (int i = 0; i < cfg.cells; ++i) {
            const auto iu = static_cast<std::size_t>(i);
            const auto c = static_cast<std::size_t>(cluster_of[iu]);
            PMRow r;
            r.network_id = cfg.network_id;
            r.cell_id = cell_name(i);
            r.hour = h;
            r.features.resize(cfg.F);
            for (std::size_t f = 0; f < cfg.F; ++f) {
                const double diurnal = cfg.diurnal_amplitude *
                    std::sin(2.0 * std::numbers::pi * h / 24.0 + phase[iu] + 2.0 * std::numbers::pi * f / cfg.F);
                r.features[f] = cfg.means[c][f] + cfg.stds[c][f] * (offsets[iu][f] + diurnal + rng.normal());
            }
            out.dataset.rows.push_back(std::move(r));
        }
    }
    for (int i = 0; i < cfg.cells; ++i) out.truth[{cfg.network_id, cell_name(i)}] = cluster_of[static_cast<std::size_t>(i)];
    return out;
}

// ---------------------------------------------------------------------------
// Split and scaling
// ---------------------------------------------------------------------------

struct TemporalSplit {
    PMDataset train, val, test;
    std::size_t train_hours = 0, val_hours = 0, test_hours = 0;
};

// First floor(train_frac H) distinct hours train, the next floor(val_frac H)
// validate, the rest test. No shuffling.
inline TemporalSplit temporal_split(const PMDataset& ds, double train_frac = 0.6, double val_frac = 0.2) {
    if (!(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0))
        throw config_error("temporal_split: fractions must be positive with sum < 1");
    const auto hours = ds.distinct_hours();
    const auto H = static_cast<double>(hours.size());
    // The small offset keeps products like 0.6 * 35 from flooring to 20.
    const auto n_train = static_cast<std::size_t>(std::floor(train_frac * H + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(val_frac * H + 1e-9));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= hours.size())
        throw infeasible_error("temporal_split: " + std::to_string(hours.size()) +
                               " distinct hours leave an empty split");
    const std::int64_t train_end = hours[n_train];        // first val hour
    const std::int64_t val_end = hours[n_train + n_val];  // first test hour
    TemporalSplit s;
    s.train.F = s.val.F = s.test.F = ds.F;
    for (const auto& r : ds.rows) {
        if (r.hour < train_end)
            s.train.rows.push_back(r);
        else if (r.hour < val_end)
            s.val.rows.push_back(r);
        else
            s.test.rows.push_back(r);
    }
    s.train_hours = n_train;
    s.val_hours = n_val;
    s.test_hours = hours.size() - n_train - n_val;
    return s;
}

struct Scaler {
    std::vector<double> mean, sd;
    std::vector<bool> passthrough;  // zero training variance: value left unscaled

    static Scaler fit(const PMDataset& train) {
        if (train.rows.empty()) throw infeasible_error("scaler: no training rows");
        Scaler s;
        const std::size_t F = train.F;
        s.mean.assign(F, 0.0);
        s.sd.assign(F, 1.0);
        s.passthrough.assign(F, false);
        const double n = static_cast<double>(train.rows.size());
        for (std::size_t f = 0; f < F; ++f) {
            CompensatedSum m;
            for (const auto& r : train.rows) m.add(r.features[f]);
            const double mu = m.value() / n;
            CompensatedSum v;
            for (const auto& r : train.rows) v.add((r.features[f] - mu) * (r.features[f] - mu));
            const double sd = std::sqrt(v.value() / n);
            if (sd > 0.0) {
                s.mean[f] = mu;
                s.sd[f] = sd;
            } else {
                s.mean[f] = 0.0;
                s.sd[f] = 1.0;
                s.passthrough[f] = true;
            }
        }
        return s;
    }

    std::vector<double> apply(const std::vector<double>& x) const {
        std::vector<double> y(x.size());
        for (std::size_t f = 0; f < x.size(); ++f) y[f] = (x[f] - mean[f]) / sd[f];
        return y;
    }

    PointSet apply(const PMDataset& ds) const {
        PointSet ps(0, ds.F);
        ps.d = ds.F;
        ps.data.reserve(ds.rows.size() * ds.F);
        for (const auto& r : ds.rows) ps.push_back(apply(r.features));
        return ps;
    }
};

// ---------------------------------------------------------------------------
// Cell clustering, calibration, injection, detection
// ---------------------------------------------------------------------------

struct CellClustering {
    int K = 0;
    Scaler scaler;
    PointSet centroids;                    // K x F, scaled space
    std::map<CellKey, int> cell_cluster;   // from per-cell training means
    PointSet train_scaled;                 // scaled training rows
    std::vector<std::vector<std::size_t>> reservoir;  // training row indices per cluster
    CategoryPartition partition;           // k-means over the cell means

    int cluster_of(const CellKey& k) const {
        const auto it = cell_cluster.find(k);
        if (it == cell_cluster.end()) throw schema_error("pm: cell '" + k.second + "' has no training rows");
        return it->second;
    }
};

inline CellClustering cluster_cells(const PMDataset& train, int K, const KMeansConfig& kcfg) {
    if (train.rows.empty()) throw infeasible_error("cluster_cells: empty training set");
    CellClustering cc;
    cc.K = K;
    cc.scaler = Scaler::fit(train);
    cc.train_scaled = cc.scaler.apply(train);

    std::map<CellKey, std::size_t> cell_index;
    for (const auto& r : train.rows) cell_index.emplace(key_of(r), 0);
    std::size_t next = 0;
    for (auto& [k, v] : cell_index) v = next++;
    if (K < 1 || static_cast<std::size_t>(K) > cell_index.size())
        throw infeasible_error("cluster_cells: K=" + std::to_string(K) + " but only " +
                               std::to_string(cell_index.size()) + " cells");

    PointSet cell_means(cell_index.size(), train.F);
    std::vector<std::size_t> counts(cell_index.size(), 0);
    std::vector<std::vector<CompensatedSum>> sums(cell_index.size(), std::vector<CompensatedSum>(train.F));
    std::vector<std::size_t> row_cell(train.rows.size());
    for (std::size_t i = 0; i < train.rows.size(); ++i) {
        const auto ci = cell_index.at(key_of(train.rows[i]));
        row_cell[i] = ci;
        ++counts[ci];
        const auto x = cc.train_scaled.row(i);
        for (std::size_t f = 0; f < train.F; ++f) sums[ci][f].add(x[f]);
    }
    for (std::size_t c = 0; c < cell_index.size(); ++c)
        for (std::size_t f = 0; f < train.F; ++f)
            cell_means.row(c)[f] = sums[c][f].value() / static_cast<double>(counts[c]);

    cc.partition = partition_from_kmeans(cell_means, kmeans(cell_means, static_cast<std::size_t>(K), kcfg));
    cc.centroids = centres_of(cc.partition.centroids, train.F);
    std::vector<int> cell_to_cluster(cell_index.size());
    for (std::size_t c = 0; c < cell_index.size(); ++c)
        cell_to_cluster[c] = mises::detail::nearest(cc.centroids, cell_means.row(c));
    for (const auto& [k, ci] : cell_index) cc.cell_cluster[k] = cell_to_cluster[ci];

    cc.reservoir.assign(static_cast<std::size_t>(K), {});
    for (std::size_t i = 0; i < train.rows.size(); ++i)
        cc.reservoir[static_cast<std::size_t>(cell_to_cluster[row_cell[i]])].push_back(i);
    return cc;
}

inline double euclidean(std::span<const double> a, std::span<const double> b) {
    return std::sqrt(squared_distance(a, b));
}

// ceil(q N)-th order statistic, 1-based; q = 1 gives the maximum.
inline double nearest_rank_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw infeasible_error("quantile of empty set");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    auto rank = static_cast<std::int64_t>(std::ceil(q * n - 1e-9));
    rank = std::clamp<std::int64_t>(rank, 1, static_cast<std::int64_t>(values.size()));
    return values[static_cast<std::size_t>(rank - 1)];
}

struct Calibration {
    double alpha0 = 0.2;
    std::vector<double> thresholds;       // per cluster
    std::vector<std::size_t> val_counts;  // validation rows per cluster
    std::vector<bool> global_fallback;    // no validation rows: global quantile used
};

inline Calibration calibrate_threshold(const CellClustering& cc, const PMDataset& val, double alpha0 = 0.20) {
    if (!(alpha0 >= 0.0 && alpha0 < 1.0)) throw config_error("calibrate_threshold: alpha0 must lie in [0, 1)");
    if (val.rows.empty()) throw infeasible_error("calibrate_threshold: empty validation set");
    const auto Ku = static_cast<std::size_t>(cc.K);
    std::vector<std::vector<double>> dist(Ku);
    std::vector<double> all;
    all.reserve(val.rows.size());
    for (const auto& r : val.rows) {
        const auto k = static_cast<std::size_t>(cc.cluster_of(key_of(r)));
        const double d = euclidean(cc.scaler.apply(r.features), cc.centroids.row(k));
        dist[k].push_back(d);
        all.push_back(d);
    }
    Calibration cal;
    cal.alpha0 = alpha0;
    cal.thresholds.resize(Ku);
    cal.val_counts.resize(Ku);
    cal.global_fallback.assign(Ku, false);
    const double q = 1.0 - alpha0;
    const double global = nearest_rank_quantile(all, q);
    for (std::size_t k = 0; k < Ku; ++k) {
        cal.val_counts[k] = dist[k].size();
        if (dist[k].empty()) {
            cal.thresholds[k] = global;
            cal.global_fallback[k] = true;
        } else {
            cal.thresholds[k] = nearest_rank_quantile(std::move(dist[k]), q);
        }
    }
    return cal;
}

struct LabeledTest {
    PointSet features;          // scaled, after injection
    std::vector<int> cluster;   // assigned cluster of the row's cell
    std::vector<int> donor;     // -1 for normal rows, donor cluster otherwise
    std::vector<std::size_t> donor_row;  // reservoir row used, for injected rows
    std::size_t n_injected = 0;

    std::size_t size() const { return cluster.size(); }
    bool injected(std::size_t i) const { return donor[i] >= 0; }
};

// Labels depend only on (test rows, clustering, rho, seed); no distances are
// consulted here.
inline LabeledTest inject_mismatches(const PMDataset& test, const CellClustering& cc, double rho, std::uint64_t seed) {
    if (!(rho >= 0.0 && rho <= 1.0)) throw config_error("inject_mismatches: rho must lie in [0, 1]");
    LabeledTest lt;
    lt.features = cc.scaler.apply(test);
    lt.cluster.resize(test.rows.size());
    for (std::size_t i = 0; i < test.rows.size(); ++i) lt.cluster[i] = cc.cluster_of(key_of(test.rows[i]));
    lt.donor.assign(test.rows.size(), -1);
    lt.donor_row.assign(test.rows.size(), 0);

    const auto count =
        static_cast<std::size_t>(std::floor(rho * static_cast<double>(test.rows.size()) + 1e-9));
    if (count == 0) return lt;

    std::vector<int> nonempty;
    for (std::size_t k = 0; k < cc.reservoir.size(); ++k)
        if (!cc.reservoir[k].empty()) nonempty.push_back(static_cast<int>(k));
    if (cc.K < 2 || nonempty.size() < 2)
        throw infeasible_error("inject_mismatches: need at least two non-empty clusters for a donor");

    Rng rng(seed);
    auto chosen = rng.sample_without_replacement(test.rows.size(), count);
    std::sort(chosen.begin(), chosen.end());
    std::vector<int> donors;
    for (auto i : chosen) {
        const int k = lt.cluster[i];
        donors.clear();
        for (int j : nonempty)
            if (j != k) donors.push_back(j);
        const int j = donors[rng.index(donors.size())];
        const auto& pool = cc.reservoir[static_cast<std::size_t>(j)];
        const auto src = pool[rng.index(pool.size())];
        const auto from = cc.train_scaled.row(src);
        std::copy(from.begin(), from.end(), lt.features.row(i).begin());
        lt.donor[i] = j;
        lt.donor_row[i] = src;
    }
    lt.n_injected = count;
    return lt;
}

struct DetectionMetrics {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::optional<double> recall;  // undefined without injected rows
    double precision = 0.0;        // 0 when nothing is flagged
    std::optional<double> fpr;     // over normal rows; undefined without any
};

struct DetectionRun {
    std::vector<double> thresholds;
    std::vector<int> donor;   // labels: -1 normal, else donor cluster
    std::vector<bool> flags;
    std::vector<double> distances;
    DetectionMetrics metrics;
};

inline DetectionMetrics compute_metrics(const std::vector<int>& donor, const std::vector<bool>& flags) {
    DetectionMetrics m;
    for (std::size_t i = 0; i < donor.size(); ++i) {
        const bool pos = donor[i] >= 0;
        if (pos && flags[i]) ++m.tp;
        else if (pos) ++m.fn;
        else if (flags[i]) ++m.fp;
        else ++m.tn;
    }
    if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    if (m.fp + m.tn > 0) m.fpr = static_cast<double>(m.fp) / static_cast<double>(m.fp + m.tn);
    return m;
}

// Flag iff distance(row, centroid of its cell's cluster) > threshold.
template <class Distance = double (*)(std::span<const double>, std::span<const double>)>
DetectionRun detect(const CellClustering& cc, const std::vector<double>& thresholds, const LabeledTest& test,
                    Distance distance = &euclidean) {
    if (thresholds.size() != static_cast<std::size_t>(cc.K)) throw dimension_error("detect: one threshold per cluster");
    DetectionRun run;
    run.thresholds = thresholds;
    run.donor = test.donor;
    run.flags.resize(test.size());
    run.distances.resize(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto k = static_cast<std::size_t>(test.cluster[i]);
        run.distances[i] = distance(test.features.row(i), cc.centroids.row(k));
        run.flags[i] = run.distances[i] > thresholds[k];
    }
    run.metrics = compute_metrics(run.donor, run.flags);
    return run;
}

// ---------------------------------------------------------------------------
// End-to-end runs and the granularity sweep
// ---------------------------------------------------------------------------

struct PipelineConfig {
    double train_frac = 0.6;
    double val_frac = 0.2;
    double alpha0 = 0.20;
    double rho = 0.30;
    KMeansConfig kmeans{10, 100, 1e-8, KMeansInit::kmeanspp, 0};
    std::uint64_t seed = 0;
};

struct PipelineRun {
    int K = 0;
    std::uint64_t kmeans_seed = 0;
    std::uint64_t inject_seed = 0;
    Calibration calibration;
    DetectionRun run;
    std::size_t n_test = 0;
    std::size_t n_injected = 0;
};

inline std::uint64_t kmeans_seed_for(std::uint64_t seed, int K) {
    return derive_seed(seed, {static_cast<std::uint64_t>(K), 1});
}
inline std::uint64_t inject_seed_for(std::uint64_t seed, int K) {
    return derive_seed(seed, {static_cast<std::uint64_t>(K), 2});
}

inline PipelineRun run_pipeline(const TemporalSplit& split, int K, const PipelineConfig& cfg) {
    PipelineRun pr;
    pr.K = K;
    pr.kmeans_seed = kmeans_seed_for(cfg.seed, K);
    pr.inject_seed = inject_seed_for(cfg.seed, K);
    auto kcfg = cfg.kmeans;
    kcfg.seed = pr.kmeans_seed;
    const auto cc = cluster_cells(split.train, K, kcfg);
    pr.calibration = calibrate_threshold(cc, split.val, cfg.alpha0);
    const auto labeled = inject_mismatches(split.test, cc, cfg.rho, pr.inject_seed);
    pr.run = detect(cc, pr.calibration.thresholds, labeled);
    pr.n_test = labeled.size();
    pr.n_injected = labeled.n_injected;
    return pr;
}

struct SweepReport {
    std::string network_id;
    std::vector<PipelineRun> runs;
    // Largest recall gain within the K >= 8 tail over the recall at its
    // smallest K; 0 when the tail has fewer than two points.
    double plateau_gain = 0.0;
};

inline const std::vector<int>& default_k_list() {
    static const std::vector<int> ks{3, 5, 8, 10, 15, 20, 25, 30};
    return ks;
}

inline SweepReport granularity_sweep(const PMDataset& ds, const std::vector<int>& Ks, const PipelineConfig& cfg) {
    if (Ks.empty()) throw config_error("granularity_sweep: empty K list");
    const auto split = temporal_split(ds, cfg.train_frac, cfg.val_frac);
    SweepReport rep;
    rep.network_id = ds.rows.empty() ? "" : ds.rows.front().network_id;
    for (int K : Ks) rep.runs.push_back(run_pipeline(split, K, cfg));

    std::optional<double> base;
    for (const auto& r : rep.runs) {
        if (r.K < 8 || !r.run.metrics.recall) continue;
        if (!base)
            base = *r.run.metrics.recall;
        else
            rep.plateau_gain = std::max(rep.plateau_gain, *r.run.metrics.recall - *base);
    }
    return rep;
}

// CSV: network_id,K,recall,precision,fpr,n_test,n_injected
inline void write_sweep_csv(std::ostream& os, const SweepReport& rep) {
    os << "network_id,K,recall,precision,fpr,n_test,n_injected\n";
    for (const auto& r : rep.runs) {
        const auto& m = r.run.metrics;
        os << rep.network_id << ',' << r.K << ',' << (m.recall ? detail::fmt17(*m.recall) : "nan") << ','
           << detail::fmt17(m.precision) << ',' << (m.fpr ? detail::fmt17(*m.fpr) : "nan") << ',' << r.n_test << ','
           << r.n_injected << '\n';
    }
}

}  // namespace mises::pm
