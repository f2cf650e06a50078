#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mises/pm.hpp"

using namespace mises;
using namespace mises::pm;

namespace {

PMDataset tiny(std::size_t F, int cells, int hours) {
    PMDataset ds;
    ds.F = F;
    for (int h = 0; h < hours; ++h)
        for (int c = 0; c < cells; ++c) {
            PMRow r{"net", cell_name(c), h, std::vector<double>(F)};
            for (std::size_t f = 0; f < F; ++f) r.features[f] = c * 10.0 + static_cast<double>(f) + 0.01 * h;
            ds.rows.push_back(r);
        }
    return ds;
}

SyntheticPM separated_data(int clusters = 2, double sep = 10.0, std::uint64_t seed = 1, int cells = 60,
                           int hours = 120) {
    auto cfg = SyntheticPMConfig::separated(clusters, cells, hours, sep, seed);
    return generate_synthetic_pm(cfg, seed);
}

KMeansConfig kcfg(std::uint64_t seed) {
    KMeansConfig c;
    c.init = KMeansInit::kmeanspp;
    c.seed = seed;
    return c;
}

}  // namespace

TEST(Csv, HeaderShape) {
    EXPECT_EQ(csv_header(11), "network_id,cell_id,hour,f00,f01,f02,f03,f04,f05,f06,f07,f08,f09,f10");
    EXPECT_EQ(feature_name(3), "f03");
}

TEST(Csv, HandcraftedFourRows) {
    std::istringstream in(
        "network_id,cell_id,hour,f00,f01\n"
        "n1,a,0,1.5,2\n"
        "n1,a,1,1.25,-3e-2\n"
        "n1,b,0,0,0\n"
        "n1,b,1,7,8\n");
    const auto ds = read_pm_csv(in, 2);
    ASSERT_EQ(ds.rows.size(), 4u);
    EXPECT_EQ(ds.F, 2u);
    EXPECT_EQ(ds.rows[1].features[1], -0.03);
    EXPECT_EQ(ds.rows[2].cell_id, "b");
}

TEST(Csv, SchemaErrors) {
    {
        std::istringstream in("network_id,cell_id,hour,f00,f01,f02,f03,f04,f05,f06,f07,f08,f09\nn,a,0,1,2,3,4,5,6,7,8,9,10\n");
        EXPECT_THROW(read_pm_csv(in, 11), schema_error);
    }
    {
        std::istringstream in("network_id,cell_id,hour,f00\nn,a,0,abc\n");
        EXPECT_THROW(read_pm_csv(in), schema_error);
    }
    {
        std::istringstream in("network_id,cell_id,hour,f00\nn,a,0,1\nn,a,0,2\n");
        EXPECT_THROW(read_pm_csv(in), schema_error);
    }
    {
        std::istringstream in("net,cell,hour,f00\nn,a,0,1\n");
        EXPECT_THROW(read_pm_csv(in), schema_error);
    }
    {
        std::istringstream in("network_id,cell_id,hour,f00\nn,a,0\n");
        EXPECT_THROW(read_pm_csv(in), schema_error);
    }
}

TEST(Csv, SyntheticRoundTrip) {
    const auto data = separated_data(2, 10.0, 3, 10, 30);
    const auto path = std::filesystem::temp_directory_path() / "mises_pm_roundtrip.csv";
    {
        std::ofstream f(path);
        write_pm_csv(f, data.dataset);
    }
    const auto back = ingest_pm_csv(path.string(), 11);
    ASSERT_EQ(back.rows.size(), data.dataset.rows.size());
    for (std::size_t i = 0; i < back.rows.size(); ++i) {
        EXPECT_EQ(back.rows[i].cell_id, data.dataset.rows[i].cell_id);
        EXPECT_EQ(back.rows[i].hour, data.dataset.rows[i].hour);
        EXPECT_EQ(back.rows[i].features, data.dataset.rows[i].features);
    }
    std::filesystem::remove(path);
    EXPECT_THROW(ingest_pm_csv("/nonexistent/pm.csv"), error);
}

TEST(Synthetic, SizesAndDeterminism) {
    const auto a = separated_data(2, 10.0, 5, 50, 120);
    EXPECT_EQ(a.dataset.rows.size(), 6000u);
    EXPECT_EQ(a.truth.size(), 50u);
    const auto b = separated_data(2, 10.0, 5, 50, 120);
    for (std::size_t i = 0; i < a.dataset.rows.size(); i += 97)
        EXPECT_EQ(a.dataset.rows[i].features, b.dataset.rows[i].features);
    auto bad = SyntheticPMConfig::separated(3, 2, 10, 1.0, 1);
    EXPECT_THROW(generate_synthetic_pm(bad, 1), config_error);
}

TEST(Split, FloorRule) {
    auto s = temporal_split(tiny(1, 2, 10));
    EXPECT_EQ(s.train_hours, 6u);
    EXPECT_EQ(s.val_hours, 2u);
    EXPECT_EQ(s.test_hours, 2u);
    EXPECT_EQ(s.train.rows.size(), 12u);
    s = temporal_split(tiny(1, 2, 5));
    EXPECT_EQ(s.train_hours, 3u);
    EXPECT_EQ(s.val_hours, 1u);
    EXPECT_EQ(s.test_hours, 1u);
    EXPECT_THROW(temporal_split(tiny(1, 2, 2)), infeasible_error);
    EXPECT_THROW(temporal_split(tiny(1, 2, 10), 0.8, 0.2), config_error);
    // Ordering by hour, no shuffling.
    for (const auto& r : s.train.rows) EXPECT_LT(r.hour, 3);
    for (const auto& r : s.test.rows) EXPECT_EQ(r.hour, 4);
}

TEST(Scaler, ZScoreAndPassthrough) {
    auto ds = tiny(3, 3, 6);
    for (auto& r : ds.rows) r.features[2] = 5.0;
    const auto sc = Scaler::fit(ds);
    EXPECT_TRUE(sc.passthrough[2]);
    EXPECT_FALSE(sc.passthrough[0]);
    const auto pts = sc.apply(ds);
    double m = 0, v = 0;
    for (std::size_t i = 0; i < pts.n; ++i) m += pts.row(i)[0];
    m /= static_cast<double>(pts.n);
    for (std::size_t i = 0; i < pts.n; ++i) v += (pts.row(i)[0] - m) * (pts.row(i)[0] - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / static_cast<double>(pts.n), 1.0, 1e-12);
    EXPECT_EQ(pts.row(0)[2], 5.0);
}

TEST(Clustering, RecoversGroundTruth) {
    const auto data = separated_data(2, 10.0, 7);
    const auto split = temporal_split(data.dataset);
    const auto cc = cluster_cells(split.train, 2, kcfg(1));
    // Permutation-matched accuracy.
    int agree = 0, total = 0;
    for (const auto& [cell, truth] : data.truth) {
        agree += cc.cluster_of(cell) == truth;
        ++total;
    }
    EXPECT_TRUE(agree == total || agree == 0);
    for (const auto& r : cc.reservoir) EXPECT_FALSE(r.empty());
    const auto one = cluster_cells(split.train, 1, kcfg(1));
    for (const auto& [cell, k] : one.cell_cluster) EXPECT_EQ(k, 0);
    EXPECT_THROW(cluster_cells(split.train, 61, kcfg(1)), infeasible_error);
}

TEST(Clustering, SingleCell) {
    const auto split = temporal_split(tiny(2, 1, 10));
    EXPECT_NO_THROW(cluster_cells(split.train, 1, kcfg(1)));
    EXPECT_THROW(cluster_cells(split.train, 2, kcfg(1)), infeasible_error);
}

TEST(Quantile, NearestRank) {
    std::vector<double> d{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    const double thr = nearest_rank_quantile(d, 0.8);
    EXPECT_EQ(thr, 8.0);
    const auto fp = std::count_if(d.begin(), d.end(), [&](double x) { return x > thr; });
    EXPECT_DOUBLE_EQ(static_cast<double>(fp) / 10.0, 0.2);
    EXPECT_EQ(nearest_rank_quantile(d, 1.0), 10.0);
    std::vector<double> same(7, 3.0);
    const double t = nearest_rank_quantile(same, 0.8);
    EXPECT_EQ(std::count_if(same.begin(), same.end(), [&](double x) { return x > t; }), 0);
    EXPECT_THROW(nearest_rank_quantile({}, 0.5), infeasible_error);
}

TEST(Calibration, ValidationFprAndAlphaZero) {
    const auto data = separated_data(2, 10.0, 9);
    const auto split = temporal_split(data.dataset);
    const auto cc = cluster_cells(split.train, 2, kcfg(2));
    const auto cal = calibrate_threshold(cc, split.val, 0.2);
    std::size_t over = 0;
    for (const auto& r : split.val.rows) {
        const auto k = static_cast<std::size_t>(cc.cluster_of(key_of(r)));
        over += euclidean(cc.scaler.apply(r.features), cc.centroids.row(k)) > cal.thresholds[k];
    }
    EXPECT_NEAR(static_cast<double>(over) / static_cast<double>(split.val.rows.size()), 0.2, 2.0 / split.val.rows.size());
    const auto cal0 = calibrate_threshold(cc, split.val, 0.0);
    for (const auto& r : split.val.rows) {
        const auto k = static_cast<std::size_t>(cc.cluster_of(key_of(r)));
        EXPECT_LE(euclidean(cc.scaler.apply(r.features), cc.centroids.row(k)), cal0.thresholds[k]);
    }
    for (bool f : cal.global_fallback) EXPECT_FALSE(f);
}

TEST(Calibration, GlobalFallbackFlagged) {
    const auto data = separated_data(2, 10.0, 9);
    const auto split = temporal_split(data.dataset);
    const auto cc = cluster_cells(split.train, 2, kcfg(2));
    // Keep validation rows of cluster 0 only.
    PMDataset val;
    val.F = split.val.F;
    for (const auto& r : split.val.rows)
        if (cc.cluster_of(key_of(r)) == 0) val.rows.push_back(r);
    const auto cal = calibrate_threshold(cc, val, 0.2);
    EXPECT_FALSE(cal.global_fallback[0]);
    EXPECT_TRUE(cal.global_fallback[1]);
    EXPECT_EQ(cal.thresholds[1], cal.thresholds[0]);
    EXPECT_EQ(cal.val_counts[1], 0u);
}

TEST(Injection, CountsAndDonors) {
    const auto data = separated_data(2, 10.0, 11);
    const auto split = temporal_split(data.dataset);
    const auto cc = cluster_cells(split.train, 2, kcfg(3));
    const auto lt = inject_mismatches(split.test, cc, 0.3, 5);
    const auto expect = static_cast<std::size_t>(std::floor(0.3 * static_cast<double>(split.test.rows.size())));
    EXPECT_EQ(lt.n_injected, expect);
    EXPECT_EQ(static_cast<std::size_t>(std::count_if(lt.donor.begin(), lt.donor.end(), [](int d) { return d >= 0; })),
              expect);
    for (std::size_t i = 0; i < lt.size(); ++i)
        if (lt.injected(i)) {
            EXPECT_EQ(lt.donor[i], 1 - lt.cluster[i]);
            const auto src = cc.train_scaled.row(lt.donor_row[i]);
            EXPECT_TRUE(std::equal(src.begin(), src.end(), lt.features.row(i).begin()));
        }
    const auto none = inject_mismatches(split.test, cc, 0.0, 5);
    EXPECT_EQ(none.n_injected, 0u);
    const auto one = cluster_cells(split.train, 1, kcfg(3));
    EXPECT_THROW(inject_mismatches(split.test, one, 0.3, 5), infeasible_error);
}

TEST(Injection, HundredRows) {
    // 10 cells x 10 test hours -> N_test = 100.
    const auto data = separated_data(2, 10.0, 12, 10, 50);
    const auto split = temporal_split(data.dataset);
    ASSERT_EQ(split.test.rows.size(), 100u);
    const auto cc = cluster_cells(split.train, 2, kcfg(1));
    EXPECT_EQ(inject_mismatches(split.test, cc, 0.3, 1).n_injected, 30u);
}

TEST(Injection, LabelsBeforeDistances) {
    const auto data = separated_data(3, 6.0, 13);
    const auto split = temporal_split(data.dataset);
    const auto cc = cluster_cells(split.train, 3, kcfg(4));
    const auto cal = calibrate_threshold(cc, split.val);
    const auto lt = inject_mismatches(split.test, cc, 0.3, 21);
    // A stubbed distance changes the flags but never the labels.
    const auto real = detect(cc, cal.thresholds, lt);
    const auto stub = detect(cc, cal.thresholds, lt, [](std::span<const double>, std::span<const double>) { return 0.0; });
    EXPECT_EQ(real.donor, stub.donor);
    EXPECT_EQ(stub.metrics.tp + stub.metrics.fp, 0u);
    EXPECT_EQ(inject_mismatches(split.test, cc, 0.3, 21).donor, lt.donor);
}

TEST(Detection, SeparableCase) {
    const auto data = separated_data(2, 10.0, 14);
    const auto split = temporal_split(data.dataset);
    PipelineConfig cfg;
    cfg.seed = 3;
    const auto run = run_pipeline(split, 2, cfg);
    ASSERT_TRUE(run.run.metrics.recall.has_value());
    EXPECT_GE(*run.run.metrics.recall, 0.95);
    EXPECT_LE(*run.run.metrics.fpr, 0.25);
}

TEST(Detection, IdenticalProfilesNoSignal) {
    const auto data = separated_data(2, 0.0, 15, 100, 200);
    const auto split = temporal_split(data.dataset);
    PipelineConfig cfg;
    cfg.seed = 4;
    const auto run = run_pipeline(split, 2, cfg);
    const auto& m = run.run.metrics;
    const double r = *m.recall, f = *m.fpr;
    const double se = std::sqrt(f * (1 - f) / static_cast<double>(m.tp + m.fn)) +
                      std::sqrt(f * (1 - f) / static_cast<double>(m.fp + m.tn));
    EXPECT_LE(std::fabs(r - f), 3 * se + 0.03);
}

TEST(Detection, InfiniteThresholdsAndMetricsDefinitions) {
    const auto data = separated_data(2, 10.0, 16);
    const auto split = temporal_split(data.dataset);
    const auto cc = cluster_cells(split.train, 2, kcfg(2));
    const auto lt = inject_mismatches(split.test, cc, 0.3, 2);
    const auto inf = std::numeric_limits<double>::infinity();
    const auto run = detect(cc, {inf, inf}, lt);
    EXPECT_EQ(*run.metrics.recall, 0.0);
    EXPECT_EQ(*run.metrics.fpr, 0.0);
    EXPECT_EQ(run.metrics.precision, 0.0);

    const auto m = compute_metrics({-1, -1, 0, 1, 0}, {true, false, true, false, true});
    EXPECT_EQ(m.tp, 2u);
    EXPECT_EQ(m.fn, 1u);
    EXPECT_EQ(m.fp, 1u);
    EXPECT_EQ(m.tn, 1u);
    EXPECT_DOUBLE_EQ(*m.recall, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.precision, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(*m.fpr, 0.5);
    EXPECT_FALSE(compute_metrics({-1}, {false}).recall.has_value());
}

TEST(Pipeline, Deterministic) {
    const auto data = separated_data(3, 5.0, 17);
    const auto split = temporal_split(data.dataset);
    PipelineConfig cfg;
    cfg.seed = 8;
    const auto a = run_pipeline(split, 3, cfg), b = run_pipeline(split, 3, cfg);
    EXPECT_EQ(a.run.flags, b.run.flags);
    EXPECT_EQ(a.run.distances, b.run.distances);
    EXPECT_EQ(a.calibration.thresholds, b.calibration.thresholds);
}

TEST(Pipeline, ScalerUsesTrainingRowsOnly) {
    const auto data = separated_data(2, 8.0, 18);
    auto split = temporal_split(data.dataset);
    const auto cc1 = cluster_cells(split.train, 2, kcfg(5));
    const auto t1 = calibrate_threshold(cc1, split.val).thresholds;
    // Perturb the test rows; the clustering and thresholds must not move.
    for (auto& r : split.test.rows)
        for (auto& x : r.features) x += 100.0;
    const auto cc2 = cluster_cells(split.train, 2, kcfg(5));
    EXPECT_EQ(cc1.scaler.mean, cc2.scaler.mean);
    EXPECT_EQ(t1, calibrate_threshold(cc2, split.val).thresholds);
}

TEST(Sweep, SingleKAndCsv) {
    const auto data = separated_data(2, 10.0, 19);
    PipelineConfig cfg;
    cfg.seed = 2;
    const auto rep = granularity_sweep(data.dataset, {2}, cfg);
    ASSERT_EQ(rep.runs.size(), 1u);
    EXPECT_EQ(rep.plateau_gain, 0.0);
    std::ostringstream os;
    write_sweep_csv(os, rep);
    EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "network_id,K,recall,precision,fpr,n_test,n_injected");
    EXPECT_THROW(granularity_sweep(data.dataset, {}, cfg), config_error);
}

TEST(Sweep, DefaultListAboveBaseline) {
    const auto data = generate_synthetic_pm(SyntheticPMConfig::five_regime(200, 240), 3);
    PipelineConfig cfg;
    cfg.seed = 1;
    const auto rep = granularity_sweep(data.dataset, default_k_list(), cfg);
    ASSERT_EQ(rep.runs.size(), 8u);
    for (const auto& r : rep.runs) EXPECT_GT(*r.run.metrics.recall, *r.run.metrics.fpr) << "K=" << r.K;
    EXPECT_GE(rep.plateau_gain, 0.0);
}
