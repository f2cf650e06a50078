#pragma once
// Experiment drivers: read a Config, run the module operations and write
// CSV/JSON outputs plus a run manifest into an output directory.
//
// Outputs are staged in <out>/.staging and moved into <out> only when the
// run succeeds; a failed run leaves its partial files in <out>/quarantine.
#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "budget.hpp"
#include "config.hpp"
#include "demand.hpp"
#include "detection.hpp"
#include "mechanism.hpp"
#include "partition.hpp"
#include "pm.hpp"

#ifndef MISES_VERSION
#define MISES_VERSION "0.0.0"
#endif

namespace mises::experiments {

using json = nlohmann::json;

inline std::string fmt17(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// Accumulates output files for one run.
class OutputSet {
public:
    explicit OutputSet(std::filesystem::path staging) : dir_(std::move(staging)) {
        std::filesystem::create_directories(dir_);
    }

    void write(const std::string& name, const std::string& content) {
        std::ofstream f(dir_ / name, std::ios::binary);
        if (!f) throw error("cannot write output file '" + (dir_ / name).string() + "'");
        f << content;
        if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
    }

    const std::vector<std::string>& files() const { return files_; }
    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    std::vector<std::string> files_;
};

inline std::vector<std::uint64_t> seeds_of(const Config& cfg) {
    const auto raw = cfg.get_ints("run", "seeds", std::vector<std::int64_t>{1});
    if (raw.empty()) cfg.fail("run", "seeds", "seed list must not be empty");
    std::vector<std::uint64_t> out;
    for (auto s : raw) {
        if (s < 0) cfg.fail("run", "seeds", "seeds must be non-negative");
        out.push_back(static_cast<std::uint64_t>(s));
    }
    return out;
}

inline double mean_of(const std::vector<double>& v) { return v.empty() ? 0.0 : mean(v); }
inline double std_of(const std::vector<double>& v) { return stddev(v); }

// ---------------------------------------------------------------------------
// Shared settings readers
// ---------------------------------------------------------------------------

inline KMeansConfig kmeans_settings(const Config& cfg, const std::string& section, KMeansInit default_init) {
    KMeansConfig k;
    k.restarts = static_cast<int>(cfg.get_int(section, "restarts", 10));
    k.max_iters = static_cast<int>(cfg.get_int(section, "max_iters", 100));
    k.tol = cfg.get_double(section, "tol", 1e-8);
    const auto init = cfg.get_string(section, "init", default_init == KMeansInit::warm_start ? "warm-start" : "kmeanspp");
    if (init == "warm-start")
        k.init = KMeansInit::warm_start;
    else if (init == "kmeanspp")
        k.init = KMeansInit::kmeanspp;
    else
        cfg.fail(section, "init", "expected 'warm-start' or 'kmeanspp'");
    try {
        k.validate();
    } catch (const config_error& e) {
        throw config_error(std::string("[") + section + "] " + e.what());
    }
    return k;
}

inline MixtureConfig mixture_settings(const Config& cfg, const std::string& section) {
    const auto N = cfg.get_int(section, "N", 50'000);
    if (N < 0) cfg.fail(section, "N", "must be >= 0");
    auto mix = MixtureConfig::phase1_default(static_cast<std::size_t>(N));
    if (cfg.has(section, "mixture.means") || cfg.has(section, "mixture.components")) {
        mix.components = static_cast<int>(cfg.get_int(section, "mixture.components"));
        mix.dim = static_cast<int>(cfg.get_int(section, "mixture.dim"));
        const auto L = static_cast<std::size_t>(std::max(mix.components, 0));
        const auto d = static_cast<std::size_t>(std::max(mix.dim, 0));
        const auto means = cfg.get_doubles(section, "mixture.means");
        const auto stds = cfg.get_doubles(section, "mixture.stds");
        if (means.size() != L * d) cfg.fail(section, "mixture.means", "expected components*dim values");
        if (stds.size() != L * d) cfg.fail(section, "mixture.stds", "expected components*dim values");
        mix.weights = cfg.get_doubles(section, "mixture.weights", std::vector<double>(L, 1.0 / static_cast<double>(L)));
        mix.means.assign(L, {});
        mix.stds.assign(L, {});
        for (std::size_t l = 0; l < L; ++l) {
            mix.means[l].assign(means.begin() + static_cast<long>(l * d), means.begin() + static_cast<long>((l + 1) * d));
            mix.stds[l].assign(stds.begin() + static_cast<long>(l * d), stds.begin() + static_cast<long>((l + 1) * d));
        }
    }
    try {
        mix.validate();
    } catch (const config_error& e) {
        throw config_error(std::string("[") + section + "] " + e.what());
    }
    return mix;
}

inline UtilityModel utility_settings(const Config& cfg, const std::string& section) {
    const auto kind = utility_kind_from_string(cfg.get_string(section, "utility", std::string("quadratic-offset")));
    const double u_max = cfg.get_double(section, "u_max", 1.0);
    if (kind == UtilityKind::quadratic_offset) return UtilityModel::quadratic_offset(u_max);
    return UtilityModel::quartic_perturbed(u_max, cfg.get_double(section, "kappa", 0.5), cfg.get_double(section, "D", 1.0));
}

// ---------------------------------------------------------------------------
// phase1: welfare gap, misreporting gain and leakage over a K sweep
// ---------------------------------------------------------------------------

struct Phase1Settings {
    MixtureConfig mixture;
    UtilityModel utility;
    std::vector<int> Ks;
    KMeansConfig kmeans;
    int bootstrap = 200;
    NmiNormalization norm = NmiNormalization::geometric;
    int random_partitions = 0;

    static Phase1Settings from(const Config& cfg) {
        Phase1Settings s;
        s.mixture = mixture_settings(cfg, "phase1");
        s.utility = utility_settings(cfg, "phase1");
        for (auto k : cfg.get_ints("phase1", "K_list", std::vector<std::int64_t>{3, 10, 30})) {
            if (k < 1) cfg.fail("phase1", "K_list", "every K must be >= 1");
            s.Ks.push_back(static_cast<int>(k));
        }
        if (s.Ks.empty()) cfg.fail("phase1", "K_list", "K list must not be empty");
        std::sort(s.Ks.begin(), s.Ks.end());
        s.Ks.erase(std::unique(s.Ks.begin(), s.Ks.end()), s.Ks.end());
        s.kmeans = kmeans_settings(cfg, "phase1", KMeansInit::warm_start);
        s.bootstrap = static_cast<int>(cfg.get_int("phase1", "bootstrap", 200));
        s.norm = nmi_normalization_from_string(cfg.get_string("phase1", "nmi_normalization", std::string("geometric")));
        s.random_partitions = static_cast<int>(cfg.get_int("phase1", "random_partitions", 0));
        return s;
    }
};

struct Phase1Record {
    int K = 0;
    std::string partition;  // kmeans | semantic
    std::uint64_t seed = 0;
    WelfareReport welfare;
    std::optional<GainReport> gain;
    LeakageReport leakage;
    double variance_explained = 0.0;
    // Random competitor partitions (kmeans rows only, when requested).
    int random_count = 0;
    int random_ic_violations = 0;
    double random_ic_max_excess = 0.0;
};

struct Phase1SeedResult {
    std::uint64_t seed = 0;
    double W_star = 0.0;
    double total_variance = 0.0;
    std::vector<Phase1Record> records;
};

// Mean clamped gain above min(W* Delta, beta eps / 2) + 3 SE; positive means
// the bound is violated.
inline double ic_excess(const GainReport& g) {
    return g.mean_clamped - (std::min(g.welfare_bound, g.ic_bound) + 3.0 * g.mean_clamped_se);
}

inline Phase1Record evaluate_partition(const Phase1Settings& s, const Population& pop, const CategoryPartition& p,
                                       const std::string& kind, std::uint64_t seed, double total_variance) {
    Phase1Record r;
    r.K = p.K;
    r.partition = kind;
    r.seed = seed;
    const EvalOptions opt{s.bootstrap, derive_seed(seed, {static_cast<std::uint64_t>(p.K), kind == "kmeans" ? 11u : 12u})};
    r.welfare = welfare_gap(s.utility, p, pop, opt);
    if (p.K >= 2) r.gain = misreport_gain(s.utility, p, pop, opt);
    r.leakage = nmi_leakage(p, s.utility, pop, s.norm);
    r.variance_explained = total_variance > 0.0 ? 1.0 - r.welfare.eps / total_variance : 0.0;
    return r;
}

inline Phase1SeedResult run_phase1_seed(const Phase1Settings& s, std::uint64_t seed) {
    Phase1SeedResult out;
    out.seed = seed;
    const auto pop = sample_population(s.mixture, seed);
    if (pop.size() == 0) throw config_error("[phase1] N must be > 0");
    const auto pts = fi_points(s.utility, pop);
    out.W_star = fi_welfare(s.utility, pop);
    {
        const auto one = partition_from_assignment(pts, std::vector<int>(pts.n, 0), 1, AssignmentRule::explicit_table);
        out.total_variance = one.eps;
    }
    auto kcfg = s.kmeans;
    kcfg.seed = derive_seed(seed, {0x6B6D});
    const auto parts = kmeans_sweep(pts, s.Ks, kcfg);
    for (const auto& p : parts) {
        auto rec = evaluate_partition(s, pop, p, "kmeans", seed, out.total_variance);
        if (s.random_partitions > 0 && p.K >= 2) {
            rec.random_count = s.random_partitions;
            rec.random_ic_max_excess = -std::numeric_limits<double>::infinity();
            for (int i = 0; i < s.random_partitions; ++i) {
                const auto rp = random_partition(pop, s.utility, p.K,
                                                 derive_seed(seed, {0x52414E44, static_cast<std::uint64_t>(p.K),
                                                                    static_cast<std::uint64_t>(i)}));
                const auto g = misreport_gain(s.utility, rp, pop,
                                              EvalOptions{s.bootstrap, derive_seed(seed, {0x52, static_cast<std::uint64_t>(i)})});
                const double ex = ic_excess(g);
                rec.random_ic_max_excess = std::max(rec.random_ic_max_excess, ex);
                if (ex > 0.0) ++rec.random_ic_violations;
            }
        }
        out.records.push_back(std::move(rec));
    }
    // Demand-derived partition at K = L for the semantic comparison.
    const int L = pop.num_labels;
    if (std::find(s.Ks.begin(), s.Ks.end(), L) == s.Ks.end() && static_cast<std::size_t>(L) <= pts.n)
        out.records.push_back(
            evaluate_partition(s, pop, kmeans_partition(pts, L, kcfg), "kmeans", seed, out.total_variance));
    out.records.push_back(
        evaluate_partition(s, pop, semantic_partition(pop, s.utility), "semantic", seed, out.total_variance));
    return out;
}

inline json to_json(const WelfareReport& w) {
    return {{"W_star", w.W_star}, {"W_cat", w.W_cat},           {"delta", w.delta},
            {"eps", w.eps},       {"lower_bound", w.lower_bound}, {"upper_bound", w.upper_bound},
            {"delta_se", w.delta_se}};
}
inline json to_json(const GainReport& g) {
    return {{"mean_raw", g.mean_raw},           {"mean_clamped", g.mean_clamped},
            {"max_raw", g.max_raw},             {"ic_bound", g.ic_bound},
            {"welfare_bound", g.welfare_bound}, {"mean_raw_se", g.mean_raw_se},
            {"mean_clamped_se", g.mean_clamped_se}};
}
inline json to_json(const LeakageReport& l) {
    return {{"nmi", l.nmi}, {"I_TC", l.I_TC}, {"I_TR", l.I_TR}, {"H_C", l.H_C}, {"H_T", l.H_T}, {"log2K", l.log2K}};
}

inline json to_json(const Phase1Record& r, const UtilityModel& u) {
    json j{{"K", r.K},
           {"partition", r.partition},
           {"utility", to_string(u.kind)},
           {"seed", r.seed},
           {"welfare", to_json(r.welfare)},
           {"leakage", to_json(r.leakage)},
           {"variance_explained", r.variance_explained}};
    j["gain"] = r.gain ? to_json(*r.gain) : json(nullptr);
    if (r.random_count > 0)
        j["random_partitions"] = {{"count", r.random_count},
                                  {"ic_violations", r.random_ic_violations},
                                  {"ic_max_excess", r.random_ic_max_excess}};
    return j;
}

struct RunSummary {
    std::vector<std::string> files;
    json details;  // command-specific summary echoed into the manifest
};

inline RunSummary phase1(const Config& cfg, OutputSet& out) {
    const auto s = Phase1Settings::from(cfg);
    const auto seeds = seeds_of(cfg);
    std::vector<Phase1SeedResult> results;
    for (auto seed : seeds) results.push_back(run_phase1_seed(s, seed));

    // Group records by (partition, K) in a fixed order.
    std::map<std::pair<std::string, int>, std::vector<const Phase1Record*>> groups;
    json records = json::array();
    for (const auto& r : results)
        for (const auto& rec : r.records) {
            groups[{rec.partition, rec.K}].push_back(&rec);
            records.push_back(to_json(rec, s.utility));
        }

    auto collect = [](const std::vector<const Phase1Record*>& rs, auto f) {
        std::vector<double> v;
        for (const auto* r : rs) v.push_back(f(*r));
        return v;
    };

    std::ostringstream t1, t2, nmi, eff;
    t1 << "partition,K,delta_mean,delta_std,eps_mean,eps_std,ratio_mean,ratio_std,lower_bound_mean,upper_bound_mean,runs\n";
    t2 << "partition,K,gain_mean_raw_mean,gain_mean_raw_std,gain_mean_clamped_mean,gain_mean_clamped_std,"
          "gain_max_raw_mean,gain_max_raw_std,ic_bound_mean,runs\n";
    nmi << "partition,K,nmi_mean,nmi_std,I_TC_mean,H_C_mean,log2K,runs\n";
    eff << "K,variance_explained_mean,variance_explained_std,nmi_mean,nmi_std,runs\n";
    for (const auto& [key, rs] : groups) {
        const auto& [kind, K] = key;
        const bool in_tables = kind == "semantic" || std::find(s.Ks.begin(), s.Ks.end(), K) != s.Ks.end();
        const auto delta = collect(rs, [](const Phase1Record& r) { return r.welfare.delta; });
        const auto eps = collect(rs, [](const Phase1Record& r) { return r.welfare.eps; });
        const auto ratio = collect(rs, [](const Phase1Record& r) {
            return r.welfare.eps > 0.0 ? r.welfare.delta / r.welfare.eps : 0.0;
        });
        const auto nmis = collect(rs, [](const Phase1Record& r) { return r.leakage.nmi; });
        const auto runs = std::to_string(rs.size());
        if (in_tables) {
            t1 << kind << ',' << K << ',' << fmt17(mean_of(delta)) << ',' << fmt17(std_of(delta)) << ','
               << fmt17(mean_of(eps)) << ',' << fmt17(std_of(eps)) << ',' << fmt17(mean_of(ratio)) << ','
               << fmt17(std_of(ratio)) << ','
               << fmt17(mean_of(collect(rs, [](const Phase1Record& r) { return r.welfare.lower_bound; }))) << ','
               << fmt17(mean_of(collect(rs, [](const Phase1Record& r) { return r.welfare.upper_bound; }))) << ','
               << runs << '\n';
            if (rs.front()->gain) {
                const auto raw = collect(rs, [](const Phase1Record& r) { return r.gain->mean_raw; });
                const auto cl = collect(rs, [](const Phase1Record& r) { return r.gain->mean_clamped; });
                const auto mx = collect(rs, [](const Phase1Record& r) { return r.gain->max_raw; });
                t2 << kind << ',' << K << ',' << fmt17(mean_of(raw)) << ',' << fmt17(std_of(raw)) << ','
                   << fmt17(mean_of(cl)) << ',' << fmt17(std_of(cl)) << ',' << fmt17(mean_of(mx)) << ','
                   << fmt17(std_of(mx)) << ','
                   << fmt17(mean_of(collect(rs, [](const Phase1Record& r) { return r.gain->ic_bound; })))
                   << ',' << runs << '\n';
            }
        }
        nmi << kind << ',' << K << ',' << fmt17(mean_of(nmis)) << ',' << fmt17(std_of(nmis)) << ','
            << fmt17(mean_of(collect(rs, [](const Phase1Record& r) { return r.leakage.I_TC; }))) << ','
            << fmt17(mean_of(collect(rs, [](const Phase1Record& r) { return r.leakage.H_C; }))) << ','
            << fmt17(std::log2(static_cast<double>(K))) << ',' << runs << '\n';
        if (kind == "kmeans") {
            const auto ve = collect(rs, [](const Phase1Record& r) { return r.variance_explained; });
            eff << K << ',' << fmt17(mean_of(ve)) << ',' << fmt17(std_of(ve)) << ',' << fmt17(mean_of(nmis)) << ','
                << fmt17(std_of(nmis)) << ',' << runs << '\n';
        }
    }
    out.write("table1_welfare.csv", t1.str());
    out.write("table2_ic.csv", t2.str());
    out.write("nmi_vs_k.csv", nmi.str());
    out.write("efficiency_nmi.csv", eff.str());
    out.write("phase1_reports.json", records.dump(2) + "\n");
    return {out.files(), json{{"records", records.size()}}};
}

// ---------------------------------------------------------------------------
// power: closed-form (and optional Monte-Carlo) detection power sweeps
// ---------------------------------------------------------------------------

inline DetectionModel detection_model_settings(const Config& cfg, const std::string& section) {
    const auto r = cfg.get_int(section, "dim", 1);
    if (r < 1) cfg.fail(section, "dim", "must be >= 1");
    const auto n = static_cast<Eigen::Index>(r);
    auto vec = [&](const std::string& key, double fill) {
        const auto v = cfg.get_doubles(section, key, std::vector<double>(static_cast<std::size_t>(r), fill));
        if (static_cast<Eigen::Index>(v.size()) != n) cfg.fail(section, key, "expected dim values");
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), n));
    };
    auto mat = [&](const std::string& key, double diag) {
        std::vector<double> id(static_cast<std::size_t>(r * r), 0.0);
        for (std::int64_t i = 0; i < r; ++i) id[static_cast<std::size_t>(i * r + i)] = diag;
        const auto v = cfg.get_doubles(section, key, id);
        if (static_cast<Eigen::Index>(v.size()) != n * n) cfg.fail(section, key, "expected dim*dim values (row-major)");
        return Eigen::MatrixXd(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            v.data(), n, n));
    };
    DetectionModel m;
    m.mu = vec("mu", 0.0);
    m.delta = vec("delta", 1.0);
    m.Sigma = mat("Sigma", 1.0);
    m.Sigma_xi = mat("Sigma_xi", 1.0);
    m.validate();
    return m;
}

inline RunSummary power(const Config& cfg, OutputSet& out) {
    const auto m = detection_model_settings(cfg, "power");
    const auto alphas = cfg.get_doubles("power", "alpha0", std::vector<double>{0.01, 0.05, 0.1, 0.2});
    const auto ns = cfg.get_ints("power", "n", std::vector<std::int64_t>{1, 5, 20, 100});
    const auto agents = cfg.get_ints("power", "agents", std::vector<std::int64_t>{1, 10, 100});
    const auto m_list = cfg.get_ints("power", "m_list", std::vector<std::int64_t>{8, 16, 32, 64, 128, 256, 512, 1024});
    const auto gap_n = cfg.get_int("power", "gap_n", 4);
    const double gap_alpha = cfg.get_double("power", "gap_alpha0", 0.05);
    const auto trials = cfg.get_int("power", "mc_trials", 0);
    const auto seed = seeds_of(cfg).front();
    for (double a : alphas)
        if (!(a > 0.0 && a < 1.0)) cfg.fail("power", "alpha0", "every alpha0 must lie in (0, 1)");

    std::ostringstream sweep, mc;
    sweep << "alpha0,n,agents,power_agg,power_flow,gap,lambda_agg,lambda_flow\n";
    mc << "alpha0,n,agents,test,power_mc,se,power_closed_form,trials\n";
    std::size_t violations = 0, mc_index = 0;
    for (double a : alphas)
        for (auto n : ns)
            for (auto ag : agents) {
                const auto agg = power_closed_form(m, n, std::nullopt, a);
                const auto flow = power_closed_form(m, n, ag, a);
                if (agg.power < flow.power) ++violations;
                sweep << fmt17(a) << ',' << n << ',' << ag << ',' << fmt17(agg.power) << ',' << fmt17(flow.power) << ','
                      << fmt17(agg.power - flow.power) << ',' << fmt17(agg.noncentrality) << ','
                      << fmt17(flow.noncentrality) << '\n';
                if (trials > 0) {
                    const auto s0 = derive_seed(seed, {mc_index++});
                    const auto magg = power_monte_carlo(m, n, std::nullopt, a, trials, derive_seed(s0, {0}));
                    const auto mflow = power_monte_carlo(m, n, ag, a, trials, derive_seed(s0, {1}));
                    mc << fmt17(a) << ',' << n << ',' << ag << ",aggregate," << fmt17(magg.power) << ','
                       << fmt17(magg.se) << ',' << fmt17(agg.power) << ',' << trials << '\n';
                    mc << fmt17(a) << ',' << n << ',' << ag << ",per-agent," << fmt17(mflow.power) << ','
                       << fmt17(mflow.se) << ',' << fmt17(flow.power) << ',' << trials << '\n';
                }
            }
    const auto curve = power_gap_curve(m, gap_n, gap_alpha, m_list);
    std::ostringstream gap;
    gap << "agents,power_agg,power_flow,gap\n";
    for (const auto& p : curve.points)
        gap << p.agents << ',' << fmt17(p.power_agg) << ',' << fmt17(p.power_flow) << ',' << fmt17(p.gap) << '\n';

    out.write("power_sweep.csv", sweep.str());
    out.write("power_gap.csv", gap.str());
    if (trials > 0) out.write("power_mc.csv", mc.str());
    json summary{{"dominance_violations", violations},
                 {"tail_slope", curve.tail_slope ? json(*curve.tail_slope) : json(nullptr)},
                 {"gap_n", gap_n},
                 {"gap_alpha0", gap_alpha}};
    out.write("power.json", summary.dump(2) + "\n");
    return {out.files(), summary};
}

// ---------------------------------------------------------------------------
// budget: feasibility band
// ---------------------------------------------------------------------------

inline QuantizerSource budget_source(const Config& cfg, std::uint64_t seed) {
    const auto kind = cfg.get_string("budget", "source", std::string("uniform"));
    if (kind == "uniform") {
        UniformSource u{cfg.get_double("budget", "source.lo", 0.0), cfg.get_double("budget", "source.hi", 1.0)};
        if (!(u.hi > u.lo)) cfg.fail("budget", "source.hi", "must exceed source.lo");
        return u;
    }
    if (kind == "gaussian") {
        GaussianSource g{cfg.get_double("budget", "source.mean", 0.0), cfg.get_double("budget", "source.sd", 1.0)};
        if (!(g.sd > 0.0)) cfg.fail("budget", "source.sd", "must be > 0");
        return g;
    }
    if (kind == "population") {
        auto mix = mixture_settings(cfg, "budget");
        const auto u = utility_settings(cfg, "budget");
        const auto pop = sample_population(mix, seed);
        SampledSource s{fi_points(u, pop), kmeans_settings(cfg, "budget", KMeansInit::warm_start)};
        s.kmeans.seed = derive_seed(seed, {0x6B6D});
        return s;
    }
    cfg.fail("budget", "source", "expected uniform, gaussian or population");
}

inline BudgetTargets budget_targets(const Config& cfg) {
    BudgetTargets t{cfg.get_double("budget", "eps_star"), cfg.get_double("budget", "beta_star")};
    try {
        t.validate();
    } catch (const config_error& e) {
        throw config_error(std::string("[budget] ") + e.what());
    }
    return t;
}

inline ScalarGaussianSystem budget_system(const Config& cfg) {
    ScalarGaussianSystem s;
    s.sigma2_temporal = cfg.get_double("budget", "sigma2_temporal", 1.0);
    s.sigma2_indiv = cfg.get_double("budget", "sigma2_indiv", 1.0);
    s.M = cfg.get_int("budget", "M", 1000);
    s.delta = cfg.get_double("budget", "delta", 0.5);
    s.n = cfg.get_int("budget", "n", 20);
    s.alpha0 = cfg.get_double("budget", "alpha0", 0.05);
    s.alpha_curv = cfg.get_double("budget", "alpha_curv", 2.0);
    s.W_star = cfg.get_double("budget", "W_star", 1.0);
    try {
        s.validate();
    } catch (const config_error& e) {
        throw config_error(std::string("[budget] ") + e.what());
    }
    return s;
}

inline json to_json(const FeasibilityBand& b, const BudgetTargets& t) {
    return {{"eps_star", t.eps_star},   {"beta_star", t.beta_star}, {"K_min", b.K_min},
            {"K_max", b.K_max},         {"feasible", b.feasible},   {"H_lb_bits", b.H_lb_bits},
            {"K_min_capped", b.k_min_capped}};
}

inline RunSummary budget(const Config& cfg, OutputSet& out) {
    const auto t = budget_targets(cfg);
    const auto sys = budget_system(cfg);
    const auto seed = seeds_of(cfg).front();
    const auto source = budget_source(cfg, seed);
    const int cap = static_cast<int>(cfg.get_int("budget", "k_cap", 4096));
    if (cap < 1) cfg.fail("budget", "k_cap", "must be >= 1");
    const auto band = feasibility_band(t, sys, source, cap);
    const auto j = to_json(band, t);
    out.write("band.json", j.dump(2) + "\n");

    std::int64_t sweep_max = cfg.get_int("budget", "sweep_max", 64);
    if (const auto* s = std::get_if<SampledSource>(&source))
        sweep_max = std::min<std::int64_t>(sweep_max, static_cast<std::int64_t>(s->points.n));
    std::ostringstream sw;
    sw << "K,eps_K,welfare_threshold,welfare_ok,power_K,power_target,detection_ok\n";
    const double thr = welfare_threshold(t, sys);
    std::optional<NestedQuantizer> nested;
    if (const auto* s = std::get_if<SampledSource>(&source)) nested.emplace(*s);
    for (std::int64_t K = 1; K <= sweep_max; ++K) {
        const double e = nested ? nested->epsilon(static_cast<int>(K)) : epsilon_of_K(source, static_cast<int>(K));
        const double pw = category_power(sys, K);
        sw << K << ',' << fmt17(e) << ',' << fmt17(thr) << ',' << (e <= thr ? 1 : 0) << ',' << fmt17(pw) << ','
           << fmt17(1.0 - t.beta_star) << ',' << (pw >= 1.0 - t.beta_star ? 1 : 0) << '\n';
    }
    out.write("band_sweep.csv", sw.str());
    return {out.files(), j};
}

// ---------------------------------------------------------------------------
// PM pipeline drivers
// ---------------------------------------------------------------------------

inline pm::SyntheticPMConfig synth_settings(const Config& cfg, std::uint64_t seed) {
    const std::string sec = "synth-pm";
    const auto gen = cfg.get_string(sec, "generator", std::string("two-regime"));
    const int cells = static_cast<int>(cfg.get_int(sec, "cells", 200));
    const int hours = static_cast<int>(cfg.get_int(sec, "hours", 840));
    const auto F = cfg.get_int(sec, "F", 11);
    if (F < 1) cfg.fail(sec, "F", "must be >= 1");
    pm::SyntheticPMConfig s;
    if (gen == "two-regime") {
        s = pm::SyntheticPMConfig::separated(2, cells, hours, cfg.get_double(sec, "separation", 10.0), seed,
                                             static_cast<std::size_t>(F));
    } else if (gen == "five-regime") {
        s = pm::SyntheticPMConfig::five_regime(cells, hours, static_cast<std::size_t>(F),
                                               cfg.get_double(sec, "separation", 6.0));
    } else if (gen == "separated") {
        s = pm::SyntheticPMConfig::separated(static_cast<int>(cfg.get_int(sec, "clusters", 2)), cells, hours,
                                             cfg.get_double(sec, "separation", 10.0), seed, static_cast<std::size_t>(F));
    } else {
        cfg.fail(sec, "generator", "expected two-regime, five-regime or separated");
    }
    s.network_id = cfg.get_string(sec, "network_id", std::string("synth"));
    s.diurnal_amplitude = cfg.get_double(sec, "diurnal_amplitude", s.diurnal_amplitude);
    s.cell_offset_sd = cfg.get_double(sec, "cell_offset_sd", s.cell_offset_sd);
    try {
        s.validate();
    } catch (const config_error& e) {
        throw config_error(std::string("[synth-pm] ") + e.what());
    }
    return s;
}

inline std::uint64_t synth_seed(std::uint64_t seed) { return derive_seed(seed, {0x50D}); }

inline RunSummary synth_pm(const Config& cfg, OutputSet& out) {
    const auto seeds = seeds_of(cfg);
    json summary = json::array();
    for (auto seed : seeds) {
        const auto s = synth_settings(cfg, seed);
        const auto data = pm::generate_synthetic_pm(s, synth_seed(seed));
        const std::string suffix = seeds.size() > 1 ? "_s" + std::to_string(seed) : "";
        std::ostringstream csv, truth;
        pm::write_pm_csv(csv, data.dataset);
        truth << "network_id,cell_id,cluster\n";
        for (const auto& [k, c] : data.truth) truth << k.first << ',' << k.second << ',' << c << '\n';
        out.write("pm" + suffix + ".csv", csv.str());
        out.write("pm_truth" + suffix + ".csv", truth.str());
        summary.push_back({{"seed", seed}, {"rows", data.dataset.rows.size()}, {"clusters", s.clusters}});
    }
    return {out.files(), summary};
}

inline pm::PipelineConfig pipeline_settings(const Config& cfg, std::uint64_t seed) {
    pm::PipelineConfig p;
    p.train_frac = cfg.get_double("pm", "train_frac", 0.6);
    p.val_frac = cfg.get_double("pm", "val_frac", 0.2);
    p.alpha0 = cfg.get_double("pm", "alpha0", 0.20);
    p.rho = cfg.get_double("pm", "rho", 0.30);
    if (!(p.alpha0 >= 0.0 && p.alpha0 < 1.0)) cfg.fail("pm", "alpha0", "must lie in [0, 1)");
    if (!(p.rho >= 0.0 && p.rho <= 1.0)) cfg.fail("pm", "rho", "must lie in [0, 1]");
    p.kmeans = kmeans_settings(cfg, "pm", KMeansInit::kmeanspp);
    p.seed = seed;
    return p;
}

inline pm::PMDataset pm_input(const Config& cfg, std::uint64_t seed) {
    if (cfg.has("pm", "input")) {
        const auto F = cfg.get_int("pm", "F", 0);
        return pm::ingest_pm_csv(cfg.get_string("pm", "input"),
                                 F > 0 ? std::optional<std::size_t>(static_cast<std::size_t>(F)) : std::nullopt);
    }
    return pm::generate_synthetic_pm(synth_settings(cfg, seed), synth_seed(seed)).dataset;
}

inline json to_json(const pm::PipelineRun& r) {
    const auto& m = r.run.metrics;
    return {{"K", r.K},
            {"kmeans_seed", r.kmeans_seed},
            {"inject_seed", r.inject_seed},
            {"thresholds", r.calibration.thresholds},
            {"val_counts", r.calibration.val_counts},
            {"threshold_global_fallback", r.calibration.global_fallback},
            {"recall", m.recall ? json(*m.recall) : json(nullptr)},
            {"precision", m.precision},
            {"fpr", m.fpr ? json(*m.fpr) : json(nullptr)},
            {"tp", m.tp},
            {"fp", m.fp},
            {"tn", m.tn},
            {"fn", m.fn},
            {"n_test", r.n_test},
            {"n_injected", r.n_injected}};
}

inline RunSummary pm_run(const Config& cfg, OutputSet& out) {
    const auto seeds = seeds_of(cfg);
    json summary = json::array();
    for (auto seed : seeds) {
        const auto ds = pm_input(cfg, seed);
        const auto pcfg = pipeline_settings(cfg, seed);
        const auto K = static_cast<int>(cfg.get_int("pm", "K", 10));
        const auto split = pm::temporal_split(ds, pcfg.train_frac, pcfg.val_frac);
        const auto run = pm::run_pipeline(split, K, pcfg);
        const std::string suffix = seeds.size() > 1 ? "_s" + std::to_string(seed) : "";

        std::ostringstream rows;
        rows <<"network_id,cell_id,hour,label,donor,distance,flag\n";
        for (std::size_t i = 0; i < split.test.rows.size(); ++i) {
            const auto& r = split.test.rows[i];
            const int donor = run.run.donor[i];
            rows << r.network_id << ',' << r.cell_id << ',' << r.hour << ',' << (donor >= 0 ? "injected" : "normal")
                 << ',' << donor << ',' << fmt17(run.run.distances[i]) << ',' << (run.run.flags[i] ? 1 : 0) << '\n';
        }
        json j = to_json(run);
        j["seed"] = seed;
        j["network_id"] = ds.rows.empty() ? "" : ds.rows.front().network_id;
        j["train_frac"] = pcfg.train_frac;
        j["val_frac"] = pcfg.val_frac;
        j["alpha0"] = pcfg.alpha0;
        j["rho"] = pcfg.rho;
        j["split_hours"] = {split.train_hours, split.val_hours, split.test_hours};
        out.write("pm_run" + suffix + ".json", j.dump(2) + "\n");
        out.write("pm_run_rows" + suffix + ".csv", rows.str());
        summary.push_back(j);
    }
    return {out.files(), summary};
}

inline std::vector<int> pm_k_list(const Config& cfg) {
    std::vector<int> Ks;
    const auto& def = pm::default_k_list();
    for (auto k : cfg.get_ints("pm", "K_list", std::vector<std::int64_t>(def.begin(), def.end()))) {
        if (k < 1) cfg.fail("pm", "K_list", "every K must be >= 1");
        Ks.push_back(static_cast<int>(k));
    }
    if (Ks.empty()) cfg.fail("pm", "K_list", "K list must not be empty");
    return Ks;
}

inline RunSummary pm_sweep(const Config& cfg, OutputSet& out) {
    const auto seeds = seeds_of(cfg);
    const auto Ks = pm_k_list(cfg);
    json summary = json::array();
    for (auto seed : seeds) {
        const auto ds = pm_input(cfg, seed);
        const auto pcfg = pipeline_settings(cfg, seed);
        const auto rep = pm::granularity_sweep(ds, Ks, pcfg);
        const std::string suffix = seeds.size() > 1 ? "_s" + std::to_string(seed) : "";
        std::ostringstream csv;
        pm::write_sweep_csv(csv, rep);
        json j{{"seed", seed},
               {"network_id", rep.network_id},
               {"train_frac", pcfg.train_frac},
               {"val_frac", pcfg.val_frac},
               {"alpha0", pcfg.alpha0},
               {"rho", pcfg.rho},
               {"plateau_gain", rep.plateau_gain}};
        j["runs"] = json::array();
        for (const auto& r : rep.runs) j["runs"].push_back(to_json(r));
        out.write("pm_sweep" + suffix + ".csv", csv.str());
        out.write("pm_sweep" + suffix + ".json", j.dump(2) + "\n");
        summary.push_back({{"seed", seed}, {"plateau_gain", rep.plateau_gain}});
    }
    return {out.files(), summary};
}

// ---------------------------------------------------------------------------
// Dispatch, staging and manifests
// ---------------------------------------------------------------------------

inline const std::map<std::string, std::function<RunSummary(const Config&, OutputSet&)>>& commands() {
    static const std::map<std::string, std::function<RunSummary(const Config&, OutputSet&)>> table{
        {"phase1", phase1}, {"power", power},     {"budget", budget},
        {"pm-run", pm_run}, {"pm-sweep", pm_sweep}, {"synth-pm", synth_pm}};
    return table;
}

inline constexpr const char* manifest_name = "run_manifest.json";

// Runs `command` with `cfg`, writing outputs and run_manifest.json into `out`.
// Returns the manifest.
inline json run(const std::string& command, const Config& cfg, const std::filesystem::path& out) {
    namespace fs = std::filesystem;
    const auto& table = commands();
    const auto it = table.find(command);
    if (it == table.end()) throw config_error("unknown experiment kind '" + command + "'");

    fs::create_directories(out);
    const fs::path staging = out / ".staging";
    fs::remove_all(staging);
    OutputSet set(staging);
    const auto t0 = std::chrono::steady_clock::now();
    RunSummary summary;
    try {
        summary = it->second(cfg, set);
    } catch (...) {
        const fs::path q = out / "quarantine";
        fs::remove_all(q);
        fs::rename(staging, q);
        throw;
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json manifest;
    manifest["artifact"] = "mises";
    manifest["version"] = MISES_VERSION;
    manifest["command"] = command;
    manifest["config_text"] = cfg.to_text();
    json echo = json::object();
    for (const auto& [sec, entries] : cfg.sections())
        for (const auto& [k, e] : entries) echo[sec][k] = e.value;
    manifest["config"] = echo;
    manifest["seeds"] = seeds_of(cfg);
    manifest["wall_clock_seconds"] = seconds;
    manifest["outputs"] = set.files();
    manifest["summary"] = summary.details;

    for (const auto& f : set.files()) fs::rename(staging / f, out / f);
    fs::remove_all(staging);
    std::ofstream(out / manifest_name) << manifest.dump(2) << '\n';
    return manifest;
}

// Re-runs the experiment recorded in a manifest.
inline json replay(const std::filesystem::path& manifest_path, const std::filesystem::path& out) {
    std::ifstream in(manifest_path);
    if (!in) throw config_error("cannot open manifest '" + manifest_path.string() + "'");
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw config_error("manifest '" + manifest_path.string() + "': " + e.what());
    }
    if (!m.contains("command") || !m.contains("config_text"))
        throw config_error("manifest '" + manifest_path.string() + "' lacks command or config_text");
    const auto cfg = Config::parse_string(m["config_text"].get<std::string>(), manifest_path.string());
    return run(m["command"].get<std::string>(), cfg, out);
}

}  // namespace mises::experiments
