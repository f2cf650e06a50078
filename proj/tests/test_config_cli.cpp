#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mises/experiments.hpp"

using namespace mises;
namespace fs = std::filesystem;
namespace ex = mises::experiments;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("mises_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string config_error_message(const std::string& text) {
    try {
        Config::parse_string(text, "t.conf");
    } catch (const config_error& e) {
        return e.what();
    }
    return "";
}

const char* kPhase1 = R"([run]
seeds = 3
[phase1]
N = 600
K_list = 3, 10
bootstrap = 20
random_partitions = 2
)";

const char* kPower = R"([run]
seeds = 2
[power]
alpha0 = 0.05, 0.1
n = 4, 16
agents = 1, 10
m_list = 8, 16, 32, 64
mc_trials = 2000
)";

const char* kBudget = R"([budget]
eps_star = 0.01
beta_star = 0.1
source = gaussian
source.sd = 0.5
sweep_max = 12
)";

const char* kSynth = R"([run]
seeds = 1, 2
[synth-pm]
generator = two-regime
cells = 20
hours = 30
)";

const char* kSweep = R"([run]
seeds = 4
[synth-pm]
generator = five-regime
cells = 40
hours = 60
[pm]
K_list = 3, 5, 8
)";

const char* kPmRun = R"([synth-pm]
generator = two-regime
cells = 20
hours = 40
[pm]
K = 2
)";

}  // namespace

TEST(Config, ParsesSectionsListsAndComments) {
    const auto cfg = Config::parse_string("# top\n[a]\nx = 1.5  # trailing\nlist = 1, 2,3\nname = word\n[b]\nflag = yes\n");
    EXPECT_DOUBLE_EQ(cfg.get_double("a", "x"), 1.5);
    EXPECT_EQ(cfg.get_ints("a", "list"), (std::vector<std::int64_t>{1, 2, 3}));
    EXPECT_EQ(cfg.get_string("a", "name"), "word");
    EXPECT_TRUE(cfg.get_bool("b", "flag"));
    EXPECT_EQ(cfg.get_int("a", "missing", 7), 7);
    EXPECT_THROW(cfg.get_int("a", "missing"), config_error);
    EXPECT_THROW(cfg.get_int("a", "x"), config_error);
    EXPECT_THROW(cfg.get_double("a", "name"), config_error);
}

TEST(Config, ErrorsCarryLineNumbers) {
    EXPECT_NE(config_error_message("[a]\nx = 1\nx = 2\n").find("t.conf:3"), std::string::npos);
    EXPECT_NE(config_error_message("x = 1\n").find("t.conf:1"), std::string::npos);
    EXPECT_NE(config_error_message("[a]\n\njunk\n").find("t.conf:3"), std::string::npos);
    EXPECT_NE(config_error_message("[a\n").find("t.conf:1"), std::string::npos);
    const auto cfg = Config::parse_string("[a]\n\nx = abc\n", "t.conf");
    try {
        cfg.get_double("a", "x");
        FAIL();
    } catch (const config_error& e) {
        EXPECT_NE(std::string(e.what()).find("t.conf:3"), std::string::npos);
    }
}

TEST(Config, TextRoundTrip) {
    auto cfg = Config::parse_string(kSweep);
    cfg.set("run", "seeds", "9");
    const auto back = Config::parse_string(cfg.to_text());
    EXPECT_EQ(back.to_text(), cfg.to_text());
    EXPECT_EQ(back.get_ints("run", "seeds"), (std::vector<std::int64_t>{9}));
    EXPECT_THROW(Config::load("/nonexistent/x.conf"), config_error);
}

TEST(Experiments, UnknownKindAndBadConfig) {
    const auto out = scratch("bad");
    EXPECT_THROW(ex::run("nope", Config{}, out), config_error);
    const auto cfg = Config::parse_string("[phase1]\nN = 100\nK_list = \n");
    EXPECT_THROW(ex::run("phase1", cfg, out), config_error);
    fs::remove_all(out);
}

TEST(Experiments, FailureGoesToQuarantine) {
    const auto out = scratch("quarantine");
    // K above the cell count fails after the synthetic data is staged.
    const auto cfg = Config::parse_string("[synth-pm]\ncells = 10\nhours = 30\n[pm]\nK = 50\n");
    EXPECT_THROW(ex::run("pm-run", cfg, out), error);
    EXPECT_TRUE(fs::exists(out / "quarantine"));
    EXPECT_FALSE(fs::exists(out / "pm_run.json"));
    EXPECT_FALSE(fs::exists(out / ex::manifest_name));
    fs::remove_all(out);
}

const std::map<std::string, const char*>& replay_configs() {
    static const std::map<std::string, const char*> m{{"phase1", kPhase1},     {"power", kPower},
                                                      {"budget", kBudget},     {"synth-pm", kSynth},
                                                      {"pm-sweep", kSweep},    {"pm-run", kPmRun}};
    return m;
}

class Replay : public ::testing::TestWithParam<std::string> {};

TEST_P(Replay, ByteIdenticalOutputs) {
    const auto kind = GetParam();
    const auto a = scratch("replay_a_" + kind);
    const auto b = scratch("replay_b_" + kind);
    const auto m = ex::run(kind, Config::parse_string(replay_configs().at(kind)), a);
    const auto r = ex::replay(a / ex::manifest_name, b);
    ASSERT_FALSE(m["outputs"].empty());
    EXPECT_EQ(m["outputs"], r["outputs"]);
    EXPECT_EQ(m["config_text"], r["config_text"]);
    EXPECT_EQ(m["summary"], r["summary"]);
    for (const auto& f : m["outputs"]) {
        const auto name = f.get<std::string>();
        EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, Replay,
                         ::testing::Values("phase1", "power", "budget", "synth-pm", "pm-sweep", "pm-run"),
                         [](const auto& info) {
                             std::string n = info.param;
                             for (auto& c : n)
                                 if (c == '-') c = '_';
                             return n;
                         });

TEST(Experiments, SynthOutputsAreIngestible) {
    const auto out = scratch("synth_ingest");
    const auto m = ex::run("synth-pm", Config::parse_string(kSynth), out);
    bool seen = false;
    for (const auto& f : m["outputs"]) {
        const auto name = f.get<std::string>();
        if (name.rfind("pm_s", 0) == 0 && name.find("truth") == std::string::npos) {
            const auto ds = pm::ingest_pm_csv((out / name).string(), 11);
            EXPECT_EQ(ds.rows.size(), 600u);
            seen = true;
        }
    }
    EXPECT_TRUE(seen);
    fs::remove_all(out);
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    fs::create_directories(dir);
    const std::string cli = MISES_CLI_PATH;
    {
        std::ofstream(dir / "bad.conf") << "[budget]\neps_star = oops\n";
        const auto cmd = cli + " budget -q -c " + (dir / "bad.conf").string() + " -o " + (dir / "o1").string() +
                         " > /dev/null 2>&1";
        const int rc = std::system(cmd.c_str());
        ASSERT_TRUE(WIFEXITED(rc));
        EXPECT_EQ(WEXITSTATUS(rc), 2);
    }
    {
        std::ofstream(dir / "good.conf") << kBudget;
        const auto cmd = cli + " budget -q -c " + (dir / "good.conf").string() + " -o " + (dir / "o2").string() +
                         " > /dev/null 2>&1";
        const int rc = std::system(cmd.c_str());
        ASSERT_TRUE(WIFEXITED(rc));
        EXPECT_EQ(WEXITSTATUS(rc), 0);
        EXPECT_TRUE(fs::exists(dir / "o2" / "band.json"));
        const auto rep = cli + " replay -q -m " + (dir / "o2" / ex::manifest_name).string() + " -o " +
                         (dir / "o3").string() + " > /dev/null 2>&1";
        EXPECT_EQ(WEXITSTATUS(std::system(rep.c_str())), 0);
        EXPECT_EQ(slurp(dir / "o2" / "band.json"), slurp(dir / "o3" / "band.json"));
    }
    fs::remove_all(dir);
}
