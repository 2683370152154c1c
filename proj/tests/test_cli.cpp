#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "wsselect/cli.hpp"

using namespace wss;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "wsselect");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) { return wss::detail::read_file(p.string()); }

// Three noisy labeling functions over a two-cluster sample.
class CliFixture : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir = oracle::temp_dir("cli");
        auto write_split = [](const std::string& name, std::size_t n, std::uint64_t seed) {
            TwoViewConfig s;
            s.n = n;
            s.view1_dim = 3;
            s.alpha = s.gamma = 0.0;
            const auto sample = generate(s, seed);
            write_embeddings((dir / (name + ".emb")).string(), sample.features);
            write_gold((dir / (name + "_gold.csv")).string(), sample.gold);
            return sample;
        };
        const auto train = write_split("train", 400, 1);
        write_split("val", 200, 2);
        write_split("test", 200, 3);

        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        LabelMatrix lm{Matrix<int>(400, 3), 2};
        for (std::size_t i = 0; i < 400; ++i)
            for (std::size_t k = 0; k < 3; ++k) {
                const double r = u(rng);
                lm.values(i, k) = r < 0.15 ? kAbstain : r < 0.35 ? 1 - train.gold[i] : train.gold[i];
            }
        write_label_matrix((dir / "labels.csv").string(), lm);

        // Chain 0 - 1 - 3 with labels 0, 0, 1.
        wss::detail::write_file((dir / "tiny_labels.csv").string(), "0\n0\n1\n");
        wss::detail::write_file((dir / "tiny_emb.csv").string(), "0\n1\n3\n");
    }
    static void TearDownTestSuite() { fs::remove_all(dir); }

    static std::string p(const std::string& name) { return (dir / name).string(); }

    static std::vector<std::string> pipeline(const std::string& cmd) {
        return {cmd, "--labels", p("labels.csv"), "--embeddings", p("train.emb")};
    }

    static std::vector<std::string> sweep_args() {
        auto a = pipeline("sweep");
        for (const std::string& s : std::vector<std::string>{"--val-embeddings", p("val.emb"), "--val-gold", p("val_gold.csv"), "--test-embeddings",
                              p("test.emb"), "--test-gold", p("test_gold.csv"), "--train-gold",
                              p("train_gold.csv"), "--epochs", "5"})
            a.push_back(s);
        return a;
    }

    static inline fs::path dir;
};

}  // namespace

TEST_F(CliFixture, ScoreThreeNodeExample) {
    const auto r = run_cli({"score", "--labels", p("tiny_labels.csv"), "--embeddings", p("tiny_emb.csv"), "--k", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line.rfind("# config={", 0), 0u);
    std::getline(in, line);
    EXPECT_EQ(line, "example_index,pseudolabel,score,rank");
    std::vector<std::string> rows;
    while (std::getline(in, line)) rows.push_back(line);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].substr(0, 4), "0,0,");
    EXPECT_NEAR(std::stod(rows[0].substr(4)), -0.7071067811865476, 1e-12);
    EXPECT_NEAR(std::stod(rows[2].substr(4)), 0.7071067811865476, 1e-12);
}

TEST_F(CliFixture, ConfigEchoIsSortedJson) {
    const auto r = run_cli(pipeline("score"));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto first = r.out.substr(0, r.out.find('\n'));
    const auto j = nlohmann::json::parse(first.substr(std::string("# config=").size()));
    EXPECT_EQ(j["subcommand"], "score");
    EXPECT_EQ(j["k"], 20);
    EXPECT_FALSE(j.contains("betas"));
    EXPECT_EQ(first.substr(9), j.dump());
}

TEST_F(CliFixture, SelectWritesOneColumnPerBeta) {
    const auto out = p("select.csv");
    auto a = pipeline("select");
    for (std::string s : {"--betas", "0.25,0.5,1", "-o", out.c_str()}) a.push_back(s);
    const auto r = run_cli(a);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(r.out.empty());
    const auto text = slurp(out);
    EXPECT_NE(text.find("example_index,score,rank,selected_at_0.25,selected_at_0.5,selected_at_1\n"), std::string::npos);
}

TEST_F(CliFixture, EntropyRunsOnVoteShares) {
    auto a = pipeline("score");
    a.push_back("--selector");
    a.push_back("entropy");
    EXPECT_EQ(run_cli(a).code, 0);
}

TEST_F(CliFixture, SweepWritesTableAndSummary) {
    auto a = sweep_args();
    const auto summary = p("summary.json");
    a.push_back("--summary");
    a.push_back(summary);
    a.push_back("--label-model");
    a.push_back("ds");
    const auto r = run_cli(a);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("beta,n_selected,subset_label_accuracy,val_accuracy,test_accuracy,balanced_error\n"),
              std::string::npos);
    const auto j = nlohmann::json::parse(slurp(summary));
    EXPECT_EQ(j["rows"].size(), 10u);
    EXPECT_TRUE(j.contains("best"));
    EXPECT_TRUE(j.contains("label_model"));
    EXPECT_EQ(j["config"]["label_model"], "ds");
}

TEST_F(CliFixture, DeterministicAcrossRunsAndThreads) {
    setenv("WSSELECT_THREADS", "1", 1);
    const auto a = run_cli(sweep_args());
    const auto s1 = run_cli(pipeline("score"));
    setenv("WSSELECT_THREADS", "5", 1);
    const auto b = run_cli(sweep_args());
    const auto s2 = run_cli(pipeline("score"));
    unsetenv("WSSELECT_THREADS");
    const auto c = run_cli(sweep_args());
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    EXPECT_EQ(a.out, c.out);
    EXPECT_EQ(s1.out, s2.out);
}

TEST_F(CliFixture, UsageErrors) {
    EXPECT_EQ(run_cli({}).code, 1);
    EXPECT_EQ(run_cli({"score", "--bogus"}).code, 1);
    EXPECT_EQ(run_cli({"score", "--labels", p("missing.csv"), "--embeddings", p("train.emb")}).code, 1);
    auto a = pipeline("select");
    a.push_back("--stratified");
    EXPECT_EQ(run_cli(a).code, 1);
    a = pipeline("select");
    for (std::string s : {"--betas", "0,0.5"}) a.push_back(s);
    EXPECT_EQ(run_cli(a).code, 1);
    EXPECT_EQ(run_cli({"score", "--labels", p("tiny_labels.csv"), "--embeddings", p("tiny_emb.csv"), "--k", "3"}).code, 1);
    EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST_F(CliFixture, DataErrors) {
    wss::detail::write_file(p("bad_labels.csv"), "0,1\n0\n");
    const auto r = run_cli({"score", "--labels", p("bad_labels.csv"), "--embeddings", p("train.emb")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("ragged"), std::string::npos);
    EXPECT_EQ(run_cli({"score", "--labels", p("tiny_labels.csv"), "--embeddings", p("train.emb")}).code, 2);
}

TEST_F(CliFixture, SynthVerify) {
    auto r = run_cli({"synth-verify", "--n", "50000"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_TRUE(j["lemma"]["passed"].get<bool>());
    EXPECT_EQ(run_cli({"synth-verify", "--alpha", "0.6", "--gamma", "0.5"}).code, 3);
    r = run_cli({"synth-verify", "--n", "2000", "--tolerance", "0"});
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("exceeds tolerance"), std::string::npos);
}
