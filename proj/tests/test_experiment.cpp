#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "lobeseg/experiment.hpp"
#include "test_util.hpp"

namespace lobeseg {
namespace {

const char* kTinyGlobals = R"(replicates = 2
num_train = 1
num_test = 1
dims = 20
completeness = 0.6
in_channels = 4
hidden_channels = 2
iterations = 4
train_core = 8
train_margin = 2
infer_core = 20
infer_margin = 2
seed = 11
)";

std::string with_arms(const std::string& arms) { return std::string(kTinyGlobals) + arms; }

const char* kArmsAB = "[arm.weighted]\nloss = weighted\n[arm.unweighted]\nloss = unweighted\n";
const char* kArmsBA = "[arm.unweighted]\nloss = unweighted\n[arm.weighted]\nloss = weighted\n";

TEST(ExperimentConfig, DefaultsMatchTheDocumentedSetup)
{
    const auto c = default_experiment();
    EXPECT_EQ(c.replicates, 5);
    EXPECT_EQ(c.phantom.side, Side::left);
    EXPECT_EQ(c.phantom.dims, Dims::cube(64));
    EXPECT_EQ(c.phantom.completeness, 0.6);
    ASSERT_EQ(c.arms.size(), 2u);
    for (const auto& a : c.arms) {
        EXPECT_EQ(a.train.iterations, 2000);
        EXPECT_EQ(a.train.learning_rate, 0.005);
        EXPECT_EQ(a.train.batch_size, 2);
    }
    EXPECT_TRUE(c.arms[0].weighted);
    EXPECT_FALSE(c.arms[1].weighted);
}

TEST(ExperimentConfig, ParsesGlobalsAndArmOverrides)
{
    const auto c = parse_experiment_config(with_arms("[arm.fast]\nloss = weighted\nlearning_rate = 0.01\n"
                                                     "[arm.plain]\nloss = unweighted\n"));
    EXPECT_EQ(c.replicates, 2);
    EXPECT_EQ(c.phantom.dims, Dims::cube(20));
    EXPECT_EQ(c.master_seed, 11u);
    ASSERT_EQ(c.arms.size(), 2u);
    EXPECT_EQ(c.arms[0].name, "fast");
    EXPECT_EQ(c.arms[0].train.learning_rate, 0.01);
    EXPECT_EQ(c.arms[0].train.iterations, 4);
    EXPECT_EQ(c.arms[1].train.learning_rate, 0.005);
}

TEST(ExperimentConfig, RejectsBadInput)
{
    EXPECT_THROW(parse_experiment_config("bogus_key = 1\n"), ShapeError);
    EXPECT_THROW(parse_experiment_config("dims = banana\n"), ShapeError);
    EXPECT_THROW(parse_experiment_config("[arm.x]\nloss = maybe\n"), ShapeError);
    EXPECT_THROW(parse_experiment_config("[other]\nk = 1\n"), ShapeError);
    EXPECT_THROW(parse_experiment_config("completeness = 2\n"), ShapeError);
    EXPECT_THROW(load_experiment_config("/nonexistent/config.ini"), IoError);
}

TEST(ExperimentSeeds, SharedAcrossArmsAndDistinctAcrossReplicates)
{
    const auto c = parse_experiment_config(with_arms(kArmsAB));
    const auto a = replicate_seeds(c, 0), b = replicate_seeds(c, 1);
    EXPECT_NE(a.train_cases, b.train_cases);
    EXPECT_NE(a.train_cases[0], a.test_cases[0]);
    EXPECT_NE(a.net_init, b.net_init);
    EXPECT_EQ(replicate_seeds(c, 0).test_cases, a.test_cases);
}

TEST(Experiment, ArmOrderAndThreadCountDoNotMatter)
{
    const auto ab = run_experiment(parse_experiment_config(with_arms(kArmsAB)), 1);
    const auto ba = run_experiment(parse_experiment_config(with_arms(kArmsBA)), 2);
    ASSERT_TRUE(ab.complete());
    ASSERT_TRUE(ba.complete());
    EXPECT_EQ(reports_csv(ab.reports()), reports_csv(ba.reports()));
    EXPECT_EQ(summary_table(ab.summary), summary_table(ba.summary));
    ASSERT_EQ(ab.summary.size(), 2u);
    EXPECT_EQ(ab.summary[0].arm, "unweighted");
    EXPECT_EQ(ab.summary[1].arm, "weighted");
    EXPECT_EQ(ab.summary[0].cases, 2u);
}

TEST(Experiment, ArmsTrainedOnIdenticalDataDifferOnlyByLoss)
{
    const auto r = run_experiment(parse_experiment_config(with_arms(kArmsAB)), 1);
    // Runs are ordered by (arm, replicate); compare replicate 0 of each arm.
    const auto& u = r.runs[0];
    const auto& w = r.runs[2];
    ASSERT_EQ(u.arm, "unweighted");
    ASSERT_EQ(w.arm, "weighted");
    EXPECT_EQ(u.reports[0].case_id, w.reports[0].case_id);
    EXPECT_NE(u.loss_history, w.loss_history);
}

TEST(Experiment, FailedArmKeepsPartialResultsAndWritesMarker)
{
    test::TempDir dir;
    // A huge learning rate drives the logits to overflow, which the loss rejects.
    const auto c = parse_experiment_config(
        with_arms("[arm.ok]\nloss = weighted\n[arm.boom]\nloss = weighted\nlearning_rate = 1e300\n"));
    const auto r = run_experiment(c, 1);
    EXPECT_FALSE(r.complete());
    write_experiment(r, dir.path());
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "FAILED"));
    EXPECT_TRUE(std::filesystem::exists(dir.path() / "experiment.csv"));
    std::ifstream f(dir.path() / "experiment.csv");
    std::stringstream ss;
    ss << f.rdbuf();
    EXPECT_NE(ss.str().find(",ok,"), std::string::npos);
}

TEST(Experiment, WrittenFilesAreReproducible)
{
    test::TempDir a, b;
    const auto c = parse_experiment_config(with_arms(kArmsAB));
    write_experiment(run_experiment(c, 1), a.path());
    write_experiment(run_experiment(c, 1), b.path());
    for (const char* f : {"experiment.csv", "experiment.json", "summary.csv", "losses.csv"}) {
        std::ifstream fa(a.path() / f, std::ios::binary), fb(b.path() / f, std::ios::binary);
        std::stringstream sa, sb;
        sa << fa.rdbuf();
        sb << fb.rdbuf();
        EXPECT_FALSE(sa.str().empty()) << f;
        EXPECT_EQ(sa.str(), sb.str()) << f;
    }
    EXPECT_FALSE(std::filesystem::exists(a.path() / "FAILED"));
}

TEST(Median, OddEvenAndNonFinite)
{
    EXPECT_EQ(median({3, 1, 2}), 2.0);
    EXPECT_EQ(median({4, 1, 2, 3}), 2.5);
    EXPECT_EQ(median({1, std::nan(""), 3}), 2.0);
    EXPECT_TRUE(std::isnan(median({})));
}

} // namespace
} // namespace lobeseg
