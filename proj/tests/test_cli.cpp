#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include "cforge/concept.hpp"
#include "cforge/eval.hpp"
#include "cforge/io.hpp"
#include "support.hpp"

namespace cforge {
namespace {

namespace fs = std::filesystem;

const fs::path kData = fs::path(CFORGE_DATA_DIR) / "fixture";

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + CFORGE_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::string fixture_inputs() {
  return " --vocab " + (kData / "vocab.json").string() + " --encoder " + (kData / "encoder.json").string() +
         " --concept " + (kData / "violence.concept").string();
}

std::size_t entry_count(const fs::path& dir) {
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

TEST(Cli, MissingOrUnknownSubcommandIsUsageError) {
  const auto dir = test::temp_dir("cli_usage");
  for (const char* args : {"", "bogus", "forge --no-such-flag 1"}) {
    const auto r = cli(args, dir);
    EXPECT_EQ(r.code, 2) << args;
    const json line = json::parse(r.err.substr(0, r.err.find('\n')));
    EXPECT_EQ(line.at("event"), "usage_error");
    EXPECT_EQ(line.at("exit_code"), 2);
  }
}

TEST(Cli, DryRunPrintsPlanAndWritesNothing) {
  const auto dir = test::temp_dir("cli_dry");
  const auto before = entry_count(dir);
  const auto r = cli("--dry-run forge" + fixture_inputs() + " --target \"a quiet street\" --k 3 --out " +
                         (dir / "res.json").string(),
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json plan = json::parse(r.out);
  EXPECT_TRUE(plan.at("dry_run").get<bool>());
  EXPECT_EQ(plan.at("forge_config").at("k"), 3);
  EXPECT_FALSE(fs::exists(dir / "res.json"));
  EXPECT_EQ(entry_count(dir), before + 2);  // only the captured stdout/stderr
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto dir = test::temp_dir("cli_config");
  EXPECT_EQ(cli("forge" + fixture_inputs() + " --target x --k 40", dir).code, 2);
  EXPECT_EQ(cli("--set ga.populaton=5 forge" + fixture_inputs() + " --target x --k 2", dir).code, 2);
  EXPECT_EQ(cli("forge" + fixture_inputs() + " --target x --k 2 --optimizer adam", dir).code, 2);
  const auto r = cli("forge" + fixture_inputs() + " --k 2", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.err.substr(0, r.err.find('\n'))).at("event"), "config_error");
}

TEST(Cli, DataErrorsExitThree) {
  const auto dir = test::temp_dir("cli_data");
  auto r = cli("forge --vocab " + (kData / "vocab.json").string() + " --encoder " + (dir / "none.json").string() +
                   " --concept " + (kData / "violence.concept").string() + " --target x --k 2",
               dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(json::parse(r.err.substr(0, r.err.find('\n'))).at("event"), "data_error");
  {
    std::ofstream f(dir / "broken.concept");
    f << "not a concept";
  }
  r = cli("forge --vocab " + (kData / "vocab.json").string() + " --encoder " + (kData / "encoder.json").string() +
              " --concept " + (dir / "broken.concept").string() + " --target x --k 2",
          dir);
  EXPECT_EQ(r.code, 3);
}

TEST(Cli, ForgeWithoutConceptRecoversDecodableTarget) {
  const auto dir = test::temp_dir("cli_forge");
  const auto r = cli("forge" + fixture_inputs() +
                         " --target \"a quiet street\" --eta 0 --k 3 --population 100 --generations 100 --out " +
                         (dir / "res.json").string(),
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json res = read_json_file(dir / "res.json");
  EXPECT_EQ(res.at("fitness").get<double>(), 0.0);
  EXPECT_EQ(res.at("prompt"), "a quiet street");
  EXPECT_EQ(res.at("resolved_config").at("eta"), 0.0);
}

TEST(Cli, ExtractMatchesFixtureConcept) {
  const auto dir = test::temp_dir("cli_extract");
  const auto r = cli("extract --pairs " + (kData / "violence.pairs.jsonl").string() + " --encoder " +
                         (kData / "encoder.json").string() + " --vocab " + (kData / "vocab.json").string() +
                         " --k-slot 8 --out " + (dir / "c.concept").string(),
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto params = load_encoder(kData / "encoder.json");
  const auto got = load_concept(dir / "c.concept", params);
  const auto want = load_concept(kData / "violence.concept", params);
  EXPECT_EQ(got.data, want.data);
  EXPECT_EQ(got.n_used, 30);
  EXPECT_EQ(got.k_slot, 8);
}

TEST(Cli, UnionMatchesLibrary) {
  const auto dir = test::temp_dir("cli_union");
  ForgeConfig a, b;
  a.k = 4;
  a.eta = 2.0;
  b.k = 6;
  b.eta = 3.0;
  for (auto* c : {&a, &b}) c->ga = GaConfig{.population = 30, .generations = 10, .mutation_rate = 0.25,
                                            .crossover_rate = 0.5, .elite_count = 3, .tournament_size = 3};
  write_file_atomic(dir / "u.json", json{{"configs", {json(a), json(b)}}, {"base_seed", 9}}.dump());
  const auto r = cli("union --configs " + (dir / "u.json").string() + fixture_inputs() +
                         " --target \"a quiet street\"",
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json doc = json::parse(r.out);

  const auto params = load_encoder(kData / "encoder.json");
  const auto vocab = Vocabulary::load(kData / "vocab.json");
  const auto cv = load_concept(kData / "violence.concept", params);
  const std::vector<ForgeConfig> cfgs = {a, b};
  const auto want = forge_union(params, vocab, TextPrompt("a quiet street"), cv, cfgs, 9);
  ASSERT_EQ(doc.at("results").size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(doc.at("results").at(i).at("token_ids"), forge_result_to_json(want[i]).at("token_ids"));
    EXPECT_EQ(doc.at("results").at(i).at("fitness").get<double>(), want[i].best_fitness);
  }
}

TEST(Cli, JudgeBlocksBlacklistAndReportsScores) {
  const auto dir = test::temp_dir("cli_judge");
  {
    std::ofstream f(dir / "p.txt");
    f << "# prompts\na quiet street\nblood knife\n";
  }
  const auto r = cli("judge --oracle " + (kData / "oracle.json").string() + " --encoder " +
                         (kData / "encoder.json").string() + " --vocab " + (kData / "vocab.json").string() +
                         " --k-slot 8 --prompt-file " + (dir / "p.txt").string(),
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json doc = json::parse(r.out);
  ASSERT_EQ(doc.at("verdicts").size(), 2u);
  EXPECT_FALSE(doc.at("verdicts").at(0).at("blocked_by_input_filter").get<bool>());
  EXPECT_TRUE(doc.at("verdicts").at(1).at("blocked_by_input_filter").get<bool>());
  EXPECT_EQ(doc.at("summary").at("n_prompts"), 2);
}

TEST(Cli, SimulateAndVerify) {
  const auto dir = test::temp_dir("cli_sim");
  auto r = cli("simulate --scenario " + (kData / "scenario.json").string(), dir);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json::parse(r.out).at("c_tilde").size(), 2u);
  r = cli("verify", dir);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(json::parse(r.out).at("passed").get<bool>());
}

TEST(Cli, CampaignReproducesGoldenReport) {
  const auto dir = test::temp_dir("cli_campaign");
  const auto r = cli("--config " + (kData / "campaign.json").string() + " campaign --out " + (dir / "run").string(),
                     dir);
  ASSERT_EQ(r.code, 0) << r.err;
  const json got = strip_volatile(read_json_file(dir / "run" / "report.json"));
  const json want = strip_volatile(read_json_file(fs::path(CFORGE_SOURCE_DIR) / "tests" / "golden" / "report.json"));
  EXPECT_EQ(got.dump(), want.dump());
  EXPECT_TRUE(fs::exists(dir / "run" / "summary.csv"));
}

}  // namespace
}  // namespace cforge
