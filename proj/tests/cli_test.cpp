// Copyright 2026 The HetSeg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include "cli_fixture.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;

const std::string kCli = HETSEG_CLI;

clifix::RunResult run(const std::string& args) { return clifix::run(kCli, args); }

TEST(Cli, HelpForEveryCommandExitsZero) {
  for (const char* cmd :
       {"", "taxonomy validate", "raster info", "convert probs", "gradcheck",
        "pseudo gen", "pseudo refine", "eval semseg", "eval partpq", "eval impact",
        "uid encode", "uid decode", "uid validate", "select fit", "select rank",
        "select score", "select merge", "toy run"}) {
    const auto r = run(std::string(cmd) + " --help");
    EXPECT_EQ(r.exit_code, 0) << cmd;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << cmd;
  }
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").exit_code, 1);
  EXPECT_EQ(run("frobnicate").exit_code, 1);
  EXPECT_EQ(run("uid decode").exit_code, 1);
  EXPECT_EQ(run("eval impact --none 1").exit_code, 1);
  EXPECT_EQ(run("toy run").exit_code, 1);
  EXPECT_EQ(run("pseudo gen --annots a --labels 3 --size 12 --out b").exit_code, 1);
}

TEST(Cli, EnvelopeShape) {
  const auto r = run("uid decode 2401002");
  ASSERT_EQ(r.exit_code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("command"), "uid decode");
  EXPECT_EQ(j.at("arguments"), json::array({"uid", "decode", "2401002"}));
  EXPECT_TRUE(j.at("wall_time").is_number());
  EXPECT_EQ(j.at("warnings"), json::array());
  EXPECT_EQ(j.at("result"), json({{"semantic", 24}, {"instance", 10}, {"part", 2}}));
}

TEST(Cli, QuietPrintsOnlyTheResult) {
  auto r = run("--quiet uid encode 24 10 2");
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(json::parse(r.out), json(2401002));
  r = run("uid decode 7 --quiet");
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(json::parse(r.out),
            json({{"semantic", 7}, {"instance", nullptr}, {"part", nullptr}}));
}

TEST(Cli, InvalidUidIsValidationError) {
  EXPECT_EQ(run("uid decode 500").exit_code, 2);
  EXPECT_EQ(run("uid decode 10000000").exit_code, 2);
}

TEST(Cli, ImpactValue) {
  const auto r = run("--quiet eval impact --none 50 --low 45 --high 40");
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_DOUBLE_EQ(json::parse(r.out).at("impact").get<double>(), -20.0);
}

TEST(Cli, TaxonomyPartitionViolationExitsTwo) {
  const auto dir = testutil::scratch_dir("cli_tax");
  testutil::write_text(dir / "ok.json", clifix::kTaxonomy);
  EXPECT_EQ(run("taxonomy validate " + (dir / "ok.json").string()).exit_code, 0);
  // Atom 4 is owned by no label of "fine".
  testutil::write_text(dir / "bad.json", R"({
    "atoms": ["void", "a", "b", "c", "d"],
    "datasets": {"fine": {"labels": ["void", "a", "b", "c"], "groups": [[0], [1], [2], [3]]}}
  })");
  const auto r = run("--quiet taxonomy validate " + (dir / "bad.json").string());
  EXPECT_EQ(r.exit_code, 2);
  const auto j = json::parse(r.out);
  EXPECT_FALSE(j.at("violations").empty());
}

TEST(Cli, MissingFileExitsThree) {
  EXPECT_EQ(run("taxonomy validate /nonexistent/tax.json").exit_code, 3);
  EXPECT_EQ(run("raster info /nonexistent/a.pgm").exit_code, 3);
  EXPECT_EQ(run("select rank --model /nonexistent/m.json --features /nonexistent/f.csv "
                "--out /tmp/x.csv")
                .exit_code,
            3);
}

TEST(Cli, GradcheckPasses) {
  const auto r = run("--quiet gradcheck --trials 100");
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_LT(json::parse(r.out).at("max_deviation").get<double>(), 1e-6);
}

TEST(Cli, BadThreadsEnvIsUsageError) {
  EXPECT_EQ(clifix::run("HETSEG_THREADS=abc " + kCli, "uid decode 7").exit_code, 1);
  EXPECT_EQ(clifix::run("HETSEG_THREADS=2 " + kCli, "uid decode 7").exit_code, 0);
}

TEST(Cli, EveryCommandIsDeterministic) {
  const auto dir = testutil::scratch_dir("cli_det");
  EXPECT_EQ(clifix::check_determinism(kCli, dir), "");
}

TEST(Cli, WorkspaceResults) {
  const auto dir = testutil::scratch_dir("cli_ws");
  const auto invocations = clifix::build_workspace(dir);
  std::map<std::string, json> results;
  for (const auto& inv : invocations) {
    const auto r = run("--quiet " + inv.args);
    ASSERT_EQ(r.exit_code, 0) << inv.args;
    results[inv.args.substr(0, inv.args.find(' ', inv.args.find(' ') + 1))] =
        json::parse(r.out);
  }
  const auto& pq = results.at("eval partpq");
  EXPECT_GE(pq.at("pq").get<double>(), 0.0);
  EXPECT_LE(pq.at("part_pq").get<double>(), pq.at("pq").get<double>());
  const auto& sem = results.at("eval semseg");
  EXPECT_GT(sem.at("miou").get<double>(), 0.5);
  const auto& toy = results.at("toy run");
  EXPECT_GE(toy.at("atom_accuracy").get<double>(), 0.95);
  const auto conv = hetseg::read_prb(dir / "conv.prb");
  EXPECT_EQ(conv.raster.channels, 4u);
}

}  // namespace
