// Copyright 2026 The pdarts Authors.
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

#include <fstream>
#include <sstream>

#include "pdarts/config.hpp"
#include "pdarts/plot.hpp"
#include "pdarts/sweep.hpp"
#include "test_util.hpp"

using namespace pdarts;
using testutil::TempDir;
namespace fs = std::filesystem;

namespace {

std::string config_error(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// Small enough that a 1x1 sweep finishes in a few seconds.
const char* kTinySweep = R"(
[dataset]
resolution = 16
num_classes = 2
n_train = 16
n_test = 8
[search]
epochs = 1
init_channels = 2
batch_size = 8
[eval]
epochs = 1
quick_epochs = 1
init_channels = 2
cells = 2
batch_size = 8
auxiliary = false
[sweep]
cells = 2
nodes = 2
optimizers = sgd
final_runs = 2
)";

}  // namespace

TEST(Config, EmptySearchBlockAppliesDefaults) {
  const auto c = parse_config_text("[search]\n");
  EXPECT_EQ(c.search.epochs, 50);
  EXPECT_EQ(c.search.batch_size, 64);
  EXPECT_EQ(c.search.init_channels, 16);
  EXPECT_EQ(c.search.optimizer, OptimizerKind::sgd);
  EXPECT_DOUBLE_EQ(c.search.lr0, 0.025);
  EXPECT_DOUBLE_EQ(c.search.adas_beta, 0.98);
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{0});
}

TEST(Config, PatchDatasetsUseSmallerBatchAndLargerRate) {
  const auto c = parse_config_text("[dataset]\nkind = patch\npath = /tmp/x\n");
  EXPECT_EQ(c.search.batch_size, 32);
  EXPECT_DOUBLE_EQ(c.search.lr0, 0.175);
  EXPECT_EQ(c.dataset.augment.kind, AugmentKind::flip_affine);
  EXPECT_EQ(c.dataset.search_resolution, 64);
}

TEST(Config, AdasWithoutRateGetsAdasDefault) {
  EXPECT_DOUBLE_EQ(parse_config_text("[search]\noptimizer = adas\n").search.lr0, 0.175);
  EXPECT_DOUBLE_EQ(parse_config_text("[search]\noptimizer = adas\nlr0 = 0.03\n").search.lr0, 0.03);
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_NE(config_error("[search]\noptimzer = adas\n").find("search.optimzer"), std::string::npos);
  EXPECT_NE(config_error("[search]\nepochs = many\n").find("search.epochs"), std::string::npos);
  EXPECT_NE(config_error("[dataset]\nkind = cifar\n").find("dataset.path"), std::string::npos);
  EXPECT_NE(config_error("[search]\noptimizer = rmsprop\n").find("search.optimizer"), std::string::npos);
  EXPECT_NE(config_error("[serach]\n").find("serach"), std::string::npos);
}

TEST(Config, HashCoversResultsButNotLocations) {
  const auto a = parse_config_text("[search]\nepochs = 3\n");
  EXPECT_EQ(a.hash, parse_config_text("[search]\nepochs = 3\n[run]\nout_dir = elsewhere\n").hash);
  EXPECT_EQ(a.hash, parse_config_text("# comment\n[search]\nepochs = 3\n").hash);
  EXPECT_NE(a.hash, parse_config_text("[search]\nepochs = 4\n").hash);
  EXPECT_EQ(a.hash.size(), 16u);
}

TEST(Config, SweepCellsReresolveConditionalDefaults) {
  const auto base = parse_config_text("");
  const auto adas = grid_cell_config(base, 4, 3, OptimizerKind::adas);
  EXPECT_DOUBLE_EQ(adas.search.lr0, 0.175);
  EXPECT_EQ(adas.search.nodes, 3);
  EXPECT_NE(adas.hash, grid_cell_config(base, 4, 3, OptimizerKind::sgd).hash);
}

// ---------------------------------------------------------------------------

TEST(Sweep, ResultsIgnoreTornTrailingLine) {
  TempDir t("torn");
  SweepRow r;
  r.cells = 4;
  r.nodes = 2;
  r.config_hash = "abc";
  r.acc_mean = 51.5;
  append_sweep_row(t.path / "results.csv", r);
  append_sweep_row(t.path / "results.csv", r);
  std::ofstream(t.path / "results.csv", std::ios::app) << "4,2,sgd,0,12.";
  const auto rows = read_sweep_results(t.path / "results.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[1].acc_mean, 51.5);
  EXPECT_EQ(rows[1].config_hash, "abc");
}

TEST(Sweep, SingleCellGridGivesOneRowAndReusesCache) {
  TempDir t("sweep1");
  const auto c = parse_config_text(kTinySweep);
  std::ostringstream log;
  const auto rows = orchestrate_sweep(c, t.path, log);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].status, "ok");
  EXPECT_FALSE(rows[0].cached);
  EXPECT_EQ(rows[0].cells, 2);
  EXPECT_GT(rows[0].params, 0u);
  const auto cell = grid_cell_config(c, 2, 2, OptimizerKind::sgd);
  EXPECT_EQ(rows[0].config_hash, cell.hash);
  EXPECT_TRUE(fs::exists(grid_cell_dir(t.path, cell) / "genotype.txt"));
  const std::string before = read_text(t.path / "results.csv");

  const auto again = orchestrate_sweep(c, t.path, log);
  ASSERT_EQ(again.size(), 1u);
  EXPECT_TRUE(again[0].cached);
  EXPECT_DOUBLE_EQ(again[0].acc_mean, rows[0].acc_mean);
  EXPECT_EQ(read_text(t.path / "results.csv"), before);
}

TEST(Sweep, FailingCellsAreRecordedAndTheSweepContinues) {
  TempDir t("sweepfail");
  // Resolution 6 halves to 3, which the second reduction cell rejects.
  auto c = parse_config_text(kTinySweep);
  c.sweep.nodes = {2, 3};
  c.dataset.height = c.dataset.width = 6;
  resolve(c);
  std::ostringstream log;
  const auto rows = orchestrate_sweep(c, t.path, log);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) EXPECT_EQ(r.status.rfind("failed:", 0), 0u) << r.status;
  EXPECT_EQ(read_sweep_results(t.path / "results.csv").size(), 2u);
  EXPECT_TRUE(fs::exists(grid_cell_dir(t.path, grid_cell_config(c, 2, 3, OptimizerKind::sgd)) / "error.json"));
}

TEST(Sweep, WorkerProcessesMatchSerialRun) {
  TempDir a("sweepser"), b("sweeppar");
  auto c = parse_config_text(kTinySweep);
  c.sweep.optimizers = {OptimizerKind::sgd, OptimizerKind::adas};
  std::ostringstream log;
  const auto serial = orchestrate_sweep(c, a.path, log);
  c.sweep.workers = 2;
  const auto parallel = orchestrate_sweep(c, b.path, log);
  ASSERT_EQ(serial.size(), 2u);
  ASSERT_EQ(parallel.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(sweep_row_line(serial[i]), sweep_row_line(parallel[i]));
}

TEST(Sweep, EmptyGridIsAConfigError) {
  auto c = parse_config_text("");
  c.sweep.nodes.clear();
  TempDir t("sweepempty");
  EXPECT_THROW(orchestrate_sweep(c, t.path), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Plot, StableRankFigureHasOneCurvePerLayer) {
  TempDir t("plotS");
  std::ofstream(t.path / "probes.csv") << "# config_hash=x seed=0\nepoch,a,b,c\n0,0.1,0.2,0.3\n1,0.2,0.3,0.4\n";
  std::ostringstream log;
  const auto rep = emit_plots(t.path, t.path / "out", log);
  ASSERT_TRUE(rep.figures.count("stable_rank"));
  EXPECT_EQ(rep.figures.at("stable_rank"), 3u);
  const auto img = read_png(t.path / "out" / "stable_rank.png");
  EXPECT_GT(img.width, 0);
  EXPECT_NE(log.str().find("metrics.csv"), std::string::npos);
}

TEST(Plot, EmptyResultsWarnAndSkipScatter) {
  TempDir t("plotE");
  std::ofstream(t.path / "results.csv") << kSweepHeader;
  std::ostringstream log;
  const auto rep = emit_plots(t.path, t.path / "out", log);
  EXPECT_FALSE(rep.figures.count("scatter"));
  EXPECT_FALSE(fs::exists(t.path / "out" / "scatter.png"));
  EXPECT_FALSE(rep.warnings.empty());
  EXPECT_NE(log.str().find("warning"), std::string::npos);
}

TEST(Plot, ScatterPointsReadBackAsResultValues) {
  TempDir t("plotR");
  std::vector<SweepRow> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[i].cells = 4 + i;
    rows[i].nodes = 2;
    rows[i].optimizer = i == 1 ? OptimizerKind::adas : OptimizerKind::sgd;
    rows[i].params = 1000u * (i + 1) + 7;
    rows[i].acc_mean = 60.25 + i;
    rows[i].config_hash = "h" + std::to_string(i);
    append_sweep_row(t.path / "results.csv", rows[i]);
  }
  std::ostringstream log;
  const auto rep = emit_plots(t.path, t.path / "out", log);
  ASSERT_TRUE(rep.figures.count("scatter"));
  const auto back = read_csv(t.path / "out" / "scatter.csv");
  ASSERT_EQ(back.rows.size(), 3u);
  for (const auto& r : rows) {
    bool found = false;
    for (const auto& b : back.rows)
      found |= b[0] == optimizer_name(r.optimizer) && std::stod(b[1]) == static_cast<double>(r.params) &&
               std::stod(b[2]) == r.acc_mean;
    EXPECT_TRUE(found) << r.params;
  }
}

TEST(Plot, AlphaAndErrorFigures) {
  TempDir t("plotA");
  std::ofstream(t.path / "alphas.csv") << "epoch,cell,edge,op,weight\n1,normal,0,skip_connect,0.5\n1,normal,0,"
                                           "max_pool_3x3,0.5\n2,normal,0,skip_connect,0.6\n2,normal,0,max_pool_3x3,0.4\n"
                                           "1,reduce,1,skip_connect,1\n";
  std::ofstream(t.path / "metrics.csv") << "epoch,train_loss,val_loss,train_acc,val_acc,lr_mean\n1,1,1,50,40,0.1\n";
  std::ostringstream log;
  const auto rep = emit_plots(t.path, t.path / "out", log);
  EXPECT_EQ(rep.figures.at("alpha_normal_edge0"), 2u);
  EXPECT_EQ(rep.figures.at("alpha_reduce_edge1"), 1u);
  EXPECT_EQ(rep.figures.at("error"), 2u);
  const auto err = read_csv(t.path / "out" / "error.csv");
  EXPECT_DOUBLE_EQ(std::stod(err.rows[0][2]), 50.0);
  EXPECT_DOUBLE_EQ(std::stod(err.rows[1][2]), 60.0);
}

TEST(Plot, MissingInputDirectoryIsAnIoError) {
  EXPECT_THROW(emit_plots("/nonexistent/pdarts", "/tmp/pdarts_plot_none"), IoError);
}
