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

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. Usage: pdarts_acceptance <cli-binary> [criteria...]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "pdarts/pdarts.hpp"
#include "test_nets.hpp"
#include "test_util.hpp"

using namespace pdarts;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kSoftmaxTol = 1e-6;
constexpr double kForcedAlphaRelTol = 1e-4;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradAbsFloor = 1e-3;  // relative error is taken against max(|fd|, floor)
constexpr double kFdStep = 1e-5;
constexpr double kOracleTol = 1e-8;
constexpr double kScaleTol = 1e-12;
constexpr double kAdasTol = 1e-12;
constexpr double kDeskBudgetSec = 30 * 60;

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Check {
  Outcome& o;
  void operator()(bool ok, const std::string& what) {
    if (!ok && o.pass) o.detail = what;
    o.pass = o.pass && ok;
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1 ------------------------------------------------------------------------

Outcome mixed_edges() {
  Outcome o;
  Check check{o};
  std::mt19937_64 g(5);
  std::normal_distribution<double> d(0, 3);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<float> a(kNumOps);
    for (auto& v : a) v = static_cast<float>(d(g));
    const auto w = ops::softmax(a.data(), kNumOps);
    double s = 0;
    for (float v : w) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  check(worst <= kSoftmaxTol, fmt("softmax sum off by %.3g", worst));

  double worst_rel = 0;
  const std::vector<OpKind> all(kAllOps.begin(), kAllOps.end());
  for (auto kind : {CellKind::normal, CellKind::reduction}) {
    ParamStore<double> store;
    Rng rng(21);
    Builder<double> b(store, rng);
    SearchCell<double> cell(b, "cell", CellSpec{2, kind, 4}, 4, 4, false, all);
    const int E = num_edges(2);
    auto p0 = testutil::random_var({2, 4, 8, 8}, 51), p1 = testutil::random_var({2, 4, 8, 8}, 52);
    for (int k = 0; k < kNumOps; ++k) {
      std::vector<double> a(E * kNumOps, -20.0);
      for (int e = 0; e < E; ++e) a[e * kNumOps + k] = 20.0;
      auto alpha = Variable<double>::from({E, kNumOps}, a);
      auto mixed = cell.forward_nodes(p0, p1, alpha, ForwardContext{});
      auto discrete = cell.forward_single(p0, p1, std::vector<std::size_t>(E, k), ForwardContext{});
      if (kAllOps[k] == OpKind::zero) {
        check(testutil::max_abs_diff(mixed.values(), discrete.values()) < kForcedAlphaRelTol, "zero op limit");
      } else {
        const double r = testutil::rel_err(mixed.values(), discrete.values());
        worst_rel = std::max(worst_rel, r);
        check(r <= kForcedAlphaRelTol, std::string("forced alpha ") + std::string(op_name(kAllOps[k])));
      }
    }
  }
  if (o.pass) o.detail = fmt("max |sum-1| %.2e", worst) + fmt(", forced-alpha rel %.2e", worst_rel);
  return o;
}

// 2 ------------------------------------------------------------------------

Outcome gradient_check() {
  Outcome o;
  Check check{o};
  testnets::OneCellNet<double> net(3, 2, {OpKind::sep_conv_3x3, OpKind::skip_connect}, 3, 5);
  auto& a = net.alpha().of(CellKind::normal);
  const auto noise = testutil::randn(a.size(), 77, 0.5);
  for (std::size_t i = 0; i < a.size(); ++i) a.values()[i] = noise[i];
  const auto batch = testnets::random_batch<double>(4, 3, 6, 6, 3, 8);
  alpha_gradient<double>(net, batch);
  const auto grad = a.grad();
  auto loss = [&] {
    NoGradGuard ng;
    return batch_loss(net.forward(batch.images, ForwardContext{true, false}), batch).values()[0];
  };
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x0 = a.values()[i];
    a.values()[i] = x0 + kFdStep;
    const double lp = loss();
    a.values()[i] = x0 - kFdStep;
    const double lm = loss();
    a.values()[i] = x0;
    const double fd = (lp - lm) / (2 * kFdStep);
    const double r = std::abs(grad[i] - fd) / std::max(std::abs(fd), kGradAbsFloor);
    worst = std::max(worst, r);
  }
  check(worst <= kGradRelTol, fmt("worst relative error %.3g", worst));
  if (o.pass) o.detail = std::to_string(a.size()) + " entries, worst rel " + fmt("%.2e", worst);
  return o;
}

// 3 ------------------------------------------------------------------------

Outcome stable_rank_suite() {
  Outcome o;
  Check check{o};
  for (int d : {1, 4, 9}) {
    auto w = Variable<double>::zeros({d, d, 1, 1});
    for (int i = 0; i < d; ++i) w.values()[i * d + i] = 1.0;
    check(stable_rank(w) == 1.0, "identity unfolding");
  }
  {
    const auto u = testutil::randn(4, 5), v = testutil::randn(18, 6);
    auto w = Variable<double>::zeros({4, 2, 3, 3});
    for (int r = 0; r < 4; ++r)
      for (int j = 0; j < 18; ++j) w.values()[r * 18 + j] = u[r] * v[j];
    check(stable_rank(w) == 0.25, "rank one, d = 4");
  }
  double worst_scale = 0, worst_oracle = 0;
  std::mt19937_64 g(7);
  for (int t = 0; t < 100; ++t) {
    const int out = 1 + static_cast<int>(g() % 12), in = 1 + static_cast<int>(g() % 6), k = (g() % 2) ? 3 : 1;
    auto w = testutil::random_var({out, in, k, k}, 1000 + t);
    const double s = stable_rank(w);
    check(s >= 0.0 && s <= 1.0, "range");
    for (double c : {1e-3, 1.0, 1e3}) {
      auto scaled = w.clone();
      for (auto& v : scaled.values()) v *= c;
      worst_scale = std::max(worst_scale, std::abs(stable_rank(scaled) - s));
    }
    worst_oracle = std::max(worst_oracle, std::abs(s - oracle::stable_rank_lapack(w.values(), out, in, k, k, 0.01)));
  }
  check(worst_scale <= kScaleTol, fmt("scale invariance off by %.3g", worst_scale));
  check(worst_oracle <= kOracleTol, fmt("oracle disagreement %.3g", worst_oracle));
  if (o.pass) o.detail = fmt("oracle |diff| %.2e", worst_oracle) + fmt(", scale |diff| %.2e", worst_scale);
  return o;
}

// 4 ------------------------------------------------------------------------

Outcome adas_recurrence() {
  Outcome o;
  Check check{o};
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t L = 1 + g() % 16;
    std::vector<double> S0(L);
    for (auto& v : S0) v = u(g);
    std::vector<std::vector<double>> S(10, std::vector<double>(L));
    for (auto& row : S)
      for (auto& v : row) v = u(g);
    const auto want = oracle::adas_replay(0.175, 0.98, 1.0, 1e-4, S0, S);
    auto s = adas_init(L, 0.175, 0.98, 1.0, 1e-4);
    adas_prime(s, S0);
    auto z = adas_init(L, 0.175, 0.98, 0.0, 1e-4);
    double geo = 0.175;
    for (int e = 0; e < 10; ++e) {
      s = adas_update(std::move(s), S[e]);
      for (std::size_t k = 0; k < L; ++k) worst = std::max(worst, std::abs(s.eta[k] - want[e][k]));
      z = adas_update(std::move(z), S[e]);
      geo = std::max(0.98 * geo, 1e-4);
      for (double v : z.eta) check(v == geo, "zeta = 0 geometric decay");
    }
  }
  // Long horizon: the floor engages.
  auto z = adas_init(3, 0.175, 0.98, 0.0, 1e-4);
  double geo = 0.175;
  for (int e = 0; e < 400; ++e) {
    z = adas_update(std::move(z), std::vector<double>{0.1, 0.5, 0.9});
    geo = std::max(0.98 * geo, 1e-4);
  }
  check(z.eta[0] == 1e-4 && geo == 1e-4, "floor");
  check(worst <= kAdasTol, fmt("replay off by %.3g", worst));
  const auto d = adas_init(1, 0.175);
  check(d.beta == 0.98 && d.eta[0] == 0.175, "defaults");
  if (o.pass) o.detail = fmt("replay |diff| %.2e", worst);
  return o;
}

// 5 ------------------------------------------------------------------------

Outcome discretization() {
  Outcome o;
  Check check{o};
  for (int t = 0; t < 200; ++t) {
    const auto a = oracle::random_alpha(3, 100 + 7 * t);
    const auto g = discretize(a);
    try {
      g.validate();
    } catch (const std::exception& e) {
      check(false, e.what());
    }
    for (auto kind : {CellKind::normal, CellKind::reduction})
      check(g.cell(kind) == oracle::brute_force_cell(a, kind), "brute force trial " + std::to_string(t));
    for (const auto* c : {&g.normal, &g.reduce}) {
      check(c->size() == 3, "node count");
      for (std::size_t j = 0; j < c->size(); ++j) {
        const auto& in = (*c)[j];
        check(in[0].from != in[1].from, "two distinct inputs");
        for (const auto& e : in) check(e.op != OpKind::zero && e.from < static_cast<int>(j) + 2, "invariants");
      }
    }
  }
  if (o.pass) o.detail = "200/200 match brute force";
  return o;
}

// 6 ------------------------------------------------------------------------

Outcome complexity_oracle() {
  Outcome o;
  Check check{o};
  for (int t = 0; t < 20; ++t) {
    const int nodes = 2 + t % 4, cells = 3 + t % 5, C = 4 + 2 * (t % 3);
    const auto g = testnets::random_genotype(nodes, 100 + t, cells, C);
    EvalNetwork<float> net(g, cells, C, 10, LabelMode::single_label, false, t);
    ComplexityReport prev;
    for (int res : {8, 16, 32, 64}) {
      const auto rep = net.complexity(res, res);
      const auto want = oracle::symbolic_cost(g, cells, C, 10, res, res);
      check(rep.params == want.params && rep.macs == want.macs, "genotype " + std::to_string(t));
      std::uint64_t p = 0, m = 0;
      for (const auto& l : rep.per_layer) {
        p += l.params;
        m += l.macs;
      }
      check(p == rep.params && m == rep.macs, "graph walk sum");
      check(count_params(net) == rep.params, "parameter count");
      if (res > 8) {
        auto trunk = [](const ComplexityReport& r) {
          std::uint64_t s = 0;
          for (const auto& l : r.per_layer)
            if (l.layer_id != "classifier") s += l.macs;
          return s;
        };
        check(trunk(rep) == 4 * trunk(prev), "MAC x4 under doubling");
        check(rep.params == prev.params, "params resolution-independent");
      }
      prev = rep;
    }
  }
  if (o.pass) o.detail = "20 genotypes x 4 resolutions exact";
  return o;
}

// 7, 8 ---------------------------------------------------------------------

struct DeskRun {
  std::string name;
  double skip = 0;
  int layers_above = 0;
  double gap = 0;  // val error - train error, percent
  double train_acc = 0, val_acc = 0;
};

const char* kDeskConfig = R"(
[dataset]
kind = synthetic
num_classes = 4
resolution = 64
n_train = 1000
[search]
epochs = 12
init_channels = 4
cells = 2
nodes = 2
)";

std::map<std::string, std::vector<DeskRun>> desk_runs;
double desk_seconds = 0;

void run_desk_searches() {
  if (!desk_runs.empty()) return;
  const auto t0 = std::chrono::steady_clock::now();
  const auto base = parse_config_text(kDeskConfig);
  const auto data = load_dataset(base.dataset);
  const auto [train, val] = search_data(data, base.dataset);
  const auto norm = Normalization::from(train);
  const auto macro = macro_spec(train);
  struct Arm {
    std::string name;
    OptimizerKind opt;
    double lr0;
  };
  for (const Arm& arm : {Arm{"sgd@0.025", OptimizerKind::sgd, 0.025}, Arm{"sgd@0.175", OptimizerKind::sgd, 0.175},
                         Arm{"adas@0.175", OptimizerKind::adas, 0.175}}) {
    for (std::uint64_t seed : {0, 1, 2}) {
      SearchConfig sc = base.search;
      sc.optimizer = arm.opt;
      sc.lr0 = arm.lr0;
      const auto res = run_search<float>(sc, macro, train, val, norm, augment_policy(base.dataset), seed, base.hash);
      const auto& last = res.history.back();
      DeskRun r;
      r.name = arm.name;
      r.skip = skip_fraction(res.genotype);
      for (double s : last.stable_rank) r.layers_above += s > 0.1;
      r.train_acc = last.metrics.train_acc;
      r.val_acc = last.metrics.val_acc;
      r.gap = (100.0 - r.val_acc) - (100.0 - r.train_acc);
      std::cout << "  " << arm.name << " seed " << seed << ": skip " << fmt("%.3f", r.skip) << ", S>0.1 "
                << r.layers_above << "/" << last.stable_rank.size() << ", train " << fmt("%.1f", r.train_acc)
                << ", val " << fmt("%.1f", r.val_acc) << std::endl;
      desk_runs[arm.name].push_back(r);
    }
  }
  desk_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean_of(const std::vector<DeskRun>& v, double DeskRun::*f) {
  double s = 0;
  for (const auto& r : v) s += r.*f;
  return s / v.size();
}

Outcome skip_collapse() {
  run_desk_searches();
  Outcome o;
  Check check{o};
  const double s_lo = mean_of(desk_runs["sgd@0.025"], &DeskRun::skip);
  const double s_hi = mean_of(desk_runs["sgd@0.175"], &DeskRun::skip);
  int n_lo = 0, n_hi = 0;
  for (const auto& r : desk_runs["sgd@0.025"]) n_lo += r.layers_above;
  for (const auto& r : desk_runs["sgd@0.175"]) n_hi += r.layers_above;
  std::ostringstream d;
  d << "mean skip " << fmt("%.3f", s_lo) << " (lr 0.025) vs " << fmt("%.3f", s_hi) << " (lr 0.175); layers S>0.1 "
    << n_hi << " (lr 0.175) vs " << n_lo << " (lr 0.025); " << fmt("%.0f s", desk_seconds);
  check(s_lo > s_hi, "");
  check(n_hi > n_lo, "");
  check(desk_seconds < kDeskBudgetSec, "");
  o.detail = d.str();
  return o;
}

Outcome generalization_gap() {
  run_desk_searches();
  Outcome o;
  const double g_adas = mean_of(desk_runs["adas@0.175"], &DeskRun::gap);
  const double g_sgd = mean_of(desk_runs["sgd@0.175"], &DeskRun::gap);
  o.pass = g_adas < g_sgd;
  o.detail = "mean gap " + fmt("%.2f", g_adas) + " (adas) vs " + fmt("%.2f", g_sgd) + " (sgd@0.175)";
  return o;
}

// 9 ------------------------------------------------------------------------

std::string cli_binary;

Outcome pipeline_determinism() {
  Outcome o;
  Check check{o};
  const fs::path root = fs::temp_directory_path() / "pdarts_accept_det";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "sweep.ini") << R"(
[dataset]
resolution = 16
num_classes = 2
n_train = 32
n_test = 16
[search]
epochs = 2
init_channels = 4
batch_size = 8
[eval]
epochs = 2
quick_epochs = 1
init_channels = 4
cells = 2
batch_size = 8
[sweep]
cells = 2
nodes = 2
optimizers = sgd
final_runs = 2
)";
  for (const char* run : {"a", "b"}) {
    const std::string cmd = "\"" + cli_binary + "\" sweep --config \"" + (root / "sweep.ini").string() +
                            "\" --seed 3 --out-dir \"" + (root / run).string() + "\" > \"" +
                            (root / (std::string(run) + ".log")).string() + "\" 2>&1";
    check(std::system(cmd.c_str()) == 0, std::string("sweep run ") + run + " failed");
  }
  std::size_t compared = 0;
  if (o.pass) {
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
      if (!e.is_regular_file()) continue;
      const auto name = e.path().filename().string();
      const bool wanted = name.find("genotype") != std::string::npos || name.find("metrics") != std::string::npos ||
                          name == "results.csv";
      if (!wanted) continue;
      const auto other = root / "b" / fs::relative(e.path(), root / "a");
      check(fs::exists(other) && read_text(e.path()) == read_text(other), "differs: " + name);
      ++compared;
    }
    check(compared >= 4, "too few artifacts");
  }
  if (o.pass) o.detail = std::to_string(compared) + " genotype/metrics files byte-identical";
  fs::remove_all(root);
  return o;
}

// 10 -----------------------------------------------------------------------

Outcome data_shapes() {
  Outcome o;
  Check check{o};
  const fs::path root = fs::temp_directory_path() / "pdarts_accept_data";
  fs::remove_all(root);
  fs::create_directories(root / "cifar");
  fs::create_directories(root / "patches");
  // Stand-in corpus in the public binary layout: 5 x 10000 train, 10000 test.
  std::vector<char> record(3073);
  Rng rng(1);
  auto write_batch = [&](const fs::path& p) {
    std::ofstream f(p, std::ios::binary);
    for (int i = 0; i < 10000; ++i) {
      record[0] = static_cast<char>(rng.below(10));
      for (std::size_t k = 1; k < record.size(); ++k) record[k] = static_cast<char>(rng.below(256));
      f.write(record.data(), static_cast<std::streamsize>(record.size()));
    }
  };
  for (int b = 1; b <= 5; ++b) write_batch(root / "cifar" / ("data_batch_" + std::to_string(b) + ".bin"));
  write_batch(root / "cifar" / "test_batch.bin");
  const auto c = load_cifar_format(root / "cifar");
  check(c.train.size() == 50000 && c.test.size() == 10000, "tiny-image split sizes");

  std::ofstream m(root / "patches" / "labels.csv");
  m << "filename";
  for (int k = 0; k < 33; ++k) m << ",class_" << k;
  m << "\n";
  for (int i = 0; i < 40; ++i) {
    RgbImage img{8, 8, std::vector<std::uint8_t>(8 * 8 * 3, static_cast<std::uint8_t>(i))};
    const std::string f = "patch_" + std::to_string(i) + ".png";
    write_png(root / "patches" / f, img);
    m << f;
    for (int k = 0; k < 33; ++k) m << "," << ((k == i % 33 || rng.bernoulli(0.1)) ? 1 : 0);
    m << "\n";
  }
  m.close();
  const auto p = load_patch_dataset(root / "patches", PatchSpec{});
  check(p.train.num_classes == 33, "patch classes");
  o.detail = std::to_string(c.train.size()) + "/" + std::to_string(c.test.size()) + ", " +
             std::to_string(p.train.num_classes) + " classes";
  fs::remove_all(root);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  if (argc < 2) {
    std::cerr << "usage: pdarts_acceptance <cli-binary> [criteria...]\n";
    return 2;
  }
  cli_binary = argv[1];
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, mixed_edges},       {2, gradient_check},     {3, stable_rank_suite}, {4, adas_recurrence},
      {5, discretization},    {6, complexity_oracle},  {7, skip_collapse},     {8, generalization_gap},
      {9, pipeline_determinism}, {10, data_shapes}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !r.pass;
    std::cout << "criterion " << id << ": " << (r.pass ? "PASS" : "FAIL") << " (" << r.detail << "; "
              << fmt("%.1f s", sec) << ")" << std::endl;
  }
  return failed ? 1 : 0;
}
