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

#pragma once

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <iostream>
#include <map>
#include <set>

#include "pdarts/pipeline.hpp"

namespace pdarts {

struct SweepRow {
  int cells = 0;
  int nodes = 0;
  OptimizerKind optimizer = OptimizerKind::sgd;
  std::uint64_t seed = 0;
  double acc_mean = 0.0;
  double acc_std = 0.0;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  double skip_fraction = 0.0;
  std::string status = "ok";
  std::string config_hash;
  bool cached = false;
};

inline const char* kSweepHeader =
    "cells,nodes,optimizer,seed,acc_mean,acc_std,params,macs,skip_fraction,status,config_hash\n";

inline std::string sweep_row_line(const SweepRow& r) {
  return std::to_string(r.cells) + "," + std::to_string(r.nodes) + "," + std::string(optimizer_name(r.optimizer)) +
         "," + std::to_string(r.seed) + "," + num(r.acc_mean) + "," + num(r.acc_std) + "," +
         std::to_string(r.params) + "," + std::to_string(r.macs) + "," + num(r.skip_fraction) + "," + r.status +
         "," + r.config_hash + "\n";
}

/// Complete rows of a results table; a torn final line is ignored.
inline std::vector<SweepRow> read_sweep_results(const fs::path& path) {
  std::vector<SweepRow> rows;
  if (!fs::exists(path)) return rows;
  const std::string text = read_text(path);
  std::size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (first) {
      first = false;
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 11) continue;
    try {
      SweepRow r;
      r.cells = std::stoi(f[0]);
      r.nodes = std::stoi(f[1]);
      r.optimizer = parse_optimizer(f[2]);
      r.seed = std::stoull(f[3]);
      r.acc_mean = std::stod(f[4]);
      r.acc_std = std::stod(f[5]);
      r.params = std::stoull(f[6]);
      r.macs = std::stoull(f[7]);
      r.skip_fraction = std::stod(f[8]);
      r.status = f[9];
      r.config_hash = f[10];
      rows.push_back(r);
    } catch (const std::exception&) {
    }
  }
  return rows;
}

/// Single appender: each row goes out in one write and is synced before
/// the call returns, so completed rows survive a crash.
inline void append_sweep_row(const fs::path& path, const SweepRow& r) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw IoError("cannot append to " + path.string());
  const std::string line = (fresh ? std::string(kSweepHeader) : std::string()) + sweep_row_line(r);
  const ssize_t n = ::write(fd, line.data(), line.size());
  ::fsync(fd);
  ::close(fd);
  if (n != static_cast<ssize_t>(line.size())) throw IoError("short write to " + path.string());
}

/// The run config of one grid cell; conditional defaults are re-resolved
/// so the hash reflects the cell.
inline RunConfig grid_cell_config(const RunConfig& base, int cells, int nodes, OptimizerKind opt) {
  RunConfig c = base;
  c.mode = "sweep";
  c.search.cells = cells;
  c.search.nodes = nodes;
  c.search.optimizer = opt;
  resolve(c);
  return c;
}

inline fs::path grid_cell_dir(const fs::path& out, const RunConfig& c) {
  return out / "cells" /
         ("c" + std::to_string(c.search.cells) + "_n" + std::to_string(c.search.nodes) + "_" +
          std::string(optimizer_name(c.search.optimizer)) + "_" + c.hash);
}

/// search -> discretize -> quick evaluation per seed; the best seed's
/// genotype then gets `final_runs` full evaluations.
inline SweepRow run_grid_cell(const RunConfig& c, const fs::path& dir, const LoadedData& data) {
  fs::create_directories(dir);
  SweepRow row;
  row.cells = c.search.cells;
  row.nodes = c.search.nodes;
  row.optimizer = c.search.optimizer;
  row.config_hash = c.hash;
  double best = -1.0;
  Genotype best_g;
  std::ostringstream quick;
  quick << provenance_line(c.hash, c.seeds.front()) << "seed,quick_acc,skip_fraction\n";
  for (std::uint64_t seed : c.seeds) {
    const fs::path sdir = dir / ("search_seed" + std::to_string(seed));
    const auto res = search_run(c, seed, sdir, &data);
    const auto q = evaluate_run(c, res.genotype, seed, sdir / "quick_eval", c.eval.quick_epochs, &data);
    quick << seed << "," << num(q.accuracy) << "," << num(skip_fraction(res.genotype)) << "\n";
    if (q.accuracy > best) {
      best = q.accuracy;
      row.seed = seed;
      best_g = res.genotype;
    }
  }
  write_text(dir / "quick.csv", quick.str());
  std::vector<double> accs;
  for (int k = 0; k < c.sweep.final_runs; ++k) {
    const std::uint64_t s = derive_seed(row.seed, 700 + static_cast<std::uint64_t>(k));
    const auto f = evaluate_run(c, best_g, s, dir / ("final_" + std::to_string(k)), c.eval.epochs, &data);
    accs.push_back(f.accuracy);
    row.params = f.params;
    row.macs = f.macs;
  }
  double m = 0, v = 0;
  for (double a : accs) m += a;
  m /= accs.size();
  for (double a : accs) v += (a - m) * (a - m);
  row.acc_mean = m;
  row.acc_std = accs.size() > 1 ? std::sqrt(v / (accs.size() - 1)) : 0.0;
  row.skip_fraction = skip_fraction(best_g);
  write_text(dir / "genotype.txt", serialize(best_g));
  return row;
}

inline nlohmann::json row_json(const SweepRow& r) {
  return {{"cells", r.cells},       {"nodes", r.nodes},   {"optimizer", optimizer_name(r.optimizer)},
          {"seed", r.seed},         {"acc_mean", r.acc_mean}, {"acc_std", r.acc_std},
          {"params", r.params},     {"macs", r.macs},     {"skip_fraction", r.skip_fraction},
          {"status", r.status},     {"config_hash", r.config_hash}};
}

inline SweepRow row_from_json(const nlohmann::json& j) {
  SweepRow r;
  r.cells = j.at("cells");
  r.nodes = j.at("nodes");
  r.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  r.seed = j.at("seed");
  r.acc_mean = j.at("acc_mean");
  r.acc_std = j.at("acc_std");
  r.params = j.at("params");
  r.macs = j.at("macs");
  r.skip_fraction = j.at("skip_fraction");
  r.status = j.at("status");
  r.config_hash = j.at("config_hash");
  return r;
}

/// Runs one grid cell and records its row (or its failure) in the cell
/// directory. Never throws.
inline SweepRow run_grid_cell_safely(const RunConfig& c, const fs::path& dir, const LoadedData& data) {
  SweepRow row;
  row.cells = c.search.cells;
  row.nodes = c.search.nodes;
  row.optimizer = c.search.optimizer;
  row.seed = c.seeds.front();
  row.config_hash = c.hash;
  try {
    row = run_grid_cell(c, dir, data);
    write_text(dir / "cell.json", row_json(row).dump(2) + "\n");
  } catch (const std::exception& e) {
    row.status = std::string("failed:") + (dynamic_cast<const Error*>(&e) ? dynamic_cast<const Error*>(&e)->kind() : "internal");
    try {
      write_text(dir / "error.json", error_summary(e, c.hash, row.seed).dump(2) + "\n");
      write_text(dir / "cell.json", row_json(row).dump(2) + "\n");
    } catch (const std::exception&) {
    }
  }
  return row;
}

/// Grid cells x nodes x optimizers, each over all seeds. Cells whose hash
/// already has a successful row in `results.csv` are reused; new rows are
/// appended. Independent worker processes handle cells when workers > 1.
inline std::vector<SweepRow> orchestrate_sweep(const RunConfig& base, const fs::path& out, std::ostream& log = std::cerr) {
  if (base.sweep.cells.empty() || base.sweep.nodes.empty() || base.sweep.optimizers.empty())
    throw ConfigError("sweep: empty grid");
  fs::create_directories(out);
  const fs::path results = out / "results.csv";
  std::map<std::string, SweepRow> done;
  for (const auto& r : read_sweep_results(results))
    if (r.status == "ok") done[r.config_hash] = r;

  std::vector<RunConfig> grid;
  for (int cells : base.sweep.cells)
    for (int nodes : base.sweep.nodes)
      for (auto opt : base.sweep.optimizers) grid.push_back(grid_cell_config(base, cells, nodes, opt));

  std::vector<SweepRow> rows(grid.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto it = done.find(grid[i].hash);
    if (it != done.end()) {
      rows[i] = it->second;
      rows[i].cached = true;
      log << "sweep: cached " << grid[i].hash << "\n";
    } else {
      pending.push_back(i);
    }
  }
  if (pending.empty()) return rows;
  const LoadedData data = load_dataset(base.dataset);

  if (base.sweep.workers <= 1) {
    for (auto i : pending) {
      log << "sweep: running cells=" << grid[i].search.cells << " nodes=" << grid[i].search.nodes
          << " optimizer=" << optimizer_name(grid[i].search.optimizer) << "\n";
      rows[i] = run_grid_cell_safely(grid[i], grid_cell_dir(out, grid[i]), data);
      append_sweep_row(results, rows[i]);
    }
    return rows;
  }

  std::map<pid_t, std::size_t> running;
  std::size_t next = 0;
  auto reap = [&](pid_t pid, int status) {
    const std::size_t i = running.at(pid);
    running.erase(pid);
    const fs::path dir = grid_cell_dir(out, grid[i]);
    try {
      rows[i] = row_from_json(nlohmann::json::parse(read_text(dir / "cell.json")));
    } catch (const std::exception&) {
      rows[i].cells = grid[i].search.cells;
      rows[i].nodes = grid[i].search.nodes;
      rows[i].optimizer = grid[i].search.optimizer;
      rows[i].seed = grid[i].seeds.front();
      rows[i].config_hash = grid[i].hash;
      rows[i].status = "failed:worker_exit_" + std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1);
    }
    append_sweep_row(results, rows[i]);
  };
  while (next < pending.size() || !running.empty()) {
    while (next < pending.size() && static_cast<int>(running.size()) < base.sweep.workers) {
      const std::size_t i = pending[next++];
      std::cout.flush();
      log.flush();
      const pid_t pid = ::fork();
      if (pid < 0) throw IoError("sweep: fork failed");
      if (pid == 0) {
        const auto r = run_grid_cell_safely(grid[i], grid_cell_dir(out, grid[i]), data);
        ::_exit(r.status == "ok" ? 0 : 3);
      }
      running[pid] = i;
    }
    int status = 0;
    const pid_t pid = ::waitpid(-1, &status, 0);
    if (pid > 0 && running.count(pid)) reap(pid, status);
  }
  return rows;
}

}  // namespace pdarts
