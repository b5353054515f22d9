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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pdarts/complexity.hpp"
#include "pdarts/config.hpp"
#include "pdarts/evaluation.hpp"
#include "pdarts/genotype.hpp"
#include "pdarts/probing.hpp"
#include "pdarts/search.hpp"

namespace pdarts {

namespace fs = std::filesystem;

/// Fixed-width text for CSV cells; identical doubles give identical text.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// First line of every CSV artifact.
inline std::string provenance_line(const std::string& hash, std::uint64_t seed) {
  return "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Machine-readable failure summary written next to the run's outputs.
inline nlohmann::json error_summary(const std::exception& e, const std::string& hash, std::uint64_t seed) {
  nlohmann::json j;
  j["status"] = "error";
  j["message"] = e.what();
  j["kind"] = "internal";
  if (const auto* pe = dynamic_cast<const Error*>(&e)) j["kind"] = pe->kind();
  if (const auto* ne = dynamic_cast<const NumericError*>(&e)) {
    j["epoch"] = ne->epoch();
    j["batch"] = ne->batch();
  }
  j["config_hash"] = hash;
  j["seed"] = seed;
  return j;
}

// ---------------------------------------------------------------------------
// Datasets

struct LoadedData {
  DatasetSplits splits;
  Normalization norm;
};

inline LoadedData load_dataset(const DatasetConfig& c) {
  LoadedData out;
  switch (c.kind) {
    case DatasetKind::synthetic: {
      SynthSpec s;
      s.num_classes = c.num_classes;
      s.label_mode = c.label_mode;
      s.height = c.height;
      s.width = c.width;
      s.n_train = c.n_train;
      s.n_val = c.n_val;
      s.n_test = c.n_test;
      s.background_uniformity = c.background_uniformity;
      s.seed = c.seed;
      out.splits = synth_generate(s);
      break;
    }
    case DatasetKind::cifar:
      out.splits = load_cifar_format(c.path);
      break;
    case DatasetKind::patch: {
      PatchSpec p;
      p.name = c.name.empty() ? "patches" : c.name;
      p.manifest = c.manifest;
      out.splits = load_patch_dataset(c.path, p);
      break;
    }
  }
  out.norm = Normalization::from(out.splits.train);
  return out;
}

/// Search-time view: train halves into weight and architecture streams,
/// optionally resized.
inline std::pair<Dataset, Dataset> search_data(const LoadedData& d, const DatasetConfig& c) {
  auto [a, b] = search_split(d.splits.train);
  if (c.search_resolution > 0 && (a.height != c.search_resolution || a.width != c.search_resolution)) {
    a = resized(a, c.search_resolution, c.search_resolution);
    b = resized(b, c.search_resolution, c.search_resolution);
  }
  return {std::move(a), std::move(b)};
}

inline AugmentPolicy augment_policy(const DatasetConfig& c) { return c.augment; }

inline SupernetSpec macro_spec(const Dataset& d) {
  SupernetSpec m;
  m.num_classes = d.num_classes;
  m.label_mode = d.label_mode;
  m.in_channels = d.channels;
  return m;
}

// ---------------------------------------------------------------------------
// Search

struct SearchArtifacts {
  fs::path dir;
  fs::path metrics() const { return dir / "metrics.csv"; }
  fs::path probes() const { return dir / "probes.csv"; }
  fs::path alphas() const { return dir / "alphas.csv"; }
  fs::path genotype() const { return dir / "genotype.txt"; }
  fs::path checkpoint() const { return dir / "supernet.ckpt"; }
};

inline std::string metrics_header(std::size_t layers) {
  std::string h = "epoch,train_loss,val_loss,train_acc,val_acc,lr_mean";
  for (std::size_t i = 0; i < layers; ++i) h += ",S_layer_" + std::to_string(i);
  for (std::size_t i = 0; i < layers; ++i) h += ",lr_layer_" + std::to_string(i);
  return h + "\n";
}

inline std::string metrics_row(const EpochRecord& r) {
  const auto& m = r.metrics;
  std::string s = std::to_string(r.epoch) + "," + num(m.train_loss) + "," + num(m.val_loss) + "," +
                  num(m.train_acc) + "," + num(m.val_acc) + "," + num(r.lr_mean);
  for (double v : r.stable_rank) s += "," + num(v);
  for (double v : r.layer_lr) s += "," + num(v);
  return s + "\n";
}

/// Runs one search and persists metrics, probes, mixture weights, the
/// genotype (text and graph files) and the final supernet weights.
inline SearchResult search_run(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir,
                               const LoadedData* preloaded = nullptr) {
  fs::create_directories(dir);
  SearchArtifacts art{dir};
  LoadedData local;
  if (!preloaded) {
    local = load_dataset(cfg.dataset);
    preloaded = &local;
  }
  auto [train, val] = search_data(*preloaded, cfg.dataset);
  const auto norm = Normalization::from(train);
  const auto macro = macro_spec(train);
  std::ofstream metrics(art.metrics(), std::ios::binary);
  if (!metrics) throw IoError("cannot write " + art.metrics().string());
  metrics << provenance_line(cfg.hash, seed);
  bool header = false;
  auto on_epoch = [&](const EpochRecord& r) {
    if (!header) {
      metrics << metrics_header(r.stable_rank.size());
      header = true;
    }
    metrics << metrics_row(r);
    metrics.flush();
  };
  auto res = run_search<float>(cfg.search, macro, train, val, norm, augment_policy(cfg.dataset), seed, cfg.hash,
                               on_epoch, [&](Supernet<float>& net) {
                                 save_checkpoint(art.checkpoint(), net.store(), cfg.hash, cfg.search.epochs);
                               });
  if (!header) metrics << metrics_header(res.layer_ids.size());
  metrics.close();

  std::ostringstream probes;
  probes << provenance_line(cfg.hash, seed) << "epoch";
  for (const auto& id : res.layer_ids) probes << "," << id;
  probes << "\n";
  for (int e = 0; e <= static_cast<int>(res.history.size()); ++e) {
    probes << e;
    for (const auto& s : res.probes) probes << "," << num(s.values.at(e).second);
    probes << "\n";
  }
  write_text(art.probes(), probes.str());

  std::ostringstream alphas;
  alphas << provenance_line(cfg.hash, seed) << "epoch,cell,edge,op,weight\n";
  const std::size_t nops = res.ops.size();
  for (const auto& r : res.history)
    for (int k = 0; k < 2; ++k)
      for (std::size_t i = 0; i < r.alpha_weights[k].size(); ++i)
        alphas << r.epoch << "," << (k == 0 ? "normal" : "reduce") << "," << i / nops << ","
               << op_name(res.ops[i % nops]) << "," << num(r.alpha_weights[k][i]) << "\n";
  write_text(art.alphas(), alphas.str());

  write_text(art.genotype(), serialize(res.genotype));
  write_text(dir / "genotype_normal.dot",
             "// config_hash=" + cfg.hash + " seed=" + std::to_string(seed) + "\n" + render(res.genotype, CellKind::normal));
  write_text(dir / "genotype_reduce.dot", "// config_hash=" + cfg.hash + " seed=" + std::to_string(seed) + "\n" +
                                              render(res.genotype, CellKind::reduction));
  write_text(dir / "config.ini", cfg.canonical);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalSummary {
  double accuracy = 0.0;
  double loss = 0.0;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::vector<EvalEpochRecord> history;
};

inline Genotype load_genotype(const fs::path& path) {
  try {
    return parse_genotype(read_text(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

/// Trains the genotype from scratch on train, scores it on test, and
/// persists the history, checkpoint and summary.
inline EvalSummary evaluate_run(const RunConfig& cfg, const Genotype& g, std::uint64_t seed, const fs::path& dir,
                                int epochs, const LoadedData* preloaded = nullptr) {
  fs::create_directories(dir);
  LoadedData local;
  if (!preloaded) {
    local = load_dataset(cfg.dataset);
    preloaded = &local;
  }
  const auto& train = preloaded->splits.train;
  const Dataset& test = preloaded->splits.test.empty() ? preloaded->splits.val : preloaded->splits.test;
  EvalConfig ec = cfg.eval;
  ec.epochs = epochs;
  ec.quick_epochs = std::min(ec.quick_epochs, epochs);
  auto net = build_eval_network<float>(g, ec, train.num_classes, train.label_mode, seed, train.channels);
  std::ofstream hist(dir / "eval_metrics.csv", std::ios::binary);
  hist << provenance_line(cfg.hash, seed) << "epoch,lr,train_loss,train_acc,test_loss,test_acc\n";
  auto on_epoch = [&](const EvalEpochRecord& r) {
    hist << r.epoch << "," << num(r.lr) << "," << num(r.train_loss) << "," << num(r.train_acc) << ","
         << num(r.test_loss) << "," << num(r.test_acc) << "\n";
    hist.flush();
  };
  EvalSummary s;
  s.history = train_eval(*net, train, Dataset{}, preloaded->norm, ec, augment_policy(cfg.dataset), seed, on_epoch);
  if (!test.empty()) {
    const auto m = evaluate_metrics<float>(*net, test, preloaded->norm);
    s.accuracy = m.accuracy;
    s.loss = m.loss;
  }
  const auto rep = net->complexity(train.height, train.width);
  s.params = rep.params;
  s.macs = rep.macs;
  save_checkpoint(dir / "model.ckpt", net->store(), cfg.hash, epochs);
  nlohmann::json j;
  j["config_hash"] = cfg.hash;
  j["seed"] = seed;
  j["epochs"] = epochs;
  j["accuracy"] = s.accuracy;
  j["loss"] = s.loss;
  j["params"] = s.params;
  j["macs"] = s.macs;
  write_text(dir / "eval_summary.json", j.dump(2) + "\n");
  return s;
}

inline void resolution_run(const RunConfig& cfg, const Genotype& g, std::uint64_t seed, const fs::path& dir) {
  const auto data = load_dataset(cfg.dataset);
  const auto rows = resolution_sweep<float>(g, cfg.resolutions, data.splits, cfg.eval, augment_policy(cfg.dataset), seed);
  std::ostringstream os;
  os << provenance_line(cfg.hash, seed) << "resolution,accuracy,params,macs\n";
  for (const auto& r : rows) os << r.resolution << "," << num(r.accuracy) << "," << r.params << "," << r.macs << "\n";
  write_text(dir / "resolution.csv", os.str());
}

// ---------------------------------------------------------------------------
// Probe and complexity modes

/// Stable ranks of a supernet built from the config, optionally restored
/// from a search checkpoint.
inline void probe_run(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  const auto data = load_dataset(cfg.dataset);
  SupernetSpec spec = macro_spec(data.splits.train);
  spec.num_cells = cfg.search.cells;
  spec.init_channels = cfg.search.init_channels;
  Supernet<float> net(spec, cfg.search.nodes, seed);
  int epoch = 0;
  if (!cfg.checkpoint.empty()) epoch = load_checkpoint(cfg.checkpoint, net.store()).epoch;
  ProbeSeries series;
  probe_network(net, epoch, series, cfg.search.probe_delta);
  std::ostringstream os;
  os << provenance_line(cfg.hash, seed) << "layer_index,layer_id,epoch,stable_rank\n";
  for (const auto& s : series) os << s.layer_index << "," << s.layer_id << "," << epoch << "," << num(s.last()) << "\n";
  write_text(dir / "probes.csv", os.str());
}

inline std::string complexity_csv(const ComplexityReport& r) {
  std::ostringstream os;
  os << "layer_id,params,macs\n";
  for (const auto& l : r.per_layer) os << l.layer_id << "," << l.params << "," << l.macs << "\n";
  return os.str();
}

/// Parameter and MAC report for the genotype's discrete network, or for the
/// supernet when no genotype is given.
inline ComplexityReport complexity_run(const RunConfig& cfg, std::uint64_t seed, const fs::path& dir) {
  const int classes = cfg.dataset.num_classes;
  const int h = cfg.dataset.kind == DatasetKind::cifar ? 32 : cfg.dataset.height;
  const int w = cfg.dataset.kind == DatasetKind::cifar ? 32 : cfg.dataset.width;
  std::vector<int> res = cfg.resolutions;
  ComplexityReport main;
  std::ostringstream table;
  table << provenance_line(cfg.hash, seed) << "resolution,params,macs\n";
  auto emit = [&](const auto& net) {
    main = net.complexity(h, w);
    for (int r : res) {
      const auto rep = net.complexity(r, r);
      table << r << "," << rep.params << "," << rep.macs << "\n";
    }
  };
  if (!cfg.genotype.empty()) {
    const auto g = load_genotype(cfg.genotype);
    EvalConfig ec = cfg.eval;
    ec.auxiliary = false;
    emit(*build_eval_network<float>(g, ec, classes, cfg.dataset.label_mode, seed));
  } else {
    SupernetSpec spec;
    spec.num_classes = classes;
    spec.num_cells = cfg.search.cells;
    spec.init_channels = cfg.search.init_channels;
    emit(Supernet<float>(spec, cfg.search.nodes, seed));
  }
  write_text(dir / "complexity.txt", "config_hash: " + cfg.hash + "\n" + main.to_text());
  write_text(dir / "complexity.csv", provenance_line(cfg.hash, seed) + complexity_csv(main));
  if (!res.empty()) write_text(dir / "complexity_resolutions.csv", table.str());
  return main;
}

}  // namespace pdarts
