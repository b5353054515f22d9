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

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pdarts/data.hpp"
#include "pdarts/evaluation.hpp"
#include "pdarts/search.hpp"

namespace pdarts {

enum class DatasetKind { synthetic, cifar, patch };

inline std::string_view dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::synthetic: return "synthetic";
    case DatasetKind::cifar: return "cifar";
    case DatasetKind::patch: return "patch";
  }
  return "?";
}

struct DatasetConfig {
  DatasetKind kind = DatasetKind::synthetic;
  std::string path;
  std::string manifest = "labels.csv";
  std::string name;
  LabelMode label_mode = LabelMode::single_label;
  int num_classes = 4;
  int height = 64;
  int width = 64;
  int n_train = 1000;
  int n_val = 0;
  int n_test = 200;
  double background_uniformity = 0.5;
  std::uint64_t seed = 0;
  /// Square side images are resized to for search; 0 keeps the native size.
  int search_resolution = 0;
  AugmentPolicy augment;
};

struct SweepConfig {
  std::vector<int> cells{4};
  std::vector<int> nodes{2, 3, 4};
  std::vector<OptimizerKind> optimizers{OptimizerKind::sgd, OptimizerKind::adas};
  int workers = 1;
  int final_runs = 3;
};

struct RunConfig {
  std::string mode = "search";
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "runs";
  std::string genotype;
  std::string checkpoint;
  std::string input;
  DatasetConfig dataset;
  SearchConfig search;
  EvalConfig eval;
  SweepConfig sweep;
  std::vector<int> resolutions;
  /// Which conditional defaults were overridden in the file.
  bool lr0_given = false;
  bool batch_given = false;
  bool augment_given = false;
  /// Canonical text of every resolved field that affects results.
  std::string canonical;
  std::string hash;
};

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Typed access to one section with strict key checking.
class Section {
 public:
  Section(std::string name, const boost::property_tree::ptree* tree) : name_(std::move(name)), tree_(tree) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.push_back(key);
    if (!tree_) return std::nullopt;
    auto v = tree_->get_optional<std::string>(boost::property_tree::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  template <typename V>
  void get(const std::string& key, V& out) {
    if (auto v = raw(key)) out = convert<V>(key, *v);
  }

  template <typename V>
  std::optional<V> opt(const std::string& key) {
    if (auto v = raw(key)) return convert<V>(key, *v);
    return std::nullopt;
  }

  template <typename V>
  void get_list(const std::string& key, std::vector<V>& out) {
    if (auto v = raw(key)) {
      out.clear();
      for (const auto& item : split_list(*v)) out.push_back(convert<V>(key, item));
      if (out.empty()) throw ConfigError("config key '" + qualified(key) + "' is an empty list");
    }
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [k, v] : *tree_) {
      if (std::find(used_.begin(), used_.end(), k) == used_.end())
        throw ConfigError("unknown config key '" + qualified(k) + "'");
    }
  }

  std::string qualified(const std::string& key) const { return name_ + "." + key; }

 private:
  template <typename V>
  V convert(const std::string& key, const std::string& s) {
    auto bad = [&](const char* what) {
      return ConfigError("config key '" + qualified(key) + "' expects " + what + ", got '" + s + "'");
    };
    if constexpr (std::is_same_v<V, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<V, bool>) {
      if (s == "true" || s == "on" || s == "yes" || s == "1") return true;
      if (s == "false" || s == "off" || s == "no" || s == "0") return false;
      throw bad("a boolean");
    } else if constexpr (std::is_integral_v<V>) {
      V v{};
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) throw bad("an integer");
      return v;
    } else if constexpr (std::is_floating_point_v<V>) {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw bad("a number");
        return static_cast<V>(v);
      } catch (const std::logic_error&) {
        throw bad("a number");
      }
    } else if constexpr (std::is_same_v<V, OptimizerKind>) {
      try {
        return parse_optimizer(s);
      } catch (const ConfigError&) {
        throw bad("sgd or adas");
      }
    } else if constexpr (std::is_same_v<V, LabelMode>) {
      if (s == "single_label") return LabelMode::single_label;
      if (s == "multi_label") return LabelMode::multi_label;
      throw bad("single_label or multi_label");
    } else if constexpr (std::is_same_v<V, AugmentKind>) {
      try {
        return parse_augment_kind(s);
      } catch (const ConfigError&) {
        throw bad("identity, crop_flip or flip_affine");
      }
    } else if constexpr (std::is_same_v<V, DatasetKind>) {
      if (s == "synthetic") return DatasetKind::synthetic;
      if (s == "cifar") return DatasetKind::cifar;
      if (s == "patch") return DatasetKind::patch;
      throw bad("synthetic, cifar or patch");
    }
  }

  std::string name_;
  const boost::property_tree::ptree* tree_;
  std::vector<std::string> used_;
};

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline const std::vector<std::string>& run_modes() {
  static const std::vector<std::string> m{"search", "evaluate", "probe", "sweep", "plot", "complexity"};
  return m;
}

/// Canonical serialization of the resolved fields that influence results.
/// Output locations, the mode and the seed list are left out; seeds are
/// recorded next to the hash wherever it appears.
inline std::string canonical_text(const RunConfig& c) {
  using detail::fmt_double;
  std::ostringstream os;
  const auto& d = c.dataset;
  os << "[dataset]\nkind=" << dataset_kind_name(d.kind) << "\npath=" << d.path << "\nmanifest=" << d.manifest
     << "\nname=" << d.name << "\nlabel_mode=" << (d.label_mode == LabelMode::single_label ? "single_label" : "multi_label")
     << "\nnum_classes=" << d.num_classes << "\nheight=" << d.height << "\nwidth=" << d.width
     << "\nn_train=" << d.n_train << "\nn_val=" << d.n_val << "\nn_test=" << d.n_test
     << "\nbackground_uniformity=" << fmt_double(d.background_uniformity) << "\nseed=" << d.seed
     << "\nsearch_resolution=" << d.search_resolution << "\naugment=" << augment_kind_name(d.augment.kind)
     << "\ncrop_padding=" << d.augment.crop_padding << "\nmax_rotation_deg=" << fmt_double(d.augment.max_rotation_deg)
     << "\nmax_translation=" << fmt_double(d.augment.max_translation) << "\n";
  const auto& s = c.search;
  os << "[search]\nepochs=" << s.epochs << "\nbatch_size=" << s.batch_size << "\ninit_channels=" << s.init_channels
     << "\ncells=" << s.cells << "\nnodes=" << s.nodes << "\noptimizer=" << optimizer_name(s.optimizer)
     << "\nlr0=" << fmt_double(s.lr0) << "\nlr_min=" << fmt_double(s.lr_min) << "\nadas_beta=" << fmt_double(s.adas_beta)
     << "\nadas_zeta=" << fmt_double(s.adas_zeta) << "\nadas_eta_min=" << fmt_double(s.adas_eta_min)
     << "\nmomentum=" << fmt_double(s.sgd.momentum) << "\nweight_decay=" << fmt_double(s.sgd.weight_decay)
     << "\ngrad_clip=" << fmt_double(s.sgd.grad_clip) << "\narch_lr=" << fmt_double(s.arch.lr)
     << "\narch_weight_decay=" << fmt_double(s.arch.weight_decay) << "\nprobe_delta=" << fmt_double(s.probe_delta)
     << "\nmax_batches=" << s.max_batches << "\n";
  const auto& e = c.eval;
  os << "[eval]\nepochs=" << e.epochs << "\nbatch_size=" << e.batch_size << "\ninit_channels=" << e.init_channels
     << "\ncells=" << e.cells << "\nlr0=" << fmt_double(e.lr0) << "\nmomentum=" << fmt_double(e.momentum)
     << "\nweight_decay=" << fmt_double(e.weight_decay) << "\ngrad_clip=" << fmt_double(e.grad_clip)
     << "\ncosine=" << e.cosine << "\ncutout=" << e.cutout << "\ncutout_length=" << e.cutout_length
     << "\nauxiliary=" << e.auxiliary << "\nauxiliary_weight=" << fmt_double(e.auxiliary_weight)
     << "\nquick_epochs=" << e.quick_epochs << "\nresolutions=";
  for (std::size_t i = 0; i < c.resolutions.size(); ++i) os << (i ? "," : "") << c.resolutions[i];
  os << "\n";
  return os.str();
}

/// Applies the defaults, including the ones that depend on other fields,
/// and validates the result. `given` records which keys were explicit.
inline void resolve(RunConfig& c) {
  const bool lr0_given = c.lr0_given, batch_given = c.batch_given, augment_given = c.augment_given;
  const bool patch = c.dataset.kind == DatasetKind::patch;
  if (!batch_given) c.search.batch_size = patch ? 32 : 64;
  if (!lr0_given) c.search.lr0 = (c.search.optimizer == OptimizerKind::adas || patch) ? 0.175 : 0.025;
  if (!augment_given)
    c.dataset.augment.kind = patch ? AugmentKind::flip_affine
                             : c.dataset.kind == DatasetKind::cifar ? AugmentKind::crop_flip
                                                                    : AugmentKind::identity;
  if (c.dataset.kind != DatasetKind::synthetic && c.dataset.path.empty())
    throw ConfigError("config key 'dataset.path' is required for " + std::string(dataset_kind_name(c.dataset.kind)) +
                      " datasets");
  if (c.dataset.kind == DatasetKind::patch && c.dataset.search_resolution == 0) c.dataset.search_resolution = 64;
  if (std::find(run_modes().begin(), run_modes().end(), c.mode) == run_modes().end())
    throw ConfigError("config key 'run.mode' must be one of search, evaluate, probe, sweep, plot, complexity");
  if (c.seeds.empty()) throw ConfigError("config key 'run.seeds' is empty");
  if (c.search.epochs < 0 || c.search.init_channels < 1 || c.search.cells < 2 || c.search.nodes < 2 ||
      c.search.batch_size < 2)
    throw ConfigError("search block: epochs >= 0, init_channels >= 1, cells >= 2, nodes >= 2, batch_size >= 2");
  if (!(c.search.lr0 > 0)) throw ConfigError("config key 'search.lr0' must be positive");
  if (!(c.search.probe_delta > 0 && c.search.probe_delta < 1))
    throw ConfigError("config key 'search.probe_delta' must lie in (0, 1)");
  if (c.sweep.workers < 1 || c.sweep.final_runs < 1) throw ConfigError("sweep: workers and final_runs must be positive");
  for (int r : c.resolutions) check_resolution(r);
  c.eval.validate();
  c.canonical = canonical_text(c);
  c.hash = fnv1a_hex(c.canonical);
}

inline const std::vector<std::string> kConfigSections{"run", "dataset", "search", "eval", "sweep"};

inline RunConfig parse_config_tree(const boost::property_tree::ptree& root) {
  const auto& sections = kConfigSections;
  for (const auto& [k, v] : root) {
    if (v.empty() && !v.data().empty()) throw ConfigError("config key '" + k + "' is outside any section");
    if (std::find(sections.begin(), sections.end(), k) == sections.end())
      throw ConfigError("unknown config section '[" + k + "]'");
  }
  auto sec = [&](const char* name) {
    auto it = root.find(name);
    return detail::Section(name, it == root.not_found() ? nullptr : &it->second);
  };
  RunConfig c;
  auto run = sec("run");
  run.get("mode", c.mode);
  run.get_list("seeds", c.seeds);
  run.get("out_dir", c.out_dir);
  run.get("genotype", c.genotype);
  run.get("checkpoint", c.checkpoint);
  run.get("input", c.input);
  run.reject_unknown();

  auto ds = sec("dataset");
  auto& d = c.dataset;
  ds.get("kind", d.kind);
  ds.get("path", d.path);
  ds.get("manifest", d.manifest);
  ds.get("name", d.name);
  ds.get("label_mode", d.label_mode);
  ds.get("num_classes", d.num_classes);
  if (auto r = ds.opt<int>("resolution")) d.height = d.width = *r;
  ds.get("height", d.height);
  ds.get("width", d.width);
  ds.get("n_train", d.n_train);
  ds.get("n_val", d.n_val);
  ds.get("n_test", d.n_test);
  ds.get("background_uniformity", d.background_uniformity);
  ds.get("seed", d.seed);
  ds.get("search_resolution", d.search_resolution);
  const auto aug = ds.opt<AugmentKind>("augment");
  if (aug) d.augment.kind = *aug;
  ds.get("crop_padding", d.augment.crop_padding);
  ds.get("max_rotation_deg", d.augment.max_rotation_deg);
  ds.get("max_translation", d.augment.max_translation);
  ds.reject_unknown();

  auto se = sec("search");
  auto& s = c.search;
  se.get("epochs", s.epochs);
  const auto batch = se.opt<int>("batch_size");
  if (batch) s.batch_size = *batch;
  se.get("init_channels", s.init_channels);
  se.get("cells", s.cells);
  se.get("nodes", s.nodes);
  se.get("optimizer", s.optimizer);
  const auto lr0 = se.opt<double>("lr0");
  if (lr0) s.lr0 = *lr0;
  se.get("lr_min", s.lr_min);
  se.get("adas_beta", s.adas_beta);
  se.get("adas_zeta", s.adas_zeta);
  se.get("adas_eta_min", s.adas_eta_min);
  se.get("momentum", s.sgd.momentum);
  se.get("weight_decay", s.sgd.weight_decay);
  se.get("grad_clip", s.sgd.grad_clip);
  se.get("arch_lr", s.arch.lr);
  se.get("arch_weight_decay", s.arch.weight_decay);
  se.get("probe_delta", s.probe_delta);
  se.get("max_batches", s.max_batches);
  se.reject_unknown();

  auto ev = sec("eval");
  auto& e = c.eval;
  ev.get("epochs", e.epochs);
  ev.get("batch_size", e.batch_size);
  ev.get("init_channels", e.init_channels);
  ev.get("cells", e.cells);
  ev.get("lr0", e.lr0);
  ev.get("momentum", e.momentum);
  ev.get("weight_decay", e.weight_decay);
  ev.get("grad_clip", e.grad_clip);
  ev.get("cosine", e.cosine);
  ev.get("cutout", e.cutout);
  ev.get("cutout_length", e.cutout_length);
  ev.get("auxiliary", e.auxiliary);
  ev.get("auxiliary_weight", e.auxiliary_weight);
  ev.get("quick_epochs", e.quick_epochs);
  ev.get_list("resolutions", c.resolutions);
  ev.reject_unknown();

  auto sw = sec("sweep");
  sw.get_list("cells", c.sweep.cells);
  sw.get_list("nodes", c.sweep.nodes);
  sw.get_list("optimizers", c.sweep.optimizers);
  sw.get("workers", c.sweep.workers);
  sw.get("final_runs", c.sweep.final_runs);
  sw.reject_unknown();

  c.lr0_given = lr0.has_value();
  c.batch_given = batch.has_value();
  c.augment_given = aug.has_value();
  resolve(c);
  return c;
}

/// Parses an INI document (`[section]` headers, `key = value`, `;` or `#`
/// comments).
inline RunConfig parse_config_text(const std::string& text) {
  std::string cleaned;
  std::istringstream lines(text);
  // The INI reader only knows ';' comments.
  for (std::string line; std::getline(lines, line);) {
    const auto t = detail::trim(line);
    // Empty sections never reach the tree, so headers are checked here.
    if (t.size() > 2 && t.front() == '[' && t.back() == ']') {
      const auto name = detail::trim(t.substr(1, t.size() - 2));
      if (std::find(kConfigSections.begin(), kConfigSections.end(), name) == kConfigSections.end())
        throw ConfigError("unknown config section '[" + name + "]'");
    }
    cleaned += (!t.empty() && t[0] == '#') ? "" : line;
    cleaned += "\n";
  }
  boost::property_tree::ptree root;
  std::istringstream is(cleaned);
  try {
    boost::property_tree::ini_parser::read_ini(is, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  return parse_config_tree(root);
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace pdarts
