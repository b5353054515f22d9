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

// pdarts command line: search, evaluate, probe, sweep, plot, complexity.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "pdarts/pdarts.hpp"

namespace {

using namespace pdarts;
namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string genotype;
  std::string checkpoint;
  std::string input;
};

RunConfig load(const Flags& f, const std::string& mode) {
  RunConfig c = f.config.empty() ? parse_config_text("") : parse_config(f.config);
  c.mode = mode;
  if (f.seed) c.seeds = {*f.seed};
  if (!f.out_dir.empty()) c.out_dir = f.out_dir;
  if (!f.genotype.empty()) c.genotype = f.genotype;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  if (!f.input.empty()) c.input = f.input;
  resolve(c);
  return c;
}

fs::path seed_dir(const RunConfig& c, std::uint64_t seed) {
  return c.seeds.size() == 1 ? fs::path(c.out_dir) : fs::path(c.out_dir) / ("seed_" + std::to_string(seed));
}

int run(const std::string& mode, const Flags& f) {
  RunConfig c;
  std::uint64_t seed = f.seed.value_or(0);
  try {
    c = load(f, mode);
    seed = c.seeds.front();
    fs::create_directories(c.out_dir);
    if (mode == "search") {
      for (auto s : c.seeds) {
        seed = s;
        const auto res = search_run(c, s, seed_dir(c, s));
        std::cout << "seed " << s << ": skip_fraction " << num(skip_fraction(res.genotype)) << "\n"
                  << serialize(res.genotype);
      }
    } else if (mode == "evaluate") {
      if (c.genotype.empty()) throw ConfigError("config key 'run.genotype' is required for evaluate");
      const auto g = load_genotype(c.genotype);
      for (auto s : c.seeds) {
        seed = s;
        const auto sum = evaluate_run(c, g, s, seed_dir(c, s), c.eval.epochs);
        std::cout << "seed " << s << ": accuracy " << num(sum.accuracy) << " params " << sum.params << " macs "
                  << sum.macs << "\n";
        if (!c.resolutions.empty()) resolution_run(c, g, s, seed_dir(c, s));
      }
    } else if (mode == "probe") {
      for (auto s : c.seeds) {
        seed = s;
        probe_run(c, s, seed_dir(c, s));
      }
    } else if (mode == "sweep") {
      const auto rows = orchestrate_sweep(c, c.out_dir);
      std::cout << kSweepHeader;
      int failed = 0;
      for (const auto& r : rows) {
        std::cout << sweep_row_line(r);
        failed += r.status != "ok";
      }
      if (failed) std::cerr << "sweep: " << failed << " grid cell(s) failed; see error.json in their directories\n";
    } else if (mode == "plot") {
      const fs::path in = c.input.empty() ? fs::path(c.out_dir) : fs::path(c.input);
      const auto rep = emit_plots(in, fs::path(c.out_dir) / "plots");
      for (const auto& [stem, curves] : rep.figures) std::cout << stem << ".png " << curves << " curve(s)\n";
    } else if (mode == "complexity") {
      std::cout << complexity_run(c, seed, c.out_dir).to_text();
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "pdarts " << mode << ": " << e.what() << "\n";
    try {
      const fs::path dir = !f.out_dir.empty() ? fs::path(f.out_dir) : fs::path(c.out_dir.empty() ? "." : c.out_dir);
      fs::create_directories(dir);
      write_text(dir / "error.json", error_summary(e, c.hash, seed).dump(2) + "\n");
    } catch (const std::exception& e2) {
      std::cerr << "pdarts: could not write error summary: " << e2.what() << "\n";
    }
    return dynamic_cast<const ConfigError*>(&e) ? 2 : 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Differentiable architecture search with stable-rank probing"};
  app.require_subcommand(1);
  Flags flags;
  std::uint64_t seed = 0;
  std::string mode;
  for (const char* name : {"search", "evaluate", "probe", "sweep", "plot", "complexity"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", flags.config, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "single seed overriding run.seeds");
    sub->add_option("--out-dir", flags.out_dir, "output directory");
    sub->add_option("--genotype", flags.genotype, "genotype file (evaluate, complexity)");
    sub->add_option("--checkpoint", flags.checkpoint, "supernet checkpoint (probe)");
    sub->add_option("--input", flags.input, "directory of run artifacts (plot)");
    sub->callback([&, name, sub] {
      mode = name;
      if (sub->count("--seed")) flags.seed = seed;
    });
  }
  CLI11_PARSE(app, argc, argv);
  return run(mode, flags);
}
