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

#include <algorithm>
#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pdarts/error.hpp"
#include "pdarts/searchspace.hpp"
#include "pdarts/types.hpp"

namespace pdarts {

struct GenotypeMeta {
  int num_cells = 0;
  int init_channels = 0;
  int nodes = 0;
  std::uint64_t source_seed = 0;
  std::string search_config_hash;
  bool operator==(const GenotypeMeta&) const = default;
};

/// One selected input of an intermediate node; `from` is a DAG node index
/// (0 and 1 are the cell inputs).
struct NodeInput {
  OpKind op = OpKind::skip_connect;
  int from = 0;
  bool operator==(const NodeInput&) const = default;
};

/// Entry j describes DAG node j + 2.
using CellGene = std::vector<std::array<NodeInput, 2>>;

struct Genotype {
  CellGene normal;
  CellGene reduce;
  std::vector<int> concat;
  GenotypeMeta meta;

  bool operator==(const Genotype&) const = default;

  const CellGene& cell(CellKind k) const { return k == CellKind::normal ? normal : reduce; }
  int nodes() const { return static_cast<int>(normal.size()); }

  void validate() const {
    if (normal.empty()) throw ValidationError("genotype: no intermediate nodes");
    if (normal.size() != reduce.size())
      throw ValidationError("genotype: normal and reduce cells differ in node count");
    if (meta.nodes != 0 && meta.nodes != nodes())
      throw ValidationError("genotype: meta.nodes disagrees with the cell listings");
    for (const auto* c : {&normal, &reduce})
      for (std::size_t j = 0; j < c->size(); ++j)
        for (const auto& in : (*c)[j]) {
          if (in.op == OpKind::zero) throw ValidationError("genotype: zero op selected");
          if (in.from < 0 || in.from >= static_cast<int>(j) + 2)
            throw ValidationError("genotype: node " + std::to_string(j + 2) + " reads from node " +
                                  std::to_string(in.from));
        }
    std::vector<int> seen;
    for (int c : concat) {
      if (c < 2 || c >= nodes() + 2) throw ValidationError("genotype: concat index out of range");
      if (std::find(seen.begin(), seen.end(), c) != seen.end())
        throw ValidationError("genotype: duplicate concat index");
      seen.push_back(c);
    }
    if (concat.empty()) throw ValidationError("genotype: empty concat list");
  }
};

struct DiscretizeOptions {
  /// Lets the zero op win the per-edge argmax (ablation only); such edges
  /// are then never kept as node inputs.
  bool include_zero = false;
};

namespace detail {

struct EdgeChoice {
  int op_index = -1;  // OpKind index
  double weight = -1;
  int source = 0;
};

template <typename T>
CellGene discretize_cell(const ArchitectureParams<T>& alpha, CellKind kind, const DiscretizeOptions& opt) {
  const auto& ops = alpha.ops();
  CellGene gene;
  int e = 0;
  for (int j = 0; j < alpha.nodes(); ++j) {
    std::vector<EdgeChoice> cand;
    for (int i = 0; i < j + 2; ++i, ++e) {
      const auto w = alpha.weights(kind, e);
      EdgeChoice best;
      best.source = i;
      for (std::size_t k = 0; k < ops.size(); ++k) {
        if (ops[k] == OpKind::zero && !opt.include_zero) continue;
        const int idx = static_cast<int>(ops[k]);
        const double wk = static_cast<double>(w[k]);
        if (best.op_index < 0 || wk > best.weight || (wk == best.weight && idx < best.op_index)) {
          best.op_index = idx;
          best.weight = wk;
        }
      }
      if (best.op_index >= 0 && best.op_index != static_cast<int>(OpKind::zero)) cand.push_back(best);
    }
    if (cand.size() < 2)
      throw ContractError("discretize: node " + std::to_string(j + 2) +
                          " has fewer than two non-zero candidate edges");
    std::stable_sort(cand.begin(), cand.end(), [](const EdgeChoice& a, const EdgeChoice& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      if (a.op_index != b.op_index) return a.op_index < b.op_index;
      return a.source < b.source;
    });
    std::array<NodeInput, 2> pick{NodeInput{op_from_index(cand[0].op_index), cand[0].source},
                                  NodeInput{op_from_index(cand[1].op_index), cand[1].source}};
    if (pick[1].from < pick[0].from) std::swap(pick[0], pick[1]);
    gene.push_back(pick);
  }
  return gene;
}

}  // namespace detail

/// Per edge: strongest non-zero op by softmax weight. Per node: the two
/// edges whose chosen op weighs most. Ties prefer the lower op index, then
/// the lower source node. Inputs are listed by ascending source.
template <typename T>
Genotype discretize(const ArchitectureParams<T>& alpha, const DiscretizeOptions& opt = {},
                    GenotypeMeta meta = {}) {
  if (!alpha.all_finite()) throw NumericError("discretize: non-finite architecture parameters");
  Genotype g;
  g.normal = detail::discretize_cell(alpha, CellKind::normal, opt);
  g.reduce = detail::discretize_cell(alpha, CellKind::reduction, opt);
  for (int j = 0; j < alpha.nodes(); ++j) g.concat.push_back(j + 2);
  meta.nodes = alpha.nodes();
  g.meta = std::move(meta);
  return g;
}

/// Fraction of all node-input selections (both cells) that are skip_connect.
inline double skip_fraction(const Genotype& g) {
  int total = 0, skips = 0;
  for (const auto* c : {&g.normal, &g.reduce})
    for (const auto& node : *c)
      for (const auto& in : node) {
        ++total;
        skips += in.op == OpKind::skip_connect;
      }
  return total == 0 ? 0.0 : static_cast<double>(skips) / total;
}

inline constexpr int kGenotypeVersion = 1;

inline std::string serialize(const Genotype& g) {
  g.validate();
  std::ostringstream os;
  os << "version: " << kGenotypeVersion << "\n";
  os << "meta:\n";
  os << "  num_cells: " << g.meta.num_cells << "\n";
  os << "  init_channels: " << g.meta.init_channels << "\n";
  os << "  nodes: " << g.meta.nodes << "\n";
  os << "  source_seed: " << g.meta.source_seed << "\n";
  os << "  search_config_hash: " << g.meta.search_config_hash << "\n";
  for (auto kind : {CellKind::normal, CellKind::reduction}) {
    os << (kind == CellKind::normal ? "normal:\n" : "reduce:\n");
    const auto& c = g.cell(kind);
    for (std::size_t j = 0; j < c.size(); ++j)
      os << "  node " << j + 2 << ": (" << op_name(c[j][0].op) << ", " << c[j][0].from << "), ("
         << op_name(c[j][1].op) << ", " << c[j][1].from << ")\n";
  }
  os << "concat: [";
  for (std::size_t i = 0; i < g.concat.size(); ++i) os << (i ? ", " : "") << g.concat[i];
  os << "]\n";
  return os.str();
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

class GenotypeParser {
 public:
  explicit GenotypeParser(std::string_view text) {
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      const auto end = nl == std::string_view::npos ? text.size() : nl;
      lines_.push_back(text.substr(pos, end - pos));
      if (nl == std::string_view::npos) break;
      pos = nl + 1;
    }
  }

  Genotype parse() {
    skip_blank();
    if (at_end()) throw ParseError("genotype: empty document");
    {
      auto [key, value] = key_value(current(), "version");
      (void)key;
      const long v = integer(value, "version");
      if (v != kGenotypeVersion) throw VersionError("genotype: unsupported version " + std::string(value));
      advance();
    }
    Genotype g;
    expect_header("meta");
    g.meta.num_cells = static_cast<int>(integer(field("num_cells"), "num_cells"));
    g.meta.init_channels = static_cast<int>(integer(field("init_channels"), "init_channels"));
    g.meta.nodes = static_cast<int>(integer(field("nodes"), "nodes"));
    {
      const auto v = field("source_seed");
      try {
        std::size_t used = 0;
        g.meta.source_seed = std::stoull(std::string(v), &used);
        if (used != v.size() || v.front() == '-') throw std::invalid_argument("seed");
      } catch (const std::exception&) {
        fail("source_seed must be a nonnegative integer, got '" + std::string(v) + "'");
      }
    }
    g.meta.search_config_hash = std::string(field("search_config_hash"));
    expect_header("normal");
    g.normal = cell();
    expect_header("reduce");
    g.reduce = cell();
    skip_blank();
    if (at_end()) fail("missing concat line");
    auto [key, value] = key_value(current(), "concat");
    (void)key;
    g.concat = int_list(value);
    advance();
    skip_blank();
    if (!at_end()) fail("unexpected trailing content");
    try {
      g.validate();
    } catch (const ValidationError& e) {
      throw ParseError(std::string(e.what()));
    }
    return g;
  }

 private:
  std::vector<std::string_view> lines_;
  std::size_t i_ = 0;

  bool at_end() const { return i_ >= lines_.size(); }
  std::string_view current() const { return lines_[i_]; }
  void advance() { ++i_; }
  void skip_blank() {
    while (!at_end() && trim(current()).empty()) ++i_;
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("genotype line " + std::to_string(i_ + 1) + ": " + msg);
  }

  std::pair<std::string_view, std::string_view> key_value(std::string_view line, std::string_view want) {
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) fail("expected '" + std::string(want) + ": ...'");
    const auto key = trim(line.substr(0, colon));
    if (key != want) fail("expected field '" + std::string(want) + "', found '" + std::string(key) + "'");
    return {key, trim(line.substr(colon + 1))};
  }

  void expect_header(std::string_view name) {
    skip_blank();
    if (at_end()) fail("missing '" + std::string(name) + ":' block");
    auto [key, value] = key_value(current(), name);
    (void)key;
    if (!value.empty()) fail("block header '" + std::string(name) + ":' takes no value");
    advance();
  }

  std::string_view field(std::string_view name) {
    skip_blank();
    if (at_end()) fail("missing field '" + std::string(name) + "'");
    auto [key, value] = key_value(current(), name);
    (void)key;
    advance();
    return value;
  }

  long integer(std::string_view s, std::string_view what) const {
    try {
      std::size_t used = 0;
      const long v = std::stol(std::string(s), &used);
      if (used != s.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      fail(std::string(what) + " must be an integer, got '" + std::string(s) + "'");
    }
  }

  std::vector<int> int_list(std::string_view s) const {
    if (s.size() < 2 || s.front() != '[' || s.back() != ']') fail("expected a bracketed list");
    std::vector<int> out;
    auto body = trim(s.substr(1, s.size() - 2));
    while (!body.empty()) {
      const auto comma = body.find(',');
      out.push_back(static_cast<int>(integer(trim(body.substr(0, comma)), "list entry")));
      if (comma == std::string_view::npos) break;
      body = trim(body.substr(comma + 1));
      if (body.empty()) fail("dangling comma in list");
    }
    return out;
  }

  NodeInput pair(std::string_view s) const {
    s = trim(s);
    if (s.size() < 2 || s.front() != '(' || s.back() != ')') fail("expected '(<op>, <from>)'");
    const auto body = s.substr(1, s.size() - 2);
    const auto comma = body.find(',');
    if (comma == std::string_view::npos) fail("expected '(<op>, <from>)'");
    const auto op = trim(body.substr(0, comma));
    NodeInput in;
    try {
      in.op = op_from_name(op);
    } catch (const InvalidOperationError&) {
      fail("invalid op '" + std::string(op) + "'");
    }
    in.from = static_cast<int>(integer(trim(body.substr(comma + 1)), "from"));
    return in;
  }

  CellGene cell() {
    CellGene c;
    while (true) {
      skip_blank();
      if (at_end()) break;
      const auto line = trim(current());
      if (line.substr(0, 5) != "node ") break;
      const auto colon = line.find(':');
      if (colon == std::string_view::npos) fail("expected 'node <j>: ...'");
      const long j = integer(trim(line.substr(5, colon - 5)), "node index");
      if (j != static_cast<long>(c.size()) + 2)
        fail("expected node " + std::to_string(c.size() + 2) + ", found node " + std::to_string(j));
      const auto rest = trim(line.substr(colon + 1));
      const auto split = rest.find("),");
      if (split == std::string_view::npos) fail("expected two '(op, from)' entries");
      c.push_back({pair(rest.substr(0, split + 1)), pair(rest.substr(split + 2))});
      advance();
    }
    if (c.empty()) fail("cell block lists no nodes");
    return c;
  }
};

}  // namespace detail

inline Genotype parse_genotype(std::string_view text) { return detail::GenotypeParser(text).parse(); }

/// Graphviz description of one cell: inputs c_{k-2}, c_{k-1}, one vertex per
/// intermediate node, and the output c_{k}. Op edges carry labels; the
/// concatenation edges into c_{k} do not.
inline std::string render(const Genotype& g, CellKind kind) {
  g.validate();
  const auto& c = g.cell(kind);
  auto vertex = [](int node) -> std::string {
    if (node == 0) return "\"c_{k-2}\"";
    if (node == 1) return "\"c_{k-1}\"";
    return "\"" + std::to_string(node - 2) + "\"";
  };
  std::ostringstream os;
  os << "digraph " << (kind == CellKind::normal ? "normal" : "reduce") << " {\n";
  os << "  rankdir=LR;\n";
  os << "  node [style=filled, shape=rect, align=center, fontname=\"helvetica\"];\n";
  os << "  edge [fontname=\"helvetica\"];\n";
  os << "  \"c_{k-2}\" [fillcolor=darkseagreen2];\n";
  os << "  \"c_{k-1}\" [fillcolor=darkseagreen2];\n";
  for (std::size_t j = 0; j < c.size(); ++j) os << "  " << vertex(static_cast<int>(j) + 2) << " [fillcolor=lightblue];\n";
  os << "  \"c_{k}\" [fillcolor=palegoldenrod];\n";
  for (std::size_t j = 0; j < c.size(); ++j)
    for (const auto& in : c[j])
      os << "  " << vertex(in.from) << " -> " << vertex(static_cast<int>(j) + 2) << " [label=\""
         << op_name(in.op) << "\", fillcolor=gray];\n";
  for (int n : g.concat) os << "  " << vertex(n) << " -> \"c_{k}\" [fillcolor=gray];\n";
  os << "}\n";
  return os.str();
}

}  // namespace pdarts
