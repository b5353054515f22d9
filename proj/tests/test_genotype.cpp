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

#include <regex>

#include "pdarts/genotype.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace pdarts;

namespace {

Genotype sample_genotype() {
  Genotype g;
  g.normal = {{NodeInput{OpKind::sep_conv_3x3, 0}, NodeInput{OpKind::skip_connect, 1}},
              {NodeInput{OpKind::dil_conv_5x5, 1}, NodeInput{OpKind::max_pool_3x3, 2}}};
  g.reduce = {{NodeInput{OpKind::avg_pool_3x3, 0}, NodeInput{OpKind::sep_conv_5x5, 1}},
              {NodeInput{OpKind::skip_connect, 0}, NodeInput{OpKind::dil_conv_3x3, 2}}};
  g.concat = {2, 3};
  g.meta = {4, 16, 2, 42, "0123456789abcdef"};
  return g;
}

}  // namespace

TEST(Discretize, ZeroIsExcludedFromArgmax) {
  ArchitectureParams<double> a(2, {kAllOps.begin(), kAllOps.end()});
  for (auto k : {CellKind::normal, CellKind::reduction})
    for (int e = 0; e < a.num_edges(); ++e) {
      a.at(k, e, static_cast<int>(OpKind::skip_connect)) = 2.0;
      a.at(k, e, static_cast<int>(OpKind::sep_conv_3x3)) = 1.0;
      a.at(k, e, static_cast<int>(OpKind::zero)) = 3.0;
    }
  auto g = discretize(a);
  for (const auto& node : g.normal)
    for (const auto& in : node) EXPECT_EQ(in.op, OpKind::skip_connect);
  // With zero admitted every edge picks it, leaving no node inputs.
  EXPECT_THROW(discretize(a, DiscretizeOptions{true}), ContractError);
}

TEST(Discretize, KeepsTopTwoEdges) {
  ArchitectureParams<double> a(2, {OpKind::sep_conv_3x3, OpKind::zero});
  // Node 3 has three incoming edges (rows 2, 3, 4); make their chosen-op
  // weights 0.5-ish, 0.4-ish, 0.3-ish in that order of source 0, 1, 2.
  auto set_weight = [&](int e, double w) {
    a.at(CellKind::normal, e, 0) = std::log(w / (1 - w));
    a.at(CellKind::normal, e, 1) = 0.0;
  };
  set_weight(2, 0.5);
  set_weight(3, 0.4);
  set_weight(4, 0.3);
  set_weight(0, 0.9);
  set_weight(1, 0.8);
  auto g = discretize(a);
  EXPECT_EQ(g.normal[1][0].from, 0);
  EXPECT_EQ(g.normal[1][1].from, 1);
}

TEST(Discretize, TiesPreferLowerOpThenLowerSource) {
  ArchitectureParams<double> a(2, {kAllOps.begin(), kAllOps.end()});
  auto g = discretize(a);  // all-zero alpha: every weight ties
  for (const auto* c : {&g.normal, &g.reduce})
    for (const auto& node : *c) {
      EXPECT_EQ(node[0].op, OpKind::sep_conv_3x3);
      EXPECT_EQ(node[1].op, OpKind::sep_conv_3x3);
      EXPECT_EQ(node[0].from, 0);
      EXPECT_EQ(node[1].from, 1);
    }
}

TEST(Discretize, MatchesBruteForceOnRandomAlpha) {
  for (int t = 0; t < 200; ++t) {
    auto a = oracle::random_alpha(3, 100 + 7 * t);
    auto g = discretize(a);
    g.validate();
    for (auto kind : {CellKind::normal, CellKind::reduction}) {
      const auto ref = oracle::brute_force_cell(a, kind);
      EXPECT_EQ(g.cell(kind), ref) << "trial " << t;
    }
    for (const auto* c : {&g.normal, &g.reduce})
      for (std::size_t j = 0; j < c->size(); ++j)
        for (const auto& in : (*c)[j]) {
          EXPECT_NE(in.op, OpKind::zero);
          EXPECT_LT(in.from, static_cast<int>(j) + 2);
        }
  }
}

TEST(Discretize, InvariantToPerEdgeShift) {
  for (int t = 0; t < 20; ++t) {
    auto a = oracle::random_alpha(4, 500 + t);
    auto b = a;
    b.of(CellKind::normal) = a.of(CellKind::normal).clone();
    b.of(CellKind::reduction) = a.of(CellKind::reduction).clone();
    auto shifts = testutil::randn(a.num_edges(), 900 + t, 5.0);
    for (auto k : {CellKind::normal, CellKind::reduction})
      for (int e = 0; e < a.num_edges(); ++e)
        for (int o = 0; o < 8; ++o) b.at(k, e, o) += shifts[e];
    EXPECT_EQ(discretize(a), discretize(b));
  }
}

TEST(SkipFraction, CountsBothCells) {
  auto g = sample_genotype();
  EXPECT_DOUBLE_EQ(skip_fraction(g), 2.0 / 8.0);
}

TEST(Serialize, RoundTrip) {
  auto g = sample_genotype();
  const auto text = serialize(g);
  EXPECT_EQ(parse_genotype(text), g);
  for (int t = 0; t < 20; ++t) {
    auto r = discretize(oracle::random_alpha(2 + t % 4, 40 + t), {}, GenotypeMeta{t + 2, 8, 0, std::uint64_t(t), "h"});
    EXPECT_EQ(parse_genotype(serialize(r)), r);
  }
}

TEST(Serialize, DocumentShape) {
  const auto text = serialize(sample_genotype());
  EXPECT_EQ(text.rfind("version: 1\n", 0), 0u);
  EXPECT_NE(text.find("  node 3: (dil_conv_5x5, 1), (max_pool_3x3, 2)\n"), std::string::npos);
  EXPECT_NE(text.find("concat: [2, 3]\n"), std::string::npos);
  EXPECT_NE(text.find("  search_config_hash: 0123456789abcdef\n"), std::string::npos);
}

TEST(Parse, EmptyDocumentIsParseError) {
  EXPECT_THROW(parse_genotype(""), ParseError);
  EXPECT_THROW(parse_genotype("\n\n  \n"), ParseError);
}

TEST(Parse, InvalidOpIsNamed) {
  auto text = serialize(sample_genotype());
  text.replace(text.find("sep_conv_3x3"), 12, "sep_conv_7x7");
  try {
    parse_genotype(text);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("sep_conv_7x7"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos);
  }
}

TEST(Parse, UnknownVersionIsVersionError) {
  auto text = serialize(sample_genotype());
  text.replace(0, 10, "version: 7");
  EXPECT_THROW(parse_genotype(text), VersionError);
}

TEST(Parse, StructuralErrorsNameTheField) {
  const auto good = serialize(sample_genotype());
  auto bad = std::regex_replace(good, std::regex("nodes: 2"), "nodes: two");
  EXPECT_THROW(parse_genotype(bad), ParseError);
  bad = std::regex_replace(good, std::regex("\\(skip_connect, 1\\)"), "(skip_connect, 5)");
  EXPECT_THROW(parse_genotype(bad), ParseError);
  bad = std::regex_replace(good, std::regex("concat: \\[2, 3\\]"), "concat: 2, 3");
  EXPECT_THROW(parse_genotype(bad), ParseError);
  bad = std::regex_replace(good, std::regex("\\(avg_pool_3x3, 0\\)"), "(zero, 0)");
  EXPECT_THROW(parse_genotype(bad), ParseError);
  EXPECT_THROW(parse_genotype(good + "extra: 1\n"), ParseError);
}

namespace {

int count_matches(const std::string& s, const std::regex& re) {
  return static_cast<int>(std::distance(std::sregex_iterator(s.begin(), s.end(), re), std::sregex_iterator()));
}

}  // namespace

TEST(Render, VertexAndEdgeCountsMatchArity) {
  const std::regex vertex(R"(^  "[^"]+" \[fillcolor=[a-z0-9]+\];$)", std::regex::multiline);
  const std::regex labeled(R"(-> "[^"]+" \[label=")");
  const std::regex unlabeled(R"(-> "c_\{k\}" \[fillcolor)");
  for (int t = 0; t < 20; ++t) {
    const int nodes = 2 + t % 3;
    auto g = discretize(oracle::random_alpha(nodes, 300 + t));
    for (auto kind : {CellKind::normal, CellKind::reduction}) {
      const auto dot = render(g, kind);
      EXPECT_EQ(count_matches(dot, vertex), 2 + nodes + 1);
      EXPECT_EQ(count_matches(dot, labeled), 2 * nodes);
      EXPECT_EQ(count_matches(dot, unlabeled), static_cast<int>(g.concat.size()));
      EXPECT_EQ(dot.rfind("digraph ", 0), 0u);
    }
  }
}

TEST(Render, SkipOnlyLabels) {
  Genotype g;
  g.normal = {{NodeInput{OpKind::skip_connect, 0}, NodeInput{OpKind::skip_connect, 1}},
              {NodeInput{OpKind::skip_connect, 0}, NodeInput{OpKind::skip_connect, 2}}};
  g.reduce = g.normal;
  g.concat = {2, 3};
  const auto dot = render(g, CellKind::normal);
  const std::regex label(R"re(label="([a-z_0-9]+)")re");
  int n = 0;
  for (auto it = std::sregex_iterator(dot.begin(), dot.end(), label); it != std::sregex_iterator(); ++it, ++n)
    EXPECT_EQ((*it)[1], "skip_connect");
  EXPECT_EQ(n, 4);
}
