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

#include <numeric>

#include "pdarts/complexity.hpp"
#include "pdarts/evaluation.hpp"
#include "oracles.hpp"
#include "test_nets.hpp"

using namespace pdarts;
using u64 = std::uint64_t;

TEST(Complexity, DenseConvExample) {
  ParamStore<double> store;
  Rng rng(0);
  Builder<double> b(store, rng);
  Conv2d<double> conv(b, "c", 3, 16, 3, 1, 1);
  ComplexityReport r;
  conv.trace({3, 32, 32}, r);
  EXPECT_EQ(r.params, 432u);
  EXPECT_EQ(r.macs, 442368u);
}

TEST(Complexity, DepthwiseConvExample) {
  ParamStore<double> store;
  Rng rng(0);
  Builder<double> b(store, rng);
  Conv2d<double> conv(b, "dw", 16, 16, 3, 1, 1, 1, 16);
  ComplexityReport r;
  conv.trace({16, 8, 8}, r);
  EXPECT_EQ(r.params, 144u);
  EXPECT_EQ(r.macs, 9216u);
}

TEST(Complexity, LinearExample) {
  ParamStore<double> store;
  Rng rng(0);
  Builder<double> b(store, rng);
  Linear<double> fc(b, "fc", 256, 33);
  ComplexityReport r;
  fc.trace(256, r);
  EXPECT_EQ(r.params, 8481u);
  EXPECT_EQ(r.macs, 256u * 33u);
  EXPECT_EQ(store.params()[0].var.size() + store.params()[1].var.size(), 8481u);
}

TEST(Complexity, RandomGenotypesMatchSymbolicOracle) {
  for (int t = 0; t < 20; ++t) {
    const int nodes = 2 + t % 4;
    const int cells = 3 + t % 5;
    const auto g = testnets::random_genotype(nodes, 100 + t, cells, 4);
    EvalNetwork<float> net(g, cells, 4 + 2 * (t % 3), 10, LabelMode::single_label, t % 2 == 0, t);
    for (int res : {8, 16, 32}) {
      const auto rep = complexity_report(net, res, res);
      const auto want = oracle::symbolic_cost(g, cells, 4 + 2 * (t % 3), 10, res, res);
      EXPECT_EQ(rep.params, want.params) << "genotype " << t << " res " << res;
      EXPECT_EQ(rep.macs, want.macs) << "genotype " << t << " res " << res;
      EXPECT_EQ(count_params(net), rep.params);
      u64 p = 0, m = 0;
      for (const auto& l : rep.per_layer) {
        p += l.params;
        m += l.macs;
      }
      EXPECT_EQ(p, rep.params);
      EXPECT_EQ(m, rep.macs);
    }
  }
}

TEST(Complexity, TrunkMacsQuadrupleWhenResolutionDoubles) {
  for (int t = 0; t < 20; ++t) {
    const auto g = testnets::random_genotype(2 + t % 3, 300 + t, 4, 4);
    EvalNetwork<float> net(g, 4, 4, 7, LabelMode::single_label, false, t);
    for (int res : {8, 16, 32}) {
      const auto a = net.complexity(res, res), b = net.complexity(2 * res, 2 * res);
      auto trunk = [](const ComplexityReport& r) {
        u64 m = 0;
        for (const auto& l : r.per_layer)
          if (l.layer_id != "classifier") m += l.macs;
        return m;
      };
      EXPECT_EQ(trunk(b), 4 * trunk(a));
      EXPECT_EQ(a.params, b.params);
    }
  }
}

TEST(Complexity, SupernetTotalsEqualLayerSums) {
  SupernetSpec spec;
  spec.num_cells = 5;
  spec.init_channels = 4;
  Supernet<float> net(spec, 3, 0);
  const auto rep = net.complexity(16, 16);
  EXPECT_EQ(rep.params, std::accumulate(rep.per_layer.begin(), rep.per_layer.end(), u64{0},
                                        [](u64 s, const LayerCost& l) { return s + l.params; }));
  EXPECT_EQ(rep.params, count_params(net));
}

TEST(Complexity, IncompatibleResolutionIsAShapeError) {
  const auto g = testnets::random_genotype(2, 1, 3, 4);
  EvalNetwork<float> net(g, 3, 4, 2, LabelMode::single_label, false, 0);
  EXPECT_THROW(net.complexity(6, 6), ShapeError);
}
