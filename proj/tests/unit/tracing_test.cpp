// Copyright 2026 The Tracewave Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tracewave/tracing.hpp"

#include <gtest/gtest.h>

#include <map>
#include <queue>
#include <sstream>

#include "contact_oracle.hpp"

namespace tracewave::tracing {
namespace {

TraceRecord rec(std::string key, double t, int i, int j, std::string site = "s1") {
  return {std::move(key), std::move(site), t, {i, j}};
}

TEST(ContactHistory, SingleMatch) {
  const std::vector<TraceRecord> target = {rec("A", 100, 0, 0)};
  const std::vector<TraceRecord> others = {rec("B", 110, 1, 0)};
  const auto h = generate_contact_history(target, others);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(h[0].first_key, "A");
  EXPECT_EQ(h[0].second_key, "B");
  EXPECT_EQ(h[0].contact_duration, 1u);
  EXPECT_DOUBLE_EQ(h[0].min_distance_cells, 1.0);
  EXPECT_DOUBLE_EQ(h[0].avg_distance_cells, 1.0);
  EXPECT_DOUBLE_EQ(h[0].last_contact_time_s, 100.0);
  EXPECT_EQ(h[0].bands, (std::array<std::size_t, 3>{1, 0, 0}));
}

TEST(ContactHistory, DistanceThreshold) {
  const std::vector<TraceRecord> target = {rec("A", 100, 0, 0)};
  EXPECT_TRUE(generate_contact_history(target, std::vector{rec("B", 100, 16, 0)}).empty());
  const auto at_edge = generate_contact_history(target, std::vector{rec("B", 100, 9, 12)});
  ASSERT_EQ(at_edge.size(), 1u);  // 9-12-15
  EXPECT_EQ(at_edge[0].bands[2], 1u);
  EXPECT_TRUE(generate_contact_history(target, std::vector{rec("B", 100, 11, 11)}).empty());
}

TEST(ContactHistory, ClosedWindow) {
  const std::vector<TraceRecord> target = {rec("A", 100, 0, 0)};
  EXPECT_EQ(generate_contact_history(target, std::vector{rec("B", 115.0, 0, 0)}).size(), 1u);
  EXPECT_EQ(generate_contact_history(target, std::vector{rec("B", 85.0, 0, 0)}).size(), 1u);
  EXPECT_TRUE(generate_contact_history(target, std::vector{rec("B", 115.001, 0, 0)}).empty());
}

TEST(ContactHistory, SiteAndSelfPairsExcluded) {
  const std::vector<TraceRecord> target = {rec("A", 100, 0, 0)};
  const std::vector<TraceRecord> others = {rec("B", 100, 0, 0, "s2"), rec("A", 100, 0, 0)};
  EXPECT_TRUE(generate_contact_history(target, others).empty());
  EXPECT_TRUE(generate_contact_history({}, others).empty());
  EXPECT_TRUE(generate_contact_history(target, {}).empty());
}

TEST(ContactHistory, AggregatesPerPairAndSite) {
  const std::vector<TraceRecord> target = {rec("A", 0, 0, 0), rec("A", 30, 0, 0),
                                           rec("A", 60, 0, 0, "s2")};
  const std::vector<TraceRecord> others = {rec("C", 1, 3, 4), rec("B", 2, 0, 6),
                                           rec("B", 31, 0, 2), rec("B", 61, 0, 12, "s2")};
  const auto h = generate_contact_history(target, others);
  ASSERT_EQ(h.size(), 3u);
  EXPECT_EQ(h[0].second_key, "B");
  EXPECT_EQ(h[0].site_id, "s1");
  EXPECT_EQ(h[0].contact_duration, 2u);
  EXPECT_DOUBLE_EQ(h[0].avg_distance_cells, 4.0);
  EXPECT_DOUBLE_EQ(h[0].min_distance_cells, 2.0);
  EXPECT_DOUBLE_EQ(h[0].last_contact_time_s, 30.0);
  EXPECT_EQ(h[0].bands, (std::array<std::size_t, 3>{1, 1, 0}));
  EXPECT_EQ(h[1].site_id, "s2");
  EXPECT_EQ(h[1].bands[2], 1u);
  EXPECT_EQ(h[2].second_key, "C");
  EXPECT_DOUBLE_EQ(h[2].min_distance_cells, 5.0);
}

TEST(ContactHistory, MatchesDoubleLoopOracle) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const auto inst = testing::random_contact_instance(seed, 400);
    ContactOptions opt;
    const auto fast = generate_contact_history(inst.target, inst.others, opt);
    const auto slow = testing::brute_force_contacts(inst.target, inst.others,
                                                    opt.max_distance_cells,
                                                    opt.time_resolution_s);
    EXPECT_EQ(fast, slow) << "seed " << seed;
  }
}

TEST(ContactHistory, SymmetricUnderSwap) {
  const auto inst = testing::random_contact_instance(77, 300);
  const auto ab = generate_contact_history(inst.target, inst.others);
  const auto ba = generate_contact_history(inst.others, inst.target);
  std::map<std::tuple<std::string, std::string, std::string>, const ContactHistory*> rev;
  for (const auto& h : ba) rev[{h.second_key, h.first_key, h.site_id}] = &h;
  ASSERT_FALSE(ab.empty());
  for (const auto& h : ab) {
    const auto it = rev.find({h.first_key, h.second_key, h.site_id});
    ASSERT_NE(it, rev.end());
    EXPECT_EQ(h.contact_duration, it->second->contact_duration);
    EXPECT_EQ(h.bands, it->second->bands);
    EXPECT_DOUBLE_EQ(h.min_distance_cells, it->second->min_distance_cells);
    EXPECT_NEAR(h.avg_distance_cells, it->second->avg_distance_cells, 1e-12);
  }
}

TEST(ContactHistory, InvariantsAndMonotonicity) {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto inst = testing::random_contact_instance(seed, 300);
    const auto base = generate_contact_history(inst.target, inst.others);
    const auto wide = generate_contact_history(inst.target, inst.others, {20.0, 30.0});
    const auto longer = generate_contact_history(inst.target, inst.others, {15.0, 60.0});
    std::map<std::tuple<std::string, std::string, std::string>, std::size_t> dw, dl;
    for (const auto& h : wide) dw[{h.first_key, h.second_key, h.site_id}] = h.contact_duration;
    for (const auto& h : longer) dl[{h.first_key, h.second_key, h.site_id}] = h.contact_duration;
    for (const auto& h : base) {
      EXPECT_GE(h.contact_duration, 1u);
      EXPECT_EQ(h.bands[0] + h.bands[1] + h.bands[2], h.contact_duration);
      EXPECT_LE(h.min_distance_cells, h.avg_distance_cells);
      EXPECT_LE(h.avg_distance_cells, 15.0);
      EXPECT_NE(h.first_key, h.second_key);
      const std::tuple key{h.first_key, h.second_key, h.site_id};
      EXPECT_GE(dw[key], h.contact_duration);
      EXPECT_GE(dl[key], h.contact_duration);
    }
  }
}

TEST(ContactHistory, TracesFromPath) {
  const std::vector<PathPoint> path = {{1'500'000'000, {0.74, 3.1}}, {2'000'000'000, {-0.1, 0}}};
  const auto t = traces_from_path("b1", "corridor", path, 0.5);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_DOUBLE_EQ(t[0].time_s, 1.5);
  EXPECT_EQ(t[0].cell, (GridCell{1, 6}));
  EXPECT_EQ(t[1].cell, (GridCell{-1, 0}));
  EXPECT_THROW(traces_from_path("b", "s", path, 0.0), Error);
}

TEST(Indirect, HalfLifeWeights) {
  IndirectOptions opt;
  opt.half_life_s = 60.0;
  const std::vector<TraceRecord> target = {rec("A", 100, 0, 0)};
  auto h = indirect_contacts(target, std::vector{rec("B", 100, 0, 0)}, opt);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_DOUBLE_EQ(h[0].exposure, 1.0);
  h = indirect_contacts(target, std::vector{rec("B", 160, 0, 0)}, opt);
  EXPECT_DOUBLE_EQ(h[0].exposure, 0.5);
  h = indirect_contacts(target, std::vector{rec("B", 100, 0, 0), rec("B", 160, 1, 0)}, opt);
  EXPECT_DOUBLE_EQ(h[0].exposure, 1.5);
  EXPECT_EQ(h[0].contact_duration, 2u);
}

TEST(Indirect, OneSidedWindowAndHorizon) {
  IndirectOptions opt;
  opt.half_life_s = 10.0;
  const std::vector<TraceRecord> target = {rec("A", 100, 0, 0)};
  EXPECT_TRUE(indirect_contacts(target, std::vector{rec("B", 99, 0, 0)}, opt).empty());
  EXPECT_EQ(indirect_contacts(target, std::vector{rec("B", 140, 0, 0)}, opt).size(), 1u);
  EXPECT_TRUE(indirect_contacts(target, std::vector{rec("B", 140.5, 0, 0)}, opt).empty());
  opt.site_id = "s2";
  EXPECT_TRUE(indirect_contacts(target, std::vector{rec("B", 100, 0, 0)}, opt).empty());
  opt.half_life_s = 0.0;
  EXPECT_THROW(indirect_contacts(target, target, opt), Error);
}

ContactHistory pair(std::string a, std::string b) {
  ContactHistory h;
  h.first_key = std::move(a);
  h.second_key = std::move(b);
  h.site_id = "s1";
  h.contact_duration = 1;
  return h;
}

TEST(Graph, StarAndEmpty) {
  const std::vector<ContactHistory> h = {pair("c", "a"), pair("c", "b"), pair("c", "d"),
                                         pair("a", "c")};
  const auto g = build_contact_graph({"c"}, h);
  EXPECT_EQ(g.nodes, (std::vector<std::string>{"a", "b", "c", "d"}));
  ASSERT_EQ(g.edges.size(), 3u);
  for (const auto& e : g.edges) EXPECT_EQ(e.from, "c");

  const auto empty = build_contact_graph({"x", "y"}, {});
  EXPECT_EQ(empty.nodes, (std::vector<std::string>{"x", "y"}));
  EXPECT_TRUE(empty.edges.empty());
}

TEST(Graph, ChainDepthTwo) {
  const std::vector<ContactHistory> h = {pair("c", "a"), pair("a", "c"), pair("a", "b"),
                                         pair("b", "a"), pair("b", "z")};
  const auto g = build_contact_graph({"c"}, h, 2);
  ASSERT_EQ(g.edges.size(), 2u);
  EXPECT_EQ(std::tie(g.edges[0].from, g.edges[0].to), std::make_tuple("c", "a"));
  EXPECT_EQ(std::tie(g.edges[1].from, g.edges[1].to), std::make_tuple("a", "b"));
  EXPECT_EQ(g.edges[1].hop, 2u);
  EXPECT_EQ(build_contact_graph({"c"}, h, 1).edges.size(), 1u);
}

TEST(Graph, MatchesBfsOracle) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> node(0, 14);
  for (int round = 0; round < 50; ++round) {
    std::vector<ContactHistory> h;
    for (int k = 0; k < 25; ++k) {
      const int a = node(rng), b = node(rng);
      if (a != b) h.push_back(pair("n" + std::to_string(a), "n" + std::to_string(b)));
    }
    const std::set<std::string> confirmed = {"n0", "n" + std::to_string(node(rng))};
    for (std::size_t depth = 1; depth <= 3; ++depth) {
      // Oracle: hop distance by queue BFS; an edge u->v belongs to the graph
      // iff v is first reached at hop(u) + 1 <= depth.
      std::map<std::string, std::size_t> hop;
      std::queue<std::string> q;
      for (const auto& c : confirmed) {
        hop[c] = 0;
        q.push(c);
      }
      while (!q.empty()) {
        const auto u = q.front();
        q.pop();
        for (const auto& e : h) {
          if (e.first_key == u && !hop.contains(e.second_key)) {
            hop[e.second_key] = hop[u] + 1;
            q.push(e.second_key);
          }
        }
      }
      std::multiset<std::pair<std::string, std::string>> expected, actual;
      for (const auto& e : h) {
        const auto hu = hop.find(e.first_key), hv = hop.find(e.second_key);
        if (hu != hop.end() && hv != hop.end() && hv->second == hu->second + 1 &&
            hv->second <= depth) {
          expected.insert({e.first_key, e.second_key});
        }
      }
      for (const auto& e : build_contact_graph(confirmed, h, depth).edges) {
        actual.insert({e.from, e.to});
        EXPECT_EQ(hop.at(e.to), e.hop);
      }
      EXPECT_EQ(actual, expected) << "round " << round << " depth " << depth;
    }
  }
}

TEST(Report, CsvLayout) {
  ContactHistory h = pair("b1", "b2");
  h.last_contact_time_s = 100;
  h.avg_distance_cells = 2.5;
  h.min_distance_cells = 1;
  h.bands = {1, 0, 0};
  std::ostringstream out;
  write_contacts(out, std::vector{h});
  EXPECT_EQ(out.str(),
            "first_key,second_key,site_id,contact_duration,last_contact_time,avg_distance,"
            "min_distance,band_0_5,band_5_10,band_10_15\n"
            "b1,b2,s1,1,100.000,2.500,1.000,1,0,0\n");
}

}  // namespace
}  // namespace tracewave::tracing
