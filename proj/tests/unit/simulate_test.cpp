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

#include "tracewave/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "tracewave/features.hpp"

namespace tracewave::simulate {
namespace {

using capture::FrameKind;
using capture::Link;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SiteMap open_map(int w, int h, const std::string& id = "test") {
  std::string text = std::to_string(w) + " " + std::to_string(h) + " 0.5 " + id + "\n";
  for (int j = 0; j < h; ++j) {
    for (int i = 0; i < w; ++i) {
      text += (i == 0 || j == 0 || i == w - 1 || j == h - 1) ? '#' : '.';
    }
    text += '\n';
  }
  std::istringstream in(text);
  return SiteMap::parse(in);
}

ChannelModel quiet_channel() {
  ChannelModel c;
  c.shadow_sigma_db = 0.0;
  c.ftm_jitter_sigma_ns = 0.0;
  return c;
}

RouterSpec router(const std::string& id, Vec2 pos, bool ftm = false,
                  bool ble = false) {
  RouterSpec r;
  r.router_id = id;
  r.pos_m = pos;
  r.supports_ftm = ftm;
  r.supports_ble = ble;
  return r;
}

TEST(SiteMap, ParseWriteRoundTrip) {
  const std::string text = "5 4 0.25 lab\n#####\n#.?.#\n#..##\n#####\n";
  std::istringstream in(text);
  const SiteMap m = SiteMap::parse(in);
  EXPECT_EQ(m.width(), 5);
  EXPECT_EQ(m.height(), 4);
  EXPECT_EQ(m.site_id(), "lab");
  EXPECT_EQ(m.at({2, 1}), Cell::kUnknown);
  EXPECT_EQ(m.at({3, 2}), Cell::kOccupied);
  EXPECT_EQ(m.at({-1, 0}), Cell::kOccupied);
  std::ostringstream out;
  m.write(out);
  EXPECT_EQ(out.str(), text);
}

TEST(SiteMap, RejectsMalformedGrids) {
  for (const char* text : {"3 3 0.5 x\n###\n#.#\n",  // short
                           "3 3 0.5 x\n###\n#.#\n#.#\n",  // open border
                           "3 3 0.5 x\n###\n###\n###\n",  // no free cell
                           "3 3 0.5 x\n###\n#,#\n###\n",
                           "3 3 0 x\n###\n#.#\n###\n"}) {
    std::istringstream in(text);
    EXPECT_THROW(SiteMap::parse(in), Error) << text;
  }
}

TEST(SiteMap, BundledMapsMatchGenerators) {
  const std::string dir = TRACEWAVE_REPO_DATA;
  std::ostringstream corridor, room, routers;
  corridor_map().write(corridor);
  room_map().write(room);
  write_routers(routers, corridor_routers());
  EXPECT_EQ(slurp(dir + "/maps/corridor.map"), corridor.str());
  EXPECT_EQ(slurp(dir + "/maps/room.map"), room.str());
  EXPECT_EQ(slurp(dir + "/maps/corridor_routers.csv"), routers.str());
  EXPECT_EQ(corridor_map().width() * 0.5, 30.0);
  EXPECT_EQ(corridor_map().height() * 0.5, 4.0);
  EXPECT_EQ(room_map().width() * 0.5, 20.0);
}

TEST(Routers, ParseRoundTripAndPlacement) {
  const auto routers = corridor_routers();
  std::ostringstream out;
  write_routers(out, routers);
  std::istringstream in(out.str());
  const auto parsed = parse_routers(in);
  ASSERT_EQ(parsed.size(), 8u);
  EXPECT_EQ(parsed[3].router_id, "R4");
  EXPECT_EQ(parsed[3].pos_m, routers[3].pos_m);
  EXPECT_TRUE(parsed[3].supports_ftm);
  EXPECT_NO_THROW(check_routers(corridor_map(), parsed));
  std::vector<RouterSpec> bad = {router("X", {0.1, 0.1})};
  EXPECT_THROW(check_routers(corridor_map(), bad), Error);
  std::istringstream dup(
      "router_id,x_m,y_m,supports_ftm,supports_ble,p_tx_wifi_dbm,p_tx_ble_dbm\n"
      "A,1,1,0,0,20,0\nA,2,1,0,0,20,0\n");
  EXPECT_THROW(parse_routers(dup), ParseError);
}

TEST(SiteDeployment, DefaultKindsAndOrdering) {
  std::vector<RouterSpec> routers = {router("R2", {1, 1}, true, false),
                                     router("R1", {1, 1}, false, true)};
  const auto d = make_deployment(routers);
  EXPECT_EQ(d.manifest(), (std::vector<std::string>{
                              "R1:ble_loss", "R1:wifi_loss", "R2:tof", "R2:wifi_loss"}));
  const auto rssi = make_deployment(
      routers, std::vector{features::FeatureKind::kWifiRssi, features::FeatureKind::kTof});
  EXPECT_EQ(rssi.manifest(),
            (std::vector<std::string>{"R1:wifi_rssi", "R2:tof", "R2:wifi_rssi"}));
}

TEST(Channel, Validation) {
  ChannelModel c;
  EXPECT_NO_THROW(c.validate());
  c.exponent_n = 7;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.response_rate = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.shadow_sigma_db = -1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Emission, ReferenceDistanceGivesTxMinusL0) {
  std::vector<RouterSpec> routers = {router("R1", {2.0, 1.0}, false, true)};
  DeviceProfile device;
  std::mt19937_64 rng(1);
  const auto records = emit_at({1.0, 1.0}, 0, routers, quiet_channel(), device, rng);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].rssi_dbm, 15 - 40);
  EXPECT_EQ(records[1].link, Link::kBle);
  EXPECT_EQ(records[1].rssi_dbm, 0 - 40);
  EXPECT_EQ(records[0].truth_pos_m, (Vec2{1.0, 1.0}));
}

TEST(Emission, FtmAtThreeMetresDecodesToTenNanoseconds) {
  std::vector<RouterSpec> routers = {router("R1", {4.0, 1.0}, true, false)};
  std::mt19937_64 rng(1);
  const auto records =
      emit_at({1.0, 1.0}, 0, routers, quiet_channel(), DeviceProfile{}, rng);
  ASSERT_EQ(records.size(), 2u);
  ASSERT_EQ(records[1].frame_kind, FrameKind::kFtm);
  EXPECT_EQ(features::tof_from_ftm(*records[1].ftm), 10.0);
  EXPECT_EQ(3.0 / features::kSpeedOfLightMps * 1e9, 10.006671114076051);
}

TEST(Emission, FullResponseGivesOneWifiRecordPerRouter) {
  std::vector<RouterSpec> routers;
  for (int k = 0; k < 4; ++k) {
    routers.push_back(router("R" + std::to_string(k), {1.0 + k, 1.0}));
  }
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto records = emit_at({3.3, 1.2}, 0, routers, ChannelModel{}, DeviceProfile{}, rng);
    EXPECT_EQ(records.size(), 4u);
    for (const auto& r : records) EXPECT_EQ(r.link, Link::kWifi);
  }
}

TEST(Emission, BurstStaysInsideOneGridSlot) {
  const auto routers = corridor_routers();
  std::mt19937_64 rng(2);
  const auto records = emit_at({10, 2}, 1'000'000'000, routers, ChannelModel{},
                               DeviceProfile{}, rng);
  for (const auto& r : records) {
    EXPECT_EQ(features::round_to_grid(r.timestamp_ns), 1'000'000'000);
  }
}

TEST(Emission, RssiNonIncreasingInDistanceWithoutShadowing) {
  std::vector<RouterSpec> routers = {router("R1", {0.75, 1.0}, false, true)};
  std::mt19937_64 rng(1);
  int last_wifi = 0, last_ble = 0;
  for (double x = 0.75; x < 29.5; x += 0.1) {
    const auto records = emit_at({x, 1.0}, 0, routers, quiet_channel(), DeviceProfile{}, rng);
    EXPECT_LE(records[0].rssi_dbm, last_wifi);
    EXPECT_LE(records[1].rssi_dbm, last_ble);
    last_wifi = records[0].rssi_dbm;
    last_ble = records[1].rssi_dbm;
  }
}

TEST(Planner, EmptyVisitedScoresPathLength) {
  const SiteMap m = open_map(22, 22);
  SurveyState state({5.1, 5.2}, 3);
  auto path = plan_next_path(state, m);
  ASSERT_TRUE(path);
  const double len = distance(path->front(), path->back());
  EXPECT_GT(len, 0.0);
  EXPECT_EQ(path_score(*path, len, {}, PlannerParams{}), len);
  for (std::size_t k = 1; k < path->size(); ++k) {
    EXPECT_LE(distance((*path)[k - 1], (*path)[k]), 0.5 + 1e-12);
  }
}

TEST(Planner, FullyVisitedMapCompletes) {
  const SiteMap m = open_map(22, 22);
  SurveyState state({5.1, 5.2}, 3);
  for (double x = 0.5; x <= 10.5; x += 0.2) {
    for (double y = 0.5; y <= 10.5; y += 0.2) state.visited.push_back({x, y});
  }
  EXPECT_FALSE(plan_next_path(state, m));
  EXPECT_FALSE(plan_coverage_path(state, m, 0.5));
}

// Exhaustive argmax over every (start, free endpoint) pair.
std::optional<std::vector<Vec2>> brute_force_plan(const SiteMap& m, const SurveyState& s) {
  std::mt19937_64 rng = s.rng;
  const auto starts = sample_start_positions(m, s.pos_m, rng);
  const PlannerParams p;
  double best = 0.0;
  std::optional<std::vector<Vec2>> best_path;
  Vec2 best_end;
  for (const Vec2& a : starts) {
    for (int j = 0; j < m.height(); ++j) {
      for (int i = 0; i < m.width(); ++i) {
        if (m.at({i, j}) != Cell::kFree) continue;
        const Vec2 b = m.center({i, j});
        const double len = distance(a, b);
        // Obstruction check by dense marching.
        bool clear = true;
        const int n = static_cast<int>(std::ceil(len / 0.125));
        for (int k = 0; k <= n; ++k) {
          const double u = n == 0 ? 0.0 : double(k) / n;
          const Vec2 q = a + u * (b - a);
          if (m.at({int(std::floor(q.x / 0.5)), int(std::floor(q.y / 0.5))}) != Cell::kFree) clear = false;
        }
        if (!clear) continue;
        const auto pts = path_points(a, b, 0.5);
        int near = 0;
        for (const Vec2& q : pts) {
          bool hit = false;
          for (const Vec2& v : s.visited) hit |= distance(q, v) < 0.25;
          near += hit;
        }
        const double score = len - 2.0 * near;
        const bool lower_end = best_path && (b.y < best_end.y || (b.y == best_end.y && b.x < best_end.x));
        if (score > best || (best_path && score == best && lower_end)) {
          best = score;
          best_path = pts;
          best_end = b;
        }
      }
    }
  }
  return best_path;
}

TEST(Planner, MatchesExhaustiveEnumerationOnCorridor) {
  // 20 free cells in one row.
  const SiteMap m = open_map(22, 3, "strip");
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> x(0.5, 10.5), y(0.5, 1.0);
  for (int round = 0; round < 40; ++round) {
    SurveyState state({x(rng), y(rng)}, 100 + round);
    const int n_visited = round % 8 * 3;
    for (int k = 0; k < n_visited; ++k) state.visited.push_back({x(rng), y(rng)});
    const auto expected = brute_force_plan(m, state);
    const auto got = plan_next_path(state, m);
    ASSERT_EQ(got.has_value(), expected.has_value()) << "round " << round;
    if (got) {
      EXPECT_EQ(*got, *expected) << "round " << round;
    }
  }
}

TEST(Planner, PathPointSpacing) {
  const auto pts = path_points({0, 0}, {2, 0}, 0.5);
  EXPECT_EQ(pts.size(), 5u);
  EXPECT_EQ(pts[2], (Vec2{1, 0}));
  EXPECT_EQ(path_points({1, 1}, {1, 1}, 0.5).size(), 1u);
  EXPECT_EQ(path_points({0, 0}, {1.1, 0}, 0.5).size(), 4u);
}

TEST(Planner, StartsLieOnFreeRaySegments) {
  const SiteMap m = corridor_map();
  std::mt19937_64 rng(4);
  const Vec2 from{3.3, 1.7};
  for (const Vec2& s : sample_start_positions(m, from, rng)) {
    EXPECT_TRUE(segment_clear(m, from, s));
  }
  EXPECT_EQ(sample_start_positions(m, from, rng).size(), m.cells_of(Cell::kOccupied).size());
}

TEST(Step, BlockedMoveRetracesToPathStart) {
  const SiteMap m = open_map(22, 3);
  SurveyState state({1.0, 0.75}, 1);
  state.path = {{1.0, 0.75}, {2.0, 0.75}, {3.0, 0.75}, {4.0, 0.75}};
  std::vector<RouterSpec> routers = {router("R1", {5, 0.75})};
  const std::set<CellIndex> blocked = {{7, 1}};  // covers x in [3.5, 4)
  int emitted = 0;
  bool retraced = false;
  while (state.next < state.path.size()) {
    const auto r = step_and_emit(state, m, routers, ChannelModel{}, DeviceProfile{}, {}, blocked);
    emitted += r.emitted;
    retraced |= r.retraced;
  }
  EXPECT_TRUE(retraced);
  EXPECT_EQ(emitted, 3);
  EXPECT_EQ(state.pos_m, (Vec2{1.0, 0.75}));
  EXPECT_EQ(state.retraces, 1u);
}

TEST(Step, OffMapWaypointIsContractViolation) {
  const SiteMap m = open_map(10, 10);
  SurveyState state({1.0, 1.0}, 1);
  state.path = {{-3.0, 1.0}};
  EXPECT_THROW(step_and_emit(state, m, {}, ChannelModel{}, DeviceProfile{}), PlannerError);
  state.path = {{0.1, 0.1}};
  EXPECT_THROW(step_and_emit(state, m, {}, ChannelModel{}, DeviceProfile{}), PlannerError);
}

TEST(Survey, CorridorCoverageCollisionFreedomAndSpacing) {
  const SiteMap m = corridor_map();
  const auto routers = corridor_routers();
  SurveyOptions o;
  o.seed = 5;
  o.n_trajectories = 3;
  const auto runs = run_survey(m, routers, ChannelModel{}, DeviceProfile{}, o);
  ASSERT_EQ(runs.size(), 3u);
  for (const auto& run : runs) {
    EXPECT_LE(coverage_gap_m(m, run.visited), 0.5);
    for (std::size_t k = 1; k < run.moves.size(); ++k) {
      ASSERT_TRUE(segment_clear(m, run.moves[k - 1], run.moves[k]));
    }
    for (std::size_t a = 0; a < run.visited.size(); ++a) {
      for (std::size_t b = a + 1; b < run.visited.size(); ++b) {
        ASSERT_GE(distance(run.visited[a], run.visited[b]), 0.25);
      }
    }
    EXPECT_EQ(run.truth.size(), run.visited.size());
  }
  EXPECT_NE(runs[0].visited, runs[1].visited);
  EXPECT_GE(runs[1].truth.front().t_ns, SurveyOptions{}.t0_ns + 86'400'000'000'000LL);
}

TEST(Survey, SameSeedIsByteIdentical) {
  const SiteMap m = corridor_map();
  const auto routers = corridor_routers();
  SurveyOptions o;
  o.seed = 42;
  std::ostringstream a, b, ta, tb;
  const auto r1 = run_survey(m, routers, ChannelModel{}, DeviceProfile{}, o);
  const auto r2 = run_survey(m, routers, ChannelModel{}, DeviceProfile{}, o);
  capture::write_capture(a, r1[0].records);
  capture::write_capture(b, r2[0].records);
  write_truth(ta, r1);
  write_truth(tb, r2);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(ta.str(), tb.str());
  o.seed = 43;
  std::ostringstream c;
  capture::write_capture(c, run_survey(m, routers, ChannelModel{}, DeviceProfile{}, o)[0].records);
  EXPECT_NE(a.str(), c.str());
}

TEST(Survey, CaptureRoundTripsAndRecoversTxPower) {
  const SiteMap m = corridor_map();
  const auto routers = corridor_routers();
  const auto runs = run_survey(m, routers, ChannelModel{}, DeviceProfile{}, SurveyOptions{});
  std::stringstream io;
  capture::write_capture(io, runs[0].records);
  const auto parsed = capture::parse_capture(io);
  EXPECT_EQ(parsed, runs[0].records);
  const auto estimate = features::estimate_wifi_tx_power(parsed, "robot");
  EXPECT_GE(estimate.n_samples, 100u);
  EXPECT_NEAR(estimate.p_wifi_tx_dbm, 15.0, 0.5);
}

}  // namespace
}  // namespace tracewave::simulate
