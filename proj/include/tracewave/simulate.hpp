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

// Site-survey simulator: ray-cast coverage planner over an occupancy grid
// and a log-distance channel that turns robot positions into captures.

#ifndef TRACEWAVE_SIMULATE_HPP_
#define TRACEWAVE_SIMULATE_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tracewave/capture.hpp"
#include "tracewave/common.hpp"
#include "tracewave/features.hpp"

namespace tracewave::simulate {

class PlannerError : public Error {
 public:
  using Error::Error;
};

enum class Cell : std::uint8_t { kOccupied, kFree, kUnknown };

struct CellIndex {
  int i = 0;  // column (x)
  int j = 0;  // row (y)

  friend auto operator<=>(const CellIndex&, const CellIndex&) = default;
};

class SiteMap {
 public:
  SiteMap() = default;
  SiteMap(int width, int height, double resolution_m, std::string site_id,
          std::vector<Cell> cells);

  // Text grid: header `width height resolution_m site_id`, then `height`
  // rows of `#`, `.` or `?`; row j of the file is cell row j.
  static SiteMap parse(std::istream& in);
  static SiteMap load(const std::filesystem::path& path);
  void write(std::ostream& out) const;

  int width() const { return width_; }
  int height() const { return height_; }
  double resolution() const { return resolution_; }
  const std::string& site_id() const { return site_id_; }

  bool inside(CellIndex c) const;
  Cell at(CellIndex c) const;  // outside = kOccupied
  CellIndex cell_of(Vec2 p) const;
  Vec2 center(CellIndex c) const;
  bool is_free(Vec2 p) const { return at(cell_of(p)) == Cell::kFree; }

  std::vector<CellIndex> cells_of(Cell kind) const;  // row-major

 private:
  int width_ = 0;
  int height_ = 0;
  double resolution_ = 1.0;
  std::string site_id_;
  std::vector<Cell> cells_;
};

// Corridor 30 x 4 m and open room 20 x 20 m, both at 0.5 m.
SiteMap corridor_map();
SiteMap room_map();

struct RouterSpec {
  std::string router_id;
  Vec2 pos_m;
  bool supports_ftm = false;
  bool supports_ble = false;
  double p_tx_wifi_dbm = 20.0;
  double p_tx_ble_dbm = 0.0;
};

// CSV `router_id,x_m,y_m,supports_ftm,supports_ble,p_tx_wifi_dbm,p_tx_ble_dbm`.
std::vector<RouterSpec> parse_routers(std::istream& in);
std::vector<RouterSpec> load_routers(const std::filesystem::path& path);
void write_routers(std::ostream& out, std::span<const RouterSpec> routers);
void check_routers(const SiteMap& map, std::span<const RouterSpec> routers);

// Eight routers along the corridor; every router has Wi-Fi, alternate ones
// add BLE or FTM.
std::vector<RouterSpec> corridor_routers();

// Feature layout of a site. Kinds per router default to wifi_loss plus
// ble_loss when the router has BLE and tof when it has FTM; columns are
// ordered by (router_id, kind name).
features::Deployment make_deployment(
    std::span<const RouterSpec> routers,
    std::optional<std::vector<features::FeatureKind>> kinds = std::nullopt);

struct ChannelModel {
  double l0_db = 40.0;
  double d0_m = 1.0;
  double exponent_n = 3.0;
  double shadow_sigma_db = 4.0;
  double ftm_jitter_sigma_ns = 1.0;
  double response_rate = 1.0;

  void validate() const;
  // Mean path loss at distance d (d floored at 0.1 m).
  double mean_loss_db(double d_m) const;
};

struct DeviceProfile {
  MacAddress mac = MacAddress(0x02'00'5E'00'00'01ULL);
  double p_tx_wifi_dbm = 15.0;
  double p_tx_ble_dbm = 0.0;
  double noise_floor_dbm = -95.0;  // SQI reference
  std::vector<capture::ModelInfoElement> model_info = {
      {1, {0x02, 0x04, 0x0b, 0x16}}, {45, {0x6f, 0x01, 0x1b}}, {127, {0x04, 0x00, 0x08}}};
  int bursts_per_waypoint = 1;
};

struct PlannerParams {
  double alpha = 1.0;
  double beta = 2.0;
  double near_radius_m = 0.25;
  double spacing_m = 0.5;
};

struct SurveyState {
  Vec2 pos_m;
  std::vector<Vec2> visited;
  std::mt19937_64 rng;
  std::int64_t t_ns = 0;

  std::vector<Vec2> path;  // active waypoints
  std::size_t next = 0;    // index of the next waypoint
  std::vector<Vec2> moves;  // every position the robot occupied, in order
  std::size_t retraces = 0;

  explicit SurveyState(Vec2 start = {}, std::uint64_t seed = 0,
                       std::int64_t t0_ns = 0);
};

// Cells visited by super-sampled marching at resolution / 4.
bool segment_clear(const SiteMap& map, Vec2 a, Vec2 b);

// One random start per ray from `from` to every occupied cell centre; each
// ray is cut at its first non-free sample.
std::vector<Vec2> sample_start_positions(const SiteMap& map, Vec2 from,
                                         std::mt19937_64& rng);

// Points from a to b inclusive, equal spacing no larger than `spacing_m`.
std::vector<Vec2> path_points(Vec2 a, Vec2 b, double spacing_m);

double path_score(std::span<const Vec2> points, double length_m,
                  std::span<const Vec2> visited, const PlannerParams& params);

// Best-scoring candidate path, or nullopt once no candidate scores above
// zero (survey complete).
std::optional<std::vector<Vec2>> plan_next_path(SurveyState& state,
                                                const SiteMap& map,
                                                const PlannerParams& params = {});

// Completion step once plan_next_path is exhausted: a 4-connected walk over
// free cell centres to the nearest free cell whose centre is farther than
// `coverage_radius_m` from every visited position. nullopt when none is
// reachable.
std::optional<std::vector<Vec2>> plan_coverage_path(
    const SurveyState& state, const SiteMap& map, double coverage_radius_m);

struct StepResult {
  std::vector<capture::PacketRecord> records;
  bool retraced = false;
  bool emitted = false;
};

// Advances the robot by one waypoint of state.path. `blocked` lists cells
// occupied by transient obstacles; a blocked move retraces to the path
// start.
StepResult step_and_emit(SurveyState& state, const SiteMap& map,
                         std::span<const RouterSpec> routers,
                         const ChannelModel& channel,
                         const DeviceProfile& device,
                         const PlannerParams& params = {},
                         const std::set<CellIndex>& blocked = {});

// Emits one waypoint's packets at t_ns from position pos.
std::vector<capture::PacketRecord> emit_at(Vec2 pos, std::int64_t t_ns,
                                           std::span<const RouterSpec> routers,
                                           const ChannelModel& channel,
                                           const DeviceProfile& device,
                                           std::mt19937_64& rng);

struct TruthPoint {
  std::size_t trajectory = 0;
  std::int64_t t_ns = 0;
  Vec2 pos_m;
};

struct SurveyRun {
  std::vector<capture::PacketRecord> records;  // chronological
  std::vector<TruthPoint> truth;
  std::vector<Vec2> visited;
  std::vector<Vec2> moves;
  std::size_t plans = 0;
  std::size_t coverage_plans = 0;
  std::size_t retraces = 0;
};

struct SurveyOptions {
  std::uint64_t seed = 1;
  std::size_t n_trajectories = 1;
  std::int64_t t0_ns = 1'700'000'000'000'000'000;
  PlannerParams planner;
  double coverage_radius_m = 0.5;
  std::size_t max_plans = 100'000;
};

// One run per trajectory; trajectory k uses seed + k, starts on a random
// free cell and at t0 + k days.
std::vector<SurveyRun> run_survey(const SiteMap& map,
                                  std::span<const RouterSpec> routers,
                                  const ChannelModel& channel,
                                  const DeviceProfile& device,
                                  const SurveyOptions& options);

// CSV `trajectory,t_ns,x_m,y_m`.
void write_truth(std::ostream& out, std::span<const SurveyRun> runs);

// Largest distance from a free cell centre to its nearest visited position.
double coverage_gap_m(const SiteMap& map, std::span<const Vec2> visited);

}  // namespace tracewave::simulate

#endif  // TRACEWAVE_SIMULATE_HPP_
