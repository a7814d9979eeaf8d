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

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace tracewave::simulate {
namespace {

using capture::FrameKind;
using capture::Link;
using capture::PacketRecord;

constexpr std::int64_t kMillisecond = 1'000'000;
constexpr std::int64_t kFtmTurnaroundNs = 10'000;
constexpr double kRobotSpeedMps = 0.25;
constexpr std::int64_t kDwellNs = 1'000 * kMillisecond;
constexpr std::int64_t kBurstSpacingNs = 2 * kMillisecond;
constexpr std::int64_t kSlotBudgetNs = 40'000;  // packets of one burst share a grid slot
constexpr std::int64_t kDayNs = 86'400LL * 1'000'000'000LL;

char cell_char(Cell c) {
  switch (c) {
    case Cell::kOccupied: return '#';
    case Cell::kFree: return '.';
    case Cell::kUnknown: return '?';
  }
  return '#';
}

SiteMap walled_map(int width, int height, double resolution,
                   std::string site_id) {
  std::vector<Cell> cells(static_cast<std::size_t>(width) * height, Cell::kFree);
  for (int j = 0; j < height; ++j) {
    for (int i = 0; i < width; ++i) {
      if (i == 0 || j == 0 || i == width - 1 || j == height - 1) {
        cells[static_cast<std::size_t>(j) * width + i] = Cell::kOccupied;
      }
    }
  }
  return SiteMap(width, height, resolution, std::move(site_id), std::move(cells));
}

bool parse_bool(std::string_view s, std::size_t line) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw ParseError(line, "expected 0 or 1, got '" + std::string(s) + "'");
}

double parse_double(std::string_view s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(s), &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ParseError(line, "bad number '" + std::string(s) + "'");
  }
}

// Uniform bucket grid over visited positions for radius queries.
class NearIndex {
 public:
  NearIndex(const SiteMap& map, double radius)
      : radius_(radius),
        cols_(std::max(1, static_cast<int>(std::ceil(map.width() * map.resolution() / radius)) + 1)),
        rows_(std::max(1, static_cast<int>(std::ceil(map.height() * map.resolution() / radius)) + 1)),
        buckets_(static_cast<std::size_t>(cols_) * rows_) {}

  void add(Vec2 p) { buckets_[index(bucket(p.x, cols_), bucket(p.y, rows_))].push_back(p); }

  bool near(Vec2 p) const {
    const int bx = bucket(p.x, cols_);
    const int by = bucket(p.y, rows_);
    const double r2 = radius_ * radius_;
    for (int y = std::max(0, by - 1); y <= std::min(rows_ - 1, by + 1); ++y) {
      for (int x = std::max(0, bx - 1); x <= std::min(cols_ - 1, bx + 1); ++x) {
        for (const Vec2& v : buckets_[index(x, y)]) {
          const double dx = v.x - p.x;
          const double dy = v.y - p.y;
          if (dx * dx + dy * dy < r2) return true;
        }
      }
    }
    return false;
  }

 private:
  int bucket(double v, int n) const {
    return std::clamp(static_cast<int>(std::floor(v / radius_)), 0, n - 1);
  }
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * cols_ + x;
  }

  double radius_;
  int cols_;
  int rows_;
  std::vector<std::vector<Vec2>> buckets_;
};

bool near_any(Vec2 p, std::span<const Vec2> visited, double radius) {
  for (const Vec2& v : visited) {
    if (distance(p, v) < radius) return true;
  }
  return false;
}

double gaussian(std::mt19937_64& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

int clamp_rssi(double dbm) {
  const long v = std::lround(dbm);
  return static_cast<int>(std::clamp<long>(v, capture::kRssiFloorDbm,
                                           capture::kRssiCeilDbm));
}

}  // namespace

// ---------------------------------------------------------------- SiteMap

SiteMap::SiteMap(int width, int height, double resolution_m,
                 std::string site_id, std::vector<Cell> cells)
    : width_(width),
      height_(height),
      resolution_(resolution_m),
      site_id_(std::move(site_id)),
      cells_(std::move(cells)) {
  if (width <= 0 || height <= 0 || !(resolution_m > 0.0)) {
    throw Error("map dimensions must be positive");
  }
  if (cells_.size() != static_cast<std::size_t>(width) * height) {
    throw Error("map cell count does not match dimensions");
  }
  if (site_id_.empty()) throw Error("map needs a site id");
  bool any_free = false;
  for (int j = 0; j < height; ++j) {
    for (int i = 0; i < width; ++i) {
      const Cell c = at({i, j});
      any_free |= c == Cell::kFree;
      const bool border = i == 0 || j == 0 || i == width - 1 || j == height - 1;
      if (border && c != Cell::kOccupied) {
        throw Error(fmt::format("border cell ({}, {}) is not occupied", i, j));
      }
    }
  }
  if (!any_free) throw Error("map has no free cells");
}

SiteMap SiteMap::parse(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing map header");
  std::istringstream header(line);
  int width = 0, height = 0;
  double resolution = 0.0;
  std::string site_id, extra;
  if (!(header >> width >> height >> resolution >> site_id) || (header >> extra)) {
    throw ParseError(1, "expected 'width height resolution_m site_id'");
  }
  if (width <= 0 || height <= 0 || !(resolution > 0.0)) {
    throw ParseError(1, "map dimensions must be positive");
  }
  std::vector<Cell> cells;
  cells.reserve(static_cast<std::size_t>(width) * height);
  for (int j = 0; j < height; ++j) {
    const std::size_t line_no = static_cast<std::size_t>(j) + 2;
    if (!std::getline(in, line)) throw ParseError(line_no, "missing map row");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (static_cast<int>(line.size()) != width) {
      throw ParseError(line_no, fmt::format("row has {} cells, expected {}",
                                            line.size(), width));
    }
    for (char ch : line) {
      switch (ch) {
        case '#': cells.push_back(Cell::kOccupied); break;
        case '.': cells.push_back(Cell::kFree); break;
        case '?': cells.push_back(Cell::kUnknown); break;
        default:
          throw ParseError(line_no, fmt::format("bad cell character '{}'", ch));
      }
    }
  }
  return SiteMap(width, height, resolution, site_id, std::move(cells));
}

SiteMap SiteMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open map " + path.string());
  return parse(in);
}

void SiteMap::write(std::ostream& out) const {
  out << width_ << ' ' << height_ << ' ' << fmt::format("{}", resolution_)
      << ' ' << site_id_ << '\n';
  for (int j = 0; j < height_; ++j) {
    for (int i = 0; i < width_; ++i) out << cell_char(at({i, j}));
    out << '\n';
  }
}

bool SiteMap::inside(CellIndex c) const {
  return c.i >= 0 && c.j >= 0 && c.i < width_ && c.j < height_;
}

Cell SiteMap::at(CellIndex c) const {
  if (!inside(c)) return Cell::kOccupied;
  return cells_[static_cast<std::size_t>(c.j) * width_ + c.i];
}

CellIndex SiteMap::cell_of(Vec2 p) const {
  return {static_cast<int>(std::floor(p.x / resolution_)),
          static_cast<int>(std::floor(p.y / resolution_))};
}

Vec2 SiteMap::center(CellIndex c) const {
  return {(c.i + 0.5) * resolution_, (c.j + 0.5) * resolution_};
}

std::vector<CellIndex> SiteMap::cells_of(Cell kind) const {
  std::vector<CellIndex> out;
  for (int j = 0; j < height_; ++j) {
    for (int i = 0; i < width_; ++i) {
      if (at({i, j}) == kind) out.push_back({i, j});
    }
  }
  return out;
}

SiteMap corridor_map() { return walled_map(60, 8, 0.5, "corridor"); }
SiteMap room_map() { return walled_map(40, 40, 0.5, "room"); }

// ---------------------------------------------------------------- routers

std::vector<RouterSpec> parse_routers(std::istream& in) {
  static constexpr std::string_view kHeader =
      "router_id,x_m,y_m,supports_ftm,supports_ble,p_tx_wifi_dbm,p_tx_ble_dbm";
  std::string line;
  if (!std::getline(in, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw ParseError(1, "bad router header");
  std::vector<RouterSpec> routers;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 7) throw ParseError(line_no, "expected 7 router fields");
    if (f[0].empty()) throw ParseError(line_no, "empty router id");
    RouterSpec r;
    r.router_id = std::string(f[0]);
    r.pos_m = {parse_double(f[1], line_no), parse_double(f[2], line_no)};
    r.supports_ftm = parse_bool(f[3], line_no);
    r.supports_ble = parse_bool(f[4], line_no);
    r.p_tx_wifi_dbm = parse_double(f[5], line_no);
    r.p_tx_ble_dbm = parse_double(f[6], line_no);
    for (const auto& other : routers) {
      if (other.router_id == r.router_id) {
        throw ParseError(line_no, "duplicate router id " + r.router_id);
      }
    }
    routers.push_back(std::move(r));
  }
  return routers;
}

std::vector<RouterSpec> load_routers(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open router file " + path.string());
  return parse_routers(in);
}

void write_routers(std::ostream& out, std::span<const RouterSpec> routers) {
  out << "router_id,x_m,y_m,supports_ftm,supports_ble,p_tx_wifi_dbm,"
         "p_tx_ble_dbm\n";
  for (const auto& r : routers) {
    out << fmt::format("{},{},{},{},{},{},{}\n", r.router_id, r.pos_m.x,
                       r.pos_m.y, int(r.supports_ftm), int(r.supports_ble),
                       r.p_tx_wifi_dbm, r.p_tx_ble_dbm);
  }
}

void check_routers(const SiteMap& map, std::span<const RouterSpec> routers) {
  for (const auto& r : routers) {
    if (!map.is_free(r.pos_m)) {
      throw Error(fmt::format("router {} at ({}, {}) is not on a free cell",
                              r.router_id, r.pos_m.x, r.pos_m.y));
    }
  }
}

std::vector<RouterSpec> corridor_routers() {
  std::vector<RouterSpec> out;
  const double xs[] = {1.5, 5.25, 9.0, 12.75, 16.5, 20.25, 24.0, 28.25};
  for (int k = 0; k < 8; ++k) {
    RouterSpec r;
    r.router_id = fmt::format("R{}", k + 1);
    r.pos_m = {xs[k], k % 2 == 0 ? 0.75 : 3.25};
    r.supports_ble = k % 2 == 0;
    r.supports_ftm = k % 2 == 1;
    out.push_back(r);
  }
  return out;
}

features::Deployment make_deployment(
    std::span<const RouterSpec> routers,
    std::optional<std::vector<features::FeatureKind>> kinds) {
  using features::FeatureKind;
  features::Deployment d;
  for (const auto& r : routers) {
    std::vector<FeatureKind> per_router;
    if (kinds) {
      for (FeatureKind k : *kinds) {
        const bool needs_ble = k == FeatureKind::kBleRssi || k == FeatureKind::kBleLoss;
        if (needs_ble && !r.supports_ble) continue;
        if (k == FeatureKind::kTof && !r.supports_ftm) continue;
        per_router.push_back(k);
      }
    } else {
      per_router.push_back(FeatureKind::kWifiLoss);
      if (r.supports_ble) per_router.push_back(FeatureKind::kBleLoss);
      if (r.supports_ftm) per_router.push_back(FeatureKind::kTof);
    }
    for (FeatureKind k : per_router) d.columns.push_back({r.router_id, k});
  }
  std::sort(d.columns.begin(), d.columns.end(), [](const auto& a, const auto& b) {
    return std::pair(a.router_id, features::to_string(a.kind)) <
           std::pair(b.router_id, features::to_string(b.kind));
  });
  d.columns.erase(std::unique(d.columns.begin(), d.columns.end()), d.columns.end());
  return d;
}

// ---------------------------------------------------------------- channel

void ChannelModel::validate() const {
  if (!(exponent_n >= 1.5 && exponent_n <= 6.0)) {
    throw Error("path-loss exponent must lie in [1.5, 6]");
  }
  if (!(shadow_sigma_db >= 0.0) || !(ftm_jitter_sigma_ns >= 0.0)) {
    throw Error("channel sigmas must be non-negative");
  }
  if (!(response_rate > 0.0 && response_rate <= 1.0)) {
    throw Error("response rate must lie in (0, 1]");
  }
  if (!(d0_m > 0.0)) throw Error("reference distance must be positive");
}

double ChannelModel::mean_loss_db(double d_m) const {
  return l0_db + 10.0 * exponent_n * std::log10(std::max(d_m, 0.1) / d0_m);
}

// ---------------------------------------------------------------- planner

SurveyState::SurveyState(Vec2 start, std::uint64_t seed, std::int64_t t0_ns)
    : pos_m(start), rng(seed), t_ns(t0_ns), moves{start} {}

bool segment_clear(const SiteMap& map, Vec2 a, Vec2 b) {
  const double step = map.resolution() / 4.0;
  const double len = distance(a, b);
  const int n = static_cast<int>(std::ceil(len / step));
  for (int k = 0; k <= n; ++k) {
    const double u = n == 0 ? 0.0 : static_cast<double>(k) / n;
    if (!map.is_free(a + u * (b - a))) return false;
  }
  return true;
}

std::vector<Vec2> sample_start_positions(const SiteMap& map, Vec2 from,
                                         std::mt19937_64& rng) {
  std::vector<Vec2> starts;
  if (!map.is_free(from)) return starts;
  const double step = map.resolution() / 4.0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (CellIndex c : map.cells_of(Cell::kOccupied)) {
    const Vec2 target = map.center(c);
    const double len = distance(from, target);
    const int n = std::max(1, static_cast<int>(std::ceil(len / step)));
    int last_free = 0;
    for (int k = 1; k <= n; ++k) {
      if (!map.is_free(from + (static_cast<double>(k) / n) * (target - from))) break;
      last_free = k;
    }
    const double reach = static_cast<double>(last_free) / n;
    starts.push_back(from + (unit(rng) * reach) * (target - from));
  }
  return starts;
}

std::vector<Vec2> path_points(Vec2 a, Vec2 b, double spacing_m) {
  const double len = distance(a, b);
  if (len == 0.0) return {a};
  const int n = std::max(1, static_cast<int>(std::ceil(len / spacing_m - 1e-9)));
  std::vector<Vec2> out;
  out.reserve(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k < n; ++k) out.push_back(a + (static_cast<double>(k) / n) * (b - a));
  out.push_back(b);
  return out;
}

double path_score(std::span<const Vec2> points, double length_m,
                  std::span<const Vec2> visited, const PlannerParams& params) {
  std::size_t near = 0;
  for (const Vec2& p : points) near += near_any(p, visited, params.near_radius_m);
  return params.alpha * length_m - params.beta * static_cast<double>(near);
}

std::optional<std::vector<Vec2>> plan_next_path(SurveyState& state,
                                                const SiteMap& map,
                                                const PlannerParams& params) {
  const std::vector<Vec2> starts = sample_start_positions(map, state.pos_m, state.rng);
  const std::vector<CellIndex> free_cells = map.cells_of(Cell::kFree);
  std::vector<Vec2> ends;
  ends.reserve(free_cells.size());
  for (CellIndex c : free_cells) ends.push_back(map.center(c));

  NearIndex index(map, params.near_radius_m);
  for (const Vec2& v : state.visited) index.add(v);

  double best = 0.0;
  std::optional<std::vector<Vec2>> best_path;
  std::size_t best_end = 0;
  std::vector<Vec2> points;
  for (const Vec2& start : starts) {
    for (std::size_t e = 0; e < ends.size(); ++e) {
      const double len = distance(start, ends[e]);
      const double ceiling = params.alpha * len;
      if (ceiling < best || ceiling <= 0.0) continue;
      const bool tie_wins = best_path && e < best_end;
      points = path_points(start, ends[e], params.spacing_m);
      double score = ceiling;
      bool pruned = false;
      for (const Vec2& p : points) {
        if (!index.near(p)) continue;
        score -= params.beta;
        if (score < best || (score == best && !tie_wins) || score <= 0.0) {
          pruned = true;
          break;
        }
      }
      if (pruned) continue;
      const bool better = score > best || (score == best && tie_wins);
      if (!better || score <= 0.0) continue;
      if (!segment_clear(map, start, ends[e])) continue;
      best = score;
      best_end = e;
      best_path = points;
    }
  }
  return best_path;
}

std::optional<std::vector<Vec2>> plan_coverage_path(
    const SurveyState& state, const SiteMap& map, double coverage_radius_m) {
  const CellIndex origin = map.cell_of(state.pos_m);
  if (map.at(origin) != Cell::kFree) return std::nullopt;
  const auto flat = [&](CellIndex c) {
    return static_cast<std::size_t>(c.j) * map.width() + c.i;
  };
  const auto uncovered = [&](CellIndex c) {
    const Vec2 center = map.center(c);
    for (const Vec2& v : state.visited) {
      if (distance(center, v) <= coverage_radius_m) return false;
    }
    return true;
  };
  std::vector<std::int64_t> parent(static_cast<std::size_t>(map.width()) * map.height(), -1);
  std::vector<CellIndex> queue{origin};
  parent[flat(origin)] = static_cast<std::int64_t>(flat(origin));
  static constexpr int kDi[] = {1, -1, 0, 0};
  static constexpr int kDj[] = {0, 0, 1, -1};
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const CellIndex c = queue[head];
    if (uncovered(c)) {
      std::vector<Vec2> path;
      for (CellIndex at = c;;) {
        path.push_back(map.center(at));
        const auto up = static_cast<std::size_t>(parent[flat(at)]);
        if (up == flat(at)) break;
        at = {static_cast<int>(up % map.width()), static_cast<int>(up / map.width())};
      }
      std::reverse(path.begin(), path.end());
      return path;
    }
    for (int k = 0; k < 4; ++k) {
      const CellIndex n{c.i + kDi[k], c.j + kDj[k]};
      if (map.at(n) != Cell::kFree || parent[flat(n)] >= 0) continue;
      parent[flat(n)] = static_cast<std::int64_t>(flat(c));
      queue.push_back(n);
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------- emission

std::vector<PacketRecord> emit_at(Vec2 pos, std::int64_t t_ns,
                                  std::span<const RouterSpec> routers,
                                  const ChannelModel& channel,
                                  const DeviceProfile& device,
                                  std::mt19937_64& rng) {
  std::vector<PacketRecord> out;
  std::bernoulli_distribution respond(channel.response_rate);
  const std::int64_t per_router =
      routers.empty() ? 0 : kSlotBudgetNs / static_cast<std::int64_t>(routers.size());
  for (int burst = 0; burst < device.bursts_per_waypoint; ++burst) {
    const std::int64_t base = t_ns + burst * kBurstSpacingNs;
    for (std::size_t k = 0; k < routers.size(); ++k) {
      const RouterSpec& router = routers[k];
      const std::int64_t t = base + static_cast<std::int64_t>(k) * per_router;
      const double d = distance(pos, router.pos_m);
      const double loss = channel.mean_loss_db(d) + gaussian(rng, channel.shadow_sigma_db);
      const int wifi_rx = clamp_rssi(device.p_tx_wifi_dbm - loss);

      PacketRecord base_record;
      base_record.router_id = router.router_id;
      base_record.src_mac = device.mac;
      base_record.truth_pos_m = pos;

      if (respond(rng)) {
        PacketRecord r = base_record;
        r.timestamp_ns = t;
        r.link = Link::kWifi;
        r.frame_kind = FrameKind::kProbeReq;
        r.rssi_dbm = wifi_rx;
        const double snr = wifi_rx - device.noise_floor_dbm;
        r.sqi = static_cast<int>(std::clamp<long>(std::lround(snr * 100.0 / 60.0), 0, 100));
        r.model_info = device.model_info;
        out.push_back(std::move(r));
      }
      if (router.supports_ble && respond(rng)) {
        PacketRecord r = base_record;
        r.timestamp_ns = t + 1'000;
        r.link = Link::kBle;
        r.frame_kind = FrameKind::kBleAdv;
        r.rssi_dbm = clamp_rssi(device.p_tx_ble_dbm - loss);
        r.ble_tx_power_dbm = static_cast<int>(std::lround(device.p_tx_ble_dbm));
        out.push_back(std::move(r));
      }
      if (router.supports_ftm && respond(rng)) {
        const double tof_ns = d / features::kSpeedOfLightMps * 1e9;
        PacketRecord r = base_record;
        r.timestamp_ns = t + 2'000;
        r.link = Link::kWifi;
        r.frame_kind = FrameKind::kFtm;
        r.rssi_dbm = wifi_rx;
        capture::FtmTimes f;
        f.t1_ns = r.timestamp_ns;
        f.t2_ns = f.t1_ns + std::llround(tof_ns + gaussian(rng, channel.ftm_jitter_sigma_ns));
        f.t3_ns = f.t2_ns + kFtmTurnaroundNs;
        f.t4_ns = f.t3_ns + std::llround(tof_ns + gaussian(rng, channel.ftm_jitter_sigma_ns));
        r.ftm = f;
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

StepResult step_and_emit(SurveyState& state, const SiteMap& map,
                         std::span<const RouterSpec> routers,
                         const ChannelModel& channel,
                         const DeviceProfile& device,
                         const PlannerParams& params,
                         const std::set<CellIndex>& blocked) {
  StepResult result;
  if (state.next >= state.path.size()) return result;
  const Vec2 target = state.path[state.next];
  if (!map.inside(map.cell_of(target)) || !map.is_free(target)) {
    throw PlannerError(fmt::format("waypoint ({}, {}) is off the free map",
                                   target.x, target.y));
  }

  bool obstructed = !segment_clear(map, state.pos_m, target);
  if (!obstructed && !blocked.empty()) {
    const double step = map.resolution() / 4.0;
    const int n = static_cast<int>(std::ceil(distance(state.pos_m, target) / step));
    for (int k = 0; k <= n && !obstructed; ++k) {
      const double u = n == 0 ? 0.0 : static_cast<double>(k) / n;
      obstructed = blocked.count(map.cell_of(state.pos_m + u * (target - state.pos_m))) > 0;
    }
  }
  if (obstructed) {
    // Walk back over the waypoints already reached.
    for (std::size_t k = state.next; k-- > 0;) {
      state.t_ns += static_cast<std::int64_t>(
          distance(state.pos_m, state.path[k]) / kRobotSpeedMps * 1e3) * kMillisecond;
      state.pos_m = state.path[k];
      state.moves.push_back(state.pos_m);
    }
    state.next = state.path.size();
    ++state.retraces;
    result.retraced = true;
    return result;
  }

  state.t_ns += static_cast<std::int64_t>(
      distance(state.pos_m, target) / kRobotSpeedMps * 1e3) * kMillisecond + kDwellNs;
  state.pos_m = target;
  state.moves.push_back(target);
  ++state.next;
  if (near_any(target, state.visited, params.near_radius_m)) return result;
  state.visited.push_back(target);
  result.records = emit_at(target, state.t_ns, routers, channel, device, state.rng);
  result.emitted = true;
  return result;
}

// ---------------------------------------------------------------- survey

std::vector<SurveyRun> run_survey(const SiteMap& map,
                                  std::span<const RouterSpec> routers,
                                  const ChannelModel& channel,
                                  const DeviceProfile& device,
                                  const SurveyOptions& options) {
  channel.validate();
  check_routers(map, routers);
  const std::vector<CellIndex> free_cells = map.cells_of(Cell::kFree);
  std::vector<SurveyRun> runs;
  for (std::size_t k = 0; k < options.n_trajectories; ++k) {
    const std::uint64_t seed = options.seed + k;
    std::mt19937_64 pick(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_int_distribution<std::size_t> which(0, free_cells.size() - 1);
    SurveyState state(map.center(free_cells[which(pick)]), seed,
                      options.t0_ns + static_cast<std::int64_t>(k) * kDayNs);
    SurveyRun run;
    while (run.plans + run.coverage_plans < options.max_plans) {
      auto path = plan_next_path(state, map, options.planner);
      if (path) {
        ++run.plans;
      } else {
        path = plan_coverage_path(state, map, options.coverage_radius_m);
        if (!path) break;
        ++run.coverage_plans;
      }
      state.path = std::move(*path);
      state.next = 0;
      while (state.next < state.path.size()) {
        StepResult step =
            step_and_emit(state, map, routers, channel, device, options.planner);
        if (step.emitted) run.truth.push_back({k, state.t_ns, state.pos_m});
        for (auto& r : step.records) run.records.push_back(std::move(r));
      }
    }
    run.records = capture::sort_chronological(std::move(run.records));
    run.visited = std::move(state.visited);
    run.moves = std::move(state.moves);
    run.retraces = state.retraces;
    runs.push_back(std::move(run));
  }
  return runs;
}

void write_truth(std::ostream& out, std::span<const SurveyRun> runs) {
  out << "trajectory,t_ns,x_m,y_m\n";
  for (const auto& run : runs) {
    for (const auto& p : run.truth) {
      out << fmt::format("{},{},{},{}\n", p.trajectory, p.t_ns, p.pos_m.x, p.pos_m.y);
    }
  }
}

double coverage_gap_m(const SiteMap& map, std::span<const Vec2> visited) {
  double worst = 0.0;
  for (CellIndex c : map.cells_of(Cell::kFree)) {
    const Vec2 center = map.center(c);
    double nearest = std::numeric_limits<double>::infinity();
    for (const Vec2& v : visited) nearest = std::min(nearest, distance(center, v));
    worst = std::max(worst, nearest);
  }
  return worst;
}

}  // namespace tracewave::simulate
