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

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

namespace tracewave::tracing {
namespace {

using PairKey = std::tuple<std::string, std::string, std::string>;

struct Accumulator {
  std::vector<double> times;
  std::vector<double> distances;
  std::vector<double> weights;
};

// Distance lookup for cell offsets within the radius; negative = too far.
class DistanceTable {
 public:
  explicit DistanceTable(double max_cells)
      : reach_(std::max(0, static_cast<int>(std::floor(max_cells)))),
        side_(2 * reach_ + 1),
        table_(static_cast<std::size_t>(side_) * side_, -1.0) {
    for (int dj = -reach_; dj <= reach_; ++dj) {
      for (int di = -reach_; di <= reach_; ++di) {
        const double d = std::sqrt(static_cast<double>(di * di + dj * dj));
        if (d <= max_cells) table_[index(di, dj)] = d;
      }
    }
  }

  // nullopt when the offset is beyond max distance.
  std::optional<double> lookup(GridCell a, GridCell b) const {
    const long di = static_cast<long>(b.i) - a.i;
    const long dj = static_cast<long>(b.j) - a.j;
    if (std::abs(di) > reach_ || std::abs(dj) > reach_) return std::nullopt;
    const double d = table_[index(static_cast<int>(di), static_cast<int>(dj))];
    if (d < 0.0) return std::nullopt;
    return d;
  }

 private:
  std::size_t index(int di, int dj) const {
    return static_cast<std::size_t>(dj + reach_) * side_ + (di + reach_);
  }

  int reach_;
  int side_;
  std::vector<double> table_;
};

ContactHistory summarize(const PairKey& key, const Accumulator& acc) {
  ContactHistory h;
  std::tie(h.first_key, h.second_key, h.site_id) = key;
  h.contact_duration = acc.times.size();
  h.last_contact_time_s = *std::max_element(acc.times.begin(), acc.times.end());
  double sum = 0.0;
  h.min_distance_cells = acc.distances.front();
  for (double d : acc.distances) {
    sum += d;
    h.min_distance_cells = std::min(h.min_distance_cells, d);
    const auto band = std::min<std::size_t>(kBandCount - 1,
                                            static_cast<std::size_t>(d / kBandWidthCells));
    ++h.bands[band];
  }
  h.avg_distance_cells = sum / static_cast<double>(acc.distances.size());
  for (double w : acc.weights) h.exposure += w;
  return h;
}

// Shared matcher: for each target sample, others with time in
// [t + lo, t + hi] and within the distance table.
template <typename Weight>
std::vector<ContactHistory> match(std::span<const TraceRecord> target,
                                  std::span<const TraceRecord> others,
                                  double max_distance, double lo, double hi,
                                  const std::optional<std::string>& site,
                                  Weight weight) {
  const DistanceTable table(max_distance);
  std::vector<std::size_t> order(others.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return others[a].time_s < others[b].time_s;
  });
  std::vector<double> times(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) times[k] = others[order[k]].time_s;

  std::map<PairKey, Accumulator> acc;
  for (const TraceRecord& t : target) {
    if (site && t.site_id != *site) continue;
    const auto begin = std::lower_bound(times.begin(), times.end(), t.time_s + lo);
    for (auto it = begin; it != times.end() && *it <= t.time_s + hi; ++it) {
      const TraceRecord& o = others[order[static_cast<std::size_t>(it - times.begin())]];
      if (o.key == t.key || o.site_id != t.site_id) continue;
      const auto d = table.lookup(t.cell, o.cell);
      if (!d) continue;
      auto& a = acc[{t.key, o.key, t.site_id}];
      a.times.push_back(t.time_s);
      a.distances.push_back(*d);
      a.weights.push_back(weight(o.time_s - t.time_s));
    }
  }
  std::vector<ContactHistory> out;
  out.reserve(acc.size());
  for (const auto& [key, a] : acc) out.push_back(summarize(key, a));
  return out;
}

}  // namespace

std::vector<TraceRecord> traces_from_path(const std::string& key,
                                          const std::string& site_id,
                                          std::span<const PathPoint> path,
                                          double resolution_m) {
  if (!(resolution_m > 0.0)) throw Error("resolution must be positive");
  std::vector<TraceRecord> out;
  out.reserve(path.size());
  for (const auto& p : path) {
    out.push_back({key, site_id, static_cast<double>(p.t_ns) * 1e-9,
                   {static_cast<int>(std::floor(p.pos_m.x / resolution_m)),
                    static_cast<int>(std::floor(p.pos_m.y / resolution_m))}});
  }
  return out;
}

std::vector<ContactHistory> generate_contact_history(
    std::span<const TraceRecord> target, std::span<const TraceRecord> others,
    const ContactOptions& options) {
  const double half = 0.5 * options.time_resolution_s;
  return match(target, others, options.max_distance_cells, -half, half, std::nullopt,
               [](double) { return 1.0; });
}

std::vector<ContactHistory> indirect_contacts(std::span<const TraceRecord> target,
                                              std::span<const TraceRecord> others,
                                              const IndirectOptions& options) {
  if (!(options.half_life_s > 0.0)) throw Error("half life must be positive");
  const double horizon = options.horizon_s.value_or(4.0 * options.half_life_s);
  const double half_life = options.half_life_s;
  return match(target, others, options.max_distance_cells, 0.0, horizon, options.site_id,
               [half_life](double dt) { return std::exp2(-dt / half_life); });
}

ContactGraph build_contact_graph(const std::set<std::string>& confirmed,
                                 std::span<const ContactHistory> histories,
                                 std::size_t depth) {
  std::set<std::string> nodes(confirmed.begin(), confirmed.end());
  std::map<std::string, std::vector<const ContactHistory*>> outgoing;
  for (const auto& h : histories) {
    nodes.insert(h.first_key);
    nodes.insert(h.second_key);
    outgoing[h.first_key].push_back(&h);
  }
  ContactGraph g;
  g.nodes.assign(nodes.begin(), nodes.end());

  std::set<std::string> reached = confirmed;
  std::set<std::string> frontier = confirmed;
  for (std::size_t hop = 1; hop <= depth && !frontier.empty(); ++hop) {
    std::set<std::string> next;
    for (const auto& from : frontier) {
      auto it = outgoing.find(from);
      if (it == outgoing.end()) continue;
      for (const ContactHistory* h : it->second) {
        if (reached.contains(h->second_key)) continue;
        g.edges.push_back({from, h->second_key, hop, *h});
        next.insert(h->second_key);
      }
    }
    reached.insert(next.begin(), next.end());
    frontier = std::move(next);
  }
  return g;
}

void write_contacts(std::ostream& out, std::span<const ContactHistory> histories) {
  out << "first_key,second_key,site_id,contact_duration,last_contact_time,"
         "avg_distance,min_distance,band_0_5,band_5_10,band_10_15\n";
  for (const auto& h : histories) {
    out << fmt::format("{},{},{},{},{:.3f},{:.3f},{:.3f},{},{},{}\n", h.first_key,
                       h.second_key, h.site_id, h.contact_duration, h.last_contact_time_s,
                       h.avg_distance_cells, h.min_distance_cells, h.bands[0], h.bands[1],
                       h.bands[2]);
  }
}

}  // namespace tracewave::tracing
