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

// Contact histories between device traces, suspect graphs and decayed
// indirect exposure.

#ifndef TRACEWAVE_TRACING_HPP_
#define TRACEWAVE_TRACING_HPP_

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tracewave/common.hpp"

namespace tracewave::tracing {

struct GridCell {
  int i = 0;
  int j = 0;

  friend auto operator<=>(const GridCell&, const GridCell&) = default;
};

struct TraceRecord {
  std::string key;  // bucket id or MAC
  std::string site_id;
  double time_s = 0.0;
  GridCell cell;
};

struct PathPoint {
  std::int64_t t_ns = 0;
  Vec2 pos_m;
};

// Grid cells of a localized path, cell = floor(pos / resolution).
std::vector<TraceRecord> traces_from_path(const std::string& key,
                                          const std::string& site_id,
                                          std::span<const PathPoint> path,
                                          double resolution_m);

inline constexpr std::size_t kBandCount = 3;
inline constexpr double kBandWidthCells = 5.0;

struct ContactHistory {
  std::string first_key;
  std::string second_key;
  std::string site_id;
  std::size_t contact_duration = 0;  // matched samples
  double last_contact_time_s = 0.0;
  double avg_distance_cells = 0.0;
  double min_distance_cells = 0.0;
  std::array<std::size_t, kBandCount> bands{};  // [0,5) [5,10) [10,15]
  double exposure = 0.0;  // summed match weights, 1 per match when direct

  friend bool operator==(const ContactHistory&, const ContactHistory&) = default;
};

struct ContactOptions {
  double max_distance_cells = 15.0;
  double time_resolution_s = 30.0;
};

// Every target sample is matched against other samples of the same site in
// the closed window t +- resolution/2 and within max_distance cells
// (Euclidean on cell indices). Matches accumulate per (target key, other
// key, site); samples sharing a key are never paired. Output is sorted by
// (first_key, second_key, site_id).
std::vector<ContactHistory> generate_contact_history(
    std::span<const TraceRecord> target, std::span<const TraceRecord> others,
    const ContactOptions& options = {});

struct IndirectOptions {
  double half_life_s = 0.0;
  double max_distance_cells = 15.0;
  std::optional<double> horizon_s;  // default 4 half-lives
  std::optional<std::string> site_id;  // restrict to one site
};

// Contacts with places the target occupied earlier: window [t, t + horizon],
// each match weighted 2^(-dt / half_life).
std::vector<ContactHistory> indirect_contacts(std::span<const TraceRecord> target,
                                              std::span<const TraceRecord> others,
                                              const IndirectOptions& options);

struct ContactEdge {
  std::string from;
  std::string to;
  std::size_t hop = 1;
  ContactHistory history;
};

struct ContactGraph {
  std::vector<std::string> nodes;  // sorted
  std::vector<ContactEdge> edges;
};

// Breadth-first over histories keyed by first_key: hop 1 edges leave the
// confirmed set, hop k edges leave nodes first reached at hop k - 1. A node
// reached earlier is not re-entered.
ContactGraph build_contact_graph(const std::set<std::string>& confirmed,
                                 std::span<const ContactHistory> histories,
                                 std::size_t depth = 1);

// CSV `first_key,second_key,site_id,contact_duration,last_contact_time,
// avg_distance,min_distance,band_0_5,band_5_10,band_10_15`.
void write_contacts(std::ostream& out, std::span<const ContactHistory> histories);

}  // namespace tracewave::tracing

#endif  // TRACEWAVE_TRACING_HPP_
