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

#include "tracewave/features.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <map>
#include <ostream>
#include <set>
#include <utility>

namespace tracewave::features {
namespace {

using capture::FrameKind;
using capture::Link;
using capture::PacketRecord;

constexpr std::array<std::pair<FeatureKind, std::string_view>, 6> kKindNames{{
    {FeatureKind::kWifiRssi, "wifi_rssi"},
    {FeatureKind::kSqi, "sqi"},
    {FeatureKind::kBleRssi, "ble_rssi"},
    {FeatureKind::kWifiLoss, "wifi_loss"},
    {FeatureKind::kBleLoss, "ble_loss"},
    {FeatureKind::kTof, "tof"},
}};

// Readings at the floor are indistinguishable from padding.
bool usable_rssi(int rssi_dbm) { return rssi_dbm > capture::kRssiFloorDbm; }

struct Accumulator {
  double sum = 0.0;
  int count = 0;
};

using Series = std::map<std::int64_t, Accumulator>;

// TX-referenced receive power of a path-loss column; nullopt when the loss
// falls outside the representable range.
std::optional<double> referenced_power(double loss_db) {
  const double value = -loss_db;
  if (value <= kPaddingDbm || value > 0.0) return std::nullopt;
  return value;
}

std::optional<double> column_sample(const PacketRecord& r, FeatureKind kind,
                                    const SyncOptions& options,
                                    double fallback_tx) {
  switch (kind) {
    case FeatureKind::kWifiRssi:
      if (r.link == Link::kWifi && usable_rssi(r.rssi_dbm)) return r.rssi_dbm;
      return std::nullopt;
    case FeatureKind::kSqi:
      if (r.link == Link::kWifi && r.sqi) return *r.sqi;
      return std::nullopt;
    case FeatureKind::kBleRssi:
      if (r.link == Link::kBle && usable_rssi(r.rssi_dbm)) return r.rssi_dbm;
      return std::nullopt;
    case FeatureKind::kWifiLoss:
      if (r.link == Link::kWifi && usable_rssi(r.rssi_dbm)) {
        return referenced_power(
            wifi_path_loss(options.wifi_tx_dbm.value_or(fallback_tx),
                           r.rssi_dbm));
      }
      return std::nullopt;
    case FeatureKind::kBleLoss:
      if (r.link == Link::kBle && r.ble_tx_power_dbm &&
          usable_rssi(r.rssi_dbm)) {
        return referenced_power(ble_path_loss(*r.ble_tx_power_dbm, r.rssi_dbm));
      }
      return std::nullopt;
    case FeatureKind::kTof:
      if (r.frame_kind == FrameKind::kFtm && r.ftm) {
        try {
          const double tof = tof_from_ftm(*r.ftm);
          if (tof < kPaddingTofNs) return tof;
        } catch (const MeasurementError&) {
          // Dropped sample.
        }
      }
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(FeatureKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

std::optional<FeatureKind> parse_feature_kind(std::string_view token) {
  for (const auto& [k, name] : kKindNames) {
    if (name == token) return k;
  }
  return std::nullopt;
}

bool is_rssi_family(FeatureKind kind) { return kind != FeatureKind::kTof; }

double padding_value(FeatureKind kind) {
  return is_rssi_family(kind) ? kPaddingDbm : kPaddingTofNs;
}

std::string FeatureColumn::name() const {
  return router_id + ":" + std::string(to_string(kind));
}

std::vector<std::string> Deployment::manifest() const {
  std::vector<std::string> names;
  for (const auto& c : columns) names.push_back(c.name());
  return names;
}

Deployment Deployment::from_manifest(std::span<const std::string> names) {
  Deployment d;
  for (const auto& name : names) {
    const auto colon = name.rfind(':');
    if (colon == std::string::npos || colon == 0) {
      throw Error("bad feature column '" + name + "'");
    }
    auto kind = parse_feature_kind(std::string_view(name).substr(colon + 1));
    if (!kind) throw Error("unknown feature kind in '" + name + "'");
    d.columns.push_back({name.substr(0, colon), *kind});
  }
  return d;
}

double ble_path_loss(double p_tx_dbm, double p_rx_dbm) {
  return p_tx_dbm - p_rx_dbm;
}

double infer_wifi_tx_power(double ble_loss_db, double p_wifi_rx_dbm) {
  return ble_loss_db + p_wifi_rx_dbm;
}

double wifi_path_loss(double p_wifi_tx_dbm, double p_wifi_rx_dbm) {
  return p_wifi_tx_dbm - p_wifi_rx_dbm;
}

PathLossSample path_loss_sample(std::int64_t t_ns, std::string router_id,
                                Link link, double p_tx_dbm, double p_rx_dbm) {
  PathLossSample s;
  s.t_ns = t_ns;
  s.router_id = std::move(router_id);
  s.link = link;
  s.loss_db = p_tx_dbm - p_rx_dbm;
  s.padded = p_rx_dbm <= kPaddingDbm;
  return s;
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error("median of empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

TxPowerEstimate estimate_wifi_tx_power(std::span<const PacketRecord> records,
                                       std::string device_key) {
  struct Slot {
    Accumulator ble_loss;
    Accumulator wifi_rx;
  };
  std::map<std::pair<std::string, std::int64_t>, Slot> slots;
  for (const PacketRecord& r : records) {
    if (!usable_rssi(r.rssi_dbm)) continue;
    Slot& slot = slots[{r.router_id, round_to_grid(r.timestamp_ns)}];
    if (r.link == Link::kBle && r.ble_tx_power_dbm) {
      slot.ble_loss.sum += ble_path_loss(*r.ble_tx_power_dbm, r.rssi_dbm);
      ++slot.ble_loss.count;
    } else if (r.link == Link::kWifi) {
      slot.wifi_rx.sum += r.rssi_dbm;
      ++slot.wifi_rx.count;
    }
  }
  std::vector<double> estimates;
  for (const auto& [key, slot] : slots) {
    if (slot.ble_loss.count == 0 || slot.wifi_rx.count == 0) continue;
    estimates.push_back(
        infer_wifi_tx_power(slot.ble_loss.sum / slot.ble_loss.count,
                            slot.wifi_rx.sum / slot.wifi_rx.count));
  }
  if (estimates.empty()) {
    throw NoEstimateError("no co-located BLE/Wi-Fi slots for " + device_key);
  }
  TxPowerEstimate out;
  out.device_key = std::move(device_key);
  out.n_samples = estimates.size();
  out.p_wifi_tx_dbm = median(std::move(estimates));
  return out;
}

double tof_from_ftm(const capture::FtmTimes& t) {
  if (t.t4_ns <= t.t1_ns || t.t3_ns < t.t2_ns) {
    throw MeasurementError("non-monotone FTM quadruple");
  }
  const std::int64_t rtt = (t.t4_ns - t.t1_ns) - (t.t3_ns - t.t2_ns);
  if (rtt <= 0) throw MeasurementError("non-positive FTM round trip");
  return static_cast<double>(rtt) / 2.0;
}

std::int64_t round_to_grid(std::int64_t t_ns) {
  const std::int64_t shifted = t_ns + kGridNs / 2;
  std::int64_t q = shifted / kGridNs;
  if (shifted % kGridNs != 0 && shifted < 0) --q;  // floor division
  return q * kGridNs;
}

std::vector<FeatureFrame> synchronize(std::span<const PacketRecord> records,
                                      const Deployment& deployment,
                                      const SyncOptions& options) {
  const std::size_t width = deployment.size();
  std::vector<Series> series(width);
  std::set<std::int64_t> grid;

  for (const PacketRecord& r : records) {
    const std::int64_t slot = round_to_grid(r.timestamp_ns);
    grid.insert(slot);
    for (std::size_t c = 0; c < width; ++c) {
      const FeatureColumn& column = deployment.columns[c];
      if (column.router_id != r.router_id) continue;
      auto value = column_sample(r, column.kind, options,
                                 deployment.fallback_wifi_tx_dbm);
      if (!value) continue;
      Accumulator& acc = series[c][slot];
      acc.sum += *value;
      ++acc.count;
    }
  }

  std::vector<std::vector<std::pair<std::int64_t, double>>> points(width);
  for (std::size_t c = 0; c < width; ++c) {
    for (const auto& [slot, acc] : series[c]) {
      points[c].emplace_back(slot, acc.sum / acc.count);
    }
  }

  std::vector<FeatureFrame> frames;
  frames.reserve(grid.size());
  std::vector<std::size_t> cursor(width, 0);
  for (std::int64_t t : grid) {
    FeatureFrame frame;
    frame.t_ns = t;
    frame.values.resize(width);
    frame.mask.resize(width);
    for (std::size_t c = 0; c < width; ++c) {
      const auto& pts = points[c];
      if (pts.empty() || t < pts.front().first || t > pts.back().first) {
        frame.values[c] = padding_value(deployment.columns[c].kind);
        frame.mask[c] = false;
        continue;
      }
      std::size_t& i = cursor[c];
      while (pts[i].first < t) ++i;  // pts[i] is the first point >= t
      if (pts[i].first == t) {
        frame.values[c] = pts[i].second;
      } else {
        const auto& [t0, v0] = pts[i - 1];
        const auto& [t1, v1] = pts[i];
        const double w = static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
        frame.values[c] = v0 + w * (v1 - v0);
      }
      frame.mask[c] = true;
    }
    frames.push_back(std::move(frame));
  }
  return frames;
}

std::vector<FeatureFrame> group_bursts(std::span<const FeatureFrame> frames,
                                       std::int64_t max_gap_ns) {
  std::vector<FeatureFrame> out;
  std::size_t begin = 0;
  while (begin < frames.size()) {
    std::size_t end = begin + 1;
    while (end < frames.size() &&
           frames[end].t_ns - frames[end - 1].t_ns < max_gap_ns) {
      ++end;
    }
    const std::size_t width = frames[begin].values.size();
    FeatureFrame merged;
    merged.t_ns = frames[begin].t_ns;
    merged.values.assign(width, 0.0);
    merged.mask.assign(width, false);
    for (std::size_t c = 0; c < width; ++c) {
      double sum = 0.0;
      int count = 0;
      for (std::size_t f = begin; f < end; ++f) {
        if (frames[f].mask[c]) {
          sum += frames[f].values[c];
          ++count;
        }
      }
      if (count > 0) {
        merged.values[c] = sum / count;
        merged.mask[c] = true;
      } else {
        merged.values[c] = frames[begin].values[c];
      }
    }
    out.push_back(std::move(merged));
    begin = end;
  }
  return out;
}

std::string mask_hex(const std::vector<bool>& mask) {
  static constexpr char kDigits[] = "0123456789abcdef";
  const std::size_t digits = std::max<std::size_t>(1, (mask.size() + 3) / 4);
  std::string out(digits, '0');
  for (std::size_t d = 0; d < digits; ++d) {
    int nibble = 0;
    for (int b = 0; b < 4; ++b) {
      const std::size_t bit = d * 4 + static_cast<std::size_t>(b);
      if (bit < mask.size() && mask[bit]) nibble |= 1 << b;
    }
    out[digits - 1 - d] = kDigits[nibble];
  }
  return out;
}

void write_frames(std::ostream& out, const Deployment& deployment,
                  std::span<const FeatureFrame> frames) {
  out << "t_ns";
  for (const auto& column : deployment.columns) out << ',' << column.name();
  out << ",mask_hex\n";
  for (const FeatureFrame& f : frames) {
    out << f.t_ns;
    for (double v : f.values) out << fmt::format(",{:.3f}", v);
    out << ',' << mask_hex(f.mask) << '\n';
  }
}

}  // namespace tracewave::features
