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

// Wireless feature extraction: path loss, Wi-Fi TX power inference, time of
// flight from FTM exchanges, and resampling of all per-router series onto a
// shared 100 us grid.
//
// Path-loss columns are carried in frames as TX-referenced receive power,
// i.e. -loss_db, so every non-ToF column lives in the same [-101, 0] dBm
// domain and shares the -101 dBm padding constant.

#ifndef TRACEWAVE_FEATURES_HPP_
#define TRACEWAVE_FEATURES_HPP_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracewave/capture.hpp"
#include "tracewave/common.hpp"

namespace tracewave::features {

inline constexpr double kPaddingDbm = -101.0;
inline constexpr double kPaddingTofNs = 200.0;
inline constexpr std::int64_t kGridNs = 100'000;
inline constexpr double kSpeedOfLightMps = 2.998e8;

class MeasurementError : public Error {
 public:
  using Error::Error;
};

class NoEstimateError : public Error {
 public:
  using Error::Error;
};

enum class FeatureKind { kWifiRssi, kSqi, kBleRssi, kWifiLoss, kBleLoss, kTof };

std::string_view to_string(FeatureKind kind);
std::optional<FeatureKind> parse_feature_kind(std::string_view token);
bool is_rssi_family(FeatureKind kind);
double padding_value(FeatureKind kind);

struct FeatureColumn {
  std::string router_id;
  FeatureKind kind = FeatureKind::kWifiRssi;

  std::string name() const;  // "router:kind"
  friend auto operator<=>(const FeatureColumn&, const FeatureColumn&) = default;
};

// Ordered feature layout of one site.
struct Deployment {
  std::vector<FeatureColumn> columns;
  // Used for wifi_loss columns when a device has no co-located BLE samples.
  double fallback_wifi_tx_dbm = 15.0;

  std::size_t size() const { return columns.size(); }
  std::vector<std::string> manifest() const;
  static Deployment from_manifest(std::span<const std::string> names);
};

// loss = p_tx - p_rx.
double ble_path_loss(double p_tx_dbm, double p_rx_dbm);
// p_wifi_tx = ble_loss + p_wifi_rx.
double infer_wifi_tx_power(double ble_loss_db, double p_wifi_rx_dbm);
// loss = p_wifi_tx - p_wifi_rx.
double wifi_path_loss(double p_wifi_tx_dbm, double p_wifi_rx_dbm);

struct PathLossSample {
  std::int64_t t_ns = 0;
  std::string router_id;
  double loss_db = 0.0;
  capture::Link link = capture::Link::kWifi;
  bool padded = false;  // receive power was the padding constant
};

PathLossSample path_loss_sample(std::int64_t t_ns, std::string router_id,
                                capture::Link link, double p_tx_dbm,
                                double p_rx_dbm);

struct TxPowerEstimate {
  std::string device_key;
  double p_wifi_tx_dbm = 0.0;
  std::size_t n_samples = 0;
};

// Median of a non-empty set (mean of the middle pair for even sizes).
double median(std::vector<double> values);

// Per-device Wi-Fi TX power: one sample per (router, grid slot) holding both
// a BLE record with a TX power field and a Wi-Fi record, median over
// samples. Throws NoEstimateError when no slot qualifies.
TxPowerEstimate estimate_wifi_tx_power(
    std::span<const capture::PacketRecord> records, std::string device_key);

// ToF = ((t4 - t1) - (t3 - t2)) / 2. Throws MeasurementError on a
// non-monotone quadruple or non-positive round trip.
double tof_from_ftm(const capture::FtmTimes& times);

// Nearest multiple of kGridNs, ties rounding up.
std::int64_t round_to_grid(std::int64_t t_ns);

struct FeatureFrame {
  std::int64_t t_ns = 0;
  std::vector<double> values;
  std::vector<bool> mask;  // true = measured or interpolated

  friend bool operator==(const FeatureFrame&, const FeatureFrame&) = default;
};

struct SyncOptions {
  // Per-device Wi-Fi TX power for wifi_loss columns.
  std::optional<double> wifi_tx_dbm;
};

// Resamples one device's records (chronologically sorted) onto the union of
// their rounded timestamps. Each column is linearly interpolated inside its
// own measured span and padded outside it.
std::vector<FeatureFrame> synchronize(
    std::span<const capture::PacketRecord> records,
    const Deployment& deployment, const SyncOptions& options = {});

// Collapses runs of frames whose successive timestamps are closer than
// `max_gap_ns` into one frame: timestamp of the first frame, per-column mean
// over measured entries.
std::vector<FeatureFrame> group_bursts(std::span<const FeatureFrame> frames,
                                       std::int64_t max_gap_ns);

// Hex mask, most significant digit first, bit i = column i.
std::string mask_hex(const std::vector<bool>& mask);

// CSV `t_ns,<router:kind>...,mask_hex`.
void write_frames(std::ostream& out, const Deployment& deployment,
                  std::span<const FeatureFrame> frames);

}  // namespace tracewave::features

#endif  // TRACEWAVE_FEATURES_HPP_
