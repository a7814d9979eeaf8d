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

// Canonical capture format, chronological ordering and transmitter
// classification.
//
// A capture is a UTF-8 CSV file with the header
//
//   timestamp_ns,router_id,link,frame_kind,to_ds,from_ds,src_mac,bssid,
//   rssi_dbm,sqi,ble_tx_power_dbm,ftm_t1_ns,ftm_t2_ns,ftm_t3_ns,ftm_t4_ns,
//   model_info,truth_x_m,truth_y_m
//
// An empty field means "absent". model_info is `tag:hex;tag:hex;...`.

#ifndef TRACEWAVE_CAPTURE_HPP_
#define TRACEWAVE_CAPTURE_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracewave/common.hpp"

namespace tracewave::capture {

inline constexpr int kRssiFloorDbm = -101;
inline constexpr int kRssiCeilDbm = 0;

enum class Link { kWifi, kBle };

enum class FrameKind {
  kBeacon,
  kProbeReq,
  kCts,
  kAck,
  kData,
  kFtm,
  kBleAdv,
  kBleScanRsp,
};

enum class DeviceClass { kAccessPoint, kWds, kBridged, kMobile };

std::string_view to_string(Link link);
std::string_view to_string(FrameKind kind);
std::string_view to_string(DeviceClass cls);
std::optional<Link> parse_link(std::string_view token);
std::optional<FrameKind> parse_frame_kind(std::string_view token);

struct FtmTimes {
  std::int64_t t1_ns = 0;  // FTM departure at the router
  std::int64_t t2_ns = 0;  // FTM arrival at the device
  std::int64_t t3_ns = 0;  // ACK departure at the device
  std::int64_t t4_ns = 0;  // ACK arrival at the router

  friend bool operator==(const FtmTimes&, const FtmTimes&) = default;
};

// One information element of a probe request that is constant per model.
struct ModelInfoElement {
  std::uint16_t tag = 0;
  std::vector<std::uint8_t> value;

  friend auto operator<=>(const ModelInfoElement&,
                          const ModelInfoElement&) = default;
};

struct PacketRecord {
  std::int64_t timestamp_ns = 0;
  std::string router_id;
  Link link = Link::kWifi;
  FrameKind frame_kind = FrameKind::kProbeReq;
  bool to_ds = false;
  bool from_ds = false;
  MacAddress src_mac;
  std::optional<MacAddress> bssid;
  int rssi_dbm = kRssiFloorDbm;
  std::optional<int> sqi;
  std::optional<int> ble_tx_power_dbm;
  std::optional<FtmTimes> ftm;
  std::vector<ModelInfoElement> model_info;  // empty = absent
  std::optional<Vec2> truth_pos_m;           // simulator only

  friend bool operator==(const PacketRecord&, const PacketRecord&) = default;
};

// Throws Error describing the first violated record invariant.
void validate(const PacketRecord& record);

PacketRecord parse_line(std::string_view line, std::size_t line_number);
std::vector<PacketRecord> parse_capture(std::istream& in);
std::vector<PacketRecord> parse_capture(const std::filesystem::path& path);

std::string format_line(const PacketRecord& record);
void write_capture(std::ostream& out, std::span<const PacketRecord> records);
void write_capture(const std::filesystem::path& path,
                   std::span<const PacketRecord> records);

std::string_view capture_header();

// Stable ascending order on timestamp_ns.
std::vector<PacketRecord> sort_chronological(std::vector<PacketRecord> records);

// Precedence: ACCESS_POINT > WDS > BRIDGED > MOBILE.
std::map<MacAddress, DeviceClass> classify_devices(
    std::span<const PacketRecord> records);

std::vector<PacketRecord> filter_mobile(
    std::span<const PacketRecord> records,
    const std::map<MacAddress, DeviceClass>& classes);

}  // namespace tracewave::capture

#endif  // TRACEWAVE_CAPTURE_HPP_
