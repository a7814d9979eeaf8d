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

#include "tracewave/capture.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace tracewave::capture {
namespace {

constexpr std::string_view kHeader =
    "timestamp_ns,router_id,link,frame_kind,to_ds,from_ds,src_mac,bssid,"
    "rssi_dbm,sqi,ble_tx_power_dbm,ftm_t1_ns,ftm_t2_ns,ftm_t3_ns,ftm_t4_ns,"
    "model_info,truth_x_m,truth_y_m";

constexpr std::size_t kColumns = 18;
// Trailing empty columns may be omitted, but never the rssi column.
constexpr std::size_t kMinColumns = 9;

enum Column : std::size_t {
  kTimestamp,
  kRouter,
  kLink,
  kKind,
  kToDs,
  kFromDs,
  kSrcMac,
  kBssid,
  kRssi,
  kSqi,
  kBleTx,
  kFtm1,
  kFtm2,
  kFtm3,
  kFtm4,
  kModelInfo,
  kTruthX,
  kTruthY,
};

constexpr std::array<std::pair<FrameKind, std::string_view>, 8> kFrameKinds{{
    {FrameKind::kBeacon, "BEACON"},
    {FrameKind::kProbeReq, "PROBE_REQ"},
    {FrameKind::kCts, "CTS"},
    {FrameKind::kAck, "ACK"},
    {FrameKind::kData, "DATA"},
    {FrameKind::kFtm, "FTM"},
    {FrameKind::kBleAdv, "BLE_ADV"},
    {FrameKind::kBleScanRsp, "BLE_SCAN_RSP"},
}};

template <typename T>
T parse_int(std::string_view field, std::size_t line, const char* name) {
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError(line, fmt::format("bad {} '{}'", name, field));
  }
  return value;
}

double parse_double(std::string_view field, std::size_t line,
                    const char* name) {
  // from_chars for double is available in libstdc++ 11.
  double value = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) {
    throw ParseError(line, fmt::format("bad {} '{}'", name, field));
  }
  return value;
}

bool parse_bit(std::string_view field, std::size_t line, const char* name) {
  if (field == "0") return false;
  if (field == "1") return true;
  throw ParseError(line, fmt::format("bad {} bit '{}'", name, field));
}

template <typename T>
std::optional<T> parse_optional_int(std::string_view field, std::size_t line,
                                    const char* name) {
  if (field.empty()) return std::nullopt;
  return parse_int<T>(field, line, name);
}

std::vector<ModelInfoElement> parse_model_info(std::string_view field,
                                               std::size_t line) {
  std::vector<ModelInfoElement> out;
  if (field.empty()) return out;
  for (std::string_view item : split(field, ';')) {
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) {
      throw ParseError(line, fmt::format("bad model_info item '{}'", item));
    }
    ModelInfoElement element;
    element.tag = parse_int<std::uint16_t>(item.substr(0, colon), line,
                                           "model_info tag");
    try {
      element.value = from_hex(item.substr(colon + 1));
    } catch (const Error& e) {
      throw ParseError(line, fmt::format("model_info value: {}", e.what()));
    }
    out.push_back(std::move(element));
  }
  return out;
}

bool is_ble_kind(FrameKind kind) {
  return kind == FrameKind::kBleAdv || kind == FrameKind::kBleScanRsp;
}

}  // namespace

std::string_view to_string(Link link) {
  return link == Link::kWifi ? "WIFI" : "BLE";
}

std::string_view to_string(FrameKind kind) {
  for (const auto& [k, name] : kFrameKinds) {
    if (k == kind) return name;
  }
  return "?";
}

std::string_view to_string(DeviceClass cls) {
  switch (cls) {
    case DeviceClass::kAccessPoint:
      return "ACCESS_POINT";
    case DeviceClass::kWds:
      return "WDS";
    case DeviceClass::kBridged:
      return "BRIDGED";
    case DeviceClass::kMobile:
      return "MOBILE";
  }
  return "?";
}

std::optional<Link> parse_link(std::string_view token) {
  if (token == "WIFI") return Link::kWifi;
  if (token == "BLE") return Link::kBle;
  return std::nullopt;
}

std::optional<FrameKind> parse_frame_kind(std::string_view token) {
  for (const auto& [k, name] : kFrameKinds) {
    if (name == token) return k;
  }
  return std::nullopt;
}

std::string_view capture_header() { return kHeader; }

void validate(const PacketRecord& r) {
  if (r.rssi_dbm < kRssiFloorDbm || r.rssi_dbm > kRssiCeilDbm) {
    throw Error(fmt::format("rssi {} dBm outside [{}, {}]", r.rssi_dbm,
                            kRssiFloorDbm, kRssiCeilDbm));
  }
  if (r.ftm && r.frame_kind != FrameKind::kFtm) {
    throw Error("FTM timestamps on a non-FTM frame");
  }
  if (r.link == Link::kBle && (r.to_ds || r.from_ds)) {
    throw Error("to_ds/from_ds set on a BLE record");
  }
  if ((r.link == Link::kBle) != is_ble_kind(r.frame_kind)) {
    throw Error(fmt::format("frame kind {} does not match link {}",
                            to_string(r.frame_kind), to_string(r.link)));
  }
  if (r.sqi && (*r.sqi < 0 || *r.sqi > 100)) {
    throw Error(fmt::format("sqi {} outside [0, 100]", *r.sqi));
  }
  if (r.router_id.empty()) throw Error("empty router_id");
}

PacketRecord parse_line(std::string_view line, std::size_t line_number) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string_view> f = split(line, ',');
  if (f.size() < kMinColumns || f.size() > kColumns) {
    throw ParseError(line_number,
                     fmt::format("expected {} columns, got {}", kColumns,
                                 f.size()));
  }
  f.resize(kColumns, std::string_view{});

  PacketRecord r;
  r.timestamp_ns = parse_int<std::int64_t>(f[kTimestamp], line_number,
                                           "timestamp_ns");
  r.router_id = std::string(f[kRouter]);
  auto link = parse_link(f[kLink]);
  if (!link) {
    throw ParseError(line_number, fmt::format("unknown link '{}'", f[kLink]));
  }
  r.link = *link;
  auto kind = parse_frame_kind(f[kKind]);
  if (!kind) {
    throw ParseError(line_number,
                     fmt::format("unknown frame_kind '{}'", f[kKind]));
  }
  r.frame_kind = *kind;
  r.to_ds = parse_bit(f[kToDs], line_number, "to_ds");
  r.from_ds = parse_bit(f[kFromDs], line_number, "from_ds");
  if (!MacAddress::try_parse(f[kSrcMac], r.src_mac)) {
    throw ParseError(line_number, fmt::format("bad src_mac '{}'", f[kSrcMac]));
  }
  if (!f[kBssid].empty()) {
    MacAddress bssid;
    if (!MacAddress::try_parse(f[kBssid], bssid)) {
      throw ParseError(line_number, fmt::format("bad bssid '{}'", f[kBssid]));
    }
    r.bssid = bssid;
  }
  r.rssi_dbm = parse_int<int>(f[kRssi], line_number, "rssi_dbm");
  r.sqi = parse_optional_int<int>(f[kSqi], line_number, "sqi");
  r.ble_tx_power_dbm =
      parse_optional_int<int>(f[kBleTx], line_number, "ble_tx_power_dbm");

  const int ftm_present = !f[kFtm1].empty() + !f[kFtm2].empty() +
                          !f[kFtm3].empty() + !f[kFtm4].empty();
  if (ftm_present == 4) {
    r.ftm = FtmTimes{
        parse_int<std::int64_t>(f[kFtm1], line_number, "ftm_t1_ns"),
        parse_int<std::int64_t>(f[kFtm2], line_number, "ftm_t2_ns"),
        parse_int<std::int64_t>(f[kFtm3], line_number, "ftm_t3_ns"),
        parse_int<std::int64_t>(f[kFtm4], line_number, "ftm_t4_ns")};
  } else if (ftm_present != 0) {
    throw ParseError(line_number, "partial FTM quadruple");
  }

  r.model_info = parse_model_info(f[kModelInfo], line_number);

  if (!f[kTruthX].empty() || !f[kTruthY].empty()) {
    if (f[kTruthX].empty() || f[kTruthY].empty()) {
      throw ParseError(line_number, "partial truth position");
    }
    r.truth_pos_m = Vec2{parse_double(f[kTruthX], line_number, "truth_x_m"),
                         parse_double(f[kTruthY], line_number, "truth_y_m")};
  }

  try {
    validate(r);
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(line_number, e.what());
  }
  return r;
}

std::vector<PacketRecord> parse_capture(std::istream& in) {
  std::vector<PacketRecord> records;
  std::string line;
  std::size_t line_number = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_number;
    std::string_view view = line;
    if (!view.empty() && view.back() == '\r') view.remove_suffix(1);
    if (!header_seen) {
      if (view.empty()) continue;
      if (view != kHeader) throw ParseError(line_number, "bad capture header");
      header_seen = true;
      continue;
    }
    if (view.empty()) continue;
    records.push_back(parse_line(view, line_number));
  }
  return records;
}

std::vector<PacketRecord> parse_capture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open capture " + path.string());
  return parse_capture(in);
}

std::string format_line(const PacketRecord& r) {
  std::string out = fmt::format(
      "{},{},{},{},{},{},{},{},{},", r.timestamp_ns, r.router_id,
      to_string(r.link), to_string(r.frame_kind), r.to_ds ? 1 : 0,
      r.from_ds ? 1 : 0, r.src_mac.to_string(),
      r.bssid ? r.bssid->to_string() : std::string(), r.rssi_dbm);
  if (r.sqi) out += std::to_string(*r.sqi);
  out += ',';
  if (r.ble_tx_power_dbm) out += std::to_string(*r.ble_tx_power_dbm);
  out += ',';
  if (r.ftm) {
    out += fmt::format("{},{},{},{},", r.ftm->t1_ns, r.ftm->t2_ns,
                       r.ftm->t3_ns, r.ftm->t4_ns);
  } else {
    out += ",,,,";
  }
  for (std::size_t i = 0; i < r.model_info.size(); ++i) {
    if (i > 0) out += ';';
    out += fmt::format("{}:{}", r.model_info[i].tag,
                       to_hex(r.model_info[i].value));
  }
  out += ',';
  if (r.truth_pos_m) {
    // Shortest round-trip representation keeps parse(format(x)) == x.
    out += fmt::format("{},{}", r.truth_pos_m->x, r.truth_pos_m->y);
  } else {
    out += ',';
  }
  return out;
}

void write_capture(std::ostream& out, std::span<const PacketRecord> records) {
  out << kHeader << '\n';
  for (const PacketRecord& r : records) out << format_line(r) << '\n';
}

void write_capture(const std::filesystem::path& path,
                   std::span<const PacketRecord> records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write capture " + path.string());
  write_capture(out, records);
}

std::vector<PacketRecord> sort_chronological(std::vector<PacketRecord> records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const PacketRecord& a, const PacketRecord& b) {
                     return a.timestamp_ns < b.timestamp_ns;
                   });
  return records;
}

std::map<MacAddress, DeviceClass> classify_devices(
    std::span<const PacketRecord> records) {
  std::set<MacAddress> beaconing, wds, bridged;
  std::map<MacAddress, DeviceClass> classes;
  for (const PacketRecord& r : records) {
    classes.emplace(r.src_mac, DeviceClass::kMobile);
    if (r.frame_kind == FrameKind::kBeacon) beaconing.insert(r.src_mac);
    if (r.to_ds && r.from_ds) wds.insert(r.src_mac);
    if (r.from_ds && r.bssid && *r.bssid != r.src_mac) {
      bridged.insert(r.src_mac);
    }
  }
  for (auto& [mac, cls] : classes) {
    if (beaconing.contains(mac)) {
      cls = DeviceClass::kAccessPoint;
    } else if (wds.contains(mac)) {
      cls = DeviceClass::kWds;
    } else if (bridged.contains(mac)) {
      cls = DeviceClass::kBridged;
    }
  }
  return classes;
}

std::vector<PacketRecord> filter_mobile(
    std::span<const PacketRecord> records,
    const std::map<MacAddress, DeviceClass>& classes) {
  std::vector<PacketRecord> out;
  for (const PacketRecord& r : records) {
    auto it = classes.find(r.src_mac);
    if (it != classes.end() && it->second == DeviceClass::kMobile) {
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace tracewave::capture
