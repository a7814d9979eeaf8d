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

#include "tracewave/service.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "tracewave/capture.hpp"
#include "tracewave/features.hpp"
#include "tracewave/macclust.hpp"

namespace tracewave::service {
namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool in_window(std::int64_t t, std::optional<std::int64_t> start, std::optional<std::int64_t> end) {
  return (!start || t >= *start) && (!end || t <= *end);
}

json device_json(const StoredDevice& d) {
  return {{"type", "device"},
          {"bucket_id", d.bucket_id},
          {"fingerprint", d.fingerprint ? json(*d.fingerprint) : json(nullptr)},
          {"macs", d.macs},
          {"model_label", d.model_label ? json(*d.model_label) : json(nullptr)},
          {"created_at_ns", d.created_at_ns}};
}

StoredDevice device_from_json(const json& j) {
  StoredDevice d;
  d.bucket_id = j.at("bucket_id").get<std::string>();
  if (!j.at("fingerprint").is_null()) d.fingerprint = j.at("fingerprint").get<std::string>();
  d.macs = j.at("macs").get<std::vector<std::string>>();
  if (!j.at("model_label").is_null()) d.model_label = j.at("model_label").get<std::string>();
  d.created_at_ns = j.at("created_at_ns").get<std::int64_t>();
  return d;
}

json summary_json(const IngestSummary& s) {
  return {{"digest", s.digest},   {"site_id", s.site_id},
          {"records", s.records}, {"mobile_records", s.mobile_records},
          {"devices", s.devices}, {"frames", s.frames},
          {"paths", s.paths},     {"source", s.source}};
}

IngestSummary summary_from_json(const json& j) {
  IngestSummary s;
  s.digest = j.at("digest").get<std::string>();
  s.site_id = j.at("site_id").get<std::string>();
  s.records = j.at("records").get<std::size_t>();
  s.mobile_records = j.at("mobile_records").get<std::size_t>();
  s.devices = j.at("devices").get<std::size_t>();
  s.frames = j.at("frames").get<std::size_t>();
  s.paths = j.at("paths").get<std::size_t>();
  s.source = j.at("source").get<std::string>();
  return s;
}

std::string bucket_id_for(const macclust::MacBucket& b) {
  const std::string identity = b.fingerprint ? "fp:" + b.fingerprint->to_hex()
                                             : "mac:" + b.macs.front().to_string();
  return "b" + store::sha256_hex(identity).substr(0, 12);
}

// Splits chronologically sorted records wherever the device was idle for
// longer than `gap_ns`.
std::vector<std::vector<capture::PacketRecord>> sessions_of(
    const std::vector<capture::PacketRecord>& records, std::int64_t gap_ns) {
  std::vector<std::vector<capture::PacketRecord>> out;
  for (const auto& r : records) {
    if (out.empty() || r.timestamp_ns - out.back().back().timestamp_ns > gap_ns) out.emplace_back();
    out.back().push_back(r);
  }
  return out;
}

struct SessionPath {
  PathSource source;
  std::vector<std::pair<std::int64_t, Vec2>> points;
};

std::optional<SessionPath> localize_session(const std::vector<capture::PacketRecord>& records,
                                            const ServiceOptions& options) {
  if (options.model) {
    features::SyncOptions sync;
    try {
      sync.wifi_tx_dbm = features::estimate_wifi_tx_power(records, "").p_wifi_tx_dbm;
    } catch (const features::NoEstimateError&) {
    }
    const auto frames = features::group_bursts(
        features::synchronize(records, options.model->deployment, sync), options.burst_gap_ns);
    if (frames.empty()) return std::nullopt;
    const auto predicted = options.model->predict(frames);
    SessionPath path{PathSource::kBilstm, {}};
    for (std::size_t k = 0; k < frames.size(); ++k) {
      path.points.emplace_back(frames[k].t_ns, predicted[k]);
    }
    return path;
  }
  // No model: simulator captures carry their own positions.
  SessionPath path{PathSource::kTruth, {}};
  std::int64_t last = 0;
  for (const auto& r : records) {
    if (!r.truth_pos_m) continue;
    if (path.points.empty() || r.timestamp_ns - last >= options.burst_gap_ns) {
      path.points.emplace_back(features::round_to_grid(r.timestamp_ns), *r.truth_pos_m);
    }
    last = r.timestamp_ns;
  }
  if (path.points.empty()) return std::nullopt;
  return path;
}

}  // namespace

// ---------------------------------------------------------------- config

Config Config::parse(std::istream& in) {
  Config c;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ParseError(number, "expected key = value");
    const std::string key(trim(text.substr(0, eq)));
    if (key.empty()) throw ParseError(number, "empty key");
    if (c.values_.contains(key)) throw ParseError(number, "duplicate key '" + key + "'");
    c.values_[key] = std::string(trim(text.substr(eq + 1)));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse(in);
}

std::optional<std::string> Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_or(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return d;
  } catch (const std::exception&) {
    throw Error(fmt::format("config key '{}' is not a number: '{}'", key, *v));
  }
}

// ---------------------------------------------------------------- paths

std::string_view to_string(PathSource source) {
  switch (source) {
    case PathSource::kBilstm: return "BILSTM";
    case PathSource::kKnn: return "KNN";
    case PathSource::kTruth: return "TRUTH";
  }
  return "?";
}

std::optional<PathSource> parse_path_source(std::string_view text) {
  for (auto s : {PathSource::kBilstm, PathSource::kKnn, PathSource::kTruth}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

void write_paths(std::ostream& out, std::span<const StoredPathPoint> points) {
  out << "bucket_id,site_id,t_ns,x_m,y_m,source\n";
  for (const auto& p : points) {
    out << fmt::format("{},{},{},{:.4f},{:.4f},{}\n", p.bucket_id, p.site_id, p.t_ns, p.x_m,
                       p.y_m, to_string(p.source));
  }
}

std::vector<StoredPathPoint> parse_paths(std::istream& in) {
  std::string line;
  std::size_t number = 1;
  if (!std::getline(in, line) || trim(line) != "bucket_id,site_id,t_ns,x_m,y_m,source") {
    throw ParseError(1, "expected paths header");
  }
  std::vector<StoredPathPoint> out;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 6) throw ParseError(number, "expected 6 fields");
    StoredPathPoint p;
    p.bucket_id = std::string(f[0]);
    p.site_id = std::string(f[1]);
    try {
      p.t_ns = std::stoll(std::string(f[2]));
      p.x_m = std::stod(std::string(f[3]));
      p.y_m = std::stod(std::string(f[4]));
    } catch (const std::exception&) {
      throw ParseError(number, "bad number");
    }
    const auto source = parse_path_source(f[5]);
    if (!source) throw ParseError(number, "unknown source '" + std::string(f[5]) + "'");
    p.source = *source;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<tracing::ContactHistory> contact_report(
    std::span<const StoredPathPoint> points, const std::string& bucket_id,
    const ContactQuery& query,
    const std::function<double(const std::string&)>& resolution) {
  std::vector<tracing::TraceRecord> target, others;
  std::map<std::string, double> res;
  for (const auto& p : points) {
    if (!in_window(p.t_ns, query.start_ns, query.end_ns)) continue;
    auto it = res.find(p.site_id);
    if (it == res.end()) it = res.emplace(p.site_id, resolution(p.site_id)).first;
    const tracing::PathPoint pp{p.t_ns, {p.x_m, p.y_m}};
    auto traces = tracing::traces_from_path(p.bucket_id, p.site_id, std::span(&pp, 1), it->second);
    (p.bucket_id == bucket_id ? target : others).push_back(std::move(traces.front()));
  }
  auto by_time = [](const auto& a, const auto& b) { return a.time_s < b.time_s; };
  std::stable_sort(target.begin(), target.end(), by_time);
  std::stable_sort(others.begin(), others.end(), by_time);
  auto rows = tracing::generate_contact_history(
      target, others, {query.max_distance_cells, query.time_resolution_s});
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.last_contact_time_s > b.last_contact_time_s;
  });
  return rows;
}

// ---------------------------------------------------------------- service

ServiceOptions options_from_config(const Config& config, const store::Key& key) {
  ServiceOptions o;
  o.key = key;
  o.store_path = config.get_or("store_path", "tracewave.store");
  if (auto ckpt = config.get("model_checkpoint")) o.model = localize::load_checkpoint(*ckpt);
  o.sites.emplace("corridor", simulate::corridor_map());
  o.sites.emplace("room", simulate::room_map());
  if (auto dir = config.get("maps_dir")) {
    for (const auto& entry : std::filesystem::directory_iterator(*dir)) {
      if (entry.path().extension() != ".map") continue;
      auto map = simulate::SiteMap::load(entry.path());
      o.sites.insert_or_assign(map.site_id(), std::move(map));
    }
  }
  o.default_site = config.get_or("site_id", o.default_site);
  o.session_gap_ns = static_cast<std::int64_t>(config.get_double("session_gap_s", 3600.0) * 1e9);
  o.burst_gap_ns = static_cast<std::int64_t>(config.get_double("burst_gap_ms", 500.0) * 1e6);
  return o;
}

Service::Service(ServiceOptions options)
    : options_(std::move(options)), log_(options_.store_path, options_.key) {
  for (const auto& batch : log_.batches()) apply(batch);
}

void Service::apply(const store::LogBatch& batch) {
  for (const auto& entry : batch.data) {
    const json j = json::parse(entry.payload);
    const auto type = j.at("type").get<std::string>();
    if (type == "device") {
      StoredDevice d = device_from_json(j);
      auto& state = devices_[d.bucket_id];
      state.device = std::move(d);
      state.offsets.push_back(entry.offset);
    } else if (type == "path") {
      const auto bucket = j.at("bucket_id").get<std::string>();
      PathRecord rec;
      rec.site_id = j.at("site_id").get<std::string>();
      const auto source = parse_path_source(j.at("source").get<std::string>());
      if (!source) throw store::StoreCorruptError("unknown path source in store");
      rec.source = *source;
      for (const auto& p : j.at("points")) {
        rec.points.push_back({bucket, rec.site_id, p.at(0).get<std::int64_t>(),
                              p.at(1).get<double>(), p.at(2).get<double>(), rec.source});
      }
      paths_[bucket].push_back(std::move(rec));
      path_offsets_[bucket].push_back(entry.offset);
    } else {
      throw store::StoreCorruptError("unknown record type '" + type + "'");
    }
  }
  if (!batch.commit.empty()) {
    const IngestSummary s = summary_from_json(json::parse(batch.commit));
    ingests_[s.digest] = s;
  }
}

IngestResult Service::ingest(std::string_view capture_bytes, std::optional<std::string> site_id) {
  const std::string digest = store::sha256_hex(capture_bytes);
  {
    std::shared_lock lock(mutex_);
    if (auto it = ingests_.find(digest); it != ingests_.end()) return {it->second, true};
  }
  const std::string site = site_id.value_or(options_.default_site);

  std::istringstream in{std::string(capture_bytes)};
  auto records = capture::sort_chronological(capture::parse_capture(in));
  const auto mobile = capture::filter_mobile(records, capture::classify_devices(records));
  const auto buckets = macclust::bucket_devices(mobile);

  IngestSummary summary;
  summary.digest = digest;
  summary.site_id = site;
  summary.records = records.size();
  summary.mobile_records = mobile.size();
  summary.devices = buckets.size();

  struct Pending {
    const macclust::MacBucket* bucket;
    std::int64_t first_seen;
    std::vector<SessionPath> paths;
  };
  std::vector<Pending> pending;
  std::set<PathSource> sources;
  for (const auto& b : buckets) {
    const std::set<MacAddress> macs(b.macs.begin(), b.macs.end());
    std::vector<capture::PacketRecord> own;
    for (const auto& r : mobile) {
      if (macs.contains(r.src_mac)) own.push_back(r);
    }
    Pending p{&b, own.empty() ? 0 : own.front().timestamp_ns, {}};
    for (const auto& session : sessions_of(own, options_.session_gap_ns)) {
      if (auto path = localize_session(session, options_)) {
        summary.frames += path->points.size();
        sources.insert(path->source);
        p.paths.push_back(std::move(*path));
      }
    }
    summary.paths += p.paths.size();
    pending.push_back(std::move(p));
  }
  for (auto s : sources) {
    if (!summary.source.empty()) summary.source += '+';
    summary.source += to_string(s);
  }

  std::unique_lock lock(mutex_);
  if (auto it = ingests_.find(digest); it != ingests_.end()) return {it->second, true};

  std::vector<std::string> payloads;
  std::map<std::string, StoredDevice> touched;
  for (const auto& p : pending) {
    const macclust::MacBucket& b = *p.bucket;
    std::set<std::string> mac_names;
    for (MacAddress m : b.macs) mac_names.insert(m.to_string());
    const std::optional<std::string> fp =
        b.fingerprint ? std::optional(b.fingerprint->to_hex()) : std::nullopt;

    // Same device seen before: equal fingerprint or a shared address.
    std::string id;
    auto matches = [&](const StoredDevice& d) {
      if (fp && d.fingerprint == fp) return true;
      return std::any_of(d.macs.begin(), d.macs.end(),
                         [&](const std::string& m) { return mac_names.contains(m); });
    };
    for (const auto& [bid, d] : touched) {
      if (matches(d)) {
        id = bid;
        break;
      }
    }
    if (id.empty()) {
      for (const auto& [bid, state] : devices_) {
        if (matches(state.device)) {
          id = bid;
          break;
        }
      }
    }
    if (id.empty()) id = bucket_id_for(b);

    StoredDevice d;
    if (auto it = touched.find(id); it != touched.end()) {
      d = it->second;
    } else if (auto it2 = devices_.find(id); it2 != devices_.end()) {
      d = it2->second.device;
    } else {
      d.bucket_id = id;
      d.fingerprint = fp;
      d.created_at_ns = p.first_seen;
    }
    if (!d.fingerprint) d.fingerprint = fp;
    mac_names.insert(d.macs.begin(), d.macs.end());
    d.macs.assign(mac_names.begin(), mac_names.end());
    d.created_at_ns = std::min(d.created_at_ns, p.first_seen);
    touched[id] = d;

    for (const auto& path : p.paths) {
      json pts = json::array();
      for (const auto& [t, pos] : path.points) pts.push_back({t, pos.x, pos.y});
      payloads.push_back(json{{"type", "path"},
                              {"bucket_id", id},
                              {"site_id", site},
                              {"source", to_string(path.source)},
                              {"points", std::move(pts)}}
                             .dump());
    }
  }
  std::vector<std::string> device_payloads;
  for (const auto& [id, d] : touched) device_payloads.push_back(device_json(d).dump());
  device_payloads.insert(device_payloads.end(), payloads.begin(), payloads.end());

  const auto batch = log_.append_batch(device_payloads, summary_json(summary).dump());
  apply(batch);
  return {summary, false};
}

std::vector<StoredDevice> Service::search_device(std::string_view query) const {
  std::shared_lock lock(mutex_);
  const auto q = trim(query);
  std::vector<StoredDevice> out;
  if (q.empty()) {
    for (const auto& [id, s] : devices_) out.push_back(s.device);
    return out;
  }
  MacAddress mac;
  if (MacAddress::try_parse(q, mac)) {
    const std::string name = mac.to_string();
    for (const auto& [id, s] : devices_) {
      if (std::find(s.device.macs.begin(), s.device.macs.end(), name) != s.device.macs.end()) {
        out.push_back(s.device);
      }
    }
    return out;
  }
  const std::size_t digits = macclust::kFingerprintWidth / 4;
  const bool hex = q.size() <= digits && std::all_of(q.begin(), q.end(), [](char c) {
    return std::isxdigit(static_cast<unsigned char>(c));
  });
  if (hex) {
    std::string padded(digits - q.size(), '0');
    padded += lower(q);
    const auto fragment = macclust::FingerprintVector::from_hex(padded);
    if (fragment.popcount() > 0) {
      for (const auto& [id, s] : devices_) {
        if (s.device.fingerprint &&
            macclust::FingerprintVector::from_hex(*s.device.fingerprint).contains(fragment)) {
          out.push_back(s.device);
        }
      }
      return out;
    }
  }
  const std::string needle = lower(q);
  for (const auto& [id, s] : devices_) {
    if (s.device.model_label && lower(*s.device.model_label).find(needle) != std::string::npos) {
      out.push_back(s.device);
    }
  }
  return out;
}

StoredDevice Service::get_device(const std::string& bucket_id) const {
  std::shared_lock lock(mutex_);
  auto it = devices_.find(bucket_id);
  if (it == devices_.end()) throw NotFoundError("unknown bucket " + bucket_id);
  return it->second.device;
}

double Service::resolution_of(const std::string& site_id) const {
  auto it = options_.sites.find(site_id);
  if (it == options_.sites.end()) throw NotFoundError("unknown site " + site_id);
  return it->second.resolution();
}

std::vector<tracing::ContactHistory> Service::get_contacts(const std::string& bucket_id,
                                                           const ContactQuery& query) const {
  std::vector<StoredPathPoint> points;
  {
    std::shared_lock lock(mutex_);
    if (!devices_.contains(bucket_id)) throw NotFoundError("unknown bucket " + bucket_id);
    for (const auto& [id, recs] : paths_) {
      for (const auto& r : recs) points.insert(points.end(), r.points.begin(), r.points.end());
    }
  }
  return contact_report(points, bucket_id, query,
                        [this](const std::string& site) { return resolution_of(site); });
}

std::vector<StoredPathPoint> Service::get_path(const std::string& bucket_id,
                                               const std::optional<std::string>& site_id,
                                               std::optional<std::int64_t> start_ns,
                                               std::optional<std::int64_t> end_ns) const {
  std::shared_lock lock(mutex_);
  if (!devices_.contains(bucket_id)) throw NotFoundError("unknown bucket " + bucket_id);
  std::vector<StoredPathPoint> out;
  bool site_seen = !site_id;
  if (auto it = paths_.find(bucket_id); it != paths_.end()) {
    for (const auto& r : it->second) {
      if (site_id && r.site_id != *site_id) continue;
      site_seen = true;
      for (const auto& p : r.points) {
        if (in_window(p.t_ns, start_ns, end_ns)) out.push_back(p);
      }
    }
  }
  if (!site_seen) throw NotFoundError(fmt::format("no path for {} at site {}", bucket_id, *site_id));
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.t_ns < b.t_ns; });
  return out;
}

ErasureReceipt Service::erase_device(const std::string& bucket_id) {
  std::unique_lock lock(mutex_);
  auto it = devices_.find(bucket_id);
  if (it == devices_.end()) throw NotFoundError("unknown bucket " + bucket_id);
  std::vector<std::uint64_t> offsets = it->second.offsets;
  if (auto p = path_offsets_.find(bucket_id); p != path_offsets_.end()) {
    offsets.insert(offsets.end(), p->second.begin(), p->second.end());
  }
  std::sort(offsets.begin(), offsets.end());
  ErasureReceipt receipt;
  receipt.bucket_id = bucket_id;
  receipt.frames = log_.erase(offsets);
  for (const auto& f : receipt.frames) receipt.total_bytes += f.bytes;
  devices_.erase(it);
  paths_.erase(bucket_id);
  path_offsets_.erase(bucket_id);
  return receipt;
}

const simulate::SiteMap& Service::site_map(const std::string& site_id) const {
  auto it = options_.sites.find(site_id);
  if (it == options_.sites.end()) throw NotFoundError("unknown site " + site_id);
  return it->second;
}

std::vector<StoredPathPoint> Service::all_paths() const {
  std::shared_lock lock(mutex_);
  std::vector<StoredPathPoint> out;
  for (const auto& [id, recs] : paths_) {
    for (const auto& r : recs) out.insert(out.end(), r.points.begin(), r.points.end());
  }
  return out;
}

}  // namespace tracewave::service
