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

// Ingest pipeline, encrypted device/path store and the query surface used by
// the HTTP API and the CLI.

#ifndef TRACEWAVE_SERVICE_HPP_
#define TRACEWAVE_SERVICE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracewave/localize.hpp"
#include "tracewave/simulate.hpp"
#include "tracewave/store.hpp"
#include "tracewave/tracing.hpp"

namespace tracewave::service {

// Flat `key = value` file; `#` starts a comment line.
class Config {
 public:
  static Config parse(std::istream& in);
  static Config load(const std::filesystem::path& path);

  std::optional<std::string> get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

enum class PathSource { kBilstm, kKnn, kTruth };
std::string_view to_string(PathSource source);
std::optional<PathSource> parse_path_source(std::string_view text);

struct StoredDevice {
  std::string bucket_id;
  std::optional<std::string> fingerprint;  // hex, nullopt = unclustered
  std::vector<std::string> macs;           // sorted
  std::optional<std::string> model_label;
  std::int64_t created_at_ns = 0;  // first record seen

  friend bool operator==(const StoredDevice&, const StoredDevice&) = default;
};

struct StoredPathPoint {
  std::string bucket_id;
  std::string site_id;
  std::int64_t t_ns = 0;
  double x_m = 0.0;
  double y_m = 0.0;
  PathSource source = PathSource::kBilstm;

  friend bool operator==(const StoredPathPoint&, const StoredPathPoint&) = default;
};

// CSV `bucket_id,site_id,t_ns,x_m,y_m,source`.
void write_paths(std::ostream& out, std::span<const StoredPathPoint> points);
std::vector<StoredPathPoint> parse_paths(std::istream& in);

struct IngestSummary {
  std::string digest;  // SHA-256 of the capture bytes
  std::string site_id;
  std::size_t records = 0;
  std::size_t mobile_records = 0;
  std::size_t devices = 0;
  std::size_t frames = 0;
  std::size_t paths = 0;
  std::string source;  // path source used, empty when no paths

  friend bool operator==(const IngestSummary&, const IngestSummary&) = default;
};

struct IngestResult {
  IngestSummary summary;
  bool duplicate = false;
};

struct ContactQuery {
  std::optional<std::int64_t> start_ns;
  std::optional<std::int64_t> end_ns;
  double max_distance_cells = 15.0;
  double time_resolution_s = 30.0;
};

// Contacts of `bucket_id` against every other bucket in `points`, both
// sides restricted to the query window. Rows are ordered by last contact
// time descending, then second key and site. `resolution` maps a site id to
// its grid resolution.
std::vector<tracing::ContactHistory> contact_report(
    std::span<const StoredPathPoint> points, const std::string& bucket_id,
    const ContactQuery& query,
    const std::function<double(const std::string&)>& resolution);

struct ErasureReceipt {
  std::string bucket_id;
  std::vector<store::ErasedFrame> frames;
  std::uint64_t total_bytes = 0;
};

struct ServiceOptions {
  std::filesystem::path store_path;
  store::Key key{};
  std::optional<localize::Localizer> model;  // BiLSTM paths when present
  std::map<std::string, simulate::SiteMap> sites;
  std::string default_site = "corridor";
  std::int64_t session_gap_ns = 3'600'000'000'000;  // new path after 1 h idle
  std::int64_t burst_gap_ns = 500'000'000;
};

// Keys: store_path, model_checkpoint, maps_dir, site_id, session_gap_s,
// burst_gap_ms. The bundled corridor and room maps are always present.
ServiceOptions options_from_config(const Config& config, const store::Key& key);

class Service {
 public:
  explicit Service(ServiceOptions options);

  // Idempotent per capture digest. Throws ParseError (nothing stored) on a
  // malformed capture.
  IngestResult ingest(std::string_view capture_bytes,
                      std::optional<std::string> site_id = std::nullopt);

  // MAC address (bucket membership) or hex fingerprint fragment (bit
  // subset, right-aligned); other text matches model labels. Empty query
  // lists every device.
  std::vector<StoredDevice> search_device(std::string_view query) const;
  StoredDevice get_device(const std::string& bucket_id) const;

  std::vector<tracing::ContactHistory> get_contacts(const std::string& bucket_id,
                                                    const ContactQuery& query) const;

  // Time-ordered points in [start, end]; every site when site_id is empty.
  std::vector<StoredPathPoint> get_path(const std::string& bucket_id,
                                        const std::optional<std::string>& site_id,
                                        std::optional<std::int64_t> start_ns = std::nullopt,
                                        std::optional<std::int64_t> end_ns = std::nullopt) const;

  ErasureReceipt erase_device(const std::string& bucket_id);

  const simulate::SiteMap& site_map(const std::string& site_id) const;
  std::vector<StoredPathPoint> all_paths() const;
  const std::filesystem::path& store_path() const { return log_.path(); }

 private:
  struct DeviceState {
    StoredDevice device;
    std::vector<std::uint64_t> offsets;
  };
  struct PathRecord {
    std::string site_id;
    PathSource source;
    std::vector<StoredPathPoint> points;
  };

  void apply(const store::LogBatch& batch);
  double resolution_of(const std::string& site_id) const;

  ServiceOptions options_;
  mutable std::shared_mutex mutex_;
  store::BlobLog log_;
  std::map<std::string, DeviceState> devices_;
  std::map<std::string, std::vector<PathRecord>> paths_;
  std::map<std::string, std::vector<std::uint64_t>> path_offsets_;
  std::map<std::string, IngestSummary> ingests_;
};

// HTTP/JSON front end over a Service.
class HttpFrontend {
 public:
  // Requests must carry `Authorization: Bearer <token>` when a token is set.
  HttpFrontend(Service& service, std::optional<std::string> token = std::nullopt);
  ~HttpFrontend();

  // Binds to an ephemeral port and returns it; serve with listen_after_bind.
  int bind_to_any_port(const std::string& host);
  bool listen(const std::string& host, int port);
  bool listen_after_bind();
  // Serves files under `dir` at `/` (operator console assets).
  bool mount_static(const std::filesystem::path& dir);
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tracewave::service

#endif  // TRACEWAVE_SERVICE_HPP_
