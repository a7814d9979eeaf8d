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

// Eigen must come before httplib: <resolv.h> defines a `_res` macro.
#include "tracewave/service.hpp"

#include <httplib.h>
#include <json.hpp>

namespace tracewave::service {
namespace {

using nlohmann::json;

class BadRequest : public Error {
 public:
  using Error::Error;
};

std::optional<std::int64_t> int_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  const std::string v = req.get_param_value(name);
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw BadRequest(std::string("parameter '") + name + "' must be an integer");
  }
}

std::optional<double> double_param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) return std::nullopt;
  const std::string v = req.get_param_value(name);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw BadRequest(std::string("parameter '") + name + "' must be a number");
  }
}

json to_json(const StoredDevice& d) {
  return {{"bucket_id", d.bucket_id},
          {"fingerprint", d.fingerprint ? json(*d.fingerprint) : json(nullptr)},
          {"macs", d.macs},
          {"model_label", d.model_label ? json(*d.model_label) : json(nullptr)},
          {"created_at_ns", d.created_at_ns}};
}

json to_json(const tracing::ContactHistory& h) {
  return {{"first_key", h.first_key},
          {"second_key", h.second_key},
          {"site_id", h.site_id},
          {"contact_duration", h.contact_duration},
          {"last_contact_time", h.last_contact_time_s},
          {"avg_distance", h.avg_distance_cells},
          {"min_distance", h.min_distance_cells},
          {"band_0_5", h.bands[0]},
          {"band_5_10", h.bands[1]},
          {"band_10_15", h.bands[2]}};
}

json to_json(const StoredPathPoint& p) {
  return {{"bucket_id", p.bucket_id}, {"site_id", p.site_id}, {"t_ns", p.t_ns},
          {"x_m", p.x_m},             {"y_m", p.y_m},         {"source", to_string(p.source)}};
}

json to_json(const IngestResult& r) {
  const auto& s = r.summary;
  return {{"digest", s.digest},   {"site_id", s.site_id},
          {"records", s.records}, {"mobile_records", s.mobile_records},
          {"devices", s.devices}, {"frames", s.frames},
          {"paths", s.paths},     {"source", s.source},
          {"duplicate", r.duplicate}};
}

json to_json(const simulate::SiteMap& map) {
  json rows = json::array();
  for (int j = 0; j < map.height(); ++j) {
    std::string row;
    for (int i = 0; i < map.width(); ++i) {
      switch (map.at({i, j})) {
        case simulate::Cell::kOccupied: row += '#'; break;
        case simulate::Cell::kFree: row += '.'; break;
        case simulate::Cell::kUnknown: row += '?'; break;
      }
    }
    rows.push_back(std::move(row));
  }
  return {{"site_id", map.site_id()},
          {"width", map.width()},
          {"height", map.height()},
          {"resolution_m", map.resolution()},
          {"rows", std::move(rows)}};
}

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

struct HttpFrontend::Impl {
  Service& service;
  std::optional<std::string> token;
  httplib::Server server;

  // Runs a handler, mapping library errors onto HTTP status codes.
  template <typename F>
  httplib::Server::Handler wrap(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      if (token && req.get_header_value("Authorization") != "Bearer " + *token) {
        send(res, 401, {{"error", "unauthorized"}});
        return;
      }
      try {
        f(req, res);
      } catch (const NotFoundError& e) {
        send(res, 404, {{"error", e.what()}});
      } catch (const BadRequest& e) {
        send(res, 400, {{"error", e.what()}});
      } catch (const ParseError& e) {
        send(res, 400, {{"error", e.what()}});
      } catch (const std::exception& e) {
        send(res, 500, {{"error", e.what()}});
      }
    };
  }

  void routes() {
    server.Post("/captures", wrap([this](const httplib::Request& req, httplib::Response& res) {
      std::string body = req.body;
      if (req.is_multipart_form_data()) {
        if (!req.has_file("file")) throw BadRequest("multipart field 'file' is missing");
        body = req.get_file_value("file").content;
      }
      std::optional<std::string> site;
      if (req.has_param("site")) site = req.get_param_value("site");
      if (site) service.site_map(*site);
      const auto result = service.ingest(body, site);
      send(res, result.duplicate ? 200 : 201, to_json(result));
    }));

    server.Get("/devices", wrap([this](const httplib::Request& req, httplib::Response& res) {
      json out = json::array();
      for (const auto& d : service.search_device(req.get_param_value("q"))) out.push_back(to_json(d));
      send(res, 200, out);
    }));

    server.Get(R"(/devices/([^/]+)/contacts)",
               wrap([this](const httplib::Request& req, httplib::Response& res) {
                 ContactQuery q;
                 q.start_ns = int_param(req, "start");
                 q.end_ns = int_param(req, "end");
                 if (auto d = double_param(req, "max_distance")) q.max_distance_cells = *d;
                 json out = json::array();
                 for (const auto& h : service.get_contacts(req.matches[1], q)) {
                   out.push_back(to_json(h));
                 }
                 send(res, 200, out);
               }));

    server.Get(R"(/devices/([^/]+)/path)",
               wrap([this](const httplib::Request& req, httplib::Response& res) {
                 std::optional<std::string> site;
                 if (req.has_param("site")) site = req.get_param_value("site");
                 json out = json::array();
                 for (const auto& p : service.get_path(req.matches[1], site,
                                                       int_param(req, "start"),
                                                       int_param(req, "end"))) {
                   out.push_back(to_json(p));
                 }
                 send(res, 200, out);
               }));

    server.Delete(R"(/devices/([^/]+))",
                  wrap([this](const httplib::Request& req, httplib::Response& res) {
                    const auto receipt = service.erase_device(req.matches[1]);
                    json frames = json::array();
                    for (const auto& f : receipt.frames) {
                      frames.push_back({{"offset", f.offset}, {"bytes", f.bytes}});
                    }
                    send(res, 200,
                         {{"bucket_id", receipt.bucket_id},
                          {"frames", std::move(frames)},
                          {"total_bytes", receipt.total_bytes}});
                  }));

    server.Get(R"(/sites/([^/]+)/map)",
               wrap([this](const httplib::Request& req, httplib::Response& res) {
                 send(res, 200, to_json(service.site_map(req.matches[1])));
               }));
  }
};

HttpFrontend::HttpFrontend(Service& service, std::optional<std::string> token)
    : impl_(new Impl{service, std::move(token), {}}) {
  impl_->routes();
}

HttpFrontend::~HttpFrontend() = default;

int HttpFrontend::bind_to_any_port(const std::string& host) {
  return impl_->server.bind_to_any_port(host);
}

bool HttpFrontend::listen(const std::string& host, int port) {
  return impl_->server.listen(host, port);
}

bool HttpFrontend::listen_after_bind() { return impl_->server.listen_after_bind(); }

bool HttpFrontend::mount_static(const std::filesystem::path& dir) {
  return impl_->server.set_mount_point("/", dir.string());
}

void HttpFrontend::stop() { impl_->server.stop(); }

void HttpFrontend::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace tracewave::service
