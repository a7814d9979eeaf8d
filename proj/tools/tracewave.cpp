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

// tracewave command line: simulator, offline pipeline stages and the
// storage/query service.

#include <fmt/core.h>
#include <fmt/ostream.h>

#include <CLI11.hpp>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "tracewave/macclust.hpp"
#include "tracewave/service.hpp"

namespace {

using namespace tracewave;
namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 1;
  std::string config_path;

  service::Config config() const {
    return config_path.empty() ? service::Config{} : service::Config::load(config_path);
  }
};

// Writes to `path`, or stdout when it is empty or "-".
template <typename F>
void with_output(const std::string& path, F f) {
  if (path.empty() || path == "-") {
    f(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  f(out);
}

simulate::SiteMap load_site(const std::string& name) {
  if (name == "corridor") return simulate::corridor_map();
  if (name == "room") return simulate::room_map();
  return simulate::SiteMap::load(name);
}

std::vector<simulate::RouterSpec> load_routers_or_default(const std::string& path) {
  return path.empty() ? simulate::corridor_routers() : simulate::load_routers(path);
}

std::vector<capture::PacketRecord> read_capture(const std::string& path) {
  return capture::sort_chronological(capture::parse_capture(fs::path(path)));
}

// Records of the device owning `mac`, or of the only device in the capture.
std::vector<capture::PacketRecord> device_records(std::span<const capture::PacketRecord> all,
                                                  const std::string& mac) {
  const auto mobile = capture::filter_mobile(all, capture::classify_devices(all));
  const auto buckets = macclust::bucket_devices(mobile);
  const macclust::MacBucket* chosen = nullptr;
  if (mac.empty()) {
    if (buckets.size() != 1) {
      throw Error(fmt::format("capture holds {} devices; pick one with --mac", buckets.size()));
    }
    chosen = &buckets.front();
  } else {
    const auto want = MacAddress::parse(mac);
    for (const auto& b : buckets) {
      if (std::find(b.macs.begin(), b.macs.end(), want) != b.macs.end()) chosen = &b;
    }
    if (!chosen) throw NotFoundError("no device with MAC " + mac);
  }
  const std::set<MacAddress> macs(chosen->macs.begin(), chosen->macs.end());
  std::vector<capture::PacketRecord> out;
  for (const auto& r : mobile) {
    if (macs.contains(r.src_mac)) out.push_back(r);
  }
  return out;
}

std::vector<features::FeatureFrame> device_frames(std::span<const capture::PacketRecord> records,
                                                  const features::Deployment& deployment,
                                                  std::int64_t burst_gap_ns) {
  features::SyncOptions sync;
  try {
    sync.wifi_tx_dbm = features::estimate_wifi_tx_power(records, "").p_wifi_tx_dbm;
  } catch (const features::NoEstimateError&) {
  }
  const auto frames = features::synchronize(records, deployment, sync);
  return burst_gap_ns > 0 ? features::group_bursts(frames, burst_gap_ns) : frames;
}

// ------------------------------------------------------------ simulate

struct SimulateArgs {
  std::string map = "corridor";
  std::string routers;
  std::string out_dir = ".";
  std::size_t trajectories = 1;
  double sigma_db = 4.0;
  double jitter_ns = 1.0;
  double response_rate = 1.0;
  std::string mac = "02:00:5E:00:00:01";
  int bursts = 1;
};

void run_simulate(const Globals& g, const SimulateArgs& a) {
  const auto map = load_site(a.map);
  const auto routers = load_routers_or_default(a.routers);
  simulate::check_routers(map, routers);
  simulate::ChannelModel channel;
  channel.shadow_sigma_db = a.sigma_db;
  channel.ftm_jitter_sigma_ns = a.jitter_ns;
  channel.response_rate = a.response_rate;
  channel.validate();
  simulate::DeviceProfile device;
  device.mac = MacAddress::parse(a.mac);
  device.bursts_per_waypoint = a.bursts;
  simulate::SurveyOptions opt;
  opt.seed = g.seed;
  opt.n_trajectories = a.trajectories;

  const auto runs = simulate::run_survey(map, routers, channel, device, opt);
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  for (std::size_t k = 0; k < runs.size(); ++k) {
    capture::write_capture(dir / fmt::format("traj{}.capture", k), runs[k].records);
  }
  std::ofstream truth(dir / "truth.csv");
  simulate::write_truth(truth, runs);
  std::ofstream router_file(dir / "routers.csv");
  simulate::write_routers(router_file, routers);
  for (std::size_t k = 0; k < runs.size(); ++k) {
    fmt::print("traj{}: {} records, {} waypoints, {} retraces, coverage gap {:.3f} m\n", k,
               runs[k].records.size(), runs[k].visited.size(), runs[k].retraces,
               simulate::coverage_gap_m(map, runs[k].visited));
  }
}

// ------------------------------------------------------------ offline stages

void run_cluster(const std::string& input, const std::string& output) {
  const auto records = read_capture(input);
  const auto mobile = capture::filter_mobile(records, capture::classify_devices(records));
  const auto buckets = macclust::bucket_devices(mobile);
  with_output(output, [&](std::ostream& out) { macclust::write_bucket_report(out, buckets); });
}

struct ExtractArgs {
  std::string input;
  std::string routers;
  std::string mac;
  std::string output;
  double burst_gap_ms = 0.0;
};

void run_extract(const ExtractArgs& a) {
  const auto deployment = simulate::make_deployment(load_routers_or_default(a.routers));
  const auto records = device_records(read_capture(a.input), a.mac);
  const auto frames =
      device_frames(records, deployment, static_cast<std::int64_t>(a.burst_gap_ms * 1e6));
  with_output(a.output, [&](std::ostream& out) { features::write_frames(out, deployment, frames); });
}

struct TrainArgs {
  std::string survey;
  std::string validation;
  std::string test;
  std::string routers;
  std::string output = "model.twv";
  std::string metrics;
  std::string location = "corridor";
  std::size_t trajectories = 2000;
  std::size_t epochs = 50;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::size_t knn_k = 3;
};

void run_train(const Globals& g, const TrainArgs& a) {
  const auto routers = load_routers_or_default(a.routers);
  const auto deployment = simulate::make_deployment(routers);
  const auto survey = localize::build_survey_points(read_capture(a.survey), deployment);
  std::vector<localize::TrajectoryPoint> validation;
  if (!a.validation.empty()) {
    validation = localize::build_survey_points(read_capture(a.validation), deployment);
  }

  const auto t0 = std::chrono::steady_clock::now();
  localize::GenerationOptions gen;
  gen.count = a.trajectories;
  gen.seed = g.seed;
  const auto trajectories = localize::generate_trajectories(survey, gen);
  auto model = localize::make_localizer(deployment, survey, g.seed);
  localize::TrainOptions opt;
  opt.epochs = a.epochs;
  opt.batch = a.batch;
  opt.lr = a.lr;
  opt.seed = g.seed;
  opt.validation = validation;
  opt.on_epoch = [](std::size_t epoch, double loss, std::optional<double> val) {
    if (val) {
      fmt::print(std::cerr, "epoch {} loss {:.5f} val_rmse {:.3f}\n", epoch, loss, *val);
    } else {
      fmt::print(std::cerr, "epoch {} loss {:.5f}\n", epoch, loss);
    }
  };
  const auto report = localize::train(model, trajectories, opt);
  const double train_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  localize::save_checkpoint(fs::path(a.output), model);
  fmt::print(std::cerr, "best epoch {}, checkpoint {}\n", report.best_epoch, a.output);

  if (a.test.empty()) return;
  const auto test = localize::build_survey_points(read_capture(a.test), deployment);
  std::vector<features::FeatureFrame> frames;
  std::vector<Vec2> truth;
  for (const auto& p : test) {
    frames.push_back(p.frame);
    truth.push_back(p.pos_m);
  }
  auto timed = [&](auto predict) {
    const auto s = std::chrono::steady_clock::now();
    const auto out = predict();
    const double us =
        std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - s).count();
    return std::pair(localize::evaluate(out, truth), us / static_cast<double>(frames.size()));
  };
  const auto [net, net_us] = timed([&] { return model.predict(frames); });
  const auto [knn, knn_us] =
      timed([&] { return localize::knn_predict(survey, frames, a.knn_k, deployment); });
  const std::vector<localize::MetricsRow> rows = {
      {a.location, "bilstm", routers.size(), net.rmse_m, net.mae_m, train_s, net_us},
      {a.location, fmt::format("knn{}", a.knn_k), routers.size(), knn.rmse_m, knn.mae_m, 0.0,
       knn_us}};
  with_output(a.metrics, [&](std::ostream& out) { localize::write_metrics(out, rows); });
}

struct LocalizeArgs {
  std::string input;
  std::string model;
  std::string mac;
  std::string output;
  double burst_gap_ms = 500.0;
};

void run_localize(const LocalizeArgs& a) {
  const auto model = localize::load_checkpoint(fs::path(a.model));
  const auto records = device_records(read_capture(a.input), a.mac);
  const auto gap = static_cast<std::int64_t>(a.burst_gap_ms * 1e6);
  const bool has_truth = std::all_of(records.begin(), records.end(),
                                     [](const auto& r) { return r.truth_pos_m.has_value(); });
  std::vector<features::FeatureFrame> frames;
  std::vector<Vec2> truth;
  if (has_truth && !records.empty()) {
    for (const auto& p : localize::build_survey_points(records, model.deployment, gap)) {
      frames.push_back(p.frame);
      truth.push_back(p.pos_m);
    }
  } else {
    frames = device_frames(records, model.deployment, gap);
  }
  const auto predicted = model.predict(frames);
  with_output(a.output, [&](std::ostream& out) {
    out << "t_ns,x_m,y_m\n";
    for (std::size_t k = 0; k < frames.size(); ++k) {
      out << fmt::format("{},{:.4f},{:.4f}\n", frames[k].t_ns, predicted[k].x, predicted[k].y);
    }
  });
  if (!truth.empty()) {
    const auto m = localize::evaluate(predicted, truth);
    fmt::print(std::cerr, "rmse {:.3f} m, mae {:.3f} m over {} frames\n", m.rmse_m, m.mae_m,
               frames.size());
  }
}

// ------------------------------------------------------------ service

service::ServiceOptions service_options(const Globals& g, const std::string& store) {
  auto config = g.config();
  if (!store.empty()) config.set("store_path", store);
  return service::options_from_config(config, store::key_from_env());
}

void run_ingest(const Globals& g, const std::string& store, const std::vector<std::string>& inputs,
                const std::string& site) {
  service::Service svc(service_options(g, store));
  for (const auto& path : inputs) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    const auto r = svc.ingest(bytes.str(), site.empty() ? std::nullopt : std::optional(site));
    const auto& s = r.summary;
    fmt::print("{}: {} records, {} devices, {} paths ({}){}\n", path, s.records, s.devices,
               s.paths, s.source.empty() ? "none" : s.source, r.duplicate ? ", duplicate" : "");
  }
}

struct TraceArgs {
  std::string store;
  std::string paths;
  std::string bucket;
  std::string output;
  std::string dump_paths;
  std::optional<std::int64_t> start_ns;
  std::optional<std::int64_t> end_ns;
  double max_distance = 15.0;
  double time_resolution_s = 30.0;
};

void run_trace(const Globals& g, const TraceArgs& a) {
  std::vector<service::StoredPathPoint> points;
  std::map<std::string, simulate::SiteMap> sites;
  if (a.paths.empty()) {
    service::Service svc(service_options(g, a.store));
    points = svc.all_paths();
  } else {
    std::ifstream in(a.paths);
    if (!in) throw Error("cannot read " + a.paths);
    points = service::parse_paths(in);
  }
  if (!a.dump_paths.empty()) {
    with_output(a.dump_paths, [&](std::ostream& out) { service::write_paths(out, points); });
  }
  if (a.bucket.empty()) return;

  const auto config = g.config();
  sites.emplace("corridor", simulate::corridor_map());
  sites.emplace("room", simulate::room_map());
  if (auto dir = config.get("maps_dir")) {
    for (const auto& entry : fs::directory_iterator(*dir)) {
      if (entry.path().extension() != ".map") continue;
      auto map = simulate::SiteMap::load(entry.path());
      sites.insert_or_assign(map.site_id(), std::move(map));
    }
  }
  service::ContactQuery q;
  q.start_ns = a.start_ns;
  q.end_ns = a.end_ns;
  q.max_distance_cells = a.max_distance;
  q.time_resolution_s = a.time_resolution_s;
  const auto rows = service::contact_report(points, a.bucket, q, [&](const std::string& site) {
    auto it = sites.find(site);
    if (it == sites.end()) throw NotFoundError("unknown site " + site);
    return it->second.resolution();
  });
  with_output(a.output, [&](std::ostream& out) { tracing::write_contacts(out, rows); });
}

service::HttpFrontend* g_frontend = nullptr;

void run_serve(const Globals& g, const std::string& store, const std::string& host, int port,
               const std::string& static_dir) {
  const auto config = g.config();
  service::Service svc(service_options(g, store));
  std::optional<std::string> token;
  if (const char* env = std::getenv("TRACEWAVE_TOKEN"); env && *env) {
    token = env;
  } else if (auto t = config.get("http_token")) {
    token = *t;
  }
  service::HttpFrontend front(svc, token);
  if (!static_dir.empty() && !front.mount_static(static_dir)) {
    throw Error("cannot serve static assets from " + static_dir);
  }
  g_frontend = &front;
  std::signal(SIGINT, [](int) { g_frontend->stop(); });
  std::signal(SIGTERM, [](int) { g_frontend->stop(); });
  fmt::print(std::cerr, "serving {} on http://{}:{}\n", svc.store_path().string(), host, port);
  if (!front.listen(host, port)) throw Error(fmt::format("cannot listen on {}:{}", host, port));
  g_frontend = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tracewave: Wi-Fi contact tracing toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "RNG seed")->capture_default_str();
  app.add_option("--config", g.config_path, "key = value config file")->check(CLI::ExistingFile);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Survey a site map and write captures");
  c_sim->add_option("--map", sim.map, "corridor, room or a map file")->capture_default_str();
  c_sim->add_option("--routers", sim.routers, "router CSV (default: corridor routers)");
  c_sim->add_option("-o,--out-dir", sim.out_dir, "output directory")->capture_default_str();
  c_sim->add_option("-n,--trajectories", sim.trajectories)->capture_default_str();
  c_sim->add_option("--sigma", sim.sigma_db, "shadowing sigma, dB")->capture_default_str();
  c_sim->add_option("--jitter", sim.jitter_ns, "FTM jitter sigma, ns")->capture_default_str();
  c_sim->add_option("--response-rate", sim.response_rate)->capture_default_str();
  c_sim->add_option("--mac", sim.mac, "device MAC")->capture_default_str();
  c_sim->add_option("--bursts", sim.bursts, "bursts per waypoint")->capture_default_str();

  std::string store;
  std::vector<std::string> ingest_inputs;
  std::string ingest_site;
  auto* c_ingest = app.add_subcommand("ingest", "Ingest captures into the encrypted store");
  c_ingest->add_option("captures", ingest_inputs)->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--store", store, "store file (overrides store_path)");
  c_ingest->add_option("--site", ingest_site, "site id (overrides site_id)");

  std::string cluster_in, cluster_out;
  auto* c_cluster = app.add_subcommand("cluster", "Group randomized MACs into devices");
  c_cluster->add_option("capture", cluster_in)->required()->check(CLI::ExistingFile);
  c_cluster->add_option("-o,--output", cluster_out);

  ExtractArgs ex;
  auto* c_extract = app.add_subcommand("extract", "Synchronized feature frames of one device");
  c_extract->add_option("capture", ex.input)->required()->check(CLI::ExistingFile);
  c_extract->add_option("--routers", ex.routers);
  c_extract->add_option("--mac", ex.mac, "any MAC of the device");
  c_extract->add_option("--burst-gap-ms", ex.burst_gap_ms, "merge bursts (0 = off)");
  c_extract->add_option("-o,--output", ex.output);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the BiLSTM localizer on a survey capture");
  c_train->add_option("--survey", tr.survey)->required()->check(CLI::ExistingFile);
  c_train->add_option("--validation", tr.validation)->check(CLI::ExistingFile);
  c_train->add_option("--test", tr.test)->check(CLI::ExistingFile);
  c_train->add_option("--routers", tr.routers);
  c_train->add_option("-o,--output", tr.output)->capture_default_str();
  c_train->add_option("--metrics", tr.metrics, "metrics CSV (default stdout)");
  c_train->add_option("--location", tr.location)->capture_default_str();
  c_train->add_option("--trajectories", tr.trajectories)->capture_default_str();
  c_train->add_option("--epochs", tr.epochs)->capture_default_str();
  c_train->add_option("--batch", tr.batch)->capture_default_str();
  c_train->add_option("--lr", tr.lr)->capture_default_str();
  c_train->add_option("--knn-k", tr.knn_k)->capture_default_str();

  LocalizeArgs lo;
  auto* c_localize = app.add_subcommand("localize", "Predict a device path with a checkpoint");
  c_localize->add_option("capture", lo.input)->required()->check(CLI::ExistingFile);
  c_localize->add_option("--model", lo.model)->required()->check(CLI::ExistingFile);
  c_localize->add_option("--mac", lo.mac);
  c_localize->add_option("--burst-gap-ms", lo.burst_gap_ms)->capture_default_str();
  c_localize->add_option("-o,--output", lo.output);

  TraceArgs ta;
  auto* c_trace = app.add_subcommand("trace", "Contact report for one device");
  c_trace->add_option("--bucket", ta.bucket, "confirmed device bucket id");
  c_trace->add_option("--paths", ta.paths, "paths CSV (default: read the store)")
      ->check(CLI::ExistingFile);
  c_trace->add_option("--store", ta.store);
  c_trace->add_option("--start", ta.start_ns, "window start, ns");
  c_trace->add_option("--end", ta.end_ns, "window end, ns");
  c_trace->add_option("--max-distance", ta.max_distance, "cells")->capture_default_str();
  c_trace->add_option("--time-resolution", ta.time_resolution_s, "s")->capture_default_str();
  c_trace->add_option("--dump-paths", ta.dump_paths, "also write every stored path as CSV");
  c_trace->add_option("-o,--output", ta.output);

  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  auto* c_serve = app.add_subcommand("serve", "Run the HTTP/JSON API");
  c_serve->add_option("--store", store);
  c_serve->add_option("--host", host)->capture_default_str();
  c_serve->add_option("--port", port)->capture_default_str();
  c_serve->add_option("--static", static_dir, "console assets directory")
      ->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_sim) run_simulate(g, sim);
    if (*c_ingest) run_ingest(g, store, ingest_inputs, ingest_site);
    if (*c_cluster) run_cluster(cluster_in, cluster_out);
    if (*c_extract) run_extract(ex);
    if (*c_train) run_train(g, tr);
    if (*c_localize) run_localize(lo);
    if (*c_trace) run_trace(g, ta);
    if (*c_serve) run_serve(g, store, host, port, static_dir);
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "tracewave: {}\n", e.what());
    return 1;
  }
  return 0;
}
