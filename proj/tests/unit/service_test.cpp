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

#include <gtest/gtest.h>
#include <httplib.h>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include "phone_fixture.hpp"
#include "tracewave/capture.hpp"

namespace tracewave::service {
namespace {

namespace fs = std::filesystem;

const store::Key kKey = store::parse_key(std::string(64, 'a'));

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("tracewave_service_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string to_capture_text(std::span<const capture::PacketRecord> records) {
  std::ostringstream out;
  capture::write_capture(out, records);
  return out.str();
}

ServiceOptions options_at(const fs::path& store) {
  Config c;
  c.set("store_path", store.string());
  return options_from_config(c, kKey);
}

// Two simulated phones surveying the corridor at the same time.
std::string two_device_capture(std::size_t trajectories = 1) {
  const auto map = simulate::corridor_map();
  const auto routers = simulate::corridor_routers();
  std::vector<capture::PacketRecord> all;
  for (int k = 0; k < 2; ++k) {
    simulate::DeviceProfile dev;
    dev.mac = MacAddress(0x02'00'5E'00'00'01ULL + k);
    dev.model_info[1].value[0] = static_cast<std::uint8_t>(0x6f + 0x10 * k);
    simulate::SurveyOptions opt;
    opt.seed = 10 + k;
    opt.n_trajectories = trajectories;
    for (auto& run : simulate::run_survey(map, routers, {}, dev, opt)) {
      all.insert(all.end(), run.records.begin(), run.records.end());
    }
  }
  return to_capture_text(capture::sort_chronological(std::move(all)));
}

// ------------------------------------------------------------ config

TEST(ServiceConfig, ParsesFlatKeyValues) {
  std::istringstream in("# comment\nstore_path = /tmp/x.store\n\n port=8080 \nsite_id = room\n");
  const auto c = Config::parse(in);
  EXPECT_EQ(c.get("store_path"), "/tmp/x.store");
  EXPECT_EQ(c.get_double("port", 0), 8080.0);
  EXPECT_EQ(c.get_or("missing", "d"), "d");
  std::istringstream bad("novalue\n");
  EXPECT_THROW(Config::parse(bad), ParseError);
  std::istringstream dup("a = 1\na = 2\n");
  EXPECT_THROW(Config::parse(dup), ParseError);
  std::istringstream nan("port = eighty\n");
  EXPECT_THROW(Config::parse(nan).get_double("port", 0), Error);
}

// ------------------------------------------------------------ crypto and log

TEST(Store, KeyParsing) {
  EXPECT_NO_THROW(store::parse_key(std::string(64, 'F')));
  EXPECT_THROW(store::parse_key(std::string(63, 'a')), store::StoreError);
  EXPECT_THROW(store::parse_key(std::string(64, 'g')), store::StoreError);
  EXPECT_EQ(store::sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Store, SealRoundTripAndTamper) {
  const std::array<std::uint8_t, 8> aad{1, 2, 3};
  auto sealed = store::seal(kKey, "secret path", aad);
  EXPECT_EQ(sealed.size(), 12 + 11 + 16u);
  EXPECT_EQ(store::unseal(kKey, sealed, aad), "secret path");
  // Same plaintext, fresh nonce.
  EXPECT_NE(store::seal(kKey, "secret path", aad), sealed);
  const std::array<std::uint8_t, 8> other{1, 2, 4};
  EXPECT_THROW(store::unseal(kKey, sealed, other), store::StoreCorruptError);
  auto wrong = kKey;
  wrong[0] ^= 1;
  EXPECT_THROW(store::unseal(wrong, sealed, aad), store::StoreCorruptError);
  sealed[14] ^= 0x40;
  EXPECT_THROW(store::unseal(kKey, sealed, aad), store::StoreCorruptError);
}

TEST(Store, BatchesSurviveReopen) {
  TempDir dir;
  const auto path = dir / "log";
  {
    store::BlobLog log(path, kKey);
    const std::vector<std::string> a = {"one", "two"};
    log.append_batch(a, "c1");
    const std::vector<std::string> b = {"three"};
    log.append_batch(b, "c2");
  }
  const std::string bytes = slurp(path);
  EXPECT_EQ(bytes.find("three"), std::string::npos);  // nothing in clear
  store::BlobLog log(path, kKey);
  ASSERT_EQ(log.batches().size(), 2u);
  EXPECT_EQ(log.batches()[0].data[1].payload, "two");
  EXPECT_EQ(log.batches()[1].commit, "c2");
  EXPECT_THROW(store::BlobLog(path, store::parse_key(std::string(64, 'b'))),
               store::StoreCorruptError);
}

TEST(Store, UncommittedAndTornTailsRollBack) {
  TempDir dir;
  const auto path = dir / "log";
  std::uint64_t committed = 0;
  std::uint64_t commit_frame = 0;
  {
    store::BlobLog log(path, kKey);
    const std::vector<std::string> a = {"kept"};
    log.append_batch(a, "c1");
    committed = log.size_bytes();
    const std::vector<std::string> b = {"lost"};
    const auto batch = log.append_batch(b, "c2");
    commit_frame = batch.data[0].offset + 4 + batch.data[0].sealed_bytes;
  }
  // Crash after the data frame but before the commit frame landed.
  fs::resize_file(path, commit_frame + 7);
  {
    store::BlobLog log(path, kKey);
    ASSERT_EQ(log.batches().size(), 1u);
    EXPECT_EQ(log.size_bytes(), committed);
  }
  EXPECT_EQ(fs::file_size(path), committed);
}

TEST(Store, TamperedFrameFailsClosed) {
  TempDir dir;
  const auto path = dir / "log";
  std::uint64_t offset = 0;
  {
    store::BlobLog log(path, kKey);
    const std::vector<std::string> a = {"payload-bytes"};
    offset = log.append_batch(a, "c").data[0].offset;
  }
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset + 4 + 12 + 2));
  f.put('\x7f');
  f.close();
  EXPECT_THROW(store::BlobLog(path, kKey), store::StoreCorruptError);
}

TEST(Store, EraseOverwritesWithRandomBytes) {
  TempDir dir;
  const auto path = dir / "log";
  store::LogBatch batch;
  std::string before;
  {
    store::BlobLog log(path, kKey);
    const std::vector<std::string> a = {std::string(200, 'x'), "keep"};
    batch = log.append_batch(a, "c");
    before = slurp(path);
    const std::vector<std::uint64_t> offsets = {batch.data[0].offset};
    const auto receipt = log.erase(offsets);
    ASSERT_EQ(receipt.size(), 1u);
    EXPECT_EQ(receipt[0].bytes, batch.data[0].sealed_bytes);
    EXPECT_EQ(log.batches()[0].data.size(), 1u);
  }
  const std::string after = slurp(path);
  const auto& e = batch.data[0];
  const std::string old_bytes = before.substr(e.offset + 4, e.sealed_bytes);
  const std::string new_bytes = after.substr(e.offset + 4, e.sealed_bytes);
  EXPECT_NE(old_bytes, new_bytes);
  EXPECT_NE(new_bytes, std::string(e.sealed_bytes, '\0'));
  std::size_t same = 0;
  for (std::size_t k = 0; k < new_bytes.size(); ++k) same += old_bytes[k] == new_bytes[k];
  EXPECT_LT(same, new_bytes.size() / 8);

  store::BlobLog log(path, kKey);
  ASSERT_EQ(log.batches().size(), 1u);
  ASSERT_EQ(log.batches()[0].data.size(), 1u);
  EXPECT_EQ(log.batches()[0].data[0].payload, "keep");
}

// ------------------------------------------------------------ ingest

TEST(Ingest, SimulatedTrajectoriesGiveOnePathEach) {
  TempDir dir;
  Service svc(options_at(dir / "s"));
  const std::string text = two_device_capture(3);
  const auto first = svc.ingest(text);
  EXPECT_FALSE(first.duplicate);
  EXPECT_EQ(first.summary.devices, 2u);
  EXPECT_EQ(first.summary.paths, 6u);
  EXPECT_EQ(first.summary.source, "TRUTH");
  const auto devices = svc.search_device("");
  ASSERT_EQ(devices.size(), 2u);

  const auto size = fs::file_size(dir / "s");
  const auto again = svc.ingest(text);
  EXPECT_TRUE(again.duplicate);
  EXPECT_EQ(again.summary, first.summary);
  EXPECT_EQ(fs::file_size(dir / "s"), size);
  EXPECT_EQ(svc.search_device("").size(), 2u);

  // Three days of survey: three separate sessions per device.
  const auto path = svc.get_path(devices[0].bucket_id, "corridor");
  std::set<std::int64_t> days;
  for (const auto& p : path) days.insert(p.t_ns / 86'400'000'000'000LL);
  EXPECT_EQ(days.size(), 3u);
}

TEST(Ingest, AccessPointTrafficStoresNothing) {
  TempDir dir;
  Service svc(options_at(dir / "s"));
  std::vector<capture::PacketRecord> beacons;
  for (int k = 0; k < 5; ++k) {
    capture::PacketRecord r;
    r.timestamp_ns = 1'000'000'000 + k;
    r.router_id = "R1";
    r.frame_kind = capture::FrameKind::kBeacon;
    r.src_mac = MacAddress::parse("00:11:22:33:44:55");
    r.bssid = r.src_mac;
    r.rssi_dbm = -50;
    beacons.push_back(r);
  }
  const auto result = svc.ingest(to_capture_text(beacons));
  EXPECT_EQ(result.summary.devices, 0u);
  EXPECT_TRUE(svc.search_device("").empty());
}

TEST(Ingest, ParseFailureStoresNothing) {
  TempDir dir;
  Service svc(options_at(dir / "s"));
  const auto size = fs::file_size(dir / "s");
  std::string text = to_capture_text(testing::phone_capture());
  text += "this,is,not,a,record\n";
  EXPECT_THROW(svc.ingest(text), ParseError);
  EXPECT_EQ(fs::file_size(dir / "s"), size);
  EXPECT_TRUE(svc.search_device("").empty());
}

TEST(Ingest, SearchResolvesRandomizedAddresses) {
  TempDir dir;
  Service svc(options_at(dir / "s"));
  svc.ingest(to_capture_text(testing::phone_capture()));
  const auto s4 = svc.search_device("D0:22:BE:F5:7C:B4");
  ASSERT_EQ(s4.size(), 1u);
  EXPECT_EQ(s4[0].macs, std::vector<std::string>{"D0:22:BE:F5:7C:B4"});

  const auto profiles = testing::phone_profiles();
  const auto s6 = svc.search_device("4E:0F:A0:57:F8:75");
  ASSERT_EQ(s6.size(), 1u);
  EXPECT_EQ(s6[0].macs.size(), 8u);
  for (const auto& mac : profiles[2].macs) {
    const auto hit = svc.search_device(mac);
    ASSERT_EQ(hit.size(), 1u) << mac;
    EXPECT_EQ(hit[0].bucket_id, s6[0].bucket_id);
  }
  EXPECT_TRUE(svc.search_device("02:DE:AD:BE:EF:00").empty());

  // Fingerprint fragments match by bit subset.
  const auto by_fp = svc.search_device(*s6[0].fingerprint);
  ASSERT_EQ(by_fp.size(), 1u);
  EXPECT_EQ(by_fp[0].bucket_id, s6[0].bucket_id);
  const std::string& fp = *s6[0].fingerprint;
  const auto last_bit = fp.find_last_not_of('0');
  std::string fragment(fp.size() - last_bit, '0');
  fragment[0] = fp[last_bit];
  EXPECT_GE(svc.search_device(fragment).size(), 1u);
}

TEST(Ingest, ReingestingAnotherFileMergesBuckets) {
  TempDir dir;
  Service svc(options_at(dir / "s"));
  auto records = testing::phone_capture();
  const std::size_t half = records.size() / 2;
  svc.ingest(to_capture_text(std::span(records).first(half)));
  const auto before = svc.search_device("").size();
  svc.ingest(to_capture_text(std::span(records).subspan(half)));
  EXPECT_EQ(svc.search_device("").size(), 7u);
  EXPECT_LE(before, 7u);
}

// ------------------------------------------------------------ queries

class Populated : public ::testing::Test {
 protected:
  void SetUp() override {
    svc_ = std::make_unique<Service>(options_at(dir_ / "s"));
    svc_->ingest(two_device_capture());
    const auto d = svc_->search_device("");
    ASSERT_EQ(d.size(), 2u);
    a_ = d[0].bucket_id;
    b_ = d[1].bucket_id;
  }

  TempDir dir_;
  std::unique_ptr<Service> svc_;
  std::string a_, b_;
};

TEST_F(Populated, PathWindows) {
  const auto all = svc_->get_path(a_, "corridor");
  ASSERT_GT(all.size(), 10u);
  EXPECT_TRUE(std::is_sorted(all.begin(), all.end(),
                             [](const auto& x, const auto& y) { return x.t_ns < y.t_ns; }));
  EXPECT_EQ(svc_->get_path(a_, std::nullopt), all);
  const auto t = all[5].t_ns;
  const auto point = svc_->get_path(a_, "corridor", t, t);
  ASSERT_EQ(point.size(), 1u);
  EXPECT_EQ(point[0], all[5]);
  EXPECT_THROW(svc_->get_path("nope", "corridor"), NotFoundError);
  EXPECT_THROW(svc_->get_path(a_, "room"), NotFoundError);
}

TEST_F(Populated, ContactsOrderedAndWindowed) {
  const auto rows = svc_->get_contacts(a_, {});
  ASSERT_FALSE(rows.empty());
  EXPECT_EQ(rows[0].first_key, a_);
  EXPECT_EQ(rows[0].second_key, b_);
  for (std::size_t k = 1; k < rows.size(); ++k) {
    EXPECT_GE(rows[k - 1].last_contact_time_s, rows[k].last_contact_time_s);
  }
  ContactQuery none;
  none.start_ns = 0;
  none.end_ns = 1;
  EXPECT_TRUE(svc_->get_contacts(a_, none).empty());

  const auto path = svc_->get_path(a_, "corridor");
  std::size_t prev = 0;
  for (std::size_t cut : {path.size() / 4, path.size() / 2, path.size() - 1}) {
    ContactQuery q;
    q.start_ns = path.front().t_ns;
    q.end_ns = path[cut].t_ns;
    std::size_t total = 0;
    for (const auto& r : svc_->get_contacts(a_, q)) total += r.contact_duration;
    EXPECT_GE(total, prev);
    prev = total;
  }
  EXPECT_THROW(svc_->get_contacts("nope", {}), NotFoundError);
}

TEST_F(Populated, ContactsMatchOfflineReportOnExportedPaths) {
  std::stringstream csv;
  const auto points = svc_->all_paths();
  write_paths(csv, points);
  const auto parsed = parse_paths(csv);
  ASSERT_EQ(parsed.size(), points.size());
  const auto offline = contact_report(parsed, a_, {}, [](const std::string&) { return 0.5; });
  const auto online = svc_->get_contacts(a_, {});
  ASSERT_EQ(offline.size(), online.size());
  for (std::size_t k = 0; k < online.size(); ++k) {
    EXPECT_EQ(offline[k].contact_duration, online[k].contact_duration);
    EXPECT_EQ(offline[k].bands, online[k].bands);
    EXPECT_DOUBLE_EQ(offline[k].last_contact_time_s, online[k].last_contact_time_s);
  }
}

TEST_F(Populated, EraseRemovesEverything) {
  const auto path_before = svc_->get_path(a_, "corridor");
  const auto before = slurp(dir_ / "s");
  const auto receipt = svc_->erase_device(a_);
  EXPECT_EQ(receipt.bucket_id, a_);
  EXPECT_GE(receipt.frames.size(), 2u);  // device and path frames
  const auto after = slurp(dir_ / "s");
  std::uint64_t total = 0;
  for (const auto& f : receipt.frames) {
    total += f.bytes;
    const auto old_bytes = before.substr(f.offset + 4, f.bytes);
    const auto new_bytes = after.substr(f.offset + 4, f.bytes);
    EXPECT_NE(old_bytes, new_bytes);
    EXPECT_NE(new_bytes, std::string(f.bytes, '\0'));
  }
  EXPECT_EQ(total, receipt.total_bytes);

  EXPECT_TRUE(svc_->search_device(path_before.empty() ? "" : a_).empty());
  for (const auto& d : svc_->search_device("")) EXPECT_NE(d.bucket_id, a_);
  EXPECT_THROW(svc_->get_path(a_, "corridor"), NotFoundError);
  EXPECT_THROW(svc_->get_contacts(a_, {}), NotFoundError);
  EXPECT_THROW(svc_->erase_device(a_), NotFoundError);
  EXPECT_TRUE(svc_->get_contacts(b_, {}).empty());

  // Reopen from disk: still gone, the other device intact.
  svc_.reset();
  Service reopened(options_at(dir_ / "s"));
  EXPECT_THROW(reopened.get_path(a_, "corridor"), NotFoundError);
  EXPECT_FALSE(reopened.get_path(b_, "corridor").empty());
}

TEST_F(Populated, ReopenedStoreAnswersIdentically) {
  const auto devices = svc_->search_device("");
  const auto contacts = svc_->get_contacts(a_, {});
  const auto path = svc_->get_path(b_, "corridor");
  svc_.reset();
  Service reopened(options_at(dir_ / "s"));
  EXPECT_EQ(reopened.search_device(""), devices);
  EXPECT_EQ(reopened.get_contacts(a_, {}), contacts);
  EXPECT_EQ(reopened.get_path(b_, "corridor"), path);
}

TEST_F(Populated, ConcurrentReadsDuringIngest) {
  const auto expected = svc_->get_path(a_, "corridor");
  std::atomic<bool> done{false};
  std::atomic<int> mismatches{0};
  std::thread reader([&] {
    while (!done) {
      if (svc_->get_path(a_, "corridor") != expected) ++mismatches;
    }
  });
  svc_->ingest(to_capture_text(testing::phone_capture()));
  done = true;
  reader.join();
  EXPECT_EQ(mismatches, 0);
  EXPECT_EQ(svc_->search_device("").size(), 9u);
}

// ------------------------------------------------------------ http

class Http : public Populated {
 protected:
  void SetUp() override {
    Populated::SetUp();
    front_ = std::make_unique<HttpFrontend>(*svc_, "tok");
    port_ = front_->bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { front_->listen_after_bind(); });
    front_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_bearer_token_auth("tok");
  }
  void TearDown() override {
    front_->stop();
    thread_.join();
  }

  std::unique_ptr<HttpFrontend> front_;
  std::thread thread_;
  int port_ = 0;
  std::unique_ptr<httplib::Client> client_;
};

TEST_F(Http, Routes) {
  using nlohmann::json;
  auto res = client_->Get("/devices?q=02:00:5E:00:00:01");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  auto body = json::parse(res->body);
  ASSERT_EQ(body.size(), 1u);
  const std::string bucket = body[0]["bucket_id"];

  res = client_->Get("/devices/" + bucket + "/path?site=corridor");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body).size(), svc_->get_path(bucket, "corridor").size());

  res = client_->Get("/devices/" + bucket + "/contacts?max_distance=15");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body).size(), svc_->get_contacts(bucket, {}).size());

  res = client_->Get("/devices/" + bucket + "/contacts?start=abc");
  EXPECT_EQ(res->status, 400);

  res = client_->Get("/sites/room/map");
  ASSERT_TRUE(res);
  body = json::parse(res->body);
  EXPECT_EQ(body["width"], 40);
  EXPECT_EQ(body["rows"].size(), 40u);
  EXPECT_EQ(client_->Get("/sites/mars/map")->status, 404);

  httplib::MultipartFormDataItems items = {
      {"file", to_capture_text(testing::phone_capture()), "phones.capture", "text/plain"}};
  res = client_->Post("/captures", items);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 201);
  EXPECT_EQ(json::parse(res->body)["devices"], 7);
  res = client_->Post("/captures", items);
  EXPECT_EQ(res->status, 200);
  EXPECT_TRUE(json::parse(res->body)["duplicate"].get<bool>());
  EXPECT_EQ(client_->Post("/captures", "garbage\n", "text/plain")->status, 400);

  res = client_->Delete("/devices/" + bucket);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_GT(json::parse(res->body)["total_bytes"].get<int>(), 0);
  EXPECT_EQ(client_->Get("/devices/" + bucket + "/path")->status, 404);
  EXPECT_EQ(client_->Delete("/devices/" + bucket)->status, 404);
}

TEST_F(Http, RequiresToken) {
  httplib::Client anon("127.0.0.1", port_);
  auto res = anon.Get("/devices");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 401);
}

}  // namespace
}  // namespace tracewave::service
