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

#include "tracewave/macclust.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <bit>
#include <sstream>

namespace tracewave::macclust {
namespace {

thread_local std::size_t g_evaluations = 0;

std::size_t words_for(std::size_t width) { return (width + 63) / 64; }

}  // namespace

FingerprintVector::FingerprintVector(std::size_t width)
    : width_(width), words_(words_for(width), 0) {
  if (width == 0) throw DimensionError("fingerprint width must be positive");
}

bool FingerprintVector::test(std::size_t bit) const {
  return (words_[bit / 64] >> (bit % 64)) & 1ULL;
}

void FingerprintVector::set(std::size_t bit) {
  if (bit >= width_) throw DimensionError("fingerprint bit out of range");
  words_[bit / 64] |= 1ULL << (bit % 64);
}

std::size_t FingerprintVector::popcount() const {
  std::size_t n = 0;
  for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

bool FingerprintVector::contains(const FingerprintVector& other) const {
  if (other.width_ != width_) {
    throw DimensionError("fingerprint widths differ");
  }
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if ((other.words_[i] & ~words_[i]) != 0) return false;
  }
  return true;
}

// Most significant word first, so the string reads as one big integer.
std::string FingerprintVector::to_hex() const {
  std::string out;
  for (std::size_t i = words_.size(); i-- > 0;) {
    out += fmt::format("{:016x}", words_[i]);
  }
  return out;
}

FingerprintVector FingerprintVector::from_hex(std::string_view hex,
                                              std::size_t width) {
  FingerprintVector v(width);
  if (hex.size() != v.words_.size() * 16) {
    throw DimensionError(fmt::format("fingerprint hex must have {} digits",
                                     v.words_.size() * 16));
  }
  for (std::size_t i = 0; i < v.words_.size(); ++i) {
    const auto chunk = hex.substr((v.words_.size() - 1 - i) * 16, 16);
    std::uint64_t word = 0;
    for (std::uint8_t byte : tracewave::from_hex(chunk)) {
      word = (word << 8) | byte;
    }
    v.words_[i] = word;
  }
  return v;
}

std::size_t hamming(const FingerprintVector& a, const FingerprintVector& b) {
  if (a.width_ != b.width_) {
    throw DimensionError(
        fmt::format("fingerprint widths differ: {} vs {}", a.width_, b.width_));
  }
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.words_.size(); ++i) {
    d += static_cast<std::size_t>(std::popcount(a.words_[i] ^ b.words_[i]));
  }
  return d;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t element_hash(const capture::ModelInfoElement& element) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(element.value.size() + 2);
  bytes.push_back(static_cast<std::uint8_t>(element.tag & 0xFF));
  bytes.push_back(static_cast<std::uint8_t>(element.tag >> 8));
  bytes.insert(bytes.end(), element.value.begin(), element.value.end());
  return fnv1a64(bytes);
}

FingerprintVector encode_elements(
    std::vector<capture::ModelInfoElement> elements, std::size_t width) {
  std::sort(elements.begin(), elements.end());
  elements.erase(std::unique(elements.begin(), elements.end()),
                 elements.end());
  FingerprintVector v(width);
  for (const auto& e : elements) v.set(element_hash(e) % width);
  return v;
}

FingerprintVector extract_fingerprint(
    std::span<const capture::PacketRecord> records, std::size_t width) {
  std::vector<capture::ModelInfoElement> elements;
  for (const auto& r : records) {
    if (r.frame_kind != capture::FrameKind::kProbeReq) continue;
    elements.insert(elements.end(), r.model_info.begin(), r.model_info.end());
  }
  if (elements.empty()) {
    throw UnfingerprintableError("no probe request carries model_info");
  }
  return encode_elements(std::move(elements), width);
}

struct BallTree::Node {
  FingerprintVector center;
  std::size_t radius = 0;
  std::vector<std::size_t> indices;  // leaves only
  std::unique_ptr<Node> left;
  std::unique_ptr<Node> right;
};

BallTree::BallTree(std::vector<FingerprintVector> points,
                   std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
  for (const auto& p : points_) {
    if (p.width() != points_.front().width()) {
      throw DimensionError(fmt::format("fingerprint widths differ: {} vs {}",
                                       p.width(), points_.front().width()));
    }
  }
  if (points_.empty()) return;
  std::vector<std::size_t> all(points_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  root_ = build(std::move(all));
}

BallTree::~BallTree() = default;
BallTree::BallTree(BallTree&&) noexcept = default;
BallTree& BallTree::operator=(BallTree&&) noexcept = default;

std::unique_ptr<BallTree::Node> BallTree::build(
    std::vector<std::size_t> indices) {
  const std::size_t width = points_.front().width();
  auto node = std::make_unique<Node>();

  // Majority-vote centre keeps the ball inside Hamming space.
  node->center = FingerprintVector(width);
  for (std::size_t bit = 0; bit < width; ++bit) {
    std::size_t ones = 0;
    for (std::size_t i : indices) ones += points_[i].test(bit);
    if (2 * ones > indices.size()) node->center.set(bit);
  }

  std::size_t farthest = indices.front();
  for (std::size_t i : indices) {
    const std::size_t d = hamming(node->center, points_[i]);
    if (d > node->radius) {
      node->radius = d;
      farthest = i;
    }
  }

  auto make_leaf = [&] {
    node->indices = std::move(indices);
    return std::move(node);
  };
  if (indices.size() <= leaf_size_ || node->radius == 0) return make_leaf();

  // Split between the point farthest from the centre and the point
  // farthest from that one.
  const std::size_t pivot_a = farthest;
  std::size_t pivot_b = pivot_a;
  std::size_t spread = 0;
  for (std::size_t i : indices) {
    const std::size_t d = hamming(points_[pivot_a], points_[i]);
    if (d > spread) {
      spread = d;
      pivot_b = i;
    }
  }
  if (spread == 0) return make_leaf();

  std::vector<std::size_t> left, right;
  for (std::size_t i : indices) {
    if (hamming(points_[i], points_[pivot_a]) <=
        hamming(points_[i], points_[pivot_b])) {
      left.push_back(i);
    } else {
      right.push_back(i);
    }
  }
  node->left = build(std::move(left));
  node->right = build(std::move(right));
  return node;
}

std::vector<std::size_t> BallTree::query_radius(const FingerprintVector& query,
                                                std::size_t radius) const {
  g_evaluations = 0;
  std::vector<std::size_t> out;
  if (!root_) return out;
  if (query.width() != points_.front().width()) {
    throw DimensionError("query width differs from tree width");
  }
  std::vector<const Node*> stack{root_.get()};
  while (!stack.empty()) {
    const Node* node = stack.back();
    stack.pop_back();
    ++g_evaluations;
    if (hamming(query, node->center) > node->radius + radius) continue;
    if (!node->left) {
      for (std::size_t i : node->indices) {
        ++g_evaluations;
        if (hamming(query, points_[i]) <= radius) out.push_back(i);
      }
      continue;
    }
    stack.push_back(node->right.get());
    stack.push_back(node->left.get());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t BallTree::depth() const {
  std::size_t best = 0;
  std::vector<std::pair<const Node*, std::size_t>> stack;
  if (root_) stack.emplace_back(root_.get(), 1);
  while (!stack.empty()) {
    auto [node, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (node->left) {
      stack.emplace_back(node->left.get(), d + 1);
      stack.emplace_back(node->right.get(), d + 1);
    }
  }
  return best;
}

std::size_t BallTree::last_query_evaluations() { return g_evaluations; }

std::vector<MacBucket> cluster(
    const std::map<MacAddress, FingerprintVector>& fingerprints) {
  std::vector<MacAddress> macs;
  std::vector<FingerprintVector> points;
  for (const auto& [mac, fp] : fingerprints) {
    macs.push_back(mac);
    points.push_back(fp);
  }
  const BallTree tree(points);

  std::vector<MacBucket> buckets;
  std::vector<bool> assigned(macs.size(), false);
  // Map iteration is MAC-ascending, so each bucket is opened by its
  // smallest MAC and the bucket order is permutation-independent.
  for (std::size_t i = 0; i < macs.size(); ++i) {
    if (assigned[i]) continue;
    MacBucket bucket;
    bucket.fingerprint = points[i];
    for (std::size_t j : tree.query_radius(points[i], 0)) {
      if (assigned[j]) continue;
      assigned[j] = true;
      bucket.macs.push_back(macs[j]);
    }
    std::sort(bucket.macs.begin(), bucket.macs.end());
    buckets.push_back(std::move(bucket));
  }
  return buckets;
}

std::vector<MacBucket> bucket_devices(
    std::span<const capture::PacketRecord> mobile_records, std::size_t width) {
  std::map<MacAddress, std::vector<capture::PacketRecord>> per_mac;
  for (const auto& r : mobile_records) per_mac[r.src_mac].push_back(r);

  std::map<MacAddress, FingerprintVector> fingerprints;
  std::vector<MacAddress> unclustered;
  for (const auto& [mac, records] : per_mac) {
    try {
      fingerprints.emplace(mac, extract_fingerprint(records, width));
    } catch (const UnfingerprintableError&) {
      unclustered.push_back(mac);
    }
  }
  std::vector<MacBucket> buckets = cluster(fingerprints);
  for (MacAddress mac : unclustered) {
    buckets.push_back(MacBucket{std::nullopt, {mac}});
  }
  return buckets;
}

void write_bucket_report(std::ostream& out,
                         std::span<const MacBucket> buckets) {
  out << "bucket_id,macs\n";
  for (std::size_t id = 0; id < buckets.size(); ++id) {
    std::vector<std::string> names;
    for (MacAddress mac : buckets[id].macs) names.push_back(mac.to_string());
    std::sort(names.begin(), names.end());
    out << id << ',' << fmt::format("{}", fmt::join(names, "|")) << '\n';
  }
}

std::string bucket_report(std::span<const MacBucket> buckets) {
  std::ostringstream out;
  write_bucket_report(out, buckets);
  return out.str();
}

}  // namespace tracewave::macclust
