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

// Groups randomized MAC addresses of one physical device. Each MAC gets a
// binary fingerprint hashed from the model-specific elements of its probe
// requests; MACs whose fingerprints are at Hamming distance zero share a
// bucket. Neighbour search runs on a ball tree under the Hamming metric.

#ifndef TRACEWAVE_MACCLUST_HPP_
#define TRACEWAVE_MACCLUST_HPP_

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tracewave/capture.hpp"
#include "tracewave/common.hpp"

namespace tracewave::macclust {

inline constexpr std::size_t kFingerprintWidth = 256;

class UnfingerprintableError : public Error {
 public:
  using Error::Error;
};

// Fixed-width bit vector.
class FingerprintVector {
 public:
  explicit FingerprintVector(std::size_t width = kFingerprintWidth);

  std::size_t width() const { return width_; }
  bool test(std::size_t bit) const;
  void set(std::size_t bit);
  std::size_t popcount() const;

  // True when every bit set in `other` is also set here.
  bool contains(const FingerprintVector& other) const;

  std::string to_hex() const;
  static FingerprintVector from_hex(std::string_view hex,
                                    std::size_t width = kFingerprintWidth);

  friend std::size_t hamming(const FingerprintVector& a,
                             const FingerprintVector& b);
  friend bool operator==(const FingerprintVector&,
                         const FingerprintVector&) = default;
  friend auto operator<=>(const FingerprintVector&,
                          const FingerprintVector&) = default;

 private:
  std::size_t width_;
  std::vector<std::uint64_t> words_;
};

// Throws DimensionError on mismatched widths.
std::size_t hamming(const FingerprintVector& a, const FingerprintVector& b);

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

// Hash of one (tag, value) pair: FNV-1a over the tag as two little-endian
// bytes followed by the value bytes.
std::uint64_t element_hash(const capture::ModelInfoElement& element);

// Encodes a model-info element set (order and duplicates ignored).
FingerprintVector encode_elements(
    std::vector<capture::ModelInfoElement> elements,
    std::size_t width = kFingerprintWidth);

// Fingerprint from the probe requests of one MAC. Throws
// UnfingerprintableError when none of them carries model_info.
FingerprintVector extract_fingerprint(
    std::span<const capture::PacketRecord> records,
    std::size_t width = kFingerprintWidth);

struct MacBucket {
  std::optional<FingerprintVector> fingerprint;  // nullopt = unclustered
  std::vector<MacAddress> macs;                  // sorted ascending
};

// Metric tree over Hamming space.
class BallTree {
 public:
  static constexpr std::size_t kLeafSize = 16;

  explicit BallTree(std::vector<FingerprintVector> points,
                    std::size_t leaf_size = kLeafSize);
  ~BallTree();
  BallTree(BallTree&&) noexcept;
  BallTree& operator=(BallTree&&) noexcept;

  // Indices of every point within `radius` of `query`, ascending.
  std::vector<std::size_t> query_radius(const FingerprintVector& query,
                                        std::size_t radius) const;

  std::size_t size() const { return points_.size(); }
  std::size_t depth() const;
  // Number of point-to-center distance evaluations made by the last query
  // on this thread; lets tests confirm pruning happens.
  static std::size_t last_query_evaluations();

 private:
  struct Node;
  std::unique_ptr<Node> build(std::vector<std::size_t> indices);

  std::vector<FingerprintVector> points_;
  std::size_t leaf_size_;
  std::unique_ptr<Node> root_;
};

// Zero-radius clustering. Buckets come back ordered by their smallest MAC.
std::vector<MacBucket> cluster(
    const std::map<MacAddress, FingerprintVector>& fingerprints);

// Groups mobile records per source MAC, fingerprints each MAC and clusters.
// MACs without model_info become unclustered singleton buckets, appended
// after the clustered ones in MAC order.
std::vector<MacBucket> bucket_devices(
    std::span<const capture::PacketRecord> mobile_records,
    std::size_t width = kFingerprintWidth);

// CSV `bucket_id,macs` with `|`-separated MACs; ids dense from 0 in the
// given order.
void write_bucket_report(std::ostream& out, std::span<const MacBucket> buckets);
std::string bucket_report(std::span<const MacBucket> buckets);

}  // namespace tracewave::macclust

#endif  // TRACEWAVE_MACCLUST_HPP_
