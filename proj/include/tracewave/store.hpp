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

// Encrypted append-only blob log.
//
// File: "TWSTORE1", then frames of
//   u32 sealed_len | nonce[12] | ciphertext | tag[16]
// sealed with AES-256-GCM under a 32-byte key; the frame's file offset is
// the associated data, so frames cannot be moved. The first plaintext byte
// is the frame kind: data, commit (closes a batch) or erase (lists frames
// whose bytes were overwritten).

#ifndef TRACEWAVE_STORE_HPP_
#define TRACEWAVE_STORE_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracewave/common.hpp"

namespace tracewave::store {

class StoreError : public Error {
 public:
  using Error::Error;
};

// Authentication failure on a frame that was not erased.
class StoreCorruptError : public StoreError {
 public:
  using StoreError::StoreError;
};

using Key = std::array<std::uint8_t, 32>;

// 64 hex characters.
Key parse_key(std::string_view hex);
// Reads TRACEWAVE_KEY. Throws StoreError when unset or malformed.
Key key_from_env();

std::string sha256_hex(std::string_view bytes);
void random_bytes(std::span<std::uint8_t> out);

// nonce | ciphertext | tag.
std::vector<std::uint8_t> seal(const Key& key, std::string_view plaintext,
                               std::span<const std::uint8_t> aad);
// Throws StoreCorruptError when authentication fails.
std::string unseal(const Key& key, std::span<const std::uint8_t> sealed,
                   std::span<const std::uint8_t> aad);

struct LogEntry {
  std::uint64_t offset = 0;       // frame start
  std::uint64_t sealed_bytes = 0;  // nonce + ciphertext + tag
  std::string payload;
};

struct LogBatch {
  std::vector<LogEntry> data;
  std::string commit;  // payload of the closing commit frame
};

struct ErasedFrame {
  std::uint64_t offset = 0;
  std::uint64_t bytes = 0;
};

class BlobLog {
 public:
  // Creates the file when missing. Drops an uncommitted or torn tail,
  // finishes interrupted erasures and fails closed on any other frame that
  // does not authenticate.
  BlobLog(std::filesystem::path path, const Key& key);
  ~BlobLog();
  BlobLog(const BlobLog&) = delete;
  BlobLog& operator=(const BlobLog&) = delete;

  // Committed batches in file order, erased frames omitted.
  const std::vector<LogBatch>& batches() const { return batches_; }

  // Appends the data frames then the commit frame and flushes. A crash
  // before the commit frame is durable rolls the batch back on reopen.
  LogBatch append_batch(std::span<const std::string> payloads, std::string_view commit);

  // Writes an erase frame naming `offsets`, then overwrites each frame's
  // sealed bytes in place with random bytes.
  std::vector<ErasedFrame> erase(std::span<const std::uint64_t> offsets);

  const std::filesystem::path& path() const { return path_; }
  std::uint64_t size_bytes() const { return end_; }

 private:
  void load();
  std::uint64_t write_frame(char kind, std::string_view payload, std::uint64_t& sealed_bytes);
  ErasedFrame overwrite(std::uint64_t offset);

  std::filesystem::path path_;
  Key key_;
  int fd_ = -1;
  std::uint64_t end_ = 0;
  std::vector<LogBatch> batches_;
};

}  // namespace tracewave::store

#endif  // TRACEWAVE_STORE_HPP_
