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

#include "tracewave/store.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <openssl/rand.h>
#include <unistd.h>

#include <fmt/format.h>

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <set>

namespace tracewave::store {
namespace {

constexpr char kMagic[8] = {'T', 'W', 'S', 'T', 'O', 'R', 'E', '1'};
constexpr std::size_t kNonceBytes = 12;
constexpr std::size_t kTagBytes = 16;
constexpr char kData = 'D';
constexpr char kCommit = 'C';
constexpr char kErase = 'E';

struct CipherCtx {
  EVP_CIPHER_CTX* ctx = EVP_CIPHER_CTX_new();
  ~CipherCtx() { EVP_CIPHER_CTX_free(ctx); }
};

std::array<std::uint8_t, 8> offset_aad(std::uint64_t offset) {
  std::array<std::uint8_t, 8> aad{};
  for (int k = 0; k < 8; ++k) aad[k] = static_cast<std::uint8_t>(offset >> (8 * k));
  return aad;
}

[[noreturn]] void io_error(const std::string& what) {
  throw StoreError(fmt::format("{}: {}", what, std::strerror(errno)));
}

void pwrite_all(int fd, const void* data, std::size_t n, std::uint64_t offset) {
  const auto* p = static_cast<const char*>(data);
  while (n > 0) {
    const ssize_t w = ::pwrite(fd, p, n, static_cast<off_t>(offset));
    if (w < 0) {
      if (errno == EINTR) continue;
      io_error("store write failed");
    }
    p += w;
    n -= static_cast<std::size_t>(w);
    offset += static_cast<std::uint64_t>(w);
  }
}

void pread_all(int fd, void* data, std::size_t n, std::uint64_t offset) {
  auto* p = static_cast<char*>(data);
  while (n > 0) {
    const ssize_t r = ::pread(fd, p, n, static_cast<off_t>(offset));
    if (r < 0) {
      if (errno == EINTR) continue;
      io_error("store read failed");
    }
    if (r == 0) throw StoreError("unexpected end of store");
    p += r;
    n -= static_cast<std::size_t>(r);
    offset += static_cast<std::uint64_t>(r);
  }
}

void sync(int fd) {
  if (::fsync(fd) != 0) io_error("store fsync failed");
}

std::string encode_offsets(std::span<const std::uint64_t> offsets) {
  std::string s;
  for (std::uint64_t o : offsets) {
    if (!s.empty()) s += ',';
    s += std::to_string(o);
  }
  return s;
}

std::vector<std::uint64_t> decode_offsets(std::string_view s) {
  std::vector<std::uint64_t> out;
  if (s.empty()) return out;
  for (auto field : split(s, ',')) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
      throw StoreCorruptError("malformed erase frame");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

Key parse_key(std::string_view hex) {
  if (hex.size() != 64) throw StoreError("storage key must be 64 hex characters");
  std::vector<std::uint8_t> bytes;
  try {
    bytes = from_hex(hex);
  } catch (const Error&) {
    throw StoreError("storage key is not valid hex");
  }
  Key key{};
  std::copy(bytes.begin(), bytes.end(), key.begin());
  return key;
}

Key key_from_env() {
  const char* hex = std::getenv("TRACEWAVE_KEY");
  if (!hex) throw StoreError("TRACEWAVE_KEY is not set");
  return parse_key(hex);
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw StoreError("SHA-256 failed");
  }
  return to_hex(std::vector<std::uint8_t>(digest, digest + len));
}

void random_bytes(std::span<std::uint8_t> out) {
  if (out.empty()) return;
  if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) {
    throw StoreError("random generator failure");
  }
}

std::vector<std::uint8_t> seal(const Key& key, std::string_view plaintext,
                               std::span<const std::uint8_t> aad) {
  std::vector<std::uint8_t> out(kNonceBytes + plaintext.size() + kTagBytes);
  random_bytes(std::span(out).first(kNonceBytes));
  CipherCtx c;
  int len = 0;
  bool ok = c.ctx && EVP_EncryptInit_ex(c.ctx, EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
            EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_SET_IVLEN, kNonceBytes, nullptr) == 1 &&
            EVP_EncryptInit_ex(c.ctx, nullptr, nullptr, key.data(), out.data()) == 1 &&
            EVP_EncryptUpdate(c.ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1;
  ok = ok && EVP_EncryptUpdate(c.ctx, out.data() + kNonceBytes, &len,
                               reinterpret_cast<const unsigned char*>(plaintext.data()),
                               static_cast<int>(plaintext.size())) == 1;
  ok = ok && EVP_EncryptFinal_ex(c.ctx, out.data() + kNonceBytes + len, &len) == 1;
  ok = ok && EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_GET_TAG, kTagBytes,
                                 out.data() + kNonceBytes + plaintext.size()) == 1;
  if (!ok) throw StoreError("encryption failed");
  return out;
}

std::string unseal(const Key& key, std::span<const std::uint8_t> sealed,
                   std::span<const std::uint8_t> aad) {
  if (sealed.size() < kNonceBytes + kTagBytes) throw StoreCorruptError("sealed blob too short");
  const std::size_t n = sealed.size() - kNonceBytes - kTagBytes;
  std::string plain(n, '\0');
  std::array<std::uint8_t, kTagBytes> tag;
  std::copy_n(sealed.end() - kTagBytes, kTagBytes, tag.begin());
  CipherCtx c;
  int len = 0;
  bool ok = c.ctx && EVP_DecryptInit_ex(c.ctx, EVP_aes_256_gcm(), nullptr, nullptr, nullptr) == 1 &&
            EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_SET_IVLEN, kNonceBytes, nullptr) == 1 &&
            EVP_DecryptInit_ex(c.ctx, nullptr, nullptr, key.data(), sealed.data()) == 1 &&
            EVP_DecryptUpdate(c.ctx, nullptr, &len, aad.data(), static_cast<int>(aad.size())) == 1;
  ok = ok && EVP_DecryptUpdate(c.ctx, reinterpret_cast<unsigned char*>(plain.data()), &len,
                               sealed.data() + kNonceBytes, static_cast<int>(n)) == 1;
  ok = ok && EVP_CIPHER_CTX_ctrl(c.ctx, EVP_CTRL_GCM_SET_TAG, kTagBytes, tag.data()) == 1;
  ok = ok && EVP_DecryptFinal_ex(c.ctx, reinterpret_cast<unsigned char*>(plain.data()) + len,
                                 &len) == 1;
  if (!ok) throw StoreCorruptError("blob failed authentication");
  return plain;
}

BlobLog::BlobLog(std::filesystem::path path, const Key& key)
    : path_(std::move(path)), key_(key) {
  fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0600);
  if (fd_ < 0) io_error("cannot open store " + path_.string());
  try {
    load();
  } catch (...) {
    ::close(fd_);
    throw;
  }
}

void BlobLog::load() {
  const off_t size = ::lseek(fd_, 0, SEEK_END);
  if (size < 0) io_error("cannot size store");
  if (size == 0) {
    pwrite_all(fd_, kMagic, sizeof kMagic, 0);
    sync(fd_);
    end_ = sizeof kMagic;
    return;
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  pread_all(fd_, bytes.data(), bytes.size(), 0);
  if (bytes.size() < sizeof kMagic || !std::equal(kMagic, kMagic + 8, bytes.begin())) {
    throw StoreCorruptError(path_.string() + " is not a tracewave store");
  }

  struct Frame {
    std::uint64_t offset;
    std::uint64_t sealed_bytes;
    bool ok;
    char kind;
    std::string payload;
  };
  std::vector<Frame> frames;
  std::uint64_t pos = sizeof kMagic;
  while (pos + 4 <= bytes.size()) {
    std::uint32_t len = 0;
    for (int k = 0; k < 4; ++k) len |= static_cast<std::uint32_t>(bytes[pos + k]) << (8 * k);
    if (pos + 4 + len > bytes.size()) break;  // torn tail
    Frame f{pos, len, false, 0, {}};
    try {
      const auto aad = offset_aad(pos);
      std::string plain = unseal(key_, std::span(bytes).subspan(pos + 4, len), aad);
      if (plain.empty()) throw StoreCorruptError("empty frame");
      f.kind = plain[0];
      f.payload = plain.substr(1);
      f.ok = true;
    } catch (const StoreCorruptError&) {
    }
    frames.push_back(std::move(f));
    pos += 4 + len;
  }

  std::set<std::uint64_t> erased;
  for (const auto& f : frames) {
    if (f.ok && f.kind == kErase) {
      for (auto o : decode_offsets(f.payload)) erased.insert(o);
    }
  }
  for (const auto& f : frames) {
    if (!f.ok && !erased.contains(f.offset)) {
      throw StoreCorruptError(fmt::format("frame at offset {} failed authentication", f.offset));
    }
  }

  std::uint64_t boundary = sizeof kMagic;
  LogBatch pending;
  std::vector<std::uint64_t> redo;
  for (const auto& f : frames) {
    if (erased.contains(f.offset)) {
      if (f.ok) redo.push_back(f.offset);
    } else if (f.kind == kData) {
      pending.data.push_back({f.offset, f.sealed_bytes, f.payload});
      continue;
    } else if (f.kind == kCommit) {
      pending.commit = f.payload;
      batches_.push_back(std::move(pending));
      pending = {};
    } else if (f.kind != kErase) {
      throw StoreCorruptError(fmt::format("unknown frame kind at offset {}", f.offset));
    }
    if (f.kind == kCommit || f.kind == kErase) boundary = f.offset + 4 + f.sealed_bytes;
  }
  // Anything after the last commit or erase frame never committed.
  if (boundary < bytes.size()) {
    if (::ftruncate(fd_, static_cast<off_t>(boundary)) != 0) io_error("cannot truncate store");
    sync(fd_);
  }
  end_ = boundary;
  for (auto o : redo) {
    if (o < end_) overwrite(o);
  }
  if (!redo.empty()) sync(fd_);
}

BlobLog::~BlobLog() {
  if (fd_ >= 0) ::close(fd_);
}

std::uint64_t BlobLog::write_frame(char kind, std::string_view payload,
                                   std::uint64_t& sealed_bytes) {
  const std::uint64_t offset = end_;
  std::string plain;
  plain.reserve(payload.size() + 1);
  plain += kind;
  plain += payload;
  const auto aad = offset_aad(offset);
  const auto sealed = seal(key_, plain, aad);
  if (sealed.size() > 0xFFFFFFFFu) throw StoreError("blob too large");
  std::vector<std::uint8_t> frame(4 + sealed.size());
  for (int k = 0; k < 4; ++k) frame[k] = static_cast<std::uint8_t>(sealed.size() >> (8 * k));
  std::copy(sealed.begin(), sealed.end(), frame.begin() + 4);
  pwrite_all(fd_, frame.data(), frame.size(), offset);
  end_ += frame.size();
  sealed_bytes = sealed.size();
  return offset;
}

LogBatch BlobLog::append_batch(std::span<const std::string> payloads, std::string_view commit) {
  const std::uint64_t start = end_;
  LogBatch batch;
  try {
    for (const auto& p : payloads) {
      std::uint64_t n = 0;
      const std::uint64_t offset = write_frame(kData, p, n);
      batch.data.push_back({offset, n, p});
    }
    sync(fd_);
    std::uint64_t n = 0;
    write_frame(kCommit, commit, n);
    sync(fd_);
  } catch (...) {
    // Roll back so the in-process view matches what a reopen would see.
    end_ = start;
    if (::ftruncate(fd_, static_cast<off_t>(start)) == 0) ::fsync(fd_);
    throw;
  }
  batch.commit = std::string(commit);
  batches_.push_back(batch);
  return batch;
}

ErasedFrame BlobLog::overwrite(std::uint64_t offset) {
  std::uint8_t head[4];
  pread_all(fd_, head, 4, offset);
  std::uint32_t len = 0;
  for (int k = 0; k < 4; ++k) len |= static_cast<std::uint32_t>(head[k]) << (8 * k);
  if (offset + 4 + len > end_) throw StoreError("erase offset outside the store");
  std::vector<std::uint8_t> noise(len);
  random_bytes(noise);
  pwrite_all(fd_, noise.data(), noise.size(), offset + 4);
  return {offset, len};
}

std::vector<ErasedFrame> BlobLog::erase(std::span<const std::uint64_t> offsets) {
  std::set<std::uint64_t> live;
  for (const auto& b : batches_) {
    for (const auto& e : b.data) live.insert(e.offset);
  }
  for (auto o : offsets) {
    if (!live.contains(o)) throw StoreError(fmt::format("no live data frame at offset {}", o));
  }
  std::uint64_t n = 0;
  write_frame(kErase, encode_offsets(offsets), n);
  sync(fd_);
  std::vector<ErasedFrame> out;
  for (auto o : offsets) out.push_back(overwrite(o));
  sync(fd_);
  const std::set<std::uint64_t> gone(offsets.begin(), offsets.end());
  for (auto& b : batches_) {
    std::erase_if(b.data, [&](const LogEntry& e) { return gone.contains(e.offset); });
  }
  return out;
}

}  // namespace tracewave::store
