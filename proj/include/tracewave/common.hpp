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

#ifndef TRACEWAVE_COMMON_HPP_
#define TRACEWAVE_COMMON_HPP_

#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tracewave {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// 48-bit IEEE link-layer address held in the low bits of a uint64.
class MacAddress {
 public:
  constexpr MacAddress() = default;
  constexpr explicit MacAddress(std::uint64_t bits)
      : bits_(bits & 0xFFFFFFFFFFFFULL) {}

  // Accepts "AA:BB:CC:DD:EE:FF" in either case. Throws Error on bad input.
  static MacAddress parse(std::string_view text);
  static bool try_parse(std::string_view text, MacAddress& out);

  std::string to_string() const;
  constexpr std::uint64_t bits() const { return bits_; }

  // Locally-administered bit set, the usual marker of a randomized address.
  constexpr bool is_local() const { return (bits_ >> 40) & 0x02; }

  friend constexpr auto operator<=>(MacAddress, MacAddress) = default;

 private:
  std::uint64_t bits_ = 0;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr bool operator==(const Vec2&, const Vec2&) = default;
  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  double norm() const { return std::hypot(x, y); }
};

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

// Splits on a single delimiter, keeping empty fields.
std::vector<std::string_view> split(std::string_view text, char delim);

std::string to_hex(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> from_hex(std::string_view hex);

}  // namespace tracewave

template <>
struct std::hash<tracewave::MacAddress> {
  std::size_t operator()(tracewave::MacAddress m) const noexcept {
    return std::hash<std::uint64_t>{}(m.bits());
  }
};

#endif  // TRACEWAVE_COMMON_HPP_
