// SPDX-License-Identifier: Apache-2.0
//
// Shared primitives: fingerprints, error taxonomy, little-endian field
// codecs and record checksums used by every on-disk structure.

#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace revdedup {

// Error taxonomy.  The CLI maps these to process exit codes; library code
// throws and never exits.
//
//   UsageError     -> bad arguments / infeasible request        (exit 1)
//   IntegrityError -> store contents violate an invariant       (exit 2)
//   IoError        -> the environment failed us (fs, mmap, ...) (exit 3)
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Content fingerprint (SHA-1, 20 bytes).  Collision handling is out of
// scope by design: fingerprint equality is identity.
struct Fingerprint {
  static constexpr std::size_t kSize = 20;

  std::array<std::uint8_t, kSize> bytes{};

  auto operator<=>(const Fingerprint&) const = default;

  std::string hex() const;
  static Fingerprint from_hex(std::string_view text);
};

// Fingerprints are uniformly distributed; the first eight bytes are as good
// a hash as any.
struct FingerprintHash {
  std::size_t operator()(const Fingerprint& fp) const noexcept {
    std::size_t h;
    std::memcpy(&h, fp.bytes.data(), sizeof(h));
    return h;
  }
};

// SHA-1 of a buffer.  Streaming variants live in Sha1Stream.
Fingerprint sha1(std::span<const std::uint8_t> data);

// Incremental SHA-1 (wraps OpenSSL EVP).
class Sha1Stream {
 public:
  Sha1Stream();
  Sha1Stream(const Sha1Stream&) = delete;
  Sha1Stream& operator=(const Sha1Stream&) = delete;
  Sha1Stream(Sha1Stream&& other) noexcept;
  Sha1Stream& operator=(Sha1Stream&& other) noexcept;
  ~Sha1Stream();

  void update(std::span<const std::uint8_t> data);
  Fingerprint finish();  // resets for reuse
  std::uint64_t bytes_seen() const { return bytes_seen_; }

 private:
  void* ctx_ = nullptr;  // EVP_MD_CTX, kept opaque here
  std::uint64_t bytes_seen_ = 0;
};

// CRC32 (zlib polynomial) over a buffer; seeds every fixed-size record so
// torn writes and stray edits are detected on read.
std::uint32_t crc32(std::span<const std::uint8_t> data);

// Little-endian field codecs.  All on-disk integers are little-endian
// regardless of host order.
inline void put_u32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

inline void put_u64(std::uint8_t* p, std::uint64_t v) {
  put_u32(p, static_cast<std::uint32_t>(v));
  put_u32(p + 4, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  return static_cast<std::uint64_t>(get_u32(p)) |
         static_cast<std::uint64_t>(get_u32(p + 4)) << 32;
}

// Store-local logical clock value.  Strictly monotonic per store; tags
// backups and the containers written on their behalf.
using Timestamp = std::uint64_t;

// Containers holding shared (deduplicated-against) segments stay
// timestamp-less until ownership collapses onto a single backup.
inline constexpr Timestamp kUndefinedTimestamp = ~static_cast<Timestamp>(0);

// True if every byte is zero.
bool all_zero(std::span<const std::uint8_t> data);

}  // namespace revdedup
