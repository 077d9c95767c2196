// SPDX-License-Identifier: Apache-2.0
//
// Two-level content-defined chunking.
//
// A single Rabin rolling hash is computed over the byte stream.  Chunk
// boundaries are declared where the low chunk_bits of the window hash are
// all ones; segment boundaries where the low segment_bits are all ones.
// Because the segment pattern extends the chunk pattern, every segment
// boundary coincides with a chunk boundary, so a segment is always a whole
// number of chunks.  Min/max clamps keep sizes within a factor of two of
// the 2^bits averages:
//
//   * the boundary test is suppressed while the current chunk is shorter
//     than half the average chunk size (and while fewer than window_size
//     bytes of stream have been seen, so the window is always full);
//   * a chunk is force-cut at twice the average size; forced cuts are
//     never segment-eligible;
//   * a segment is closed *before* appending a chunk that would push it
//     past twice the average segment size, and a hash-eligible segment
//     close is honoured only once the segment has reached half the
//     average.
//
// The rolling window is never reset, not even across cuts; suppression
// applies to the boundary test only.  An all-zero window hashes to zero
// and therefore never matches an all-ones pattern, which keeps runs of
// zeros from shredding into tiny chunks.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "revdedup/common.hpp"

namespace revdedup {

struct ChunkingParams {
  std::uint32_t chunk_bits = 12;    // average chunk size 2^chunk_bits
  std::uint32_t segment_bits = 22;  // average segment size 2^segment_bits
  std::uint32_t window_size = 48;   // rolling-hash window, bytes

  std::uint64_t avg_chunk_size() const { return 1ull << chunk_bits; }
  std::uint64_t min_chunk_size() const { return 1ull << (chunk_bits - 1); }
  std::uint64_t max_chunk_size() const { return 1ull << (chunk_bits + 1); }
  std::uint64_t avg_segment_size() const { return 1ull << segment_bits; }
  std::uint64_t min_segment_size() const { return 1ull << (segment_bits - 1); }
  std::uint64_t max_segment_size() const { return 1ull << (segment_bits + 1); }

  // Throws UsageError unless 4 <= chunk_bits < segment_bits <= 30 and
  // 16 <= window_size <= 4096.  segment_bits <= 30 keeps all lengths
  // representable in the 32-bit on-disk fields.
  void validate() const;
};

struct ChunkDescriptor {
  std::uint64_t offset = 0;  // absolute stream offset
  std::uint32_t length = 0;
  Fingerprint fp;
  bool null = false;  // every byte zero
};

struct SegmentDescriptor {
  std::uint64_t offset = 0;  // absolute stream offset of first chunk
  std::uint64_t length = 0;  // sum of chunk lengths
  Fingerprint fp;            // SHA-1 of the segment's bytes
  std::vector<ChunkDescriptor> chunks;

  bool null() const;  // every chunk null
};

// Rabin fingerprint of a sliding window over GF(2).
//
// The hash of window bytes b_0..b_{W-1} (oldest first) is
//   sum_i b_i(x) * x^(8*(W-1-i))  mod  P(x)
// where P(x) = x^64 + (bits of kPolynomial).  P was chosen dense (popcount
// 32) and verified irreducible over GF(2); irreducibility makes the map a
// field multiplication, and density makes all 64 output bits participate,
// which the segment-pattern test on higher bits depends on.
class RollingHash {
 public:
  static constexpr std::uint64_t kPolynomial = 0xae7abc14224cc4fdULL;

  explicit RollingHash(std::uint32_t window_size);

  void reset() { hash_ = 0; }

  // Appends a byte without evicting; valid only while the window is still
  // filling (the first window_size bytes of the stream).
  std::uint64_t push(std::uint8_t in) {
    hash_ = shift_byte(hash_, in);
    return hash_;
  }

  // Slides the window one byte: evicts `out` (the byte that entered
  // window_size steps ago) and appends `in`.
  std::uint64_t roll(std::uint8_t in, std::uint8_t out) {
    hash_ ^= out_table_[out];
    hash_ = shift_byte(hash_, in);
    return hash_;
  }

  std::uint64_t value() const { return hash_; }

 private:
  // h(x)*x^8 + in(x) mod P(x); the table folds the overflowing top byte
  // back in (append_table()[t] = t(x)*x^64 mod P(x)).
  static std::uint64_t shift_byte(std::uint64_t h, std::uint8_t in) {
    return ((h << 8) | in) ^ append_table()[h >> 56];
  }

  static const std::array<std::uint64_t, 256>& append_table();

  // out_table_[b] = b(x)*x^(8*(window_size-1)) mod P(x): the contribution
  // of the oldest window byte, cancelled on eviction.
  std::array<std::uint64_t, 256> out_table_;
  std::uint64_t hash_ = 0;
};

// Streaming chunker: feed() arbitrary slices, finish() flushes the final
// partial chunk and segment.  Completed segments are handed to the
// callback in stream order.  Memory use is bounded by one max-size chunk.
class Chunker {
 public:
  using SegmentCallback = std::function<void(SegmentDescriptor&&)>;

  Chunker(const ChunkingParams& params, SegmentCallback emit);

  void feed(std::span<const std::uint8_t> data);
  void finish();

  std::uint64_t bytes_consumed() const { return pos_; }

 private:
  void cut_chunk(bool segment_hash_match);
  void close_segment();

  ChunkingParams params_;
  SegmentCallback emit_;
  RollingHash hash_;
  std::vector<std::uint8_t> window_;  // ring buffer, window_size bytes
  std::uint64_t pos_ = 0;             // stream bytes consumed

  std::uint64_t chunk_mask_;
  std::uint64_t segment_mask_;

  std::vector<std::uint8_t> chunk_buf_;  // bytes of the current chunk
  bool chunk_zero_ = true;

  SegmentDescriptor segment_;
  Sha1Stream segment_sha_;
  bool finished_ = false;
};

// Convenience wrappers.  chunk_file streams the file through a Chunker and
// reports I/O failures with the byte position reached.
std::vector<SegmentDescriptor> chunk_buffer(std::span<const std::uint8_t> data,
                                            const ChunkingParams& params);
std::vector<SegmentDescriptor> chunk_file(const std::filesystem::path& path,
                                          const ChunkingParams& params);

// Descriptor files: the `chunk` CLI step persists descriptors so `backup`
// can ingest them later.  Fixed 48-byte little-endian records:
//
//   offset  u64   absolute stream offset
//   length  u32
//   flags   u32   bit 0 = segment header record, bit 1 = null content
//   fp      20 B  SHA-1
//   crc     u32   CRC32 of the 36 bytes above
//   pad     u64   zero
//
// Each segment is one header record (its own offset/length/fingerprint)
// followed by one record per chunk.
inline constexpr std::size_t kDescriptorRecordSize = 48;

void write_descriptor_file(const std::filesystem::path& path,
                           std::span<const SegmentDescriptor> segments);
std::vector<SegmentDescriptor> read_descriptor_file(
    const std::filesystem::path& path);

}  // namespace revdedup
