// SPDX-License-Identifier: Apache-2.0
//
// Inline write path.  Backups arrive pre-chunked (descriptors from the
// chunking step); segments are deduplicated against the fingerprint index
// on the fly, unique ones are packed into containers, and a recipe of
// per-chunk entries is written so later reverse deduplication can rewrite
// references at chunk granularity.
//
// Two granularities share this path:
//
//   kSegment  coarse inline dedup over multi-chunk segments (the fast
//             path; fine-grained savings are recovered out of line by
//             the reverse-dedup job)
//   kChunk    conventional baseline: every chunk is its own segment, so
//             the inline index works at chunk granularity
//
// All-null segments are never stored or indexed: the recipe carries a
// null run and restore synthesizes the zeros.  Mixed segments are stored
// whole; their null chunks are flagged and dropped later if the segment
// is compacted.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "revdedup/chunker.hpp"
#include "revdedup/store.hpp"

namespace revdedup {

// Sequential reader over the stream being backed up.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  virtual std::uint64_t size() const = 0;
  virtual void read(std::uint64_t offset, std::span<std::uint8_t> out) = 0;
};

class FileByteSource : public ByteSource {
 public:
  explicit FileByteSource(const std::filesystem::path& path);
  ~FileByteSource() override;
  std::uint64_t size() const override { return size_; }
  void read(std::uint64_t offset, std::span<std::uint8_t> out) override;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t size_ = 0;
};

class MemoryByteSource : public ByteSource {
 public:
  explicit MemoryByteSource(std::span<const std::uint8_t> data) : data_(data) {}
  std::uint64_t size() const override { return data_.size(); }
  void read(std::uint64_t offset, std::span<std::uint8_t> out) override;

 private:
  std::span<const std::uint8_t> data_;
};

enum class DedupMode { kSegment, kChunk };

struct BackupConfig {
  std::uint64_t series_id = 0;
  DedupMode mode = DedupMode::kSegment;
  // Window lengths used only when this backup creates the series.
  std::uint32_t live_window = 1;
  std::uint32_t archival_window = kAllRemaining;
  // Overlap source reads with fingerprint lookups and container writes.
  // Output is byte-identical either way; this only affects wall time.
  bool overlap_read = true;
};

struct BackupResult {
  std::uint64_t version = 0;
  Timestamp created_at = 0;
  std::uint64_t original_size = 0;
  std::uint64_t entry_count = 0;
  std::uint64_t unique_segments = 0;
  std::uint64_t duplicate_segments = 0;
  std::uint64_t null_segments = 0;
  std::uint64_t payload_bytes_written = 0;  // stored for this backup
  std::uint64_t duplicate_bytes = 0;        // deduplicated inline
  std::uint64_t null_bytes = 0;             // represented as null runs
  double elapsed_seconds = 0;
  WindowTransition transition;
};

// Ingests one backup.  Descriptors must tile the source exactly from
// offset 0 (verified before any store mutation).  Returns after the
// recipe is durable and the retention window has advanced.
BackupResult backup(Store& store, const BackupConfig& config,
                    ByteSource& source,
                    std::span<const SegmentDescriptor> descriptors);

// Explodes segment descriptors into one-chunk segments (the kChunk
// representation).  Exposed for tests and the bench harness.
std::vector<SegmentDescriptor> explode_to_chunks(
    std::span<const SegmentDescriptor> descriptors);

}  // namespace revdedup
