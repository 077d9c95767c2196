// SPDX-License-Identifier: Apache-2.0
//
// Metadata plane of the store: append-only record logs for segments and
// chunks, per-backup recipes, per-series retention state, and the
// in-memory fingerprint index used by the write path.
//
// Layout under the store root:
//
//   segments.log               fixed 64-byte records, one per segment
//   chunks.log                 fixed 40-byte records, one per chunk
//   series/<id>/recipe.<ver>   one recipe file per retained backup
//   series/<id>/state          retention windows + per-version flags
//
// All multi-byte fields are little-endian; every record and header
// carries a CRC32 so corruption surfaces as IntegrityError rather than
// silent damage.  Logs are mmap-backed; in-place updates (reference
// counts, chunk removal flags) rewrite single records.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "revdedup/common.hpp"

namespace revdedup {

// Append-only file of fixed-size records with a checksummed header,
// memory-mapped for cheap random access.  Not thread-safe; callers
// serialize.  Pointers returned by record_ptr() are invalidated by
// append() (the mapping may move when the file grows).
class RecordLog {
 public:
  static constexpr std::size_t kHeaderSize = 32;

  RecordLog() = default;
  RecordLog(const RecordLog&) = delete;
  RecordLog& operator=(const RecordLog&) = delete;
  ~RecordLog();

  // Opens or creates the log.  record_magic stamps every record so a log
  // opened with the wrong type fails fast.
  void open(const std::filesystem::path& path, std::uint32_t record_size,
            std::uint32_t record_magic);
  void close();
  void flush();

  std::uint64_t count() const { return count_; }
  std::uint32_t record_size() const { return record_size_; }

  std::uint64_t append(std::span<const std::uint8_t> record);
  void read(std::uint64_t index, std::span<std::uint8_t> out) const;
  void write(std::uint64_t index, std::span<const std::uint8_t> record);
  const std::uint8_t* record_ptr(std::uint64_t index) const;

 private:
  void ensure_capacity(std::uint64_t records);
  void write_header();
  void map_file(std::size_t size);

  std::filesystem::path path_;
  int fd_ = -1;
  std::uint8_t* map_ = nullptr;
  std::size_t map_size_ = 0;
  std::uint32_t record_size_ = 0;
  std::uint32_t record_magic_ = 0;
  std::uint64_t count_ = 0;
};

// --- typed records ---------------------------------------------------

inline constexpr std::uint32_t kSegmentRecordSize = 64;
inline constexpr std::uint32_t kChunkRecordSize = 40;
inline constexpr std::uint32_t kRecipeEntrySize = 32;

// One stored segment.  stored_length tracks the bytes currently on disk
// (shrinks when chunks are removed); original_length never changes.
// chunk_log_start/chunk_count locate the segment's rows in chunks.log.
struct SegmentMeta {
  std::uint64_t seg_id = 0;  // row index in segments.log
  Fingerprint fp;
  std::uint32_t container_id = 0;
  std::uint32_t offset_in_container = 0;
  std::uint32_t stored_length = 0;
  std::uint32_t original_length = 0;
  // Number of retained, not-yet-reverse-deduplicated backups whose recipe
  // references this segment (one count per backup, however many entries).
  std::uint32_t ref_count = 0;
  std::uint32_t chunk_count = 0;
  std::uint64_t chunk_log_start = 0;
  bool archived = false;  // compacted to single-owner storage; out of the index
  bool deleted = false;   // container reclaimed; payload gone

  void encode(std::span<std::uint8_t> out) const;
  static SegmentMeta decode(std::span<const std::uint8_t> in,
                            std::uint64_t seg_id);
};

// One chunk of a stored segment.  offset_in_segment is relative to the
// segment's stored bytes and is rewritten when compaction shifts the
// survivors; removed chunks keep their fingerprint for audit but have no
// stored bytes.
struct ChunkMeta {
  Fingerprint fp;
  std::uint32_t length = 0;
  std::uint32_t offset_in_segment = 0;
  bool removed = false;
  bool null = false;

  void encode(std::span<std::uint8_t> out) const;
  static ChunkMeta decode(std::span<const std::uint8_t> in);
};

// Recipe entries: how one chunk-sized piece of a backup is materialized.
//
//   kDirect    bytes live in `seg_id`, chunk `chunk_index`
//   kIndirect  same bytes as entry `target_entry` of the NEXT version's
//              recipe (chains resolve forward, newest version is flat)
//   kNull      `length` zero bytes; nothing stored
enum class EntryKind : std::uint32_t {
  kDirect = 0,
  kIndirect = 1,
  kNull = 2,
};

struct RecipeEntry {
  EntryKind kind = EntryKind::kNull;
  std::uint32_t length = 0;
  std::uint64_t seg_id = 0;        // kDirect
  std::uint32_t chunk_index = 0;   // kDirect
  std::uint64_t target_entry = 0;  // kIndirect

  static RecipeEntry direct(std::uint64_t seg_id, std::uint32_t chunk_index,
                            std::uint32_t length);
  static RecipeEntry indirect(std::uint64_t target_entry, std::uint32_t length);
  static RecipeEntry null(std::uint32_t length);

  void encode(std::span<std::uint8_t> out) const;
  static RecipeEntry decode(std::span<const std::uint8_t> in);
};

struct RecipeInfo {
  std::uint64_t series_id = 0;
  std::uint64_t version = 0;
  Timestamp created_at = 0;
  std::uint64_t original_size = 0;
  std::uint64_t entry_count = 0;
};

struct Recipe {
  RecipeInfo info;
  std::vector<RecipeEntry> entries;
};

// --- series retention state -------------------------------------------

// Retention windows, newest first: the most recent live_window versions
// are live (kept fully deduplicated for fast restore), the next
// archival_window are archival (reverse-deduplicated), anything older is
// expired and may be reclaimed.  kAllRemaining disables expiry.
inline constexpr std::uint32_t kAllRemaining = ~static_cast<std::uint32_t>(0);

enum class WindowKind { kLive, kArchival, kExpired };

struct VersionState {
  Timestamp created_at = 0;
  bool deduplicated = false;  // reverse-dedup job has processed it
};

struct SeriesState {
  std::uint64_t series_id = 0;
  std::uint32_t live_window = 1;
  std::uint32_t archival_window = kAllRemaining;
  std::uint64_t first_retained = 0;  // oldest version still stored
  std::uint64_t next_version = 0;
  std::vector<VersionState> versions;  // [first_retained, next_version)

  const VersionState& version(std::uint64_t v) const;
  WindowKind classify(std::uint64_t v) const;
};

// Versions pushed across window boundaries by one advance.
struct WindowTransition {
  std::vector<std::uint64_t> entered_archival;
  std::vector<std::uint64_t> expired;
};

// --- fingerprint index -------------------------------------------------

// Write-path index: segment fingerprint -> seg_id, covering exactly the
// shareable segments (not deleted, not archived).  About 32 bytes per
// entry; rebuilt from segments.log at open.
class DedupIndex {
 public:
  std::optional<std::uint64_t> lookup(const Fingerprint& fp) const;
  void insert(const Fingerprint& fp, std::uint64_t seg_id);
  void erase(const Fingerprint& fp, std::uint64_t seg_id);
  std::size_t size() const;

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<Fingerprint, std::uint64_t, FingerprintHash> map_;
};

// --- facade -------------------------------------------------------------

class MetaStore {
 public:
  void open(const std::filesystem::path& root);
  void flush();

  // Segments and chunks.
  std::uint64_t segment_count() const;
  SegmentMeta segment(std::uint64_t seg_id) const;
  std::uint64_t add_segment(SegmentMeta meta, std::span<const ChunkMeta> chunks);
  void update_segment(const SegmentMeta& meta);
  ChunkMeta chunk(const SegmentMeta& seg, std::uint32_t index) const;
  std::vector<ChunkMeta> chunks(const SegmentMeta& seg) const;
  void update_chunk(const SegmentMeta& seg, std::uint32_t index,
                    const ChunkMeta& chunk);

  // Fingerprint index.
  std::optional<std::uint64_t> lookup(const Fingerprint& fp) const;
  void evict_from_index(const Fingerprint& fp, std::uint64_t seg_id);
  std::size_t index_size() const;

  // Recipes.
  bool recipe_exists(std::uint64_t series, std::uint64_t version) const;
  void write_recipe(const Recipe& recipe);
  Recipe read_recipe(std::uint64_t series, std::uint64_t version) const;
  RecipeInfo recipe_info(std::uint64_t series, std::uint64_t version) const;
  RecipeEntry read_entry(std::uint64_t series, std::uint64_t version,
                         std::uint64_t entry_index) const;
  // The only legal rewrites are kDirect -> kIndirect and kDirect -> kNull
  // with identical length; anything else is an integrity violation.
  void mutate_entry(std::uint64_t series, std::uint64_t version,
                    std::uint64_t entry_index, const RecipeEntry& replacement);
  void remove_recipe(std::uint64_t series, std::uint64_t version);

  // Series state.
  bool series_exists(std::uint64_t series) const;
  void create_series(std::uint64_t series, std::uint32_t live_window,
                     std::uint32_t archival_window);
  SeriesState series_state(std::uint64_t series) const;
  std::vector<std::uint64_t> list_series() const;
  // Registers `new_version` (must equal state.next_version) and reports
  // which retained versions its arrival pushed across window boundaries.
  WindowTransition advance_window(std::uint64_t series,
                                  std::uint64_t new_version,
                                  Timestamp created_at);
  void mark_deduplicated(std::uint64_t series, std::uint64_t version);
  // Advances first_retained after expired versions were reclaimed.
  void drop_versions_below(std::uint64_t series, std::uint64_t first_retained);

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path series_dir(std::uint64_t series) const;
  std::filesystem::path recipe_path(std::uint64_t series,
                                    std::uint64_t version) const;
  std::filesystem::path state_path(std::uint64_t series) const;
  void write_series_state(const SeriesState& state) const;

  std::filesystem::path root_;
  RecordLog segments_;
  RecordLog chunks_;
  DedupIndex index_;
};

}  // namespace revdedup
