// SPDX-License-Identifier: Apache-2.0
//
// Out-of-line fine-grained deduplication.  The inline write path keeps
// ingestion fast by deduplicating whole segments only; this module runs
// afterwards, once a version has left the live window, and removes the
// finer-grained redundancy *backwards*: the newest copy of every chunk
// stays physically stored, and the older version's recipe entries are
// redirected at the next newer version.  Old backups degrade in read
// locality; new backups — the ones actually restored in practice — stay
// fully sequential.
//
// A job over version v:
//
//   1. retires v's reference on every segment it uses (a segment whose
//      count hits zero is shared with no other un-deduplicated backup);
//   2. indexes the chunk fingerprints of version v+1;
//   3. rewrites v's physical entries: a chunk that reappears in v+1
//      becomes a redirection, and an all-zero chunk of an unshared
//      segment becomes a null entry — both drop the physical chunk if
//      no other backup can still reach it;
//   4. repacks every container that now holds an unshared segment:
//      surviving chunk bytes are rewritten into containers stamped with
//      v's creation time (deletable later by timestamp comparison
//      alone), still-shared neighbours move whole into fresh unstamped
//      containers, and the originals are retired.
//
// Entries are only ever rewritten direct -> {indirect, null}, and bytes
// are only dropped when the reference count proves nothing can reach
// them, so every retained version stays restorable bit-for-bit.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "revdedup/metastore.hpp"
#include "revdedup/store.hpp"

namespace revdedup {

struct ReverseJobResult {
  std::uint64_t series_id = 0;
  std::uint64_t version = 0;

  std::uint64_t entries_redirected = 0;  // direct -> indirect
  std::uint64_t entries_nulled = 0;      // direct -> null
  std::uint64_t chunks_removed = 0;      // physical removals
  std::uint64_t bytes_removed = 0;       // payload bytes those freed
  std::uint64_t segments_compacted = 0;  // rewritten without removed chunks
  std::uint64_t segments_relocated = 0;  // still shared, moved whole
  std::uint64_t segments_dropped = 0;    // every chunk removed
  std::uint64_t containers_retired = 0;  // originals deleted
  std::uint64_t containers_stamped = 0;  // new, timestamped with v's birth
  std::uint64_t containers_unstamped = 0;
  double elapsed_seconds = 0.0;
};

// Result of squeezing the removed chunks out of one segment: the
// surviving bytes in chunk order, and the chunk rows with offsets
// rebased into the new payload (removed rows keep their flag and lose
// their offset).  Exposed separately so it can be checked against an
// independent reconstruction.
struct CompactedSegment {
  std::vector<std::uint8_t> payload;
  std::vector<ChunkMeta> chunks;
};

CompactedSegment compact_segment(const SegmentMeta& seg,
                                 std::span<const ChunkMeta> chunks,
                                 std::span<const std::uint8_t> payload);

// Runs one job.  Requires that version `version` of the series is
// retained, not yet deduplicated, outside the live window, and that
// version + 1 exists.
ReverseJobResult reverse_deduplicate(Store& store, std::uint64_t series_id,
                                     std::uint64_t version);

// Oldest retained version that is eligible for a job, if any.
std::optional<std::uint64_t> next_pending(Store& store,
                                          std::uint64_t series_id);

// Drains the backlog oldest-first and returns one result per job run.
std::vector<ReverseJobResult> deduplicate_pending(Store& store,
                                                  std::uint64_t series_id);

}  // namespace revdedup
