// SPDX-License-Identifier: Apache-2.0
//
// Space reclamation.  Two strategies drop expired backups and the
// payload only they referenced:
//
//   delete_expired   pure metadata: drops expired recipes, then removes
//                    every container whose timestamp proves all its
//                    bytes belonged to dropped history.  Reads no
//                    payload at all — this is what container timestamps
//                    are for.  Requires that expired versions went
//                    through out-of-line deduplication (their exclusive
//                    bytes were compacted into stamped containers).
//
//   mark_and_sweep   works on any store, including ones that never ran
//                    out-of-line deduplication: drops expired recipes,
//                    marks every segment reachable from the retained
//                    recipes, then scans every container and rewrites
//                    the ones holding unreachable segments (the rewrite
//                    inherits the original's timestamp).  Touches every
//                    stored byte — the cost the timestamp scheme avoids.
//
// Expiry itself is defined by the retention windows: versions past the
// live + archival span.  An optional cutoff narrows either strategy to
// the expired versions created strictly before a given timestamp; a
// cutoff that reaches into any series' retention window is rejected.
// Both strategies drop the same recipes and, on a fully deduplicated
// store, free the same payload.

#pragma once

#include <cstdint>

#include "revdedup/store.hpp"

namespace revdedup {

struct DeleteResult {
  std::uint64_t versions_dropped = 0;
  std::uint64_t containers_removed = 0;
  std::uint64_t segments_deleted = 0;
  std::uint64_t payload_bytes_freed = 0;
  double elapsed_seconds = 0.0;
};

struct SweepResult {
  std::uint64_t versions_dropped = 0;
  std::uint64_t containers_scanned = 0;
  std::uint64_t payload_bytes_scanned = 0;
  std::uint64_t containers_rewritten = 0;
  std::uint64_t containers_removed = 0;
  std::uint64_t segments_deleted = 0;
  std::uint64_t payload_bytes_freed = 0;
  double elapsed_seconds = 0.0;
};

// Cutoff value meaning "every expired version, whatever its age".
inline constexpr Timestamp kNoCutoff = ~static_cast<Timestamp>(0);

DeleteResult delete_expired(Store& store, Timestamp before = kNoCutoff);
SweepResult mark_and_sweep(Store& store, Timestamp before = kNoCutoff);

}  // namespace revdedup
