// SPDX-License-Identifier: Apache-2.0
//
// Measurement harness.  Each run_* function drives a synthetic workload
// through one or more freshly created stores and reports the numbers
// the design claims to move:
//
//   saving        stored payload of chunk-granular inline dedup vs
//                 segment-granular inline dedup vs segments + the
//                 out-of-line pass, week by week
//   restore       containers fetched per restored byte as a function
//                 of backup age (read locality of old vs new backups)
//   deletion      timestamp deletion vs mark-and-sweep on identical
//                 twin stores: I/O counters and the freed payload
//   segment sweep inline-only saving across segment size settings
//   live window   stored payload as the not-yet-deduplicated window
//                 grows
//
// All runs are deterministic in (preset, scale, seed).  The CSV writers
// put one '#' comment block on top so files are self-describing.

#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "revdedup/chunker.hpp"
#include "revdedup/container_store.hpp"
#include "revdedup/reclaim.hpp"
#include "revdedup/store.hpp"
#include "revdedup/workload.hpp"

namespace revdedup {

// Desk-scale defaults: 4 KiB average chunks inside 256 KiB average
// segments, eight segments per 2 MiB container.
ChunkingParams desk_chunking();
constexpr std::uint64_t kDeskContainerCapacity = 2 << 20;

// Payload bytes currently held by sealed, live containers.
std::uint64_t stored_payload_bytes(Store& store);

struct BenchConfig {
  std::string preset = "sg1";
  std::uint64_t scale = 64;
  std::uint64_t weeks = 0;   // 0 = preset default
  std::uint64_t seed = 0;    // 0 = preset default
  std::uint64_t live_window = 1;
  std::uint64_t archival_window = kAllRemaining;
  std::uint64_t container_capacity = kDeskContainerCapacity;
  ChunkingParams chunking = desk_chunking();
  std::filesystem::path workdir = ".";
};

WorkloadParams workload_from(const BenchConfig& config);

// The '#' parameter-echo block every report carries, for reports composed
// outside this module.
void write_config_echo(std::ostream& out, const BenchConfig& config);

struct SavingRow {
  std::uint64_t week = 0;
  std::uint64_t logical_bytes = 0;   // cumulative backed-up bytes
  std::uint64_t chunk_stored = 0;    // chunk-granular inline dedup
  std::uint64_t segment_stored = 0;  // segment-granular inline dedup
  std::uint64_t reverse_stored = 0;  // segments + out-of-line pass
};
std::vector<SavingRow> run_saving_bench(const BenchConfig& config);
void write_saving_csv(const std::filesystem::path& path,
                      const BenchConfig& config,
                      const std::vector<SavingRow>& rows);

struct FragmentationRow {
  std::uint64_t series = 0;
  std::uint64_t version = 0;
  std::uint64_t age_weeks = 0;  // newest = 0
  std::uint64_t bytes = 0;
  std::uint64_t containers_loaded = 0;
  double containers_per_gib = 0.0;
  double seconds = 0.0;
};
std::vector<FragmentationRow> run_restore_bench(const BenchConfig& config);
void write_restore_csv(const std::filesystem::path& path,
                       const BenchConfig& config,
                       const std::vector<FragmentationRow>& rows);

struct DeletionReport {
  std::uint64_t versions_dropped = 0;
  DeleteResult timestamp_result;
  SweepResult sweep_result;
  IoCounters::Snapshot timestamp_io;
  IoCounters::Snapshot sweep_io;
  std::uint64_t remaining_timestamp = 0;  // payload left after each strategy
  std::uint64_t remaining_sweep = 0;
};
DeletionReport run_deletion_bench(const BenchConfig& config);
void write_deletion_csv(const std::filesystem::path& path,
                        const BenchConfig& config,
                        const DeletionReport& report);

struct SegmentSweepRow {
  unsigned segment_bits = 0;
  std::uint64_t logical_bytes = 0;
  std::uint64_t stored = 0;
};
std::vector<SegmentSweepRow> run_segment_sweep(
    const BenchConfig& config, const std::vector<unsigned>& segment_bits);
void write_segment_sweep_csv(const std::filesystem::path& path,
                             const BenchConfig& config,
                             const std::vector<SegmentSweepRow>& rows);

struct LiveWindowRow {
  std::uint64_t live_window = 0;
  std::uint64_t stored = 0;
};
std::vector<LiveWindowRow> run_live_window_sweep(
    const BenchConfig& config, const std::vector<std::uint64_t>& windows);
void write_live_window_csv(const std::filesystem::path& path,
                           const BenchConfig& config,
                           const std::vector<LiveWindowRow>& rows);

}  // namespace revdedup
