// SPDX-License-Identifier: Apache-2.0
//
// Synthetic backup workloads.  Models a user disk image: files sit in
// 4 KiB-aligned extents inside a fixed-size image and unallocated space
// reads back as zeros (which the chunker flags as null).  Day by day a
// small fraction of files is rewritten in place and some new data
// arrives; a snapshot of the whole image is what gets backed up, once
// per simulated week.
//
// Three knobs shape a series, quoted per mille so everything stays in
// integers:
//
//   alpha  share of existing files modified per day
//   beta   share of a modified file's bytes rewritten, in up to four
//          4 KiB-aligned runs spread across the file (beta = 100% is
//          guaranteed to rewrite every byte)
//   gamma  bytes of brand-new files added per day
//
// Every byte ever produced is a pure function of (seed, series, day),
// so the same parameters always reproduce bit-identical images — the
// generator never stores file contents, only (seed, extent) pairs and
// the rewrite patches.
//
// A scale divisor shrinks the image for desk-size runs: divisor 1 is
// the full-size profile (8 GiB image, 1.1 GiB initial data, 10 MiB of
// daily growth), divisor k > 1 uses {4 GiB/k, 1 GiB/k, 10 MiB/k}, so
// k = 64 lands on {64 MiB, 16 MiB, 160 KiB}.

#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "revdedup/common.hpp"

namespace revdedup {

// Deterministic RNG: a 64-bit mixer chain.  Deliberately avoids the
// standard <random> distributions, whose outputs may differ between
// standard library implementations; draws here are bit-reproducible
// everywhere.
class WorkloadRng {
 public:
  explicit WorkloadRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();
  // Uniform draw from [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  // Log-uniform draw from [2^lo_bits, 2^(hi_bits+1)): a uniform
  // exponent bucket, then a uniform offset inside the bucket.
  std::uint64_t log_uniform_pow2(unsigned lo_bits, unsigned hi_bits);

 private:
  std::uint64_t state_;
};

// One in-place rewrite: `length` bytes at `offset` within the file,
// regenerated from `seed`.  Later patches shadow earlier ones.
struct FilePatch {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  std::uint64_t seed = 0;
};

struct SimFile {
  std::uint64_t extent = 0;  // byte offset of the extent in the image
  std::uint64_t size = 0;    // multiple of 4 KiB
  std::uint64_t seed = 0;
  std::vector<FilePatch> patches;
};

// The simulated filesystem: bump-allocated aligned extents in a fixed
// image.  Files are only ever added or patched, never removed.
class SimFs {
 public:
  static constexpr std::uint64_t kBlockSize = 4096;

  explicit SimFs(std::uint64_t capacity);

  // Appends a file (size must be a positive multiple of the block
  // size); throws UsageError when the image is full.
  std::uint64_t add_file(std::uint64_t size, std::uint64_t seed);
  void patch_file(std::uint64_t index, const FilePatch& patch);

  std::uint64_t file_count() const { return files_.size(); }
  const SimFile& file(std::uint64_t index) const;
  std::uint64_t capacity() const { return capacity_; }
  std::uint64_t used_bytes() const { return next_extent_; }

  // Renders the whole image; out.size() must equal capacity().
  void materialize(std::span<std::uint8_t> out) const;

 private:
  std::uint64_t capacity_;
  std::uint64_t next_extent_ = 0;
  std::vector<SimFile> files_;
};

struct WorkloadParams {
  std::uint32_t alpha_permille = 20;   // 2% of files touched per day
  std::uint32_t beta_permille = 100;   // 10% of a touched file rewritten
  std::uint64_t gamma_full = 10 << 20; // 10 MiB/day of new data at scale 1
  std::uint64_t scale = 64;
  std::uint64_t weeks = 12;
  std::uint64_t series_count = 1;
  std::uint64_t seed = 0x20260814;

  std::uint64_t image_bytes() const;
  std::uint64_t initial_bytes() const;
  std::uint64_t gamma_bytes() const;

  // Named profiles: "sg1".."sg5" vary one knob at a time around the
  // sg1 baseline; "gp" is a group of 16 small series, 20 weeks each.
  static WorkloadParams preset(std::string_view name);
};

struct DayStats {
  std::uint64_t files_mutated = 0;
  std::uint64_t bytes_rewritten = 0;
  std::uint64_t files_added = 0;
  std::uint64_t bytes_added = 0;
};

// One simulated day against one filesystem: mutate alpha% of the
// existing files (beta% of each, in aligned runs), then add gamma bytes
// of new files (log-uniform sizes in [4 KiB, 1 MiB], the last one
// rounded up to a whole block).
DayStats mutate_day(SimFs& fs, WorkloadRng& rng, const WorkloadParams& params);

// Drives one series: an initial image at week 0, then five mutation
// days per week.  Snapshot w is the image after 5*w days.
class SeriesGenerator {
 public:
  SeriesGenerator(const WorkloadParams& params, std::uint64_t series_index);

  std::vector<std::uint8_t> snapshot() const;
  DayStats advance_day();
  std::vector<DayStats> advance_week();  // five days

  const SimFs& fs() const { return fs_; }

 private:
  WorkloadParams params_;
  SimFs fs_;
  WorkloadRng rng_;
};

}  // namespace revdedup
