// SPDX-License-Identifier: Apache-2.0

#include "revdedup/workload.hpp"

#include <algorithm>
#include <numeric>

namespace revdedup {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

// Stateless 64-bit mixer (splitmix64 finalizer).  All workload content
// derives from this one function.
std::uint64_t mix64(std::uint64_t x) {
  std::uint64_t z = x + kGolden;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Fills `out` with bytes [start, start + out.size()) of the infinite
// stream whose 8-byte word i is mix64(seed + i), little-endian.
void fill_random(std::span<std::uint8_t> out, std::uint64_t seed,
                 std::uint64_t start) {
  std::uint64_t o = start;
  const std::uint64_t end = start + out.size();
  std::size_t w = 0;
  while (o < end && (o & 7) != 0) {
    out[w++] = static_cast<std::uint8_t>(mix64(seed + (o >> 3)) >> (8 * (o & 7)));
    ++o;
  }
  while (o + 8 <= end) {
    put_u64(out.data() + w, mix64(seed + (o >> 3)));
    w += 8;
    o += 8;
  }
  while (o < end) {
    out[w++] = static_cast<std::uint8_t>(mix64(seed + (o >> 3)) >> (8 * (o & 7)));
    ++o;
  }
}

constexpr std::uint64_t kBlock = SimFs::kBlockSize;

std::uint64_t round_up_block(std::uint64_t n) {
  return (n + kBlock - 1) & ~(kBlock - 1);
}

}  // namespace

std::uint64_t WorkloadRng::next() {
  state_ += kGolden;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t WorkloadRng::below(std::uint64_t n) {
  if (n == 0) throw UsageError("below(0) is undefined");
  // Rejection sampling: unbiased and implementation-independent.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t draw;
  do {
    draw = next();
  } while (draw >= limit);
  return draw % n;
}

std::uint64_t WorkloadRng::log_uniform_pow2(unsigned lo_bits,
                                            unsigned hi_bits) {
  if (lo_bits > hi_bits || hi_bits >= 63)
    throw UsageError("log_uniform_pow2: bad exponent range");
  unsigned e = lo_bits + static_cast<unsigned>(below(hi_bits - lo_bits + 1));
  return (1ull << e) + below(1ull << e);
}

SimFs::SimFs(std::uint64_t capacity) : capacity_(capacity) {
  if (capacity == 0 || capacity % kBlockSize != 0)
    throw UsageError("image capacity must be a positive multiple of 4 KiB");
}

std::uint64_t SimFs::add_file(std::uint64_t size, std::uint64_t seed) {
  if (size == 0 || size % kBlockSize != 0)
    throw UsageError("file size must be a positive multiple of 4 KiB");
  if (next_extent_ + size > capacity_)
    throw UsageError("image is full: cannot place " + std::to_string(size) +
                     " bytes in " + std::to_string(capacity_ - next_extent_) +
                     " free");
  SimFile f;
  f.extent = next_extent_;
  f.size = size;
  f.seed = seed;
  next_extent_ += size;
  files_.push_back(std::move(f));
  return files_.size() - 1;
}

void SimFs::patch_file(std::uint64_t index, const FilePatch& patch) {
  if (index >= files_.size()) throw UsageError("no such file");
  SimFile& f = files_[index];
  if (patch.length == 0 || patch.offset + patch.length > f.size)
    throw UsageError("patch outside file bounds");
  f.patches.push_back(patch);
}

const SimFile& SimFs::file(std::uint64_t index) const {
  if (index >= files_.size()) throw UsageError("no such file");
  return files_[index];
}

void SimFs::materialize(std::span<std::uint8_t> out) const {
  if (out.size() != capacity_)
    throw UsageError("materialize buffer must match the image capacity");
  std::fill(out.begin(), out.end(), 0);
  for (const SimFile& f : files_) {
    fill_random(out.subspan(f.extent, f.size), f.seed, 0);
    for (const FilePatch& p : f.patches)
      fill_random(out.subspan(f.extent + p.offset, p.length), p.seed, 0);
  }
}

std::uint64_t WorkloadParams::image_bytes() const {
  if (scale == 0) throw UsageError("scale divisor must be positive");
  return scale == 1 ? 8ull << 30 : (4ull << 30) / scale;
}

std::uint64_t WorkloadParams::initial_bytes() const {
  if (scale == 0) throw UsageError("scale divisor must be positive");
  return scale == 1 ? (11ull << 30) / 10 : (1ull << 30) / scale;
}

std::uint64_t WorkloadParams::gamma_bytes() const {
  if (scale == 0) throw UsageError("scale divisor must be positive");
  return scale == 1 ? gamma_full : gamma_full / scale;
}

WorkloadParams WorkloadParams::preset(std::string_view name) {
  WorkloadParams p;  // the sg1 baseline
  if (name == "sg1") return p;
  if (name == "sg2") {
    p.alpha_permille = 40;
    return p;
  }
  if (name == "sg3") {
    p.beta_permille = 200;
    return p;
  }
  if (name == "sg4") {
    p.gamma_full = 20 << 20;
    return p;
  }
  if (name == "sg5") {
    p.alpha_permille = 100;
    return p;
  }
  if (name == "gp") {
    p.series_count = 16;
    p.weeks = 20;
    return p;
  }
  throw UsageError("unknown workload preset '" + std::string(name) +
                   "' (expected sg1..sg5 or gp)");
}

DayStats mutate_day(SimFs& fs, WorkloadRng& rng,
                    const WorkloadParams& params) {
  if (params.alpha_permille > 1000 || params.beta_permille > 1000)
    throw UsageError("alpha and beta are per-mille shares, at most 1000");
  DayStats stats;

  // Pick ceil(alpha * n) distinct files via a partial Fisher-Yates
  // shuffle; draw order is part of the deterministic contract.
  const std::uint64_t n = fs.file_count();
  std::uint64_t count = (n * params.alpha_permille + 999) / 1000;
  count = std::min(count, n);
  std::vector<std::uint64_t> indices(n);
  std::iota(indices.begin(), indices.end(), 0);
  for (std::uint64_t i = 0; i < count; ++i)
    std::swap(indices[i], indices[i + rng.below(n - i)]);

  for (std::uint64_t i = 0; i < count; ++i) {
    const SimFile& f = fs.file(indices[i]);
    const std::uint64_t size = f.size;
    const std::uint64_t blocks = size / kBlock;
    const std::uint64_t total = (size * params.beta_permille + 999) / 1000;
    const std::uint64_t regions = std::min<std::uint64_t>(4, blocks);
    // Regions split on block boundaries; the rewrite quota is spread
    // proportionally so that beta = 100% covers every region fully.
    for (std::uint64_t r = 0; r < regions; ++r) {
      std::uint64_t region_start = kBlock * (blocks * r / regions);
      std::uint64_t region_end = kBlock * (blocks * (r + 1) / regions);
      std::uint64_t run = total * region_end / size - total * region_start / size;
      if (run == 0) continue;
      std::uint64_t slots = (region_end - run - region_start) / kBlock + 1;
      FilePatch patch;
      patch.offset = region_start + kBlock * rng.below(slots);
      patch.length = run;
      patch.seed = rng.next();
      fs.patch_file(indices[i], patch);
    }
    stats.files_mutated += 1;
    stats.bytes_rewritten += total;
  }

  // New arrivals: log-uniform sizes in [4 KiB, 1 MiB), whole blocks,
  // the last one rounded up so at least gamma bytes land.
  std::uint64_t remaining = params.gamma_bytes();
  while (remaining > 0) {
    std::uint64_t size = rng.log_uniform_pow2(12, 19) & ~(kBlock - 1);
    if (size > remaining) size = round_up_block(remaining);
    fs.add_file(size, rng.next());
    stats.files_added += 1;
    stats.bytes_added += size;
    remaining -= std::min(size, remaining);
  }
  return stats;
}

SeriesGenerator::SeriesGenerator(const WorkloadParams& params,
                                 std::uint64_t series_index)
    : params_(params),
      fs_(params.image_bytes()),
      rng_(mix64(params.seed ^ (series_index + 1) * kGolden)) {
  // Initial image: log-uniform files up to the initial fill level, the
  // last one clipped so the total lands within one block of it.
  const std::uint64_t target = params_.initial_bytes();
  while (fs_.used_bytes() < target) {
    std::uint64_t size = rng_.log_uniform_pow2(12, 19) & ~(kBlock - 1);
    std::uint64_t left = target - fs_.used_bytes();
    if (size > left) size = round_up_block(left);
    fs_.add_file(size, rng_.next());
  }
}

std::vector<std::uint8_t> SeriesGenerator::snapshot() const {
  std::vector<std::uint8_t> image(fs_.capacity());
  fs_.materialize(image);
  return image;
}

DayStats SeriesGenerator::advance_day() {
  return mutate_day(fs_, rng_, params_);
}

std::vector<DayStats> SeriesGenerator::advance_week() {
  std::vector<DayStats> days;
  for (int i = 0; i < 5; ++i) days.push_back(advance_day());
  return days;
}

}  // namespace revdedup
