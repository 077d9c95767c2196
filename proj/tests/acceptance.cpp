// SPDX-License-Identifier: Apache-2.0
//
// Acceptance harness.  Nine end-to-end criteria, one PASS/FAIL line each,
// non-zero exit if any fail.  Each criterion is self-contained and states
// its tolerance as a named constant next to the check.  The shared
// workload is the desk-scale weekly series: a 64 MiB client image backed
// up once a week for twelve weeks, seed-pinned so every run sees the
// same bytes.
//
//   1  every retained backup restores bit-exactly at three lifecycle
//      stages (inline dedup, after the out-of-line pass, after deletion)
//   2  saving ordering: chunk-granular >= segments+out-of-line pass >=
//      inline-only, with the first two within five percentage points
//   3  inline-only saving strictly falls as segments grow
//   4  restoring old backups reads at least as many containers as new
//   5  timestamp deletion does zero payload reads and frees exactly what
//      a full mark-and-sweep frees
//   6  segment reference counts equal a brute-force recount after every
//      operation of a randomized workload
//   7  chunking invariants over a thousand seeded buffers
//   8  per-backup payload writes equal the length of first-seen non-null
//      segments, and shrink when the mutation rates are halved
//   9  stored payload is non-decreasing in the live-window length

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "revdedup/bench.hpp"
#include "revdedup/chunker.hpp"
#include "revdedup/inline_dedup.hpp"
#include "revdedup/reclaim.hpp"
#include "revdedup/restore.hpp"
#include "revdedup/reverse_dedup.hpp"
#include "revdedup/store.hpp"
#include "revdedup/workload.hpp"
#include "test_util.hpp"

using namespace revdedup;

namespace {

// --- tolerances, pinned ---------------------------------------------------

constexpr double kRoundTripBudgetSeconds = 180.0;  // criterion 1
constexpr double kMaxSavingGap = 0.05;             // criterion 2, 5 points
constexpr std::uint64_t kDeskScale = 64;           // 64 MiB client image
constexpr std::uint64_t kRandomOps = 200;          // criterion 6
constexpr std::size_t kChunkingBuffers = 1000;     // criterion 7

struct Failure {
  std::string reason;
};

void require(bool ok, const std::string& reason) {
  if (!ok) throw Failure{reason};
}

template <typename T>
std::string str(const T& v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

BenchConfig desk_config(const std::filesystem::path& workdir) {
  BenchConfig config;  // sg1 preset, scale 64, desk chunking, 2 MiB containers
  config.scale = kDeskScale;
  config.workdir = workdir;
  return config;
}

// Shared state: the saving-bench stores are built once and reused by the
// criteria that only read them.
struct Context {
  testutil::ScratchDir dir{"acceptance"};
  std::optional<std::vector<SavingRow>> saving_rows;

  std::filesystem::path saving_dir() const { return dir.path() / "saving_run"; }

  const std::vector<SavingRow>& saving(Context& ctx) {
    if (!ctx.saving_rows)
      ctx.saving_rows = run_saving_bench(desk_config(ctx.saving_dir()));
    return *ctx.saving_rows;
  }
};

double saving_of(std::uint64_t stored, std::uint64_t logical) {
  return 1.0 - double(stored) / double(logical);
}

// --- criterion 1: round-trip integrity ------------------------------------

std::string c1_round_trip(Context& ctx) {
  auto t0 = std::chrono::steady_clock::now();

  WorkloadParams params = WorkloadParams::preset("sg1");
  params.scale = kDeskScale;

  Store store;
  StoreOptions opts;
  opts.container_capacity = kDeskContainerCapacity;
  store.create(ctx.dir.path() / "c1_store", opts);

  // Window sized so exactly the earliest three backups expire at the end:
  // 13 versions = 1 live + 9 archival + 3 expired.
  BackupConfig bc;
  bc.series_id = 1;
  bc.live_window = 1;
  bc.archival_window = 9;

  std::vector<Fingerprint> digests;
  SeriesGenerator gen(params, 0);
  for (std::uint64_t week = 0; week <= params.weeks; ++week) {
    if (week > 0) gen.advance_week();
    std::vector<std::uint8_t> image = gen.snapshot();
    digests.push_back(sha1(image));
    MemoryByteSource source(image);
    backup(store, bc, source, chunk_buffer(image, desk_chunking()));
  }

  auto check_all = [&](std::uint64_t from, const char* stage) {
    for (std::uint64_t v = from; v < digests.size(); ++v) {
      NullSink sink;
      RestoreResult r = restore(store, 1, v, sink);
      require(r.digest == digests[v],
              std::string(stage) + ": version " + str(v) + " digest mismatch");
    }
  };

  check_all(0, "after inline dedup");
  std::size_t jobs = deduplicate_pending(store, 1).size();
  require(jobs == digests.size() - 1,
          "expected " + str(digests.size() - 1) + " dedup jobs, ran " +
              str(jobs));
  check_all(0, "after out-of-line dedup");
  DeleteResult dr = delete_expired(store);
  require(dr.versions_dropped == 3,
          "expected 3 expired versions, dropped " + str(dr.versions_dropped));
  check_all(3, "after deletion");

  double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  require(elapsed < kRoundTripBudgetSeconds,
          "took " + str(elapsed) + "s, budget " +
              str(kRoundTripBudgetSeconds) + "s");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1fs for 3x%zu restores", elapsed,
                digests.size());
  return buf;
}

// --- criterion 2: saving ordering and gap ----------------------------------

std::string c2_saving_order(Context& ctx) {
  const SavingRow& last = ctx.saving(ctx).back();
  require(last.chunk_stored <= last.reverse_stored,
          "chunk-granular stored " + str(last.chunk_stored) +
              " > out-of-line stored " + str(last.reverse_stored));
  require(last.reverse_stored <= last.segment_stored,
          "out-of-line stored " + str(last.reverse_stored) +
              " > inline-only stored " + str(last.segment_stored));

  double conv = saving_of(last.chunk_stored, last.logical_bytes);
  double rev = saving_of(last.reverse_stored, last.logical_bytes);
  require(conv - rev <= kMaxSavingGap,
          "saving gap " + str(conv - rev) + " exceeds " + str(kMaxSavingGap));

  // Independent oracle: chunk-granular dedup must store exactly the bytes
  // of globally unique, non-null chunks.
  WorkloadParams params = workload_from(desk_config(ctx.saving_dir()));
  std::unordered_set<Fingerprint, FingerprintHash> seen;
  std::uint64_t unique_bytes = 0;
  SeriesGenerator gen(params, 0);
  for (std::uint64_t week = 0; week <= params.weeks; ++week) {
    if (week > 0) gen.advance_week();
    std::vector<std::uint8_t> image = gen.snapshot();
    for (const SegmentDescriptor& s : chunk_buffer(image, desk_chunking()))
      for (const ChunkDescriptor& c : s.chunks)
        if (!c.null && seen.insert(c.fp).second) unique_bytes += c.length;
  }
  require(last.chunk_stored == unique_bytes,
          "chunk-granular stored " + str(last.chunk_stored) +
              " != unique chunk bytes " + str(unique_bytes));

  char buf[96];
  std::snprintf(buf, sizeof buf, "conv=%.4f reverse=%.4f inline=%.4f", conv,
                rev, saving_of(last.segment_stored, last.logical_bytes));
  return buf;
}

// --- criterion 3: inline saving falls as segments grow ----------------------

std::string c3_segment_sweep(Context& ctx) {
  BenchConfig config = desk_config(ctx.dir.path() / "c3");
  unsigned m = config.chunking.segment_bits;
  std::vector<SegmentSweepRow> rows =
      run_segment_sweep(config, {m - 2, m, m + 1});
  std::string note;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    double prev = saving_of(rows[i - 1].stored, rows[i - 1].logical_bytes);
    double cur = saving_of(rows[i].stored, rows[i].logical_bytes);
    require(prev > cur, "saving at 2^" + str(rows[i - 1].segment_bits) +
                            " (" + str(prev) + ") not above 2^" +
                            str(rows[i].segment_bits) + " (" + str(cur) + ")");
  }
  for (const SegmentSweepRow& r : rows) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s2^%u=%.4f", note.empty() ? "" : " ",
                  r.segment_bits, saving_of(r.stored, r.logical_bytes));
    note += buf;
  }
  return note;
}

// --- criterion 4: read locality shifts toward new backups -------------------

std::string c4_fragmentation(Context& ctx) {
  ctx.saving(ctx);  // make sure the stores exist

  // The out-of-line pass relocates old exclusive bytes; old restores pay.
  Store reverse;
  reverse.open(ctx.saving_dir() / "saving" / "reverse");
  std::uint64_t newest_v =
      reverse.meta().series_state(1).next_version - 1;
  NullSink sink;
  std::uint64_t oldest = restore(reverse, 1, 0, sink).containers_loaded;
  std::uint64_t newest = restore(reverse, 1, newest_v, sink).containers_loaded;
  require(newest <= oldest, "newest backup read " + str(newest) +
                                " containers, oldest " + str(oldest));

  // Chunk-granular inline dedup fragments the NEWEST backup instead: its
  // duplicate chunks point into every older container.
  Store conv;
  conv.open(ctx.saving_dir() / "saving" / "chunk");
  std::uint64_t early = restore(conv, 1, 2, sink).containers_loaded;
  std::uint64_t late = restore(conv, 1, newest_v, sink).containers_loaded;
  require(late >= early, "chunk-granular: newest backup read " + str(late) +
                             " containers, week 2 read " + str(early));

  return "reverse oldest/newest=" + str(oldest) + "/" + str(newest) +
         " conv week2/newest=" + str(early) + "/" + str(late);
}

// --- criterion 5: deletion i/o ----------------------------------------------

std::string c5_deletion_io(Context& ctx) {
  // Twin stores, byte-identical builds, bounded retention so the earliest
  // backups expire: 13 versions = 1 live + 4 archival + 8 expired.
  WorkloadParams params = WorkloadParams::preset("sg1");
  params.scale = kDeskScale;

  Store a, b;
  StoreOptions opts;
  opts.container_capacity = kDeskContainerCapacity;
  a.create(ctx.dir.path() / "c5_a", opts);
  b.create(ctx.dir.path() / "c5_b", opts);

  BackupConfig bc;
  bc.series_id = 1;
  bc.live_window = 1;
  bc.archival_window = 4;

  SeriesGenerator gen(params, 0);
  for (std::uint64_t week = 0; week <= params.weeks; ++week) {
    if (week > 0) gen.advance_week();
    std::vector<std::uint8_t> image = gen.snapshot();
    auto descriptors = chunk_buffer(image, desk_chunking());
    for (Store* s : {&a, &b}) {
      MemoryByteSource source(image);
      backup(*s, bc, source, descriptors);
      deduplicate_pending(*s, 1);
    }
  }

  // Delete only the earliest backup on both stores.
  Timestamp born0 = a.meta().series_state(1).version(0).created_at;
  Timestamp born1 = a.meta().series_state(1).version(1).created_at;
  std::set<std::uint32_t> expect_removed;
  for (const ContainerInfo& info : a.containers().list())
    if (info.sealed && !info.deleted && info.timestamp == born0)
      expect_removed.insert(info.container_id);
  require(!expect_removed.empty(), "no containers carry the first stamp");

  a.containers().counters().reset();
  DeleteResult dr = delete_expired(a, born1);
  auto a_io = a.containers().counters().snapshot();
  require(a_io.payload_bytes_read == 0,
          "timestamp deletion read " + str(a_io.payload_bytes_read) +
              " payload bytes");
  require(a_io.containers_read == 0, "timestamp deletion loaded " +
                                         str(a_io.containers_read) +
                                         " containers");
  require(dr.versions_dropped == 1,
          "dropped " + str(dr.versions_dropped) + " versions, wanted 1");
  require(dr.containers_removed == expect_removed.size(),
          "removed " + str(dr.containers_removed) + " containers, stamp set " +
              str(expect_removed.size()));
  for (std::uint32_t id : expect_removed)
    require(a.containers().info(id).deleted,
            "stamped container " + str(id) + " survived");

  std::uint64_t b_payload_before = stored_payload_bytes(b);
  b.containers().counters().reset();
  SweepResult sr = mark_and_sweep(b, born1);
  auto b_io = b.containers().counters().snapshot();
  require(sr.payload_bytes_scanned == b_payload_before,
          "sweep scanned " + str(sr.payload_bytes_scanned) + " of " +
              str(b_payload_before) + " stored bytes");
  require(b_io.payload_bytes_read == b_payload_before,
          "sweep read " + str(b_io.payload_bytes_read) + " of " +
              str(b_payload_before) + " stored bytes");
  require(sr.versions_dropped == 1, "sweep dropped " +
                                        str(sr.versions_dropped) +
                                        " versions, wanted 1");

  std::uint64_t a_left = stored_payload_bytes(a);
  std::uint64_t b_left = stored_payload_bytes(b);
  require(a_left == b_left, "strategies left different payload: " +
                                str(a_left) + " vs " + str(b_left));

  return "freed=" + str(dr.payload_bytes_freed) + "B scanned 0B vs " +
         str(sr.payload_bytes_scanned) + "B";
}

// --- criterion 6: reference-count oracle -------------------------------------

std::vector<std::uint8_t> seeded_image(std::uint64_t seed) {
  auto data = testutil::random_bytes(seed, 3 << 19);
  std::size_t hole = (seed % 8) << 16;
  std::fill(data.begin() + hole, data.begin() + hole + (1 << 18), 0);
  return data;
}

void mutate_image(std::vector<std::uint8_t>& image, std::mt19937_64& rng) {
  for (int patch = 0; patch < 2; ++patch) {
    std::size_t length = 2048 + rng() % (14 << 10);
    std::size_t offset = rng() % (image.size() - length);
    auto bytes = testutil::random_bytes(rng(), length);
    std::copy(bytes.begin(), bytes.end(), image.begin() + offset);
  }
  auto inserted = testutil::random_bytes(rng(), 1 + rng() % 512);
  image.insert(image.begin() + rng() % image.size(), inserted.begin(),
               inserted.end());
  if (image.size() > (2 << 20)) image.resize(2 << 20);
}

std::string c6_refcount_oracle(Context& ctx) {
  ChunkingParams chunking;
  chunking.chunk_bits = 9;
  chunking.segment_bits = 13;

  Store store;
  StoreOptions opts;
  opts.container_capacity = 64 << 10;
  store.create(ctx.dir.path() / "c6_store", opts);

  std::mt19937_64 rng(0xace0ace1);
  std::map<std::uint64_t, std::vector<std::uint8_t>> images;
  std::map<std::uint64_t, std::map<std::uint64_t, Fingerprint>> digests;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    images[s] = seeded_image(1000 + s);
    BackupConfig bc;
    bc.series_id = s;
    bc.live_window = 1;
    bc.archival_window = 2;
    MemoryByteSource source(images[s]);
    BackupResult r =
        backup(store, bc, source, chunk_buffer(images[s], chunking));
    digests[s][r.version] = sha1(images[s]);
  }

  auto recount_ok = [&](std::uint64_t op) {
    std::map<std::uint64_t, std::uint32_t> expected;
    for (std::uint64_t series : store.meta().list_series()) {
      SeriesState st = store.meta().series_state(series);
      for (std::uint64_t v = st.first_retained; v < st.next_version; ++v) {
        if (st.version(v).deduplicated) continue;
        Recipe r = store.meta().read_recipe(series, v);
        std::set<std::uint64_t> segs;
        for (const RecipeEntry& e : r.entries)
          if (e.kind == EntryKind::kDirect) segs.insert(e.seg_id);
        for (std::uint64_t seg : segs) expected[seg] += 1;
      }
    }
    for (std::uint64_t seg = 0; seg < store.meta().segment_count(); ++seg) {
      std::uint32_t want = expected.count(seg) ? expected[seg] : 0;
      std::uint32_t got = store.meta().segment(seg).ref_count;
      require(got == want, "op " + str(op) + ": segment " + str(seg) +
                               " ref_count " + str(got) + ", recount " +
                               str(want));
    }
  };

  std::uint64_t backups = 0, jobs = 0, restores = 0, deletes = 0;
  for (std::uint64_t op = 0; op < kRandomOps; ++op) {
    std::uint64_t series = 1 + rng() % 3;
    std::uint64_t roll = rng() % 100;
    if (roll < 45) {
      mutate_image(images[series], rng);
      BackupConfig bc;
      bc.series_id = series;
      bc.live_window = 1;
      bc.archival_window = 2;
      MemoryByteSource source(images[series]);
      BackupResult r = backup(store, bc, source,
                              chunk_buffer(images[series], chunking));
      digests[series][r.version] = sha1(images[series]);
      backups += 1;
    } else if (roll < 70) {
      if (auto v = next_pending(store, series)) {
        reverse_deduplicate(store, series, *v);
        jobs += 1;
      }
    } else if (roll < 85) {
      SeriesState st = store.meta().series_state(series);
      if (st.first_retained < st.next_version) {
        std::uint64_t v = st.first_retained +
                          rng() % (st.next_version - st.first_retained);
        NullSink sink;
        RestoreResult r = restore(store, series, v, sink);
        require(r.digest == digests[series][v],
                "op " + str(op) + ": series " + str(series) + " version " +
                    str(v) + " digest drift");
        restores += 1;
      }
    } else if (roll < 95) {
      try {
        deletes += delete_expired(store).versions_dropped;
      } catch (const UsageError&) {
        // Expired-but-undeduplicated backups legitimately refuse this path.
      }
    } else {
      deletes += mark_and_sweep(store).versions_dropped;
    }
    recount_ok(op);
  }

  // Everything still retained must restore bit-exactly.
  for (auto& [series, versions] : digests) {
    SeriesState st = store.meta().series_state(series);
    for (auto& [v, digest] : versions) {
      if (v < st.first_retained) continue;
      NullSink sink;
      require(restore(store, series, v, sink).digest == digest,
              "final sweep: series " + str(series) + " version " + str(v));
    }
  }

  return str(backups) + " backups, " + str(jobs) + " jobs, " + str(restores) +
         " restores, " + str(deletes) + " drops";
}

// --- criterion 7: chunking properties ----------------------------------------

std::vector<std::uint64_t> chunk_starts(
    const std::vector<SegmentDescriptor>& segments) {
  std::vector<std::uint64_t> out;
  for (const SegmentDescriptor& s : segments)
    for (const ChunkDescriptor& c : s.chunks) out.push_back(c.offset);
  return out;
}

std::string c7_chunking(Context&) {
  ChunkingParams params;
  params.chunk_bits = 9;
  params.segment_bits = 13;
  ChunkingParams coarse = params;
  coarse.segment_bits = 16;

  std::uint64_t total_chunks = 0;
  for (std::size_t i = 0; i < kChunkingBuffers; ++i) {
    std::uint64_t seed = 0xc7000000 + i;
    std::size_t size = 1024 + (testutil::splitmix64(seed) % (128 << 10));
    auto data = testutil::random_bytes(0xc7 ^ i, size);

    auto segments = chunk_buffer(data, params);

    // Tiling, determinism, and size bounds.
    std::uint64_t pos = 0;
    std::uint64_t chunk_count = 0;
    for (const SegmentDescriptor& s : segments) {
      require(s.offset == pos, "buffer " + str(i) + ": segment gap");
      require(s.length <= params.max_segment_size(),
              "buffer " + str(i) + ": oversized segment");
      std::uint64_t seg_pos = pos;
      for (const ChunkDescriptor& c : s.chunks) {
        require(c.offset == seg_pos, "buffer " + str(i) + ": chunk gap");
        require(c.length <= params.max_chunk_size(),
                "buffer " + str(i) + ": oversized chunk");
        seg_pos += c.length;
        chunk_count += 1;
      }
      require(seg_pos == pos + s.length,
              "buffer " + str(i) + ": segment length mismatch");
      pos = seg_pos;
    }
    require(pos == size, "buffer " + str(i) + ": tiling incomplete");
    total_chunks += chunk_count;

    std::uint64_t index = 0;
    for (const SegmentDescriptor& s : segments)
      for (const ChunkDescriptor& c : s.chunks) {
        index += 1;
        require(index == chunk_count || c.length >= params.min_chunk_size(),
                "buffer " + str(i) + ": undersized non-final chunk");
      }

    auto again = chunk_buffer(data, params);
    require(chunk_starts(again) == chunk_starts(segments) &&
                again.size() == segments.size(),
            "buffer " + str(i) + ": chunking not deterministic");

    // Segment granularity must not move chunk boundaries, and segment
    // starts are a subset of chunk starts by construction.
    auto coarse_segments = chunk_buffer(data, coarse);
    require(chunk_starts(coarse_segments) == chunk_starts(segments),
            "buffer " + str(i) + ": segment setting moved chunk boundaries");

    // Single-byte edit: boundaries before the edit are untouched; the
    // streams re-align within a bounded distance after it.
    std::size_t edit = size / 2;
    auto edited = data;
    edited[edit] ^= 0x5a;
    auto edited_starts = chunk_starts(chunk_buffer(edited, params));
    auto base_starts = chunk_starts(segments);
    std::uint64_t resync = edit + 8 * params.max_chunk_size();
    auto clip = [&](const std::vector<std::uint64_t>& starts, bool prefix) {
      std::vector<std::uint64_t> out;
      for (std::uint64_t o : starts)
        if (prefix ? o < edit : o >= resync) out.push_back(o);
      return out;
    };
    require(clip(base_starts, true) == clip(edited_starts, true),
            "buffer " + str(i) + ": edit moved earlier boundaries");
    require(clip(base_starts, false) == clip(edited_starts, false),
            "buffer " + str(i) + ": boundaries did not re-align after edit");
  }

  // Incremental rolling hash equals a from-scratch window hash at every
  // offset of a 64 KiB buffer.
  auto stream = testutil::random_bytes(0x707, 64 << 10);
  const std::uint32_t window = 48;
  RollingHash rolling(window);
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (i < window) {
      rolling.push(stream[i]);
    } else {
      rolling.roll(stream[i], stream[i - window]);
    }
    if (i + 1 < window) continue;
    RollingHash fresh(window);
    for (std::size_t j = i + 1 - window; j <= i; ++j) fresh.push(stream[j]);
    require(fresh.value() == rolling.value(),
            "rolling hash diverges from scratch at offset " + str(i));
  }

  return str(kChunkingBuffers) + " buffers, " + str(total_chunks) + " chunks";
}

// --- criterion 8: write accounting -------------------------------------------

std::string c8_write_accounting(Context& ctx) {
  WorkloadParams normal = WorkloadParams::preset("sg1");
  normal.scale = kDeskScale;
  WorkloadParams halved = normal;
  halved.alpha_permille /= 2;
  halved.beta_permille /= 2;
  halved.gamma_full /= 2;

  StoreOptions opts;
  opts.container_capacity = kDeskContainerCapacity;
  Store store_n, store_h;
  store_n.create(ctx.dir.path() / "c8_normal", opts);
  store_h.create(ctx.dir.path() / "c8_halved", opts);

  std::unordered_set<Fingerprint, FingerprintHash> seen;
  std::vector<std::uint64_t> written_n, written_h;
  SeriesGenerator gen_n(normal, 0), gen_h(halved, 0);
  for (std::uint64_t week = 0; week <= normal.weeks; ++week) {
    if (week > 0) {
      gen_n.advance_week();
      gen_h.advance_week();
    }
    BackupConfig bc;
    bc.series_id = 1;

    std::vector<std::uint8_t> image = gen_n.snapshot();
    auto descriptors = chunk_buffer(image, desk_chunking());
    // First-seen non-null segments are exactly what the store must write.
    std::uint64_t expected = 0;
    for (const SegmentDescriptor& s : descriptors)
      if (!s.null() && seen.insert(s.fp).second) expected += s.length;
    MemoryByteSource source(image);
    BackupResult rn = backup(store_n, bc, source, descriptors);
    require(rn.payload_bytes_written == expected,
            "week " + str(week) + ": wrote " +
                str(rn.payload_bytes_written) + ", unique segment bytes " +
                str(expected));
    written_n.push_back(rn.payload_bytes_written);

    std::vector<std::uint8_t> image_h = gen_h.snapshot();
    MemoryByteSource source_h(image_h);
    written_h.push_back(backup(store_h, bc, source_h,
                               chunk_buffer(image_h, desk_chunking()))
                            .payload_bytes_written);
  }

  // Halving the mutation rates doubles inter-version duplication, so every
  // steady-state week writes strictly less.
  for (std::size_t week = 2; week < written_n.size(); ++week)
    require(written_h[week] < written_n[week],
            "week " + str(week) + ": halved rates wrote " +
                str(written_h[week]) + ", full rates " + str(written_n[week]));

  return "13 weeks exact; halved rates wrote less in weeks 2-12";
}

// --- criterion 9: live-window trade-off ---------------------------------------

std::string c9_live_window(Context& ctx) {
  BenchConfig config = desk_config(ctx.dir.path() / "c9");
  std::vector<LiveWindowRow> rows = run_live_window_sweep(config, {1, 3, 5});
  for (std::size_t i = 1; i < rows.size(); ++i)
    require(rows[i - 1].stored <= rows[i].stored,
            "window " + str(rows[i - 1].live_window) + " stored " +
                str(rows[i - 1].stored) + " > window " +
                str(rows[i].live_window) + " stored " + str(rows[i].stored));
  std::string note;
  for (const LiveWindowRow& r : rows)
    note += (note.empty() ? "" : " <= ") + str(r.stored);
  return note;
}

}  // namespace

int main() {
  Context ctx;
  struct Criterion {
    int id;
    const char* name;
    std::string (*run)(Context&);
  };
  const Criterion criteria[] = {
      {1, "round-trip integrity across dedup and deletion", c1_round_trip},
      {2, "storage-saving ordering and proximity", c2_saving_order},
      {3, "inline saving falls as segments grow", c3_segment_sweep},
      {4, "read locality favors new backups", c4_fragmentation},
      {5, "timestamp deletion i/o vs mark-and-sweep", c5_deletion_io},
      {6, "reference counts equal brute-force recount", c6_refcount_oracle},
      {7, "chunking invariants and rolling-hash oracle", c7_chunking},
      {8, "payload writes equal first-seen segment bytes", c8_write_accounting},
      {9, "stored payload non-decreasing in live window", c9_live_window},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    try {
      std::string note = c.run(ctx);
      std::printf("PASS %d %s (%s)\n", c.id, c.name, note.c_str());
    } catch (const Failure& f) {
      std::printf("FAIL %d %s: %s\n", c.id, c.name, f.reason.c_str());
      failures += 1;
    } catch (const std::exception& e) {
      std::printf("FAIL %d %s: unexpected error: %s\n", c.id, c.name,
                  e.what());
      failures += 1;
    }
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
