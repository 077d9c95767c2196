// SPDX-License-Identifier: Apache-2.0
//
// Inline write path.  Accounting expectations come from an independent
// linear-scan simulation over the descriptors (no store involved), and
// stored payload is checked against the container logs.  Round trips go
// through the real restore path.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "revdedup/chunker.hpp"
#include "revdedup/inline_dedup.hpp"
#include "revdedup/restore.hpp"
#include "revdedup/store.hpp"
#include "test_util.hpp"

using namespace revdedup;

namespace {

ChunkingParams small_params() {
  ChunkingParams p;
  p.chunk_bits = 8;
  p.segment_bits = 12;
  return p;
}

struct Expected {
  std::uint64_t unique_segments = 0;
  std::uint64_t duplicate_segments = 0;
  std::uint64_t null_segments = 0;
  std::uint64_t payload_bytes = 0;
  std::uint64_t duplicate_bytes = 0;
  std::uint64_t null_bytes = 0;
  std::uint64_t entries = 0;
};

// Linear-scan oracle: replays the dedup decision per segment against a
// running fingerprint set shared across backups.
Expected simulate(std::span<const SegmentDescriptor> segs,
                  std::set<Fingerprint>& seen) {
  Expected e;
  for (const SegmentDescriptor& seg : segs) {
    if (seg.null()) {
      e.null_segments += 1;
      e.null_bytes += seg.length;
      e.entries += 1;
      continue;
    }
    e.entries += seg.chunks.size();
    if (seen.count(seg.fp)) {
      e.duplicate_segments += 1;
      e.duplicate_bytes += seg.length;
    } else {
      seen.insert(seg.fp);
      e.unique_segments += 1;
      e.payload_bytes += seg.length;
    }
  }
  return e;
}

void check_result(const BackupResult& got, const Expected& want) {
  CHECK(got.unique_segments == want.unique_segments);
  CHECK(got.duplicate_segments == want.duplicate_segments);
  CHECK(got.null_segments == want.null_segments);
  CHECK(got.payload_bytes_written == want.payload_bytes);
  CHECK(got.duplicate_bytes == want.duplicate_bytes);
  CHECK(got.null_bytes == want.null_bytes);
  CHECK(got.entry_count == want.entries);
}

std::uint64_t stored_payload(const Store& store) {
  std::uint64_t total = 0;
  for (const ContainerInfo& info : store.containers().list()) {
    if (info.sealed && !info.deleted) total += info.payload_bytes;
  }
  return total;
}

BackupResult backup_bytes(Store& store, const BackupConfig& config,
                          std::span<const std::uint8_t> data,
                          std::span<const SegmentDescriptor> descriptors) {
  MemoryByteSource source(data);
  return backup(store, config, source, descriptors);
}

Fingerprint restore_digest(Store& store, std::uint64_t series,
                           std::uint64_t version) {
  NullSink sink;
  return restore(store, series, version, sink).digest;
}

std::vector<std::uint8_t> make_image(std::uint64_t seed) {
  // 1.5 MiB with a null hole burned through the middle.
  auto data = testutil::random_bytes(seed, 3 << 19);
  std::fill(data.begin() + (1 << 19), data.begin() + (1 << 19) + (1 << 18), 0);
  return data;
}

}  // namespace

TEST_CASE("single backup: accounting oracle, stored payload, round trip") {
  testutil::ScratchDir dir("backup1");
  Store store;
  StoreOptions opts;
  opts.container_capacity = 32 << 10;
  store.create(dir.path() / "store", opts);

  auto data = make_image(0xfeed0001);
  auto descriptors = chunk_buffer(data, small_params());

  std::set<Fingerprint> seen;
  Expected want = simulate(descriptors, seen);
  REQUIRE(want.null_segments > 0);  // the hole must span whole segments
  REQUIRE(want.unique_segments > 10);

  BackupConfig config;
  config.series_id = 1;
  BackupResult got = backup_bytes(store, config, data, descriptors);
  CHECK(got.version == 0);
  CHECK(got.original_size == data.size());
  check_result(got, want);

  // Physical payload equals what the result claims was written.
  CHECK(stored_payload(store) == want.payload_bytes);

  // Every unique segment is referenced by exactly one backup.
  for (std::uint64_t s = 0; s < store.meta().segment_count(); ++s) {
    CHECK(store.meta().segment(s).ref_count == 1);
  }

  CHECK(restore_digest(store, 1, 0) == sha1(data));
}

TEST_CASE("second identical backup stores nothing new") {
  testutil::ScratchDir dir("backup2");
  Store store;
  StoreOptions opts;
  opts.container_capacity = 32 << 10;
  store.create(dir.path() / "store", opts);

  auto data = make_image(0xfeed0002);
  auto descriptors = chunk_buffer(data, small_params());
  BackupConfig config;
  config.series_id = 1;

  std::set<Fingerprint> seen;
  Expected first = simulate(descriptors, seen);
  Expected second = simulate(descriptors, seen);
  CHECK(second.unique_segments == 0);
  CHECK(second.payload_bytes == 0);

  BackupResult r0 = backup_bytes(store, config, data, descriptors);
  std::uint64_t payload_after_first = stored_payload(store);
  BackupResult r1 = backup_bytes(store, config, data, descriptors);
  check_result(r0, first);
  check_result(r1, second);
  CHECK(r1.version == 1);
  CHECK(stored_payload(store) == payload_after_first);

  // Referenced segments are now shared by both backups.
  for (std::uint64_t s = 0; s < store.meta().segment_count(); ++s) {
    CHECK(store.meta().segment(s).ref_count == 2);
  }

  CHECK(restore_digest(store, 1, 0) == sha1(data));
  CHECK(restore_digest(store, 1, 1) == sha1(data));
}

TEST_CASE("references are counted per backup, not per entry") {
  // A constant-filled buffer collapses to one stored segment referenced
  // by many entries of the same recipe; the count must still be 1.
  testutil::ScratchDir dir("refcount");
  Store store;
  StoreOptions opts;
  opts.container_capacity = 64 << 10;
  store.create(dir.path() / "store", opts);

  auto p = small_params();
  std::vector<std::uint8_t> data(8 * p.max_segment_size(), 0xaa);
  auto descriptors = chunk_buffer(data, p);
  REQUIRE(descriptors.size() > 1);

  BackupConfig config;
  config.series_id = 9;
  BackupResult r = backup_bytes(store, config, data, descriptors);
  CHECK(r.unique_segments == 1);
  CHECK(r.duplicate_segments == descriptors.size() - 1);

  REQUIRE(store.meta().segment_count() == 1);
  CHECK(store.meta().segment(0).ref_count == 1);

  backup_bytes(store, config, data, descriptors);
  CHECK(store.meta().segment(0).ref_count == 2);
  CHECK(restore_digest(store, 9, 1) == sha1(data));
}

TEST_CASE("chunk-granularity mode stores the global unique non-null chunk bytes") {
  testutil::ScratchDir dir("conv");
  Store store;
  StoreOptions opts;
  opts.container_capacity = 32 << 10;
  store.create(dir.path() / "store", opts);

  auto v0 = make_image(0xfeed0003);
  auto v1 = v0;
  // Mutate a stretch and extend.
  auto patch = testutil::random_bytes(0xfeed0004, 64 << 10);
  std::copy(patch.begin(), patch.end(), v1.begin() + (1 << 18));
  auto tail = testutil::random_bytes(0xfeed0005, 32 << 10);
  v1.insert(v1.end(), tail.begin(), tail.end());

  auto d0 = chunk_buffer(v0, small_params());
  auto d1 = chunk_buffer(v1, small_params());

  BackupConfig config;
  config.series_id = 2;
  config.mode = DedupMode::kChunk;
  backup_bytes(store, config, v0, d0);
  backup_bytes(store, config, v1, d1);

  // Brute-force oracle: the union of distinct non-null chunk
  // fingerprints, weighted by chunk length.
  std::map<Fingerprint, std::uint64_t> unique_chunks;
  for (const auto* d : {&d0, &d1}) {
    for (const SegmentDescriptor& seg : *d) {
      for (const ChunkDescriptor& c : seg.chunks) {
        if (!c.null) unique_chunks.emplace(c.fp, c.length);
      }
    }
  }
  std::uint64_t oracle_bytes = 0;
  for (auto& [fp, len] : unique_chunks) oracle_bytes += len;

  CHECK(stored_payload(store) == oracle_bytes);
  CHECK(restore_digest(store, 2, 0) == sha1(v0));
  CHECK(restore_digest(store, 2, 1) == sha1(v1));
}

TEST_CASE("descriptor mismatch is rejected before any mutation") {
  testutil::ScratchDir dir("mismatch");
  Store store;
  store.create(dir.path() / "store", StoreOptions{});

  auto data = testutil::random_bytes(0xfeed0006, 100 << 10);
  auto descriptors = chunk_buffer(data, small_params());
  BackupConfig config;
  config.series_id = 1;

  SUBCASE("source shorter than descriptors") {
    std::span<const std::uint8_t> truncated(data.data(), data.size() - 1);
    MemoryByteSource source(truncated);
    CHECK_THROWS_AS(backup(store, config, source, descriptors),
                    IntegrityError);
  }
  SUBCASE("descriptor gap") {
    auto broken = descriptors;
    broken.erase(broken.begin() + 1);
    MemoryByteSource source(data);
    CHECK_THROWS_AS(backup(store, config, source, broken), IntegrityError);
  }
  SUBCASE("segment length disagrees with chunks") {
    auto broken = descriptors;
    broken[0].length += 1;
    MemoryByteSource source(data);
    CHECK_THROWS_AS(backup(store, config, source, broken), IntegrityError);
  }

  // Nothing happened: no segments, no containers, no series.
  CHECK(store.meta().segment_count() == 0);
  CHECK(store.containers().container_count() == 0);
  CHECK(!store.meta().series_exists(1));
}

TEST_CASE("overlapped and synchronous ingestion produce identical stores") {
  testutil::ScratchDir dir("overlap");
  auto data = make_image(0xfeed0007);
  auto descriptors = chunk_buffer(data, small_params());

  auto run = [&](bool overlap, const std::filesystem::path& root) {
    Store store;
    StoreOptions opts;
    opts.container_capacity = 32 << 10;
    store.create(root, opts);
    BackupConfig config;
    config.series_id = 1;
    config.overlap_read = overlap;
    backup_bytes(store, config, data, descriptors);
    return store.meta().read_recipe(1, 0);
  };

  Recipe a = run(true, dir.path() / "a");
  Recipe b = run(false, dir.path() / "b");
  REQUIRE(a.entries.size() == b.entries.size());
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].kind == b.entries[i].kind);
    CHECK(a.entries[i].length == b.entries[i].length);
    CHECK(a.entries[i].seg_id == b.entries[i].seg_id);
    CHECK(a.entries[i].chunk_index == b.entries[i].chunk_index);
  }
}

TEST_CASE("an entirely null source stores no payload at all") {
  testutil::ScratchDir dir("allnull");
  Store store;
  store.create(dir.path() / "store", StoreOptions{});

  std::vector<std::uint8_t> data(256 << 10, 0);
  auto descriptors = chunk_buffer(data, small_params());
  BackupConfig config;
  config.series_id = 1;
  BackupResult r = backup_bytes(store, config, data, descriptors);

  CHECK(r.unique_segments == 0);
  CHECK(r.null_segments == descriptors.size());
  CHECK(r.null_bytes == data.size());
  CHECK(store.containers().container_count() == 0);
  CHECK(store.meta().segment_count() == 0);
  CHECK(restore_digest(store, 1, 0) == sha1(data));
}

TEST_CASE("a null chunk inside a live segment is stored with the segment") {
  testutil::ScratchDir dir("mixed");
  Store store;
  store.create(dir.path() / "store", StoreOptions{});

  auto p = small_params();
  auto data = testutil::random_bytes(0xfeed0008, 256 << 10);
  // A zero stretch shorter than a segment but at least a couple of
  // chunks long, placed mid-buffer: some segment will straddle it.
  std::fill(data.begin() + 100000, data.begin() + 100000 + 3 * p.max_chunk_size(),
            0);
  auto descriptors = chunk_buffer(data, p);

  bool found_mixed = false;
  for (const auto& seg : descriptors) {
    bool has_null = false;
    for (const auto& c : seg.chunks) has_null = has_null || c.null;
    if (has_null && !seg.null()) found_mixed = true;
  }
  REQUIRE(found_mixed);

  BackupConfig config;
  config.series_id = 1;
  backup_bytes(store, config, data, descriptors);

  // Find a stored segment with a flagged null chunk: stored whole.
  bool verified = false;
  for (std::uint64_t s = 0; s < store.meta().segment_count(); ++s) {
    SegmentMeta seg = store.meta().segment(s);
    for (const ChunkMeta& c : store.meta().chunks(seg)) {
      if (c.null) {
        CHECK(seg.stored_length == seg.original_length);
        CHECK(!c.removed);
        verified = true;
      }
    }
  }
  CHECK(verified);
  CHECK(restore_digest(store, 1, 0) == sha1(data));
}

TEST_CASE("window transitions surface through backup results") {
  testutil::ScratchDir dir("windows");
  Store store;
  store.create(dir.path() / "store", StoreOptions{});

  BackupConfig config;
  config.series_id = 1;
  config.live_window = 2;
  config.archival_window = 1;

  auto p = small_params();
  for (std::uint64_t v = 0; v < 4; ++v) {
    auto data = testutil::random_bytes(0xfeed0100 + v, 64 << 10);
    auto descriptors = chunk_buffer(data, p);
    BackupResult r = backup_bytes(store, config, data, descriptors);
    CHECK(r.version == v);
    if (v < 2) {
      CHECK(r.transition.entered_archival.empty());
    } else {
      REQUIRE(r.transition.entered_archival.size() == 1);
      CHECK(r.transition.entered_archival[0] == v - 2);
    }
    if (v < 3) {
      CHECK(r.transition.expired.empty());
    } else {
      REQUIRE(r.transition.expired.size() == 1);
      CHECK(r.transition.expired[0] == v - 3);
    }
  }
}

TEST_CASE("file source matches memory source") {
  testutil::ScratchDir dir("filesrc");
  auto data = make_image(0xfeed0009);
  auto path = dir.path() / "image.bin";
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    REQUIRE(f != nullptr);
    REQUIRE(std::fwrite(data.data(), 1, data.size(), f) == data.size());
    std::fclose(f);
  }
  auto descriptors = chunk_file(path, small_params());

  Store store;
  store.create(dir.path() / "store", StoreOptions{});
  BackupConfig config;
  config.series_id = 1;
  FileByteSource source(path);
  BackupResult r = backup(store, config, source, descriptors);
  CHECK(r.original_size == data.size());
  CHECK(restore_digest(store, 1, 0) == sha1(data));
}
